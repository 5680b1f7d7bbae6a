#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lambda/kgdata.hpp"

using namespace lambda;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("lambda_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

}  // namespace

TEST_CASE("load_kg_pair round-trips a toy directory") {
  fs::path dir = temp_dir("toy");
  write_file(dir / "triples_1", "0\t0\t1\n1\t1\t2\n2\t0\t0\n");
  write_file(dir / "triples_2", "0\t0\t1\n");
  write_file(dir / "ent_links", "0\t0\n2\t1\n");

  KGPair pair = load_kg_pair(dir);
  CHECK(pair.source.n_entities == 3);
  CHECK(pair.source.n_relations == 2);
  CHECK(pair.source.triples.size() == 3);
  CHECK(pair.target.n_entities == 2);
  CHECK(pair.anchors.size() == 2);

  fs::path dir2 = temp_dir("toy_saved");
  save_kg_pair(pair, dir2);
  CHECK(load_kg_pair(dir2) == pair);
}

TEST_CASE("load_kg_pair handles empty ent_links") {
  fs::path dir = temp_dir("nolinks");
  write_file(dir / "triples_1", "0\t0\t1\n");
  write_file(dir / "triples_2", "0\t0\t1\n");
  write_file(dir / "ent_links", "");
  KGPair pair = load_kg_pair(dir);
  CHECK(pair.anchors.empty());
}

TEST_CASE("load_kg_pair reports parse errors with line numbers") {
  fs::path dir = temp_dir("badline");
  write_file(dir / "triples_1", "0\t0\t1\n0\tnope\t2\n");
  write_file(dir / "triples_2", "0\t0\t1\n");
  write_file(dir / "ent_links", "");
  CHECK_THROWS_WITH_AS(load_kg_pair(dir), doctest::Contains(":2"), std::runtime_error);
}

TEST_CASE("load_kg_pair rejects dangling ids that overlap anchors") {
  fs::path dir = temp_dir("overlap");
  write_file(dir / "triples_1", "0\t0\t1\n");
  write_file(dir / "triples_2", "0\t0\t1\n");
  write_file(dir / "ent_links", "0\t0\n");
  write_file(dir / "dangling_1", "0\n");
  CHECK_THROWS_AS(load_kg_pair(dir), std::invalid_argument);
}

TEST_CASE("load_kg_pair re-indexes sparse ids densely preserving order") {
  fs::path dir = temp_dir("sparse");
  write_file(dir / "triples_1", "10\t5\t30\n30\t7\t90\n");
  write_file(dir / "triples_2", "4\t2\t8\n");
  write_file(dir / "ent_links", "10\t4\n");
  KGPair pair = load_kg_pair(dir);
  CHECK(pair.source.n_entities == 3);
  CHECK(pair.source.n_relations == 2);
  // 10 -> 0, 30 -> 1, 90 -> 2; relations 5 -> 0, 7 -> 1
  CHECK(pair.source.triples[0] == Triple{0, 0, 1});
  CHECK(pair.source.triples[1] == Triple{1, 1, 2});
  CHECK(pair.anchors[0] == AnchorPair{0, 0});
}

TEST_CASE("split_anchors partitions deterministically") {
  SyntheticConfig cfg;
  cfg.n_match = 10;
  cfg.n_dang_src = 0;
  cfg.n_dang_tgt = 0;
  cfg.community_count = 2;
  cfg.seed = 3;
  KGPair pair = gen_synthetic_pair(cfg);

  AnchorSplit a = split_anchors(pair, 0.5, 42);
  AnchorSplit b = split_anchors(pair, 0.5, 42);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() == 5);
  CHECK(a.test.size() == 5);

  // Partition: union sorted equals the anchor set sorted.
  std::vector<AnchorPair> joined = a.train;
  joined.insert(joined.end(), a.test.begin(), a.test.end());
  std::sort(joined.begin(), joined.end());
  std::vector<AnchorPair> truth = pair.anchors;
  std::sort(truth.begin(), truth.end());
  CHECK(joined == truth);

  CHECK(split_anchors(pair, 0.3, 1).train.size() == 3);
  CHECK_THROWS_AS(split_anchors(pair, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_anchors(pair, 1.0, 1), std::invalid_argument);
}

TEST_CASE("split_anchors requires at least two anchors") {
  SyntheticConfig cfg;
  cfg.n_match = 1;
  cfg.n_dang_src = 1;
  cfg.n_dang_tgt = 1;
  cfg.community_count = 1;
  cfg.seed = 5;
  KGPair pair = gen_synthetic_pair(cfg);
  CHECK_THROWS_AS(split_anchors(pair, 0.5, 1), std::invalid_argument);
}

TEST_CASE("gen_synthetic_pair produces the advertised shape") {
  SyntheticConfig cfg;
  cfg.n_match = 500;
  cfg.n_dang_src = 200;
  cfg.n_dang_tgt = 300;
  cfg.seed = 9;
  KGPair pair = gen_synthetic_pair(cfg);
  CHECK(pair.source.n_entities == 700);
  CHECK(pair.target.n_entities == 800);
  CHECK(pair.anchors.size() == 500);
  CHECK(pair.truth_dangling_src.size() == 200);
  CHECK(pair.truth_dangling_tgt.size() == 300);
  CHECK(gen_synthetic_pair(cfg) == pair);  // seed determinism

  SyntheticConfig other = cfg;
  other.seed = 10;
  CHECK(gen_synthetic_pair(other) != pair);
}

TEST_CASE("gen_synthetic_pair with zero noise is isomorphic on the matchable core") {
  SyntheticConfig cfg;
  cfg.n_match = 60;
  cfg.n_dang_src = 20;
  cfg.n_dang_tgt = 25;
  cfg.community_count = 6;
  cfg.cross_noise = 0.0;
  cfg.seed = 21;
  KGPair pair = gen_synthetic_pair(cfg);

  // Anchor map is the identity over [0, n_match): matchable-only induced
  // subgraphs must match exactly.
  auto core_of = [&](const TripleStore& s) {
    std::vector<Triple> core;
    for (const Triple& t : s.triples)
      if (t.head < cfg.n_match && t.tail < cfg.n_match) core.push_back(t);
    std::sort(core.begin(), core.end());
    return core;
  };
  CHECK(core_of(pair.source) == core_of(pair.target));
}

TEST_CASE("gen_synthetic_pair validates probabilities") {
  SyntheticConfig cfg;
  cfg.intra_edge_prob = 1.5;
  CHECK_THROWS_AS(gen_synthetic_pair(cfg), std::invalid_argument);
  cfg.intra_edge_prob = 0.3;
  cfg.cross_noise = -0.1;
  CHECK_THROWS_AS(gen_synthetic_pair(cfg), std::invalid_argument);
}

TEST_CASE("transform_minus deletes pairs and marks survivors dangling") {
  SyntheticConfig cfg;
  cfg.n_match = 500;
  cfg.n_dang_src = 100;
  cfg.n_dang_tgt = 100;
  cfg.seed = 33;
  KGPair pair = gen_synthetic_pair(cfg);
  const double pi_before = matchable_fraction(pair);

  KGPair minus = transform_minus(pair, 0.2, 77);
  CHECK(minus.anchors.size() == 400);
  const std::size_t new_dangling = minus.truth_dangling_src.size() +
                                   minus.truth_dangling_tgt.size() -
                                   (pair.truth_dangling_src.size() + pair.truth_dangling_tgt.size());
  CHECK(new_dangling == 100);
  CHECK(matchable_fraction(minus) < pi_before);
  minus.validate();

  CHECK(transform_minus(pair, 0.0, 77) == pair);
}

TEST_CASE("transform_plus removes dangling entities") {
  SyntheticConfig cfg;
  cfg.n_match = 200;
  cfg.n_dang_src = 200;
  cfg.n_dang_tgt = 80;
  cfg.seed = 34;
  KGPair pair = gen_synthetic_pair(cfg);
  const double pi_before = matchable_fraction(pair);

  KGPair plus = transform_plus(pair, 0.5, 78);
  CHECK(plus.truth_dangling_src.size() == 100);
  CHECK(plus.truth_dangling_tgt.size() == 40);
  CHECK(plus.anchors.size() == 200);
  CHECK(matchable_fraction(plus) > pi_before);
  plus.validate();

  KGPair all_gone = transform_plus(pair, 1.0, 79);
  CHECK(all_gone.truth_dangling_src.empty());
  CHECK(all_gone.truth_dangling_tgt.empty());

  CHECK(transform_plus(pair, 0.0, 80) == pair);
}

TEST_CASE("transforms never leave triples referencing deleted entities") {
  SyntheticConfig cfg;
  cfg.n_match = 120;
  cfg.n_dang_src = 60;
  cfg.n_dang_tgt = 50;
  cfg.seed = 35;
  KGPair pair = gen_synthetic_pair(cfg);
  for (double frac : {0.1, 0.5, 0.9}) {
    transform_minus(pair, frac, 1).validate();
    transform_plus(pair, frac, 2).validate();
  }
}

TEST_CASE("suggest_dim follows the 8.33 log N rule") {
  CHECK(suggest_dim(100000) == 128);  // bound ~ 95.9
  CHECK(suggest_dim(2) == 8);         // bound ~ 5.8
  // Independent arithmetic for the bound at N = 1e5.
  const long double bound = 8.33L * 5.0L * std::log(10.0L);
  CHECK(std::abs(static_cast<double>(bound) - 95.9) < 0.1);
  CHECK_THROWS_AS(suggest_dim(1), std::invalid_argument);
  // Base-2 logs give a larger bound.
  CHECK(suggest_dim(100000, 2.0) == 256);  // 8.33 * log2(1e5) ~ 138.4
}

TEST_CASE("TripleStore validation catches duplicates and bad ids") {
  TripleStore s;
  s.n_entities = 2;
  s.n_relations = 1;
  s.triples = {{0, 0, 1}, {0, 0, 1}};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.triples = {{0, 0, 5}};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.triples = {{0, 0, 1}};
  CHECK_NOTHROW(s.validate());
}
