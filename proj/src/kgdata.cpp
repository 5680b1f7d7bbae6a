#include "lambda/kgdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

namespace lambda {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::vector<std::int64_t> parse_int_line(const std::string& line, const std::string& file,
                                         std::size_t lineno, std::size_t expect) {
  std::vector<std::int64_t> out;
  const char* p = line.data();
  const char* end = line.data() + line.size();
  while (p < end) {
    while (p < end && (*p == '\t' || *p == ' ' || *p == '\r')) ++p;
    if (p >= end) break;
    std::int64_t v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc()) {
      throw std::runtime_error(file + ":" + std::to_string(lineno) + ": parse error");
    }
    out.push_back(v);
    p = next;
  }
  if (out.size() != expect) {
    throw std::runtime_error(file + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(expect) + " fields, got " +
                             std::to_string(out.size()));
  }
  return out;
}

struct RawGraph {
  std::vector<std::array<std::int64_t, 3>> triples;
  std::set<std::int64_t> entities;
  std::set<std::int64_t> relations;
};

RawGraph read_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  RawGraph g;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = parse_int_line(line, path.filename().string(), lineno, 3);
    g.triples.push_back({f[0], f[1], f[2]});
    g.entities.insert(f[0]);
    g.entities.insert(f[2]);
    g.relations.insert(f[1]);
  }
  return g;
}

}  // namespace

void TripleStore::validate() const {
  for (const Triple& t : triples) {
    require(t.head >= 0 && t.head < n_entities, "triple head id out of range");
    require(t.tail >= 0 && t.tail < n_entities, "triple tail id out of range");
    require(t.rel >= 0 && t.rel < n_relations, "triple relation id out of range");
  }
  std::vector<Triple> sorted = triples;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
          "duplicate triples");
}

void KGPair::validate() const {
  source.validate();
  target.validate();
  std::unordered_set<EntityId> src_seen, tgt_seen;
  for (const auto& [s, t] : anchors) {
    require(s >= 0 && s < source.n_entities, "anchor source id out of range");
    require(t >= 0 && t < target.n_entities, "anchor target id out of range");
    require(src_seen.insert(s).second, "entity appears in more than one anchor pair");
    require(tgt_seen.insert(t).second, "entity appears in more than one anchor pair");
  }
  for (EntityId e : truth_dangling_src) {
    require(e >= 0 && e < source.n_entities, "dangling source id out of range");
    require(!src_seen.count(e), "dangling id overlaps an anchor");
  }
  for (EntityId e : truth_dangling_tgt) {
    require(e >= 0 && e < target.n_entities, "dangling target id out of range");
    require(!tgt_seen.count(e), "dangling id overlaps an anchor");
  }
}

KGPair load_kg_pair(const std::filesystem::path& dir) {
  RawGraph g1 = read_triples(dir / "triples_1");
  RawGraph g2 = read_triples(dir / "triples_2");

  std::vector<AnchorPair> raw_links;
  {
    std::ifstream in(dir / "ent_links");
    if (!in) throw std::runtime_error("cannot open " + (dir / "ent_links").string());
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::array<std::int64_t, 2>> links;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      auto f = parse_int_line(line, "ent_links", lineno, 2);
      g1.entities.insert(f[0]);
      g2.entities.insert(f[1]);
      links.push_back({f[0], f[1]});
    }
    for (auto& l : links) raw_links.push_back({static_cast<EntityId>(l[0]),
                                               static_cast<EntityId>(l[1])});
  }

  auto read_dangling = [](const std::filesystem::path& p, std::set<std::int64_t>& ents) {
    std::vector<std::int64_t> ids;
    std::ifstream in(p);
    if (!in) return ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      auto f = parse_int_line(line, p.filename().string(), lineno, 1);
      ids.push_back(f[0]);
      ents.insert(f[0]);
    }
    return ids;
  };
  std::vector<std::int64_t> dang1 = read_dangling(dir / "dangling_1", g1.entities);
  std::vector<std::int64_t> dang2 = read_dangling(dir / "dangling_2", g2.entities);

  // Dense re-index per graph, preserving numeric order of the original ids.
  auto index_of = [](const std::set<std::int64_t>& s) {
    std::map<std::int64_t, EntityId> m;
    EntityId next = 0;
    for (std::int64_t v : s) m[v] = next++;
    return m;
  };
  auto ent1 = index_of(g1.entities);
  auto ent2 = index_of(g2.entities);
  auto rel1 = index_of(g1.relations);
  auto rel2 = index_of(g2.relations);

  KGPair pair;
  pair.source.n_entities = static_cast<std::int32_t>(ent1.size());
  pair.source.n_relations = static_cast<std::int32_t>(rel1.size());
  pair.target.n_entities = static_cast<std::int32_t>(ent2.size());
  pair.target.n_relations = static_cast<std::int32_t>(rel2.size());
  for (auto& t : g1.triples)
    pair.source.triples.push_back({ent1.at(t[0]), rel1.at(t[1]), ent1.at(t[2])});
  for (auto& t : g2.triples)
    pair.target.triples.push_back({ent2.at(t[0]), rel2.at(t[1]), ent2.at(t[2])});
  for (auto& [s, t] : raw_links) pair.anchors.push_back({ent1.at(s), ent2.at(t)});
  for (auto v : dang1) pair.truth_dangling_src.push_back(ent1.at(v));
  for (auto v : dang2) pair.truth_dangling_tgt.push_back(ent2.at(v));
  std::sort(pair.truth_dangling_src.begin(), pair.truth_dangling_src.end());
  std::sort(pair.truth_dangling_tgt.begin(), pair.truth_dangling_tgt.end());
  pair.truth_dangling_src.erase(
      std::unique(pair.truth_dangling_src.begin(), pair.truth_dangling_src.end()),
      pair.truth_dangling_src.end());
  pair.truth_dangling_tgt.erase(
      std::unique(pair.truth_dangling_tgt.begin(), pair.truth_dangling_tgt.end()),
      pair.truth_dangling_tgt.end());

  pair.validate();
  return pair;
}

void save_kg_pair(const KGPair& pair, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write_triples = [&](const TripleStore& s, const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    for (const Triple& t : s.triples)
      out << t.head << '\t' << t.rel << '\t' << t.tail << '\n';
  };
  write_triples(pair.source, "triples_1");
  write_triples(pair.target, "triples_2");
  {
    std::ofstream out(dir / "ent_links", std::ios::binary);
    for (const auto& [s, t] : pair.anchors) out << s << '\t' << t << '\n';
  }
  auto write_ids = [&](const std::vector<EntityId>& ids, const char* name) {
    if (ids.empty()) return;
    std::ofstream out(dir / name, std::ios::binary);
    for (EntityId e : ids) out << e << '\n';
  };
  write_ids(pair.truth_dangling_src, "dangling_1");
  write_ids(pair.truth_dangling_tgt, "dangling_2");
}

AnchorSplit split_anchors(const KGPair& pair, double train_ratio, std::uint64_t seed) {
  require(train_ratio > 0.0 && train_ratio < 1.0, "train_ratio must be in (0,1)");
  require(pair.anchors.size() >= 2, "need at least 2 anchors to split");
  std::vector<AnchorPair> shuffled = pair.anchors;
  auto rng = make_rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  auto n_train = static_cast<std::size_t>(
      std::llround(train_ratio * static_cast<double>(shuffled.size())));
  n_train = std::min(n_train, shuffled.size() - 1);
  n_train = std::max<std::size_t>(n_train, 1);
  AnchorSplit split;
  split.seed = seed;
  split.train.assign(shuffled.begin(), shuffled.begin() + n_train);
  split.test.assign(shuffled.begin() + n_train, shuffled.end());
  return split;
}

KGPair gen_synthetic_pair(const SyntheticConfig& cfg) {
  require(cfg.n_match >= 0 && cfg.n_dang_src >= 0 && cfg.n_dang_tgt >= 0,
          "counts must be non-negative");
  require(cfg.n_match >= cfg.community_count, "n_match must cover every community");
  require(cfg.community_count >= 1, "community_count must be positive");
  require(cfg.n_relations >= 1, "n_relations must be positive");
  require(cfg.intra_edge_prob >= 0.0 && cfg.intra_edge_prob <= 1.0,
          "intra_edge_prob outside [0,1]");
  require(cfg.cross_noise >= 0.0 && cfg.cross_noise <= 1.0, "cross_noise outside [0,1]");
  require(cfg.dangling_degree >= 1, "dangling_degree must be positive");
  require(cfg.dangling_rel_skew >= 0.0 && cfg.dangling_rel_skew <= 1.0,
          "dangling_rel_skew outside [0,1]");

  auto rng = make_rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n_core_rel = std::max(
      1, static_cast<int>(std::llround((1.0 - cfg.dangling_rel_skew) * cfg.n_relations)));
  std::uniform_int_distribution<int> rel_dist(0, n_core_rel - 1);
  std::uniform_int_distribution<int> dang_rel_dist(0, cfg.n_relations - 1);

  // Matchable core, identical in both graphs. Entity m lives in community
  // m % community_count.
  std::vector<Triple> core;
  std::vector<std::vector<EntityId>> members(cfg.community_count);
  for (int m = 0; m < cfg.n_match; ++m) members[m % cfg.community_count].push_back(m);
  for (const auto& mem : members) {
    for (std::size_t a = 0; a < mem.size(); ++a) {
      for (std::size_t b = a + 1; b < mem.size(); ++b) {
        if (unit(rng) < cfg.intra_edge_prob)
          core.push_back({mem[a], rel_dist(rng), mem[b]});
      }
    }
  }

  std::vector<Triple> tgt_core = core;
  if (cfg.cross_noise > 0.0 && cfg.n_match > 1) {
    std::uniform_int_distribution<EntityId> ent_dist(0, cfg.n_match - 1);
    for (Triple& t : tgt_core) {
      if (unit(rng) < cfg.cross_noise) {
        EntityId nt = ent_dist(rng);
        while (nt == t.head) nt = ent_dist(rng);
        t.tail = nt;
        t.rel = rel_dist(rng);
      }
    }
  }

  // Dangling entities form their own communities (dangling sets in real
  // pairs are coherent subdomains, not isolated nodes) and additionally
  // attach to random matchable communities.
  auto attach_dangling = [&](std::vector<Triple>& triples, int n_dang) {
    if (cfg.n_match == 0) return;
    std::uniform_int_distribution<EntityId> ent_dist(0, cfg.n_match - 1);
    for (int i = 0; i < n_dang; ++i) {
      EntityId d = cfg.n_match + i;
      std::set<EntityId> picked;
      int degree = std::min(cfg.dangling_degree, cfg.n_match);
      while (static_cast<int>(picked.size()) < degree) picked.insert(ent_dist(rng));
      for (EntityId m : picked) triples.push_back({d, dang_rel_dist(rng), m});
    }
    std::vector<std::vector<EntityId>> dmem(cfg.community_count);
    for (int i = 0; i < n_dang; ++i)
      dmem[i % cfg.community_count].push_back(cfg.n_match + i);
    for (const auto& mem : dmem) {
      for (std::size_t a = 0; a < mem.size(); ++a)
        for (std::size_t b = a + 1; b < mem.size(); ++b)
          if (unit(rng) < cfg.intra_edge_prob)
            triples.push_back({mem[a], dang_rel_dist(rng), mem[b]});
    }
  };

  std::vector<Triple> src_triples = core;
  attach_dangling(src_triples, cfg.n_dang_src);
  attach_dangling(tgt_core, cfg.n_dang_tgt);

  auto finalize = [](std::vector<Triple>& triples) {
    std::sort(triples.begin(), triples.end());
    triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
  };
  finalize(src_triples);
  finalize(tgt_core);

  KGPair pair;
  pair.source.triples = std::move(src_triples);
  pair.source.n_entities = cfg.n_match + cfg.n_dang_src;
  pair.source.n_relations = cfg.n_relations;
  pair.target.triples = std::move(tgt_core);
  pair.target.n_entities = cfg.n_match + cfg.n_dang_tgt;
  pair.target.n_relations = cfg.n_relations;
  for (int m = 0; m < cfg.n_match; ++m) pair.anchors.push_back({m, m});
  for (int i = 0; i < cfg.n_dang_src; ++i)
    pair.truth_dangling_src.push_back(cfg.n_match + i);
  for (int i = 0; i < cfg.n_dang_tgt; ++i)
    pair.truth_dangling_tgt.push_back(cfg.n_match + i);
  pair.validate();
  return pair;
}

namespace {

// Rebuilds both stores after deleting entity sets, re-indexing entities and
// relations densely in order. Anchors and truth sets are remapped; anchors
// whose either side was deleted are dropped, with the survivor marked
// dangling when mark_survivors is set.
KGPair rebuild_after_delete(const KGPair& pair, const std::set<EntityId>& del_src,
                            const std::set<EntityId>& del_tgt, bool mark_survivors) {
  auto make_ent_map = [](std::int32_t n, const std::set<EntityId>& del) {
    std::vector<EntityId> map(n, -1);
    EntityId next = 0;
    for (EntityId e = 0; e < n; ++e)
      if (!del.count(e)) map[e] = next++;
    return map;
  };
  auto src_map = make_ent_map(pair.source.n_entities, del_src);
  auto tgt_map = make_ent_map(pair.target.n_entities, del_tgt);

  auto rebuild_store = [](const TripleStore& s, const std::vector<EntityId>& emap,
                          EntityId n_kept) {
    std::vector<Triple> kept;
    std::vector<char> rel_used(s.n_relations, 0);
    for (const Triple& t : s.triples) {
      if (emap[t.head] < 0 || emap[t.tail] < 0) continue;
      kept.push_back(t);
      rel_used[t.rel] = 1;
    }
    std::vector<RelationId> rmap(s.n_relations, -1);
    RelationId next = 0;
    for (RelationId r = 0; r < s.n_relations; ++r)
      if (rel_used[r]) rmap[r] = next++;
    TripleStore out;
    out.n_entities = n_kept;
    out.n_relations = next;
    out.triples.reserve(kept.size());
    for (const Triple& t : kept)
      out.triples.push_back({emap[t.head], rmap[t.rel], emap[t.tail]});
    return out;
  };

  KGPair out;
  out.source = rebuild_store(pair.source, src_map,
                             pair.source.n_entities - static_cast<EntityId>(del_src.size()));
  out.target = rebuild_store(pair.target, tgt_map,
                             pair.target.n_entities - static_cast<EntityId>(del_tgt.size()));

  std::vector<EntityId> new_dang_src, new_dang_tgt;
  for (const auto& [s, t] : pair.anchors) {
    bool s_gone = src_map[s] < 0;
    bool t_gone = tgt_map[t] < 0;
    if (!s_gone && !t_gone) {
      out.anchors.push_back({src_map[s], tgt_map[t]});
    } else if (mark_survivors) {
      if (!s_gone) new_dang_src.push_back(src_map[s]);
      if (!t_gone) new_dang_tgt.push_back(tgt_map[t]);
    }
  }
  for (EntityId e : pair.truth_dangling_src)
    if (src_map[e] >= 0) new_dang_src.push_back(src_map[e]);
  for (EntityId e : pair.truth_dangling_tgt)
    if (tgt_map[e] >= 0) new_dang_tgt.push_back(tgt_map[e]);
  std::sort(new_dang_src.begin(), new_dang_src.end());
  std::sort(new_dang_tgt.begin(), new_dang_tgt.end());
  out.truth_dangling_src = std::move(new_dang_src);
  out.truth_dangling_tgt = std::move(new_dang_tgt);
  out.validate();
  return out;
}

std::size_t delete_count(double frac, std::size_t n) {
  if (frac <= 0.0 || n == 0) return 0;
  auto k = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
  return std::clamp<std::size_t>(k, 1, n);
}

}  // namespace

KGPair transform_minus(const KGPair& pair, double delete_frac, std::uint64_t seed) {
  require(delete_frac >= 0.0 && delete_frac <= 1.0, "delete_frac outside [0,1]");
  std::size_t n_del = delete_count(delete_frac, pair.anchors.size());
  if (n_del == 0) return pair;

  auto rng = make_rng(seed);
  std::vector<std::size_t> idx(pair.anchors.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);

  std::set<EntityId> del_src, del_tgt;
  std::uniform_int_distribution<int> side(0, 1);
  for (std::size_t i = 0; i < n_del; ++i) {
    const auto& [s, t] = pair.anchors[idx[i]];
    if (side(rng) == 0)
      del_src.insert(s);
    else
      del_tgt.insert(t);
  }
  return rebuild_after_delete(pair, del_src, del_tgt, /*mark_survivors=*/true);
}

KGPair transform_plus(const KGPair& pair, double delete_frac, std::uint64_t seed) {
  require(delete_frac >= 0.0 && delete_frac <= 1.0, "delete_frac outside [0,1]");
  std::size_t k_src = delete_count(delete_frac, pair.truth_dangling_src.size());
  std::size_t k_tgt = delete_count(delete_frac, pair.truth_dangling_tgt.size());
  if (k_src == 0 && k_tgt == 0) return pair;

  auto rng = make_rng(seed);
  auto pick = [&rng](const std::vector<EntityId>& ids, std::size_t k) {
    std::vector<EntityId> shuffled = ids;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    return std::set<EntityId>(shuffled.begin(), shuffled.begin() + k);
  };
  std::set<EntityId> del_src = pick(pair.truth_dangling_src, k_src);
  std::set<EntityId> del_tgt = pick(pair.truth_dangling_tgt, k_tgt);
  return rebuild_after_delete(pair, del_src, del_tgt, /*mark_survivors=*/false);
}

int suggest_dim(std::int64_t n_entities, double log_base) {
  require(n_entities >= 2, "n_entities must be at least 2");
  require(log_base > 1.0, "log base must exceed 1");
  double bound = 8.33 * std::log(static_cast<double>(n_entities)) / std::log(log_base);
  int d = 1;
  while (static_cast<double>(d) <= bound) d <<= 1;
  return d;
}

double matchable_fraction(const KGPair& pair) {
  double total = static_cast<double>(pair.source.n_entities) + pair.target.n_entities;
  if (total == 0.0) return 0.0;
  return 2.0 * static_cast<double>(pair.anchors.size()) / total;
}

}  // namespace lambda
