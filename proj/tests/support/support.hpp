#pragma once

// Fixtures and brute-force oracles shared by unit and acceptance tests.
// Oracles work from the flat triple list only, never from the indexes
// under test.

#include <gsr/kg_store.hpp>
#include <gsr/path_engine.hpp>

#include <algorithm>
#include <array>
#include <span>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef GSR_FIXTURE_DIR
#error "GSR_FIXTURE_DIR must be defined"
#endif

namespace gsr::testing {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(GSR_FIXTURE_DIR) / name;
}

inline KnowledgeGraph toy_kg() { return load_triples_file(fixture("toy_kg.tsv")); }

inline EntityId ent(const KnowledgeGraph& g, std::string_view label) {
    return *g.find_entity(label);
}
inline RelationId rel(const KnowledgeGraph& g, std::string_view label) {
    return *g.find_relation(label);
}

struct RandomGraph {
    KnowledgeGraph graph;
    std::vector<std::array<std::uint32_t, 3>> triples; // as generated, may repeat
    int entities = 0;
    int relations = 0;
};

// Labels are single tokens ("e12", "r3"), entity ids follow label number.
inline RandomGraph random_graph(std::mt19937_64& rng, int max_entities, int max_relations,
                                double density = 2.0) {
    RandomGraph out;
    out.entities = std::uniform_int_distribution<int>(2, max_entities)(rng);
    out.relations = std::uniform_int_distribution<int>(1, max_relations)(rng);
    const int edges = std::uniform_int_distribution<int>(
        1, std::max(1, static_cast<int>(density * out.entities)))(rng);
    std::uniform_int_distribution<std::uint32_t> e(0, static_cast<std::uint32_t>(out.entities - 1));
    std::uniform_int_distribution<std::uint32_t> r(0, static_cast<std::uint32_t>(out.relations - 1));
    GraphBuilder b;
    for (int i = 0; i < out.entities; ++i) b.add_entity("e" + std::to_string(i));
    for (int i = 0; i < out.relations; ++i) b.add_relation("r" + std::to_string(i));
    for (int i = 0; i < edges; ++i) {
        std::array<std::uint32_t, 3> t{e(rng), r(rng), e(rng)};
        out.triples.push_back(t);
        b.add("e" + std::to_string(t[0]), "r" + std::to_string(t[1]), "e" + std::to_string(t[2]));
    }
    out.graph = std::move(b).build();
    return out;
}

// Depth-first enumeration of every walk realizing `chain` from `topic`,
// scanning the whole triple list at each step.
inline void naive_walks(std::span<const Triple> triples, EntityId cur,
                        std::span<const RelationId> chain, bool bidirectional,
                        ReasoningPath& path, std::vector<ReasoningPath>& out) {
    if (chain.empty()) {
        out.push_back(path);
        return;
    }
    for (const auto& t : triples) {
        if (t.relation != chain.front()) continue;
        auto step = [&](EntityId next, Direction d) {
            path.entities.push_back(next);
            path.hops.push_back({t.relation, d});
            naive_walks(triples, next, chain.subspan(1), bidirectional, path, out);
            path.entities.pop_back();
            path.hops.pop_back();
        };
        if (t.subject == cur) step(t.object, Direction::forward);
        if (bidirectional && t.object == cur) step(t.subject, Direction::inverse);
    }
}

inline std::vector<ReasoningPath> naive_paths(const KnowledgeGraph& g, EntityId topic,
                                              std::span<const RelationId> chain,
                                              bool bidirectional) {
    std::vector<ReasoningPath> out;
    ReasoningPath path{{topic}, {}};
    naive_walks(g.triples(), topic, chain, bidirectional, path, out);
    return out;
}

inline std::set<EntityId> terminals_of(const std::vector<ReasoningPath>& paths) {
    std::set<EntityId> out;
    for (const auto& p : paths) out.insert(p.entities.back());
    return out;
}

// All-pairs hop distances on the undirected projection; -1 = unreachable.
inline std::vector<std::vector<int>> floyd_warshall(const KnowledgeGraph& g) {
    const auto n = g.entity_count();
    constexpr int inf = 1 << 28;
    std::vector<std::vector<int>> d(n, std::vector<int>(n, inf));
    for (std::size_t i = 0; i < n; ++i) d[i][i] = 0;
    for (const auto& t : g.triples()) {
        d[t.subject.value][t.object.value] = std::min(d[t.subject.value][t.object.value], 1);
        d[t.object.value][t.subject.value] = std::min(d[t.object.value][t.subject.value], 1);
    }
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
            }
        }
    }
    for (auto& row : d) {
        for (int& x : row) {
            if (x >= inf) x = -1;
        }
    }
    return d;
}

// Every directed-hop sequence of exactly `len` hops from source to target.
inline void hop_sequences(std::span<const Triple> triples, EntityId cur, EntityId target,
                          int len, HopSequence& seq, std::set<HopSequence>& out) {
    if (len == 0) {
        if (cur == target) out.insert(seq);
        return;
    }
    for (const auto& t : triples) {
        if (t.subject == cur) {
            seq.push_back({t.relation, Direction::forward});
            hop_sequences(triples, t.object, target, len - 1, seq, out);
            seq.pop_back();
        }
        if (t.object == cur) {
            seq.push_back({t.relation, Direction::inverse});
            hop_sequences(triples, t.subject, target, len - 1, seq, out);
            seq.pop_back();
        }
    }
}

// Recovers "s, r, o" triples from rendered path lines by walking the arrows.
// Labels must not contain spaces.
inline std::set<std::string> triples_from_path_lines(const std::string& text) {
    std::set<std::string> out;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        std::istringstream words(line);
        std::vector<std::string> tok;
        for (std::string w; words >> w;) tok.push_back(w);
        // entity arrow relation arrow entity ...
        for (std::size_t i = 0; i + 4 < tok.size(); i += 4) {
            const std::string& from = tok[i];
            const std::string& r = tok[i + 2];
            const std::string& to = tok[i + 4];
            if (tok[i + 1] == "->") {
                out.insert(from + ", " + r + ", " + to);
            } else {
                out.insert(to + ", " + r + ", " + from);
            }
        }
    }
    return out;
}

// Metric recount by nested loops over already-normalized labels.
struct CountedScore {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    int hits_at_1 = 0, hits = 0;
};

inline std::vector<std::string> distinct(const std::vector<std::string>& v) {
    std::vector<std::string> out;
    for (const auto& x : v) {
        bool seen = false;
        for (const auto& y : out) seen = seen || x == y;
        if (!seen) out.push_back(x);
    }
    return out;
}

inline CountedScore recount(const std::vector<std::string>& predicted,
                            const std::vector<std::string>& gold) {
    const auto p = distinct(predicted), g = distinct(gold);
    int common = 0;
    for (const auto& x : p) {
        for (const auto& y : g) common += x == y ? 1 : 0;
    }
    CountedScore s;
    s.precision = p.empty() ? 0.0 : static_cast<double>(common) / static_cast<double>(p.size());
    s.recall = static_cast<double>(common) / static_cast<double>(g.size());
    s.f1 = s.precision + s.recall > 0.0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    s.hits = common > 0 ? 1 : 0;
    if (!predicted.empty()) {
        for (const auto& y : g) s.hits_at_1 |= predicted.front() == y ? 1 : 0;
    }
    return s;
}

// Small random label multiset over a tiny alphabet so overlaps are common.
inline std::vector<std::string> random_labels(std::mt19937_64& rng, int max_size, int alphabet) {
    std::vector<std::string> out(rng() % static_cast<unsigned>(max_size + 1));
    for (auto& x : out) x = "x" + std::to_string(rng() % static_cast<unsigned>(alphabet));
    return out;
}

} // namespace gsr::testing
