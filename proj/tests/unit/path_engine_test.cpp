#include "support.hpp"

#include <gsr/error.hpp>
#include <gsr/path_engine.hpp>

#include <doctest.h>

using namespace gsr;
using gsr::testing::ent;
using gsr::testing::rel;

namespace {

constexpr auto F = Direction::forward;
constexpr auto I = Direction::inverse;

std::vector<ReasoningPath> sorted(std::vector<ReasoningPath> v) {
    std::sort(v.begin(), v.end(), [](const ReasoningPath& a, const ReasoningPath& b) {
        return std::tie(a.entities, a.hops) < std::tie(b.entities, b.hops);
    });
    return v;
}

} // namespace

TEST_CASE("execute_chain on the toy graph") {
    const auto g = gsr::testing::toy_kg();
    const auto a = ent(g, "a"), b = ent(g, "b"), c = ent(g, "c"), m = ent(g, "m");
    const auto r1 = rel(g, "r1"), r2 = rel(g, "r2"), gg = rel(g, "g");

    const auto fwd = execute_chain(g, {a, {r1, r2}}, Traversal::forward_only);
    REQUIRE(fwd.paths.size() == 1);
    CHECK(fwd.paths[0].entities == std::vector<EntityId>{a, b, c});
    CHECK(fwd.paths[0].hops == HopSequence{{r1, F}, {r2, F}});
    CHECK(fwd.terminals == std::vector<EntityId>{c});
    CHECK_FALSE(fwd.truncated);

    const auto both = execute_chain(g, {a, {gg, gg}}, Traversal::bidirectional);
    const ReasoningPath via_m{{a, m, c}, {{gg, F}, {gg, I}}};
    CHECK(std::find(both.paths.begin(), both.paths.end(), via_m) != both.paths.end());
    CHECK(std::find(both.terminals.begin(), both.terminals.end(), a) != both.terminals.end());
    CHECK(std::find(both.terminals.begin(), both.terminals.end(), c) != both.terminals.end());

    // forward only cannot come back from m
    CHECK(execute_chain(g, {a, {gg, gg}}, Traversal::forward_only).paths.empty());

    for (std::uint32_t e = 0; e < g.entity_count(); ++e) {
        const auto empty = execute_chain(g, {EntityId{e}, {}});
        REQUIRE(empty.paths.size() == 1);
        CHECK(empty.paths[0].hops.empty());
        CHECK(empty.terminals == std::vector<EntityId>{EntityId{e}});
    }

    CHECK_THROWS_AS(execute_chain(g, {EntityId{42}, {r1}}), LookupError);
    CHECK_THROWS_AS(execute_chain(g, {a, {RelationId{42}}}), LookupError);
}

TEST_CASE("execute_chain caps flag rather than fail") {
    // star: hub h linked to 30 leaves under one relation
    GraphBuilder b;
    for (int i = 0; i < 30; ++i) b.add("h", "p", "l" + std::to_string(i));
    const auto g = std::move(b).build();
    const auto h = ent(g, "h");
    const auto p = rel(g, "p");

    ExecutionCaps caps;
    caps.max_paths = 7;
    const auto capped = execute_chain(g, {h, {p, p}}, Traversal::bidirectional, caps);
    CHECK(capped.truncated);
    CHECK(capped.paths.size() == 7);

    caps = {};
    caps.max_frontier = 5;
    const auto narrow = execute_chain(g, {h, {p}}, Traversal::forward_only, caps);
    CHECK(narrow.truncated);
    CHECK(narrow.terminals.size() == 5);

    const auto full = execute_chain(g, {h, {p, p}});
    CHECK_FALSE(full.truncated);
    CHECK(full.paths.size() == 30);
    CHECK(full.terminals == std::vector<EntityId>{h});
}

TEST_CASE("is_valid_chain") {
    const auto g = gsr::testing::toy_kg();
    const auto a = ent(g, "a");
    const auto r1 = rel(g, "r1"), r2 = rel(g, "r2");
    const RelationChain ok{r1, r2}, bad{r2};
    CHECK(is_valid_chain(g, a, ok, Traversal::forward_only));
    CHECK_FALSE(is_valid_chain(g, a, bad, Traversal::forward_only));
    CHECK(is_valid_chain(g, a, RelationChain{}));
    const RelationChain unknown{r1, RelationId{77}};
    CHECK_FALSE(is_valid_chain(g, a, unknown));
    CHECK_THROWS_AS(is_valid_chain(g, EntityId{77}, ok), LookupError);
}

TEST_CASE("shortest_paths on the toy graph") {
    const auto g = gsr::testing::toy_kg();
    const auto a = ent(g, "a"), b = ent(g, "b"), c = ent(g, "c");
    const auto r1 = rel(g, "r1"), r2 = rel(g, "r2"), gg = rel(g, "g");

    auto to_c = shortest_paths(g, a, c, 2);
    std::sort(to_c.begin(), to_c.end());
    std::vector<HopSequence> want{{{r1, F}, {r2, F}}, {{gg, F}, {gg, I}}};
    std::sort(want.begin(), want.end());
    CHECK(to_c == want);

    CHECK(shortest_paths(g, a, b, 3) == std::vector<HopSequence>{{{r1, F}}});
    CHECK(shortest_paths(g, c, c, 2) == std::vector<HopSequence>{HopSequence{}});
    CHECK(shortest_paths(g, a, c, 1).empty());
    CHECK_THROWS_AS(shortest_paths(g, a, c, 0), Error);
    CHECK_THROWS_AS(shortest_paths(g, a, EntityId{50}, 2), LookupError);
}

TEST_CASE("execute_chain matches a naive enumerator") {
    std::mt19937_64 rng(3);
    for (int round = 0; round < 40; ++round) {
        auto rg = gsr::testing::random_graph(rng, 20, 3, 2.0);
        const auto& g = rg.graph;
        std::uniform_int_distribution<std::uint32_t> re(0, static_cast<std::uint32_t>(rg.relations - 1));
        std::uniform_int_distribution<std::uint32_t> ee(0, static_cast<std::uint32_t>(rg.entities - 1));
        for (int trial = 0; trial < 20; ++trial) {
            const EntityId topic{ee(rng)};
            RelationChain chain(std::uniform_int_distribution<int>(0, 3)(rng));
            for (auto& r : chain) r = RelationId{re(rng)};
            for (auto mode : {Traversal::forward_only, Traversal::bidirectional}) {
                const bool bi = mode == Traversal::bidirectional;
                const auto got = execute_chain(g, {topic, chain}, mode);
                const auto want = gsr::testing::naive_paths(g, topic, chain, bi);
                CHECK(sorted(got.paths) == sorted(want));
                const auto ts = gsr::testing::terminals_of(want);
                CHECK(got.terminals == std::vector<EntityId>(ts.begin(), ts.end()));
                CHECK(is_valid_chain(g, topic, chain, mode) == !want.empty());
                // prefix closure
                if (!want.empty()) {
                    for (std::size_t k = 0; k <= chain.size(); ++k) {
                        CHECK(is_valid_chain(g, topic, std::span(chain).first(k), mode));
                    }
                }
            }
        }
    }
}

TEST_CASE("shortest_paths against Floyd-Warshall and exhaustive sequences") {
    std::mt19937_64 rng(9);
    for (int round = 0; round < 20; ++round) {
        auto rg = gsr::testing::random_graph(rng, 12, 3, 1.5);
        const auto& g = rg.graph;
        const auto dist = gsr::testing::floyd_warshall(g);
        for (std::uint32_t s = 0; s < g.entity_count(); ++s) {
            ShortestPathTree tree(g, EntityId{s}, 4);
            for (std::uint32_t t = 0; t < g.entity_count(); ++t) {
                const int d = dist[s][t];
                const auto got_d = tree.distance(EntityId{t});
                if (d < 0 || d > 4) {
                    CHECK_FALSE(got_d.has_value());
                    continue;
                }
                REQUIRE(got_d.has_value());
                CHECK(*got_d == d);
                const auto seqs = tree.sequences_to(EntityId{t});
                std::set<HopSequence> want;
                HopSequence scratch;
                gsr::testing::hop_sequences(g.triples(), EntityId{s}, EntityId{t}, d, scratch, want);
                CHECK(std::set<HopSequence>(seqs.begin(), seqs.end()) == want);
                CHECK(std::is_sorted(seqs.begin(), seqs.end()));
                for (const auto& q : seqs) {
                    CHECK(static_cast<int>(q.size()) == d);
                    const auto reached = follow_hops(g, EntityId{s}, q);
                    CHECK(std::binary_search(reached.begin(), reached.end(), EntityId{t}));
                }
            }
        }
    }
}

TEST_CASE("hop helpers") {
    const auto g = gsr::testing::toy_kg();
    const auto r1 = rel(g, "r1"), gg = rel(g, "g");
    const HopSequence seq{{r1, F}, {gg, I}};
    CHECK(relations_of(seq) == RelationChain{r1, gg});
    CHECK_FALSE(all_forward(seq));
    CHECK(all_forward(HopSequence{{r1, F}}));
    CHECK(all_forward(HopSequence{}));
}
