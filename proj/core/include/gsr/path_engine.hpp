#pragma once

#include <gsr/kg_store.hpp>

#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace gsr {

// One step of a reasoning path. Forward: (from, relation, to) is a triple;
// inverse: (to, relation, from) is a triple.
struct DirectedHop {
    RelationId relation;
    Direction direction = Direction::forward;
    friend auto operator<=>(const DirectedHop&, const DirectedHop&) = default;
};

using HopSequence = std::vector<DirectedHop>;
using RelationChain = std::vector<RelationId>;

// A topic entity plus an ordered relation chain. The two halves are
// independent: the same chain can be replayed from any topic.
struct SubgraphId {
    EntityId topic;
    RelationChain chain;
    friend bool operator==(const SubgraphId&, const SubgraphId&) = default;
};

struct ReasoningPath {
    std::vector<EntityId> entities; // size hops.size() + 1
    HopSequence hops;
    friend bool operator==(const ReasoningPath&, const ReasoningPath&) = default;
};

enum class Traversal : std::uint8_t { forward_only, bidirectional };

struct ExecutionCaps {
    std::size_t max_paths = 10'000;
    std::size_t max_frontier = 100'000;
};

struct PathConstrainedSubgraph {
    SubgraphId id;
    std::vector<ReasoningPath> paths;
    std::vector<EntityId> terminals; // sorted, unique; last entity of each path
    bool truncated = false;
};

// Walks `id.chain` from `id.topic`. Only complete paths are emitted; dead
// ends are pruned before enumeration. Throws LookupError for unknown ids.
PathConstrainedSubgraph execute_chain(const KnowledgeGraph& graph, const SubgraphId& id,
                                      Traversal traversal = Traversal::bidirectional,
                                      const ExecutionCaps& caps = {});

// Early-exit reachability; unknown relations make the chain invalid. Throws
// LookupError for an unknown topic.
bool is_valid_chain(const KnowledgeGraph& graph, EntityId topic,
                    std::span<const RelationId> chain,
                    Traversal traversal = Traversal::bidirectional);

// Entities reached from `start` by following hops with their recorded
// directions. Sorted, unique.
std::vector<EntityId> follow_hops(const KnowledgeGraph& graph, EntityId start,
                                  std::span<const DirectedHop> hops);

inline constexpr std::size_t kMaxShortestSequences = 1'000;

// Breadth-first search over the graph with every triple traversable in both
// directions. Keeps per-node predecessor sets so all minimal hop sequences
// to any reached node can be enumerated.
class ShortestPathTree {
public:
    // With `stop_at`, expansion halts after the level that reaches it.
    ShortestPathTree(const KnowledgeGraph& graph, EntityId source, int max_hops,
                     std::optional<EntityId> stop_at = std::nullopt);

    std::optional<int> distance(EntityId target) const;

    // Distinct hop sequences of minimal length, in lexicographic order,
    // at most `cap` of them. Empty when target is farther than max_hops.
    std::vector<HopSequence> sequences_to(EntityId target,
                                          std::size_t cap = kMaxShortestSequences) const;

private:
    struct Pred {
        EntityId from;
        DirectedHop hop;
    };

    const KnowledgeGraph& graph_;
    EntityId source_;
    std::unordered_map<EntityId, int> dist_;
    std::unordered_map<EntityId, std::vector<Pred>> preds_;
};

std::vector<HopSequence> shortest_paths(const KnowledgeGraph& graph, EntityId source,
                                        EntityId target, int max_hops,
                                        std::size_t cap = kMaxShortestSequences);

RelationChain relations_of(std::span<const DirectedHop> hops);
bool all_forward(std::span<const DirectedHop> hops);

} // namespace gsr
