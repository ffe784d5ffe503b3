#include <gsr/path_engine.hpp>

#include <gsr/error.hpp>

#include <algorithm>
#include <iterator>
#include <set>
#include <unordered_set>

namespace gsr {

namespace {

using EntitySet = std::vector<EntityId>; // sorted, unique

constexpr Direction kDirections[] = {Direction::forward, Direction::inverse};

bool contains(const EntitySet& set, EntityId e) {
    return std::binary_search(set.begin(), set.end(), e);
}

void normalize(EntitySet& set) {
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
}

std::span<const Direction> directions_for(Traversal traversal) {
    return traversal == Traversal::bidirectional ? std::span<const Direction>(kDirections)
                                                 : std::span<const Direction>(kDirections, 1);
}

void check_topic(const KnowledgeGraph& graph, EntityId topic) {
    if (topic.value >= graph.entity_count()) {
        throw LookupError("topic entity id " + std::to_string(topic.value) + " not in graph");
    }
}

struct Enumerator {
    const KnowledgeGraph& graph;
    const RelationChain& chain;
    std::span<const Direction> dirs;
    const std::vector<EntitySet>& alive;
    std::size_t max_paths;

    std::vector<ReasoningPath>& out;
    bool truncated = false;
    ReasoningPath current;

    void run(EntityId start) {
        current.entities.assign(1, start);
        current.hops.clear();
        dfs(0);
    }

    // Returns false once the path budget is exhausted.
    bool dfs(std::size_t depth) {
        if (depth == chain.size()) {
            if (out.size() >= max_paths) {
                truncated = true;
                return false;
            }
            out.push_back(current);
            return true;
        }
        const EntityId at = current.entities.back();
        for (Direction d : dirs) {
            for (EntityId next : graph.neighbors(at, chain[depth], d)) {
                if (!contains(alive[depth + 1], next)) continue;
                current.entities.push_back(next);
                current.hops.push_back({chain[depth], d});
                const bool more = dfs(depth + 1);
                current.entities.pop_back();
                current.hops.pop_back();
                if (!more) return false;
            }
        }
        return true;
    }
};

} // namespace

PathConstrainedSubgraph execute_chain(const KnowledgeGraph& graph, const SubgraphId& id,
                                      Traversal traversal, const ExecutionCaps& caps) {
    check_topic(graph, id.topic);
    for (RelationId r : id.chain) {
        if (r.value >= graph.relation_count()) {
            throw LookupError("relation id " + std::to_string(r.value) + " not in graph");
        }
    }

    PathConstrainedSubgraph result;
    result.id = id;
    const auto dirs = directions_for(traversal);
    const std::size_t n = id.chain.size();

    // Forward reachability per layer.
    std::vector<EntitySet> layers(n + 1);
    layers[0] = {id.topic};
    for (std::size_t i = 0; i < n; ++i) {
        EntitySet next;
        for (EntityId e : layers[i]) {
            for (Direction d : dirs) {
                auto nb = graph.neighbors(e, id.chain[i], d);
                next.insert(next.end(), nb.begin(), nb.end());
            }
        }
        normalize(next);
        if (next.size() > caps.max_frontier) {
            next.resize(caps.max_frontier);
            result.truncated = true;
        }
        layers[i + 1] = std::move(next);
        if (layers[i + 1].empty()) return result;
    }

    // Backward pass: keep only entities that can still complete the chain.
    std::vector<EntitySet> alive(n + 1);
    alive[n] = layers[n];
    for (std::size_t i = n; i-- > 0;) {
        for (EntityId e : layers[i]) {
            bool ok = false;
            for (Direction d : dirs) {
                for (EntityId next : graph.neighbors(e, id.chain[i], d)) {
                    if (contains(alive[i + 1], next)) {
                        ok = true;
                        break;
                    }
                }
                if (ok) break;
            }
            if (ok) alive[i].push_back(e);
        }
    }
    if (alive[0].empty()) return result;

    Enumerator en{graph, id.chain, dirs, alive, caps.max_paths, result.paths, false, {}};
    en.run(id.topic);
    result.truncated = result.truncated || en.truncated;

    for (const ReasoningPath& p : result.paths) result.terminals.push_back(p.entities.back());
    normalize(result.terminals);
    return result;
}

bool is_valid_chain(const KnowledgeGraph& graph, EntityId topic,
                    std::span<const RelationId> chain, Traversal traversal) {
    check_topic(graph, topic);
    for (RelationId r : chain) {
        if (r.value >= graph.relation_count()) return false;
    }
    if (chain.empty()) return true;

    const auto dirs = directions_for(traversal);
    // (depth, entity) pairs already known to be dead ends.
    std::vector<std::unordered_set<EntityId>> dead(chain.size());

    auto reach = [&](auto&& self, EntityId at, std::size_t depth) -> bool {
        if (depth == chain.size()) return true;
        if (dead[depth].contains(at)) return false;
        for (Direction d : dirs) {
            for (EntityId next : graph.neighbors(at, chain[depth], d)) {
                if (self(self, next, depth + 1)) return true;
            }
        }
        dead[depth].insert(at);
        return false;
    };
    return reach(reach, topic, 0);
}

std::vector<EntityId> follow_hops(const KnowledgeGraph& graph, EntityId start,
                                  std::span<const DirectedHop> hops) {
    check_topic(graph, start);
    EntitySet frontier{start};
    for (const DirectedHop& h : hops) {
        if (h.relation.value >= graph.relation_count()) return {};
        EntitySet next;
        for (EntityId e : frontier) {
            auto nb = graph.neighbors(e, h.relation, h.direction);
            next.insert(next.end(), nb.begin(), nb.end());
        }
        normalize(next);
        frontier = std::move(next);
        if (frontier.empty()) break;
    }
    return frontier;
}

ShortestPathTree::ShortestPathTree(const KnowledgeGraph& graph, EntityId source, int max_hops,
                                   std::optional<EntityId> stop_at)
    : graph_(graph), source_(source) {
    check_topic(graph, source);
    if (stop_at) check_topic(graph, *stop_at);
    if (max_hops < 1) throw Error("shortest_paths: max_hops must be >= 1");

    dist_[source] = 0;
    EntitySet frontier{source};
    for (int depth = 0; depth < max_hops && !frontier.empty(); ++depth) {
        if (stop_at && dist_.contains(*stop_at)) break;
        EntitySet next;
        for (EntityId u : frontier) {
            for (Direction d : kDirections) {
                const AdjacencyView adj = graph.edges(u, d);
                for (std::size_t i = 0; i < adj.size(); ++i) {
                    const EntityId v = adj.neighbors[i];
                    auto [it, inserted] = dist_.try_emplace(v, depth + 1);
                    if (!inserted && it->second != depth + 1) continue;
                    if (inserted) next.push_back(v);
                    preds_[v].push_back({u, {adj.relations[i], d}});
                }
            }
        }
        normalize(next);
        frontier = std::move(next);
    }
}

std::optional<int> ShortestPathTree::distance(EntityId target) const {
    if (auto it = dist_.find(target); it != dist_.end()) return it->second;
    return std::nullopt;
}

std::vector<HopSequence> ShortestPathTree::sequences_to(EntityId target,
                                                        std::size_t cap) const {
    const auto d = distance(target);
    if (!d) return {};
    if (*d == 0) return {HopSequence{}};

    // Nodes of the shortest-path DAG that lead to target, grouped by level.
    std::vector<EntitySet> levels(static_cast<std::size_t>(*d) + 1);
    levels[*d] = {target};
    for (int level = *d; level > 0; --level) {
        EntitySet prev;
        for (EntityId v : levels[level]) {
            for (const Pred& p : preds_.at(v)) prev.push_back(p.from);
        }
        normalize(prev);
        levels[level - 1] = std::move(prev);
    }

    // Distinct hop sequences from source to each DAG node, level by level.
    using SequenceSet = std::set<HopSequence>;
    std::unordered_map<EntityId, SequenceSet> seqs;
    seqs[source_].insert(HopSequence{});
    for (int level = 1; level <= *d; ++level) {
        for (EntityId v : levels[level]) {
            SequenceSet& mine = seqs[v];
            for (const Pred& p : preds_.at(v)) {
                auto it = seqs.find(p.from);
                if (it == seqs.end()) continue;
                for (const HopSequence& s : it->second) {
                    HopSequence ext = s;
                    ext.push_back(p.hop);
                    mine.insert(std::move(ext));
                    if (mine.size() > cap) mine.erase(std::prev(mine.end()));
                }
            }
        }
    }
    const SequenceSet& result = seqs[target];
    return {result.begin(), result.end()};
}

std::vector<HopSequence> shortest_paths(const KnowledgeGraph& graph, EntityId source,
                                        EntityId target, int max_hops, std::size_t cap) {
    ShortestPathTree tree(graph, source, max_hops, target);
    return tree.sequences_to(target, cap);
}

RelationChain relations_of(std::span<const DirectedHop> hops) {
    RelationChain out;
    out.reserve(hops.size());
    for (const auto& h : hops) out.push_back(h.relation);
    return out;
}

bool all_forward(std::span<const DirectedHop> hops) {
    return std::all_of(hops.begin(), hops.end(),
                       [](const DirectedHop& h) { return h.direction == Direction::forward; });
}

} // namespace gsr
