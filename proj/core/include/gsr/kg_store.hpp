#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gsr {

struct EntityId {
    std::uint32_t value = 0;
    friend auto operator<=>(const EntityId&, const EntityId&) = default;
};

struct RelationId {
    std::uint32_t value = 0;
    friend auto operator<=>(const RelationId&, const RelationId&) = default;
};

enum class Direction : std::uint8_t { forward, inverse };

enum class LabelKind : std::uint8_t { entity, relation };

struct Triple {
    EntityId subject;
    RelationId relation;
    EntityId object;
    friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct RelationStat {
    RelationId id;
    std::string label;
    std::size_t triple_count = 0;
};

struct GraphCounts {
    std::size_t entities = 0;
    std::size_t relations = 0;
    std::size_t triples = 0;
};

// Label <-> dense id table. Ids are assigned in first-seen order.
class Interner {
public:
    std::uint32_t intern(std::string_view label);
    std::optional<std::uint32_t> find(std::string_view label) const;
    const std::string& label(std::uint32_t id) const;
    std::size_t size() const noexcept { return labels_.size(); }
    const std::vector<std::string>& labels() const noexcept { return labels_; }

private:
    struct Hash {
        using is_transparent = void;
        std::size_t operator()(std::string_view s) const noexcept {
            return std::hash<std::string_view>{}(s);
        }
    };
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::uint32_t, Hash, std::equal_to<>> index_;
};

// Edges of one entity in one direction, grouped by relation. relations[i] and
// neighbors[i] describe one edge; the pair sequence is sorted and unique.
struct AdjacencyView {
    std::span<const RelationId> relations;
    std::span<const EntityId> neighbors;
    std::size_t size() const noexcept { return relations.size(); }
};

// Immutable triple store. Readers may share one instance across threads.
class KnowledgeGraph {
public:
    KnowledgeGraph() = default;

    std::optional<EntityId> find_entity(std::string_view label) const;
    std::optional<RelationId> find_relation(std::string_view label) const;
    std::optional<std::uint32_t> resolve(std::string_view label, LabelKind kind) const;

    const std::string& entity_label(EntityId id) const;
    const std::string& relation_label(RelationId id) const;

    // Sorted, duplicate-free. Forward: objects of (entity, relation, *);
    // inverse: subjects of (*, relation, entity). Throws LookupError on
    // out-of-range ids.
    std::span<const EntityId> neighbors(EntityId entity, RelationId relation,
                                        Direction direction) const;
    AdjacencyView edges(EntityId entity, Direction direction) const;

    std::vector<RelationStat> relation_catalog() const;

    // Deduplicated triples in (subject, relation, object) order.
    std::span<const Triple> triples() const noexcept { return triples_; }
    bool contains(const Triple& t) const;

    std::size_t entity_count() const noexcept { return entities_.size(); }
    std::size_t relation_count() const noexcept { return relations_.size(); }
    std::size_t triple_count() const noexcept { return triples_.size(); }
    GraphCounts counts() const noexcept {
        return {entity_count(), relation_count(), triple_count()};
    }

    const Interner& entities() const noexcept { return entities_; }
    const Interner& relations() const noexcept { return relations_; }

private:
    friend class GraphBuilder;

    struct Csr {
        std::vector<std::uint32_t> offsets;
        std::vector<RelationId> relations;
        std::vector<EntityId> neighbors;
    };

    void build_indexes();
    const Csr& index(Direction d) const noexcept {
        return d == Direction::forward ? forward_ : inverse_;
    }
    void check_entity(EntityId id) const;
    void check_relation(RelationId id) const;

    Interner entities_;
    Interner relations_;
    std::vector<Triple> triples_;
    Csr forward_;
    Csr inverse_;
};

// Accumulates labelled triples, then freezes them into a KnowledgeGraph.
class GraphBuilder {
public:
    void add(std::string_view subject, std::string_view relation, std::string_view object);
    // Interns without adding a triple; used when loading snapshots so ids
    // keep their saved order.
    void add_entity(std::string_view label);
    void add_relation(std::string_view label);
    void add(const Triple& t);
    KnowledgeGraph build() &&;

private:
    KnowledgeGraph graph_;
};

// Tab-separated triples, one per line. Blank lines are skipped; a line with
// the wrong field count or an empty field throws ParseError naming the line.
KnowledgeGraph ingest_triples(std::istream& in);
KnowledgeGraph load_triples_file(const std::filesystem::path& path);

inline constexpr std::uint8_t kSnapshotVersion = 1;

void save_snapshot(const KnowledgeGraph& graph, std::ostream& out);
KnowledgeGraph load_snapshot(std::istream& in);
void save_snapshot_file(const KnowledgeGraph& graph, const std::filesystem::path& path);
KnowledgeGraph load_snapshot_file(const std::filesystem::path& path);

} // namespace gsr

template <>
struct std::hash<gsr::EntityId> {
    std::size_t operator()(gsr::EntityId id) const noexcept { return id.value; }
};

template <>
struct std::hash<gsr::RelationId> {
    std::size_t operator()(gsr::RelationId id) const noexcept { return id.value; }
};
