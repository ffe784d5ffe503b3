#include <gsr/kg_store.hpp>

#include <gsr/error.hpp>

#include "binary_io.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

namespace gsr {

std::uint32_t Interner::intern(std::string_view label) {
    if (auto it = index_.find(label); it != index_.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(labels_.size());
    labels_.emplace_back(label);
    index_.emplace(labels_.back(), id);
    return id;
}

std::optional<std::uint32_t> Interner::find(std::string_view label) const {
    if (auto it = index_.find(label); it != index_.end()) return it->second;
    return std::nullopt;
}

const std::string& Interner::label(std::uint32_t id) const {
    if (id >= labels_.size()) {
        throw LookupError("id " + std::to_string(id) + " out of range (size " +
                          std::to_string(labels_.size()) + ")");
    }
    return labels_[id];
}

std::optional<EntityId> KnowledgeGraph::find_entity(std::string_view label) const {
    if (auto id = entities_.find(label)) return EntityId{*id};
    return std::nullopt;
}

std::optional<RelationId> KnowledgeGraph::find_relation(std::string_view label) const {
    if (auto id = relations_.find(label)) return RelationId{*id};
    return std::nullopt;
}

std::optional<std::uint32_t> KnowledgeGraph::resolve(std::string_view label,
                                                     LabelKind kind) const {
    return kind == LabelKind::entity ? entities_.find(label) : relations_.find(label);
}

const std::string& KnowledgeGraph::entity_label(EntityId id) const {
    return entities_.label(id.value);
}

const std::string& KnowledgeGraph::relation_label(RelationId id) const {
    return relations_.label(id.value);
}

void KnowledgeGraph::check_entity(EntityId id) const {
    if (id.value >= entities_.size()) {
        throw LookupError("entity id " + std::to_string(id.value) + " out of range");
    }
}

void KnowledgeGraph::check_relation(RelationId id) const {
    if (id.value >= relations_.size()) {
        throw LookupError("relation id " + std::to_string(id.value) + " out of range");
    }
}

AdjacencyView KnowledgeGraph::edges(EntityId entity, Direction direction) const {
    check_entity(entity);
    const Csr& csr = index(direction);
    const std::size_t begin = csr.offsets[entity.value];
    const std::size_t end = csr.offsets[entity.value + 1];
    return {std::span(csr.relations).subspan(begin, end - begin),
            std::span(csr.neighbors).subspan(begin, end - begin)};
}

std::span<const EntityId> KnowledgeGraph::neighbors(EntityId entity, RelationId relation,
                                                    Direction direction) const {
    check_relation(relation);
    const AdjacencyView adj = edges(entity, direction);
    auto [lo, hi] = std::equal_range(adj.relations.begin(), adj.relations.end(), relation);
    const auto first = static_cast<std::size_t>(lo - adj.relations.begin());
    const auto count = static_cast<std::size_t>(hi - lo);
    return adj.neighbors.subspan(first, count);
}

bool KnowledgeGraph::contains(const Triple& t) const {
    return std::binary_search(triples_.begin(), triples_.end(), t);
}

std::vector<RelationStat> KnowledgeGraph::relation_catalog() const {
    std::vector<std::size_t> counts(relations_.size(), 0);
    for (const Triple& t : triples_) ++counts[t.relation.value];
    std::vector<RelationStat> out;
    out.reserve(counts.size());
    for (std::uint32_t r = 0; r < counts.size(); ++r) {
        if (counts[r] == 0) continue;
        out.push_back({RelationId{r}, relations_.label(r), counts[r]});
    }
    return out;
}

void KnowledgeGraph::build_indexes() {
    std::sort(triples_.begin(), triples_.end());
    triples_.erase(std::unique(triples_.begin(), triples_.end()), triples_.end());

    const std::size_t n = entities_.size();
    auto fill = [&](Csr& csr, bool forward) {
        struct Edge {
            EntityId from;
            RelationId relation;
            EntityId to;
            auto operator<=>(const Edge&) const = default;
        };
        std::vector<Edge> es;
        es.reserve(triples_.size());
        for (const Triple& t : triples_) {
            if (forward) {
                es.push_back({t.subject, t.relation, t.object});
            } else {
                es.push_back({t.object, t.relation, t.subject});
            }
        }
        std::sort(es.begin(), es.end());
        csr.offsets.assign(n + 1, 0);
        csr.relations.resize(es.size());
        csr.neighbors.resize(es.size());
        for (std::size_t i = 0; i < es.size(); ++i) {
            ++csr.offsets[es[i].from.value + 1];
            csr.relations[i] = es[i].relation;
            csr.neighbors[i] = es[i].to;
        }
        for (std::size_t i = 0; i < n; ++i) csr.offsets[i + 1] += csr.offsets[i];
    };
    fill(forward_, true);
    fill(inverse_, false);
}

void GraphBuilder::add(std::string_view subject, std::string_view relation,
                       std::string_view object) {
    const EntityId s{graph_.entities_.intern(subject)};
    const RelationId r{graph_.relations_.intern(relation)};
    const EntityId o{graph_.entities_.intern(object)};
    graph_.triples_.push_back({s, r, o});
}

void GraphBuilder::add_entity(std::string_view label) { graph_.entities_.intern(label); }

void GraphBuilder::add_relation(std::string_view label) { graph_.relations_.intern(label); }

void GraphBuilder::add(const Triple& t) {
    graph_.check_entity(t.subject);
    graph_.check_entity(t.object);
    graph_.check_relation(t.relation);
    graph_.triples_.push_back(t);
}

KnowledgeGraph GraphBuilder::build() && {
    graph_.build_indexes();
    return std::move(graph_);
}

KnowledgeGraph ingest_triples(std::istream& in) {
    GraphBuilder builder;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        std::string_view rest = line;
        std::string_view fields[3];
        std::size_t count = 0;
        while (true) {
            const auto tab = rest.find('\t');
            if (count < 3) fields[count] = rest.substr(0, tab);
            ++count;
            if (tab == std::string_view::npos) break;
            rest.remove_prefix(tab + 1);
        }
        if (count != 3) {
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected 3 tab-separated fields, got " + std::to_string(count));
        }
        for (const auto& f : fields) {
            if (f.empty()) {
                throw ParseError("line " + std::to_string(line_no) + ": empty field");
            }
        }
        builder.add(fields[0], fields[1], fields[2]);
    }
    return std::move(builder).build();
}

KnowledgeGraph load_triples_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open triple file " + path.string());
    return ingest_triples(in);
}

// Snapshot layout (all integers little-endian):
//   "GSRKG" | u8 version
//   u32 entity count, then per entity: u32 byte length + UTF-8 label
//   u32 relation count, then per relation: u32 byte length + label
//   u64 triple count, then per triple: u32 subject, u32 relation, u32 object
// Indexes are rebuilt on load; interner order is preserved so ids are stable.
void save_snapshot(const KnowledgeGraph& graph, std::ostream& out) {
    detail::BinaryWriter w(out);
    w.bytes("GSRKG", 5);
    w.u8(kSnapshotVersion);
    w.u32(static_cast<std::uint32_t>(graph.entity_count()));
    for (const auto& label : graph.entities().labels()) w.str(label);
    w.u32(static_cast<std::uint32_t>(graph.relation_count()));
    for (const auto& label : graph.relations().labels()) w.str(label);
    w.u64(graph.triple_count());
    for (const Triple& t : graph.triples()) {
        w.u32(t.subject.value);
        w.u32(t.relation.value);
        w.u32(t.object.value);
    }
    if (!out) throw Error("snapshot write failed");
}

KnowledgeGraph load_snapshot(std::istream& in) {
    detail::BinaryReader r(in, "kg snapshot");
    r.expect_magic("GSRKG");
    r.expect_version(kSnapshotVersion);
    GraphBuilder builder;
    const std::uint32_t n_entities = r.u32();
    for (std::uint32_t i = 0; i < n_entities; ++i) builder.add_entity(r.str());
    const std::uint32_t n_relations = r.u32();
    for (std::uint32_t i = 0; i < n_relations; ++i) builder.add_relation(r.str());
    const std::uint64_t n_triples = r.u64();
    for (std::uint64_t i = 0; i < n_triples; ++i) {
        Triple t;
        t.subject.value = r.u32();
        t.relation.value = r.u32();
        t.object.value = r.u32();
        try {
            builder.add(t);
        } catch (const LookupError& e) {
            throw FormatError(std::string("kg snapshot: corrupt triple: ") + e.what());
        }
    }
    return std::move(builder).build();
}

void save_snapshot_file(const KnowledgeGraph& graph, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write snapshot " + path.string());
    save_snapshot(graph, out);
}

KnowledgeGraph load_snapshot_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open snapshot " + path.string());
    return load_snapshot(in);
}

} // namespace gsr
