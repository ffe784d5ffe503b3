#pragma once

#include <gsr/kg_store.hpp>
#include <gsr/model.hpp>
#include <gsr/path_engine.hpp>

#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gsr {

// A chain is a sequence of relation (target) indexes; the end token is
// implicit in `finished`.
struct BeamHypothesis {
    std::vector<std::size_t> chain;
    double log_prob = 0.0;
    bool finished = false;
};

// Score descending, then chain lexicographic ascending.
bool beam_order(const BeamHypothesis& a, const BeamHypothesis& b);

// Length-capped beam search over the target space. Chains that reach
// `max_hops` relations are finished without scoring the end token. Returns
// up to k finished hypotheses in beam_order. Throws Error when k < 1,
// max_hops < 1 or max_hops exceeds the model's limit.
std::vector<BeamHypothesis> beam_decode(const GsrModel& model, const EncodedQuestion& question,
                                        int k, int max_hops);
std::vector<BeamHypothesis> beam_decode(const GsrModel& model, std::string_view question, int k,
                                        int max_hops);

struct RetrieveOptions {
    int k = 10;
    int n = 3;
    int max_hops = 0; // 0: the model's max_hops
    Traversal traversal = Traversal::bidirectional;
    ExecutionCaps caps{};
};

struct CandidateChain {
    std::vector<std::string> relations; // labels
    double score = 0.0;
    bool valid = false;
};

struct RetrievalResult {
    std::string question_id;
    std::vector<std::string> topics;      // resolved topic labels
    std::vector<CandidateChain> candidates; // beam order
    std::vector<std::size_t> retained;     // positions into candidates, rank order
    // One subgraph per (retained chain, topic it is valid from), chain rank
    // order first.
    std::vector<PathConstrainedSubgraph> subgraphs;
    std::vector<EntityId> terminals; // union over subgraphs; sorted, unique
    std::size_t dropped = 0;         // invalid candidates
    bool truncated = false;
};

// Maps a decoded chain to graph relation ids. Returns false when some
// relation is not in the graph.
bool to_graph_chain(const GsrModel& model, const KnowledgeGraph& graph,
                    std::span<const std::size_t> chain, RelationChain& out);

// Walks the ranked candidates keeping valid ones until n are kept. The
// empty chain never counts as valid. Throws LookupError when no topic label
// resolves; Error when k < n or n < 1.
RetrievalResult retrieve(const GsrModel& model, const KnowledgeGraph& graph,
                         std::string_view question_id, std::string_view question,
                         std::span<const std::string> topics, const RetrieveOptions& options = {});

// Same filtering over an already decoded candidate list.
RetrievalResult retrieve_from_candidates(const GsrModel& model, const KnowledgeGraph& graph,
                                         std::string_view question_id,
                                         std::span<const std::string> topics,
                                         std::span<const BeamHypothesis> ranked,
                                         const RetrieveOptions& options = {});

// {"id", "chains": [{"relations", "score", "valid"}], "terminals"} per line.
void write_retrieval_result(std::ostream& out, const KnowledgeGraph& graph,
                            const RetrievalResult& result);

} // namespace gsr
