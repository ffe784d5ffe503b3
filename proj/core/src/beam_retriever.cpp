#include <gsr/beam_retriever.hpp>

#include <gsr/error.hpp>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <ostream>

namespace gsr {

bool beam_order(const BeamHypothesis& a, const BeamHypothesis& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    if (a.chain != b.chain) return a.chain < b.chain;
    // Same chain and score: a finished hypothesis ranks before its live twin.
    return a.finished && !b.finished;
}

std::vector<BeamHypothesis> beam_decode(const GsrModel& model, const EncodedQuestion& question,
                                        int k, int max_hops) {
    if (k < 1) throw Error("beam_decode: k must be >= 1");
    if (max_hops < 1) throw Error("beam_decode: max_hops must be >= 1");
    if (max_hops > model.config().max_hops) {
        throw Error("beam_decode: max_hops " + std::to_string(max_hops) +
                    " exceeds model limit " + std::to_string(model.config().max_hops));
    }
    const auto width = static_cast<std::size_t>(k);
    const std::size_t end = model.end_target();
    const auto H = static_cast<std::size_t>(max_hops);

    std::vector<BeamHypothesis> alive{{{}, 0.0, false}};
    std::vector<BeamHypothesis> done;
    std::vector<BeamHypothesis> pool;

    while (!alive.empty()) {
        pool.clear();
        for (const auto& h : alive) {
            const std::vector<double> lp = model.next_token_log_probs(question, h.chain);
            pool.push_back({h.chain, h.log_prob + lp[end], true});
            for (std::size_t t = 0; t < end; ++t) {
                BeamHypothesis next{h.chain, h.log_prob + lp[t], false};
                next.chain.push_back(t);
                next.finished = next.chain.size() == H;
                pool.push_back(std::move(next));
            }
        }
        const std::size_t keep = std::min(width, pool.size());
        std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep),
                          pool.end(), beam_order);
        alive.clear();
        for (std::size_t i = 0; i < keep; ++i) {
            (pool[i].finished ? done : alive).push_back(std::move(pool[i]));
        }
        // Scores only fall as chains grow; stop once no live hypothesis can
        // enter the top k.
        if (done.size() >= width && !alive.empty()) {
            std::sort(done.begin(), done.end(), beam_order);
            if (alive.front().log_prob < done[width - 1].log_prob) break;
        }
    }
    std::sort(done.begin(), done.end(), beam_order);
    if (done.size() > width) done.resize(width);
    return done;
}

std::vector<BeamHypothesis> beam_decode(const GsrModel& model, std::string_view question, int k,
                                        int max_hops) {
    const auto input = model.encode_question(Task::retrieval, question);
    return beam_decode(model, model.encode(input), k, max_hops);
}

bool to_graph_chain(const GsrModel& model, const KnowledgeGraph& graph,
                    std::span<const std::size_t> chain, RelationChain& out) {
    out.clear();
    for (std::size_t idx : chain) {
        auto rel = graph.find_relation(model.vocab().relation_label(idx));
        if (!rel) return false;
        out.push_back(*rel);
    }
    return true;
}

RetrievalResult retrieve_from_candidates(const GsrModel& model, const KnowledgeGraph& graph,
                                         std::string_view question_id,
                                         std::span<const std::string> topics,
                                         std::span<const BeamHypothesis> ranked,
                                         const RetrieveOptions& options) {
    if (options.n < 1) throw Error("retrieve: n must be >= 1");
    if (options.k < options.n) throw Error("retrieve: k must be >= n");

    RetrievalResult result;
    result.question_id = std::string(question_id);
    std::vector<EntityId> topic_ids;
    for (const auto& label : topics) {
        if (auto id = graph.find_entity(label)) {
            topic_ids.push_back(*id);
            result.topics.push_back(label);
        } else {
            spdlog::debug("retrieve {}: topic \"{}\" not in graph", question_id, label);
        }
    }
    if (topic_ids.empty()) {
        throw LookupError("retrieve " + std::string(question_id) +
                          ": no topic entity resolves in the graph");
    }

    RelationChain chain;
    for (const auto& hyp : ranked) {
        CandidateChain cand;
        cand.score = hyp.log_prob;
        for (std::size_t idx : hyp.chain) cand.relations.push_back(model.vocab().relation_label(idx));

        std::vector<EntityId> valid_from;
        if (!hyp.chain.empty() && to_graph_chain(model, graph, hyp.chain, chain)) {
            for (EntityId t : topic_ids) {
                if (is_valid_chain(graph, t, chain, options.traversal)) valid_from.push_back(t);
            }
        }
        cand.valid = !valid_from.empty();
        if (!cand.valid) ++result.dropped;
        if (cand.valid && result.retained.size() < static_cast<std::size_t>(options.n)) {
            result.retained.push_back(result.candidates.size());
            for (EntityId t : valid_from) {
                auto sub = execute_chain(graph, {t, chain}, options.traversal, options.caps);
                result.truncated = result.truncated || sub.truncated;
                result.terminals.insert(result.terminals.end(), sub.terminals.begin(),
                                        sub.terminals.end());
                result.subgraphs.push_back(std::move(sub));
            }
        }
        result.candidates.push_back(std::move(cand));
    }
    std::sort(result.terminals.begin(), result.terminals.end());
    result.terminals.erase(std::unique(result.terminals.begin(), result.terminals.end()),
                           result.terminals.end());
    if (result.retained.empty()) {
        spdlog::debug("retrieve {}: no valid chain among {} candidates", question_id,
                      result.candidates.size());
    }
    return result;
}

RetrievalResult retrieve(const GsrModel& model, const KnowledgeGraph& graph,
                         std::string_view question_id, std::string_view question,
                         std::span<const std::string> topics, const RetrieveOptions& options) {
    if (options.n < 1) throw Error("retrieve: n must be >= 1");
    if (options.k < options.n) throw Error("retrieve: k must be >= n");
    const int H = options.max_hops > 0 ? options.max_hops : model.config().max_hops;
    const auto ranked = beam_decode(model, question, options.k, H);
    return retrieve_from_candidates(model, graph, question_id, topics, ranked, options);
}

void write_retrieval_result(std::ostream& out, const KnowledgeGraph& graph,
                            const RetrievalResult& result) {
    nlohmann::json chains = nlohmann::json::array();
    for (const auto& c : result.candidates) {
        chains.push_back({{"relations", c.relations}, {"score", c.score}, {"valid", c.valid}});
    }
    nlohmann::json terminals = nlohmann::json::array();
    for (EntityId e : result.terminals) terminals.push_back(graph.entity_label(e));
    nlohmann::json line = {{"id", result.question_id},
                           {"chains", std::move(chains)},
                           {"terminals", std::move(terminals)}};
    out << line.dump() << '\n';
}

} // namespace gsr
