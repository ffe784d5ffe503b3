#include <gsr/evalkit.hpp>

#include <gsr/error.hpp>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <set>

namespace gsr {

namespace {

std::set<std::string> normalized_set(std::span<const std::string> labels) {
    std::set<std::string> out;
    for (const auto& l : labels) out.insert(normalize_answer(l));
    return out;
}

std::size_t overlap(const std::set<std::string>& a, const std::set<std::string>& b) {
    std::size_t n = 0;
    for (const auto& x : a) n += b.count(x);
    return n;
}

// Rounded to the printed precision so the JSON report is stable text.
double rounded(double fraction) {
    return std::stod(percent(fraction));
}

} // namespace

std::string normalize_answer(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

double harmonic_f1(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

RetrievalScore retrieval_metrics(std::span<const std::string> retrieved,
                                 std::span<const std::string> gold) {
    const auto g = normalized_set(gold);
    if (g.empty()) throw Error("retrieval_metrics: empty gold answer set");
    const auto r = normalized_set(retrieved);
    if (r.empty()) return {};
    const auto hit = static_cast<double>(overlap(r, g));
    RetrievalScore s;
    s.precision = hit / static_cast<double>(r.size());
    s.recall = hit / static_cast<double>(g.size());
    s.f1 = harmonic_f1(s.precision, s.recall);
    return s;
}

E2EScore e2e_metrics(std::span<const std::string> predicted, std::span<const std::string> gold) {
    const auto g = normalized_set(gold);
    if (g.empty()) throw Error("e2e_metrics: empty gold answer set");
    if (predicted.empty()) return {};
    const auto p = normalized_set(predicted);
    const auto hit = overlap(p, g);
    E2EScore s;
    s.hits_at_1 = g.count(normalize_answer(predicted.front())) ? 1 : 0;
    s.hits = hit > 0 ? 1 : 0;
    s.f1 = harmonic_f1(static_cast<double>(hit) / static_cast<double>(p.size()),
                       static_cast<double>(hit) / static_cast<double>(g.size()));
    return s;
}

RetrievalScore aggregate(std::span<const RetrievalScore> scores) {
    if (scores.empty()) throw Error("aggregate: no scores");
    RetrievalScore m;
    for (const auto& s : scores) {
        m.precision += s.precision;
        m.recall += s.recall;
        m.f1 += s.f1;
    }
    const auto n = static_cast<double>(scores.size());
    m.precision /= n;
    m.recall /= n;
    m.f1 /= n;
    return m;
}

E2EMeans aggregate(std::span<const E2EScore> scores) {
    if (scores.empty()) throw Error("aggregate: no scores");
    E2EMeans m;
    for (const auto& s : scores) {
        m.hits_at_1 += s.hits_at_1;
        m.hits += s.hits;
        m.f1 += s.f1;
    }
    const auto n = static_cast<double>(scores.size());
    m.hits_at_1 /= n;
    m.hits /= n;
    m.f1 /= n;
    return m;
}

std::string percent(double fraction) {
    return fmt::format("{:.2f}", fraction * 100.0);
}

std::vector<ExampleRetrieval> evaluate_retrieval(const GsrModel& model, const KnowledgeGraph& graph,
                                                 std::span<const QAExample> examples,
                                                 const RetrieveOptions& options) {
    std::vector<ExampleRetrieval> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) {
        ExampleRetrieval e;
        e.id = ex.id;
        e.result = retrieve(model, graph, ex.id, ex.question, ex.topic_entities, options);
        std::vector<std::string> labels;
        for (EntityId t : e.result.terminals) labels.push_back(graph.entity_label(t));
        e.score = retrieval_metrics(labels, ex.answers);
        e.answer_in_graph = std::any_of(ex.answers.begin(), ex.answers.end(), [&](const auto& a) {
            return graph.find_entity(a).has_value();
        });
        out.push_back(std::move(e));
    }
    return out;
}

SweepReport beam_sweep(const GsrModel& model, const KnowledgeGraph& graph,
                       std::span<const QAExample> examples, std::span<const int> ks, int n,
                       Traversal traversal) {
    if (ks.empty()) throw Error("beam_sweep: no beam sizes given");
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] < n) throw Error("beam_sweep: k=" + std::to_string(ks[i]) + " is below n");
        if (i > 0 && ks[i] <= ks[i - 1]) throw Error("beam_sweep: ks must be strictly increasing");
    }
    SweepReport report;
    report.n = n;
    // Per question, the candidate chains of the previous row.
    std::vector<std::set<std::vector<std::string>>> previous(examples.size());
    for (std::size_t i = 0; i < ks.size(); ++i) {
        RetrieveOptions opt;
        opt.k = ks[i];
        opt.n = n;
        opt.traversal = traversal;
        const auto evaluated = evaluate_retrieval(model, graph, examples, opt);
        SweepRow row;
        row.k = ks[i];
        row.questions = evaluated.size();
        std::vector<RetrievalScore> scores;
        for (std::size_t q = 0; q < evaluated.size(); ++q) {
            scores.push_back(evaluated[q].score);
            std::set<std::vector<std::string>> chains;
            for (const auto& c : evaluated[q].result.candidates) chains.insert(c.relations);
            if (i > 0 && !std::includes(chains.begin(), chains.end(), previous[q].begin(),
                                        previous[q].end())) {
                ++row.superset_violations;
            }
            previous[q] = std::move(chains);
        }
        if (!scores.empty()) row.macro = aggregate(scores);
        report.rows.push_back(row);
    }
    return report;
}

std::string format_sweep_table(const SweepReport& report) {
    std::string out = fmt::format("{:>4}  {:>9}  {:>9}  {:>9}  {:>9}  {:>10}\n", "k", "questions",
                                  "precision", "recall", "f1", "superset_x");
    for (const auto& r : report.rows) {
        out += fmt::format("{:>4}  {:>9}  {:>9}  {:>9}  {:>9}  {:>10}\n", r.k, r.questions,
                           percent(r.macro.precision), percent(r.macro.recall),
                           percent(r.macro.f1), r.superset_violations);
    }
    return out;
}

std::string sweep_json(const SweepReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        rows.push_back({{"k", r.k},
                        {"n", report.n},
                        {"questions", r.questions},
                        {"precision", rounded(r.macro.precision)},
                        {"recall", rounded(r.macro.recall)},
                        {"f1", rounded(r.macro.f1)},
                        {"superset_violations", r.superset_violations}});
    }
    return rows.dump(2) + "\n";
}

RetrievalReport summarize(std::span<const ExampleRetrieval> evaluated, int k, int n) {
    RetrievalReport r;
    r.k = k;
    r.n = n;
    r.questions = evaluated.size();
    if (evaluated.empty()) return r;
    std::vector<RetrievalScore> scores;
    std::size_t covered = 0;
    std::size_t terminals = 0;
    for (const auto& e : evaluated) {
        scores.push_back(e.score);
        covered += e.answer_in_graph ? 1 : 0;
        terminals += e.result.terminals.size();
        r.empty_retrievals += e.result.retained.empty() ? 1 : 0;
    }
    r.macro = aggregate(scores);
    r.answer_coverage = static_cast<double>(covered) / static_cast<double>(evaluated.size());
    r.mean_terminals = static_cast<double>(terminals) / static_cast<double>(evaluated.size());
    return r;
}

std::string format_report_table(const RetrievalReport& r) {
    std::string out;
    out += fmt::format("{:<18} {}\n", "questions", r.questions);
    out += fmt::format("{:<18} {}/{}\n", "beam k/n", r.k, r.n);
    out += fmt::format("{:<18} {}\n", "precision", percent(r.macro.precision));
    out += fmt::format("{:<18} {}\n", "recall", percent(r.macro.recall));
    out += fmt::format("{:<18} {}\n", "f1", percent(r.macro.f1));
    out += fmt::format("{:<18} {}\n", "answer coverage", percent(r.answer_coverage));
    out += fmt::format("{:<18} {:.2f}\n", "mean terminals", r.mean_terminals);
    out += fmt::format("{:<18} {}\n", "empty retrievals", r.empty_retrievals);
    return out;
}

std::string report_json(const RetrievalReport& r) {
    const nlohmann::json j = {{"k", r.k},
                              {"n", r.n},
                              {"questions", r.questions},
                              {"precision", rounded(r.macro.precision)},
                              {"recall", rounded(r.macro.recall)},
                              {"f1", rounded(r.macro.f1)},
                              {"answer_coverage", rounded(r.answer_coverage)},
                              {"mean_terminals", std::stod(fmt::format("{:.2f}", r.mean_terminals))},
                              {"empty_retrievals", r.empty_retrievals}};
    return j.dump(2) + "\n";
}

} // namespace gsr
