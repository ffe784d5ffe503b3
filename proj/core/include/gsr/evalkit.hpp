#pragma once

#include <gsr/beam_retriever.hpp>
#include <gsr/data_forge.hpp>

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gsr {

// Lowercase, trim, collapse internal whitespace.
std::string normalize_answer(std::string_view s);

struct RetrievalScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct E2EScore {
    int hits_at_1 = 0;
    int hits = 0;
    double f1 = 0.0;
};

// Labels are normalized and deduplicated first. Throws Error on empty gold.
RetrievalScore retrieval_metrics(std::span<const std::string> retrieved,
                                 std::span<const std::string> gold);
E2EScore e2e_metrics(std::span<const std::string> predicted, std::span<const std::string> gold);

double harmonic_f1(double precision, double recall);

// Means in [0, 1]; throw Error on an empty list.
RetrievalScore aggregate(std::span<const RetrievalScore> scores);
struct E2EMeans {
    double hits_at_1 = 0.0;
    double hits = 0.0;
    double f1 = 0.0;
};
E2EMeans aggregate(std::span<const E2EScore> scores);

// 0.5 -> "50.00"
std::string percent(double fraction);

struct ExampleRetrieval {
    std::string id;
    RetrievalScore score;
    RetrievalResult result;
    bool answer_in_graph = false; // some gold answer is a graph entity
};

// retrieve + retrieval_metrics per example, in input order.
std::vector<ExampleRetrieval> evaluate_retrieval(const GsrModel& model, const KnowledgeGraph& graph,
                                                 std::span<const QAExample> examples,
                                                 const RetrieveOptions& options);

struct SweepRow {
    int k = 0;
    RetrievalScore macro;
    std::size_t questions = 0;
    // Questions whose candidate chains at the previous k are not all among
    // this row's candidates.
    std::size_t superset_violations = 0;
};

struct SweepReport {
    int n = 0;
    std::vector<SweepRow> rows;
};

// ks must be non-empty and strictly increasing; every k must be >= n.
SweepReport beam_sweep(const GsrModel& model, const KnowledgeGraph& graph,
                       std::span<const QAExample> examples, std::span<const int> ks, int n,
                       Traversal traversal = Traversal::bidirectional);

std::string format_sweep_table(const SweepReport& report);
std::string sweep_json(const SweepReport& report);

struct RetrievalReport {
    int k = 0;
    int n = 0;
    std::size_t questions = 0;
    RetrievalScore macro;
    double answer_coverage = 0.0; // share of questions with a gold answer in the graph
    double mean_terminals = 0.0;
    std::size_t empty_retrievals = 0;
};

RetrievalReport summarize(std::span<const ExampleRetrieval> evaluated, int k, int n);
std::string format_report_table(const RetrievalReport& report);
std::string report_json(const RetrievalReport& report);

} // namespace gsr
