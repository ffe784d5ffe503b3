#pragma once

#include <gsr/chat_client.hpp>
#include <gsr/kg_store.hpp>
#include <gsr/path_engine.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gsr {

struct QAExample {
    std::string id;
    std::string question;
    std::vector<std::string> topic_entities;
    std::vector<std::string> answers;
};

enum class Tier : std::uint8_t { raw, filtered, selected };

std::string_view to_string(Tier tier);
Tier tier_from_string(std::string_view s);

// A hop whose relation is stored by label, so training data stays readable
// and independent of interner order.
struct ChainHop {
    std::string relation;
    Direction direction = Direction::forward;
    friend auto operator<=>(const ChainHop&, const ChainHop&) = default;
};

using LabeledChain = std::vector<ChainHop>;

struct RetrievalSample {
    std::string example_id;
    std::string question;
    std::string topic;
    Tier tier = Tier::raw;
    std::vector<LabeledChain> chains;
};

struct IndexingSample {
    std::string pseudo_question;
    std::string relation;
    friend bool operator==(const IndexingSample&, const IndexingSample&) = default;
};

inline constexpr std::string_view kSubjectPlaceholder = "[SUBJECT]";

struct QuestionTemplate {
    std::string relation;
    std::string text;
};

// --- retrieval data -------------------------------------------------------

struct SkippedExample {
    std::string example_id;
    std::string reason;
};

struct MiningResult {
    std::vector<RetrievalSample> samples;
    std::vector<SkippedExample> skipped;
};

// One sample per (example, topic entity). Chains are the union over the
// example's answers of all shortest hop sequences, deduplicated by their
// (relation, direction) sequence and kept in lexicographic order.
MiningResult mine_raw_retrieval(const KnowledgeGraph& graph, std::span<const QAExample> examples,
                                int max_hops);

std::vector<RetrievalSample> filter_forward_only(std::span<const RetrievalSample> samples);

// Picks chains from the numbered candidate list. Returns the raw reply text;
// select_with_llm owns parsing.
class ChainSelector {
public:
    virtual ~ChainSelector() = default;
    virtual std::string choose(std::string_view question,
                               std::span<const LabeledChain> candidates) = 0;
};

// Sends the path-selection prompt through a chat client.
class LlmChainSelector final : public ChainSelector {
public:
    explicit LlmChainSelector(ChatClient& client) : client_(client) {}
    std::string choose(std::string_view question,
                       std::span<const LabeledChain> candidates) override;

private:
    ChatClient& client_;
};

// Deterministic stand-in for the LLM judge.
class MockChainSelector final : public ChainSelector {
public:
    enum class Policy : std::uint8_t {
        reject_repeated, // every chain that does not reuse a relation
        first,           // the first candidate only
        all,             // every candidate
    };
    explicit MockChainSelector(Policy policy) : policy_(policy) {}
    std::string choose(std::string_view question,
                       std::span<const LabeledChain> candidates) override;

private:
    Policy policy_;
};

// "1. rel_a -> rel_b (inverse)" lines, one per candidate.
std::string render_candidate_list(std::span<const LabeledChain> candidates);

struct IndexListParse {
    std::vector<std::size_t> indexes; // zero-based, ascending, unique
    std::vector<std::string> ignored; // out-of-range or non-numeric items
};

// Comma-separated one-based indexes.
IndexListParse parse_index_list(std::string_view reply, std::size_t candidate_count);

struct SelectionResult {
    std::vector<RetrievalSample> samples;
    std::size_t fallbacks = 0;       // examples that fell back to the filtered tier
    std::size_t empty_selections = 0; // examples where nothing valid was chosen (dropped)
    std::size_t ignored_indexes = 0;
};

// Raised when the selector cannot be reached; carries what was finished.
class SelectionAborted : public Error {
public:
    SelectionAborted(const std::string& what, SelectionResult partial, std::size_t processed)
        : Error(what), partial_(std::move(partial)), processed_(processed) {}
    const SelectionResult& partial() const noexcept { return partial_; }
    std::size_t processed() const noexcept { return processed_; }

private:
    SelectionResult partial_;
    std::size_t processed_;
};

SelectionResult select_with_llm(std::span<const RetrievalSample> raw, ChainSelector& selector);

// --- indexing data --------------------------------------------------------

class TemplateGenerator {
public:
    virtual ~TemplateGenerator() = default;
    // Candidate template strings; validation happens in generate_templates.
    virtual std::vector<std::string> generate(std::string_view relation,
                                              std::string_view triple_example) = 0;
};

// Ten fixed skeletons around the last dotted segment of the relation label.
class OfflineTemplateGenerator final : public TemplateGenerator {
public:
    std::vector<std::string> generate(std::string_view relation,
                                      std::string_view triple_example) override;
};

class LlmTemplateGenerator final : public TemplateGenerator {
public:
    explicit LlmTemplateGenerator(ChatClient& client) : client_(client) {}
    std::vector<std::string> generate(std::string_view relation,
                                      std::string_view triple_example) override;

private:
    ChatClient& client_;
};

// "people.person.sibling_s" -> "sibling s"
std::string relation_phrase(std::string_view relation);

// Splits a model reply into template lines, dropping list markers.
std::vector<std::string> split_generated_lines(std::string_view reply);

std::size_t count_placeholders(std::string_view text);

inline constexpr std::size_t kTemplatesPerRelation = 10;
inline constexpr std::size_t kPseudoQuestionsPerRelation = 10;

// At most ten templates; texts without exactly one placeholder are dropped.
std::vector<QuestionTemplate> generate_templates(std::string_view relation,
                                                 std::string_view triple_example,
                                                 TemplateGenerator& generator);

std::string triple_example(const KnowledgeGraph& graph, RelationId relation);

// Templates for every relation in the catalog.
std::vector<QuestionTemplate> generate_all_templates(const KnowledgeGraph& graph,
                                                     TemplateGenerator& generator);

// Each template is filled with `per_template` subjects drawn uniformly from
// its relation's triples. A relation contributes at most ten distinct pseudo
// questions; relations without triples contribute nothing.
std::vector<IndexingSample> build_indexing_samples(const KnowledgeGraph& graph,
                                                   std::span<const QuestionTemplate> templates,
                                                   int per_template, std::uint64_t seed);

// --- diagnostics ----------------------------------------------------------

struct DataStats {
    std::size_t example_count = 0;
    std::size_t chain_count = 0;
    double mean_chain_length = 0.0;
    double repeated_relation_fraction = 0.0;
    // Share of chains with at least one inverse hop; what forward-only
    // filtering would discard.
    double inverse_chain_fraction = 0.0;
};

bool has_repeated_relation(const LabeledChain& chain);
DataStats data_stats(std::span<const RetrievalSample> samples);

// --- JSONL ----------------------------------------------------------------

std::vector<QAExample> read_qa_examples(std::istream& in);
void write_qa_examples(std::ostream& out, std::span<const QAExample> examples);
std::vector<RetrievalSample> read_retrieval_samples(std::istream& in);
void write_retrieval_samples(std::ostream& out, std::span<const RetrievalSample> samples);
std::vector<IndexingSample> read_indexing_samples(std::istream& in);
void write_indexing_samples(std::ostream& out, std::span<const IndexingSample> samples);

LabeledChain label_hops(const KnowledgeGraph& graph, std::span<const DirectedHop> hops);
// Throws LookupError when a relation label is not in the graph.
HopSequence resolve_hops(const KnowledgeGraph& graph, const LabeledChain& chain);

} // namespace gsr
