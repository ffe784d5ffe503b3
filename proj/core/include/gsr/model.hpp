#pragma once

#include <gsr/data_forge.hpp>
#include <gsr/vocabulary.hpp>

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace gsr {

struct ModelConfig {
    int width = 128;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int heads = 4;
    int ff_width = 256;
    int max_question_tokens = 32;
    int max_hops = 4; // H: longest chain the decoder may emit
    double dropout = 0.1;
    std::uint64_t seed = 17;

    // Throws ConfigError when inconsistent.
    void validate() const;
};

using Matrix = Eigen::MatrixXd;

struct Parameter {
    std::string name;
    Matrix value;
};

// Encoder output for one question; reused across decoding steps.
struct EncodedQuestion {
    Matrix memory; // tokens x width
};

// One teacher-forced example: encoder input tokens and decoder targets
// (target indices, ending with the end target).
struct TrainingPair {
    std::vector<TokenId> input;
    std::vector<std::size_t> targets;
};

// Pre-norm transformer encoder-decoder over the shared vocabulary. The
// output projection covers only the target space, so the decoder can never
// emit a word, prefix, or control token other than end.
class GsrModel {
public:
    // init_model: deterministic under config.seed.
    GsrModel(ModelConfig config, Vocabulary vocab);

    const ModelConfig& config() const noexcept { return config_; }
    const Vocabulary& vocab() const noexcept { return vocab_; }
    std::size_t target_size() const noexcept { return vocab_.target_size(); }
    std::size_t end_target() const noexcept { return vocab_.end_target(); }

    std::vector<TokenId> encode_question(Task task, std::string_view question) const;
    EncodedQuestion encode(std::span<const TokenId> input) const;

    // Unnormalized scores over the target space given a prefix of relation
    // indices. Throws Error when prefix.size() >= max_hops.
    std::vector<double> next_token_logits(const EncodedQuestion& question,
                                          std::span<const std::size_t> prefix) const;
    std::vector<double> next_token_log_probs(const EncodedQuestion& question,
                                             std::span<const std::size_t> prefix) const;

    // Mean token cross-entropy over the batch. When `grads` is non-null it
    // receives d(loss)/d(parameter), shaped like parameters(). `dropout_rng`
    // enables dropout (training mode).
    double loss(std::span<const TrainingPair> batch, std::vector<Matrix>* grads = nullptr,
                std::mt19937_64* dropout_rng = nullptr) const;

    std::span<const Parameter> parameters() const noexcept { return params_; }
    std::vector<Parameter>& mutable_parameters() noexcept { return params_; }
    std::size_t parameter_count() const noexcept;

    std::vector<Matrix> zero_gradients() const;

private:
    friend struct ModelPass;

    struct Linear {
        std::size_t w, b;
    };
    struct Norm {
        std::size_t gamma, beta;
    };
    struct Attention {
        Linear q, k, v, o;
    };
    struct FeedForward {
        Linear up, down;
    };
    struct EncoderLayer {
        Norm norm1;
        Attention self;
        Norm norm2;
        FeedForward ff;
    };
    struct DecoderLayer {
        Norm norm1;
        Attention self;
        Norm norm2;
        Attention cross;
        Norm norm3;
        FeedForward ff;
    };

    std::size_t add_param(std::string name, Matrix value);
    Linear add_linear(const std::string& name, int in, int out, std::mt19937_64& rng);
    Norm add_norm(const std::string& name, int width);
    Attention add_attention(const std::string& name, std::mt19937_64& rng);
    FeedForward add_ff(const std::string& name, std::mt19937_64& rng);

    ModelConfig config_;
    Vocabulary vocab_;
    std::vector<Parameter> params_;

    std::size_t embedding_ = 0;
    std::vector<EncoderLayer> encoder_;
    Norm encoder_norm_{};
    std::vector<DecoderLayer> decoder_;
    Norm decoder_norm_{};
    Linear output_{};
};

// Builds a pair from a labelled chain; returns false when a relation is not
// in the vocabulary or the chain exceeds max_hops.
bool make_retrieval_pair(const GsrModel& model, std::string_view question,
                         const LabeledChain& chain, TrainingPair& out);
TrainingPair make_indexing_pair(const GsrModel& model, std::string_view pseudo_question,
                                std::size_t relation_index);

enum class Schedule : std::uint8_t { joint, retrieval_only, index_then_retrieval, index_then_joint };

std::string_view to_string(Schedule s);
Schedule schedule_from_string(std::string_view s);

enum class OptimizerKind : std::uint8_t { sgd_momentum, adam };

std::string_view to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(std::string_view s);

struct TrainingRun {
    Schedule schedule = Schedule::joint;
    int epochs = 40;
    int index_epochs = 10; // indexing-only phase for index_then_* schedules
    int batch_size = 16;
    double learning_rate = 0.05;
    double momentum = 0.9;
    OptimizerKind optimizer = OptimizerKind::sgd_momentum;
    double clip_norm = 1.0; // global gradient-norm clip; <= 0 disables
    // Indexing items per joint epoch, as a multiple of the indexing corpus.
    double index_weight = 1.0;
    std::uint64_t seed = 17;

    // Outputs.
    std::vector<double> loss_curve;  // one entry per optimizer step
    std::vector<double> epoch_loss;  // mean step loss per epoch
    std::size_t steps = 0;
    std::size_t consumed_index_samples = 0;
    std::size_t consumed_retrieval_samples = 0;
};

struct TrainingData {
    std::vector<TrainingPair> indexing;
    std::vector<TrainingPair> retrieval;
};

// Expands multi-chain samples into one pair per chain.
TrainingData prepare_training_data(const GsrModel& model,
                                   std::span<const IndexingSample> indexing,
                                   std::span<const RetrievalSample> retrieval);

// Token-level cross-entropy training. Throws Error when a corpus the
// schedule needs is empty.
void train(GsrModel& model, const TrainingData& data, TrainingRun& run);

inline constexpr std::uint8_t kCheckpointVersion = 1;

void save_checkpoint(const GsrModel& model, std::ostream& out);
// Throws FormatError on version or vocabulary-hash mismatch or truncation.
GsrModel load_checkpoint(std::istream& in, const Vocabulary& vocab);
void save_checkpoint_file(const GsrModel& model, const std::filesystem::path& path);
GsrModel load_checkpoint_file(const std::filesystem::path& path, const Vocabulary& vocab);

// key=value lines; '#' starts a comment. Unknown keys throw ConfigError.
void apply_setting(ModelConfig& config, TrainingRun& run, std::string_view key,
                   std::string_view value);

} // namespace gsr
