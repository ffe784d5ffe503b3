#pragma once

#include <gsr/beam_retriever.hpp>
#include <gsr/chat_client.hpp>
#include <gsr/data_forge.hpp>
#include <gsr/model.hpp>
#include <gsr/prompts.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace gsr::cli {

namespace fs = std::filesystem;

struct PipelineConfig {
    fs::path kg;       // default: <out_dir>/kg.tsv
    fs::path train_qa; // default: <out_dir>/train.jsonl
    fs::path test_qa;  // default: <out_dir>/test.jsonl
    fs::path out_dir = "gsr-out";

    int mine_max_hops = 2;
    std::string train_tier = "selected";
    double train_fraction = 1.0;
    int min_frequency = 1;

    ModelConfig model;
    TrainingRun run;
    RetrieveOptions decode;
    std::vector<int> sweep_ks{3, 10};

    std::string selector = "mock"; // mock | llm
    MockChainSelector::Policy mock_policy = MockChainSelector::Policy::reject_repeated;
    std::string templates = "offline"; // offline | llm
    int per_template = 1;
    std::string reader = "stub"; // stub | llm
    SubgraphFormat reader_format = SubgraphFormat::paths;
    std::size_t reader_budget = 4096;
    ChatSettings chat;

    std::uint64_t seed = 17;

    // Every key=value pair applied, in canonical order; hashed into
    // manifests.
    std::vector<std::pair<std::string, std::string>> settings;

    void set(const std::string& key, const std::string& value);
    // Fills default paths and pushes the seed into every seeded component.
    void finalize(const fs::path& base_dir);
    std::uint64_t hash() const;
};

// key=value lines, '#' comments. Relative paths resolve against the file's
// directory.
PipelineConfig load_config(const fs::path& path);

std::uint64_t fnv1a_file(const fs::path& path);
std::string hex64(std::uint64_t v);

struct StageOptions {
    bool force = false;
    int threads = 1;
};

// Each stage returns normally on success (including "up-to-date") and
// throws on failure.
void cmd_synth(const PipelineConfig& cfg, const StageOptions& opt);
void cmd_ingest(const PipelineConfig& cfg, const StageOptions& opt);
void cmd_mine(const PipelineConfig& cfg, const StageOptions& opt);
void cmd_filter(const PipelineConfig& cfg, const StageOptions& opt);
void cmd_select(const PipelineConfig& cfg, const StageOptions& opt);
void cmd_index_data(const PipelineConfig& cfg, const StageOptions& opt);
void cmd_train(const PipelineConfig& cfg, const StageOptions& opt);
void cmd_retrieve(const PipelineConfig& cfg, const StageOptions& opt);
void cmd_read(const PipelineConfig& cfg, const StageOptions& opt);
void cmd_eval(const PipelineConfig& cfg, const StageOptions& opt);
void cmd_sweep(const PipelineConfig& cfg, const StageOptions& opt);

// ingest through eval, in order.
void run_all(const PipelineConfig& cfg, const StageOptions& opt);

// argv entry point shared by the gsr binary and tests.
int run_cli(int argc, const char* const* argv);

} // namespace gsr::cli
