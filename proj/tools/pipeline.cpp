#include "pipeline.hpp"

#include <gsr/error.hpp>
#include <gsr/evalkit.hpp>
#include <gsr/kg_store.hpp>
#include <gsr/reader.hpp>
#include <gsr/synth.hpp>
#include <gsr/vocabulary.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <thread>

namespace gsr::cli {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError("bad integer for " + key + ": " + v);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw ConfigError("bad number for " + key + ": " + v);
}

Traversal traversal_from_string(const std::string& s) {
    if (s == "bidirectional") return Traversal::bidirectional;
    if (s == "forward_only") return Traversal::forward_only;
    throw ConfigError("unknown traversal \"" + s + "\"");
}

MockChainSelector::Policy policy_from_string(const std::string& s) {
    if (s == "reject_repeated") return MockChainSelector::Policy::reject_repeated;
    if (s == "first") return MockChainSelector::Policy::first;
    if (s == "all") return MockChainSelector::Policy::all;
    throw ConfigError("unknown mock selector policy \"" + s + "\"");
}

std::string one_of(const std::string& key, const std::string& v,
                   std::initializer_list<std::string_view> allowed) {
    for (auto a : allowed) {
        if (v == a) return v;
    }
    throw ConfigError("bad value for " + key + ": " + v);
}

std::ifstream open_in(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    return in;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    return out;
}

void write_text(const fs::path& p, const std::string& text) {
    auto out = open_out(p);
    out << text;
}

std::vector<QAExample> load_qa(const fs::path& p) {
    auto in = open_in(p);
    return read_qa_examples(in);
}

std::vector<RetrievalSample> load_samples(const fs::path& p) {
    auto in = open_in(p);
    return read_retrieval_samples(in);
}

std::unique_ptr<ChatClient> make_client(const PipelineConfig& cfg, const std::string& mode,
                                        StubChatClient::Responder stub) {
    if (mode == "llm") return std::make_unique<HttpChatClient>(cfg.chat);
    return std::make_unique<StubChatClient>(std::move(stub));
}

// Manifest bookkeeping for one stage invocation.
class Stage {
public:
    Stage(const PipelineConfig& cfg, const StageOptions& opt, std::string name,
          std::vector<fs::path> inputs, std::vector<fs::path> outputs)
        : cfg_(cfg), opt_(opt), name_(std::move(name)), inputs_(std::move(inputs)),
          outputs_(std::move(outputs)), start_(std::chrono::steady_clock::now()) {
        for (const auto& p : inputs_) {
            if (!fs::exists(p)) throw Error(name_ + ": missing input " + p.string());
        }
        fs::create_directories(cfg_.out_dir / "manifests");
        for (const auto& p : inputs_) hashes_[p.string()] = hex64(fnv1a_file(p));
    }

    fs::path manifest_path() const { return cfg_.out_dir / "manifests" / (name_ + ".json"); }

    bool up_to_date() const {
        if (opt_.force || !fs::exists(manifest_path())) return false;
        for (const auto& p : outputs_) {
            if (!fs::exists(p)) return false;
        }
        json m;
        try {
            auto in = open_in(manifest_path());
            m = json::parse(in);
        } catch (const std::exception&) {
            return false;
        }
        const bool same = m.value("config_hash", "") == hex64(cfg_.hash()) &&
                          m.value("seed", std::uint64_t{0}) == cfg_.seed &&
                          m.value("inputs", json::object()) == json(hashes_);
        if (same) {
            std::cout << name_ << ": up-to-date\n";
            spdlog::info("{}: up-to-date", name_);
        }
        return same;
    }

    void finish(json stats = json::object()) const {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        json outputs = json::object();
        for (const auto& p : outputs_) outputs[p.string()] = hex64(fnv1a_file(p));
        const json m = {{"stage", name_},
                        {"inputs", hashes_},
                        {"outputs", outputs},
                        {"config_hash", hex64(cfg_.hash())},
                        {"seed", cfg_.seed},
                        {"wall_time_s", secs},
                        {"stats", std::move(stats)}};
        write_text(manifest_path(), m.dump(2) + "\n");
        spdlog::info("{}: done in {:.1f}s", name_, secs);
    }

private:
    const PipelineConfig& cfg_;
    const StageOptions& opt_;
    std::string name_;
    std::vector<fs::path> inputs_;
    std::vector<fs::path> outputs_;
    std::map<std::string, std::string> hashes_;
    std::chrono::steady_clock::time_point start_;
};

fs::path out(const PipelineConfig& cfg, const char* name) { return cfg.out_dir / name; }

fs::path tier_path(const PipelineConfig& cfg) {
    return cfg.out_dir / (cfg.train_tier + ".jsonl");
}

KnowledgeGraph load_graph(const PipelineConfig& cfg) {
    return load_snapshot_file(out(cfg, "graph.snap"));
}

} // namespace

// ---------------------------------------------------------------------------

void PipelineConfig::set(const std::string& key, const std::string& value) {
    if (key == "kg") kg = value;
    else if (key == "train_qa") train_qa = value;
    else if (key == "test_qa") test_qa = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "mine.max_hops") mine_max_hops = to_int(key, value);
    else if (key == "train.tier") train_tier = one_of(key, value, {"raw", "filtered", "selected"});
    else if (key == "train.fraction") train_fraction = to_double(key, value);
    else if (key == "vocab.min_frequency") min_frequency = to_int(key, value);
    else if (key == "decode.k") decode.k = to_int(key, value);
    else if (key == "decode.n") decode.n = to_int(key, value);
    else if (key == "decode.max_hops") decode.max_hops = to_int(key, value);
    else if (key == "decode.traversal") decode.traversal = traversal_from_string(value);
    else if (key == "sweep.ks") {
        sweep_ks.clear();
        std::stringstream ss(value);
        for (std::string item; std::getline(ss, item, ',');) sweep_ks.push_back(to_int(key, trim(item)));
    }
    else if (key == "select.mode") selector = one_of(key, value, {"mock", "llm"});
    else if (key == "select.mock_policy") mock_policy = policy_from_string(value);
    else if (key == "templates.mode") templates = one_of(key, value, {"offline", "llm"});
    else if (key == "index.per_template") per_template = to_int(key, value);
    else if (key == "reader.mode") reader = one_of(key, value, {"stub", "llm"});
    else if (key == "reader.format") {
        reader_format = one_of(key, value, {"paths", "triples"}) == "paths" ? SubgraphFormat::paths
                                                                            : SubgraphFormat::triples;
    }
    else if (key == "reader.budget") reader_budget = static_cast<std::size_t>(to_int(key, value));
    else if (key == "chat.base_url") chat.base_url = value;
    else if (key == "chat.model") chat.model = value;
    else if (key == "chat.temperature") chat.temperature = to_double(key, value);
    else if (key == "chat.max_retries") chat.max_retries = to_int(key, value);
    else if (key == "chat.backoff_ms") chat.initial_backoff = std::chrono::milliseconds(to_int(key, value));
    else if (key == "chat.timeout_ms") chat.timeout = std::chrono::milliseconds(to_int(key, value));
    else if (key == "chat.max_in_flight") chat.max_in_flight = to_int(key, value);
    else apply_setting(model, run, key, value);

    std::erase_if(settings, [&](const auto& kv) { return kv.first == key; });
    settings.emplace_back(key, value);
    std::sort(settings.begin(), settings.end());
}

void PipelineConfig::finalize(const fs::path& base_dir) {
    auto resolve = [&](fs::path& p) {
        if (!p.empty() && p.is_relative()) p = base_dir / p;
    };
    resolve(out_dir);
    resolve(kg);
    resolve(train_qa);
    resolve(test_qa);
    if (kg.empty()) kg = out_dir / "kg.tsv";
    if (train_qa.empty()) train_qa = out_dir / "train.jsonl";
    if (test_qa.empty()) test_qa = out_dir / "test.jsonl";
    model.seed = seed;
    run.seed = seed;
    if (train_fraction <= 0.0 || train_fraction > 1.0) {
        throw ConfigError("train.fraction must be in (0, 1]");
    }
    model.validate();
}

std::uint64_t PipelineConfig::hash() const {
    std::uint64_t h = 14695981039346656037ULL;
    auto mix = [&](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0xff;
        h *= 1099511628211ULL;
    };
    for (const auto& [k, v] : settings) {
        if (k == "seed") continue; // recorded separately
        mix(k);
        mix(v);
    }
    return h;
}

PipelineConfig load_config(const fs::path& path) {
    auto in = open_in(path);
    PipelineConfig cfg;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key=value");
        }
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::uint64_t fnv1a_file(const fs::path& path) {
    auto in = open_in(path);
    std::uint64_t h = 14695981039346656037ULL;
    char buf[1 << 14];
    while (in) {
        in.read(buf, sizeof buf);
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------------------

void cmd_synth(const PipelineConfig& cfg, const StageOptions& opt) {
    Stage stage(cfg, opt, "synth", {}, {cfg.kg, cfg.train_qa, cfg.test_qa, out(cfg, "questions.jsonl")});
    if (stage.up_to_date()) return;
    fs::create_directories(cfg.out_dir);
    synth::CorpusSpec spec;
    spec.seed = cfg.seed;
    const auto corpus = synth::make_corpus(spec);
    {
        auto o = open_out(cfg.kg);
        synth::write_triples(o, corpus);
    }
    {
        auto o = open_out(cfg.train_qa);
        write_qa_examples(o, synth::examples_of(corpus.train));
    }
    {
        auto o = open_out(cfg.test_qa);
        write_qa_examples(o, synth::examples_of(corpus.held_out));
    }
    {
        auto o = open_out(out(cfg, "questions.jsonl"));
        for (const auto* split : {&corpus.train, &corpus.held_out}) {
            for (const auto& q : *split) {
                o << json{{"id", q.example.id}, {"hops", q.hops}, {"chain", q.chain}}.dump() << '\n';
            }
        }
    }
    stage.finish({{"triples", corpus.graph.triple_count()},
                  {"train", corpus.train.size()},
                  {"held_out", corpus.held_out.size()}});
}

void cmd_ingest(const PipelineConfig& cfg, const StageOptions& opt) {
    Stage stage(cfg, opt, "ingest", {cfg.kg}, {out(cfg, "graph.snap")});
    if (stage.up_to_date()) return;
    const auto graph = load_triples_file(cfg.kg);
    save_snapshot_file(graph, out(cfg, "graph.snap"));
    const auto c = graph.counts();
    spdlog::info("ingest: {} entities, {} relations, {} triples", c.entities, c.relations, c.triples);
    stage.finish({{"entities", c.entities}, {"relations", c.relations}, {"triples", c.triples}});
}

void cmd_mine(const PipelineConfig& cfg, const StageOptions& opt) {
    Stage stage(cfg, opt, "mine", {out(cfg, "graph.snap"), cfg.train_qa}, {out(cfg, "raw.jsonl")});
    if (stage.up_to_date()) return;
    const auto graph = load_graph(cfg);
    const auto examples = load_qa(cfg.train_qa);
    const auto mined = mine_raw_retrieval(graph, examples, cfg.mine_max_hops);
    {
        auto o = open_out(out(cfg, "raw.jsonl"));
        write_retrieval_samples(o, mined.samples);
    }
    const auto st = data_stats(mined.samples);
    stage.finish({{"samples", mined.samples.size()},
                  {"skipped", mined.skipped.size()},
                  {"chains", st.chain_count},
                  {"repeated_relation_fraction", st.repeated_relation_fraction}});
}

void cmd_filter(const PipelineConfig& cfg, const StageOptions& opt) {
    Stage stage(cfg, opt, "filter", {out(cfg, "raw.jsonl")}, {out(cfg, "filtered.jsonl")});
    if (stage.up_to_date()) return;
    const auto raw = load_samples(out(cfg, "raw.jsonl"));
    const auto filtered = filter_forward_only(raw);
    {
        auto o = open_out(out(cfg, "filtered.jsonl"));
        write_retrieval_samples(o, filtered);
    }
    stage.finish({{"samples", filtered.size()}, {"chains", data_stats(filtered).chain_count}});
}

void cmd_select(const PipelineConfig& cfg, const StageOptions& opt) {
    Stage stage(cfg, opt, "select", {out(cfg, "raw.jsonl")}, {out(cfg, "selected.jsonl")});
    if (stage.up_to_date()) return;
    const auto raw = load_samples(out(cfg, "raw.jsonl"));
    std::unique_ptr<ChatClient> client;
    std::unique_ptr<ChainSelector> selector;
    if (cfg.selector == "llm") {
        client = std::make_unique<HttpChatClient>(cfg.chat);
        selector = std::make_unique<LlmChainSelector>(*client);
    } else {
        selector = std::make_unique<MockChainSelector>(cfg.mock_policy);
    }
    SelectionResult result;
    try {
        result = select_with_llm(raw, *selector);
    } catch (const SelectionAborted& e) {
        // Keep what finished so a rerun has something to inspect.
        auto o = open_out(out(cfg, "selected.partial.jsonl"));
        write_retrieval_samples(o, e.partial().samples);
        throw Error(std::string(e.what()) + " (" + std::to_string(e.processed()) +
                    " examples written to selected.partial.jsonl)");
    }
    {
        auto o = open_out(out(cfg, "selected.jsonl"));
        write_retrieval_samples(o, result.samples);
    }
    const auto st = data_stats(result.samples);
    stage.finish({{"samples", result.samples.size()},
                  {"fallbacks", result.fallbacks},
                  {"empty_selections", result.empty_selections},
                  {"ignored_indexes", result.ignored_indexes},
                  {"repeated_relation_fraction", st.repeated_relation_fraction}});
}

void cmd_index_data(const PipelineConfig& cfg, const StageOptions& opt) {
    Stage stage(cfg, opt, "index-data", {out(cfg, "graph.snap")}, {out(cfg, "indexing.jsonl")});
    if (stage.up_to_date()) return;
    const auto graph = load_graph(cfg);
    std::unique_ptr<ChatClient> client;
    std::unique_ptr<TemplateGenerator> gen;
    if (cfg.templates == "llm") {
        client = std::make_unique<HttpChatClient>(cfg.chat);
        gen = std::make_unique<LlmTemplateGenerator>(*client);
    } else {
        gen = std::make_unique<OfflineTemplateGenerator>();
    }
    const auto templates = generate_all_templates(graph, *gen);
    const auto samples = build_indexing_samples(graph, templates, cfg.per_template, cfg.seed);
    {
        auto o = open_out(out(cfg, "indexing.jsonl"));
        write_indexing_samples(o, samples);
    }
    stage.finish({{"templates", templates.size()}, {"samples", samples.size()}});
}

void cmd_train(const PipelineConfig& cfg, const StageOptions& opt) {
    const fs::path tier = tier_path(cfg);
    Stage stage(cfg, opt, "train", {out(cfg, "graph.snap"), out(cfg, "indexing.jsonl"), tier},
                {out(cfg, "vocab.txt"), out(cfg, "model.ckpt"), out(cfg, "train_log.json")});
    if (stage.up_to_date()) return;
    const auto graph = load_graph(cfg);
    std::vector<IndexingSample> indexing;
    {
        auto in = open_in(out(cfg, "indexing.jsonl"));
        indexing = read_indexing_samples(in);
    }
    auto retrieval = load_samples(tier);
    if (cfg.train_fraction < 1.0) {
        std::mt19937_64 rng(cfg.seed);
        std::shuffle(retrieval.begin(), retrieval.end(), rng);
        const auto keep = static_cast<std::size_t>(
            std::ceil(cfg.train_fraction * static_cast<double>(retrieval.size())));
        retrieval.resize(std::min(keep, retrieval.size()));
    }

    std::vector<std::string> texts;
    for (const auto& s : retrieval) texts.push_back(s.question);
    for (const auto& s : indexing) texts.push_back(s.pseudo_question);
    const auto catalog = graph.relation_catalog();
    Vocabulary vocab = build_vocab(texts, catalog, cfg.min_frequency);
    vocab.save_file(out(cfg, "vocab.txt"));

    GsrModel model(cfg.model, vocab);
    const auto data = prepare_training_data(model, indexing, retrieval);
    TrainingRun run = cfg.run;
    spdlog::info("train: {} parameters, {} indexing + {} retrieval pairs, schedule {}",
                 model.parameter_count(), data.indexing.size(), data.retrieval.size(),
                 to_string(run.schedule));
    train(model, data, run);
    save_checkpoint_file(model, out(cfg, "model.ckpt"));
    const json log = {{"schedule", to_string(run.schedule)},
                      {"steps", run.steps},
                      {"epoch_loss", run.epoch_loss},
                      {"consumed_index_samples", run.consumed_index_samples},
                      {"consumed_retrieval_samples", run.consumed_retrieval_samples}};
    write_text(out(cfg, "train_log.json"), log.dump(2) + "\n");
    stage.finish({{"parameters", model.parameter_count()},
                  {"retrieval_examples", retrieval.size()},
                  {"final_loss", run.epoch_loss.empty() ? 0.0 : run.epoch_loss.back()}});
}

namespace {

GsrModel load_model(const PipelineConfig& cfg) {
    const auto vocab = Vocabulary::load_file(out(cfg, "vocab.txt"));
    return load_checkpoint_file(out(cfg, "model.ckpt"), vocab);
}

// Runs f(i) for i in [0, n) on up to `threads` workers.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace

void cmd_retrieve(const PipelineConfig& cfg, const StageOptions& opt) {
    Stage stage(cfg, opt, "retrieve",
                {out(cfg, "graph.snap"), out(cfg, "vocab.txt"), out(cfg, "model.ckpt"), cfg.test_qa},
                {out(cfg, "retrieval.jsonl")});
    if (stage.up_to_date()) return;
    const auto graph = load_graph(cfg);
    const auto model = load_model(cfg);
    const auto examples = load_qa(cfg.test_qa);
    std::vector<std::string> lines(examples.size());
    std::atomic<std::size_t> empty{0};
    parallel_for(examples.size(), opt.threads, [&](std::size_t i) {
        const auto& ex = examples[i];
        const auto r = retrieve(model, graph, ex.id, ex.question, ex.topic_entities, cfg.decode);
        if (r.retained.empty()) ++empty;
        std::ostringstream line;
        write_retrieval_result(line, graph, r);
        // Topics ride along so later stages can replay the chains.
        auto j = json::parse(line.str());
        j["topics"] = r.topics;
        lines[i] = j.dump();
    });
    {
        auto o = open_out(out(cfg, "retrieval.jsonl"));
        for (const auto& l : lines) o << l << '\n';
    }
    stage.finish({{"questions", examples.size()}, {"empty_retrievals", empty.load()}});
}

namespace {

struct StoredRetrieval {
    std::string id;
    std::vector<std::string> topics;
    std::vector<std::vector<std::string>> valid_chains; // rank order
    std::vector<std::string> terminals;
};

std::vector<StoredRetrieval> load_retrievals(const fs::path& p) {
    auto in = open_in(p);
    std::vector<StoredRetrieval> out;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto j = json::parse(line);
        StoredRetrieval r;
        r.id = j.at("id").get<std::string>();
        r.topics = j.value("topics", std::vector<std::string>{});
        for (const auto& c : j.at("chains")) {
            if (c.at("valid").get<bool>()) {
                r.valid_chains.push_back(c.at("relations").get<std::vector<std::string>>());
            }
        }
        r.terminals = j.at("terminals").get<std::vector<std::string>>();
        out.push_back(std::move(r));
    }
    return out;
}

} // namespace

void cmd_read(const PipelineConfig& cfg, const StageOptions& opt) {
    Stage stage(cfg, opt, "read", {out(cfg, "graph.snap"), out(cfg, "retrieval.jsonl"), cfg.test_qa},
                {out(cfg, "answers.jsonl")});
    if (stage.up_to_date()) return;
    const auto graph = load_graph(cfg);
    const auto retrievals = load_retrievals(out(cfg, "retrieval.jsonl"));
    std::map<std::string, std::string> questions;
    for (const auto& ex : load_qa(cfg.test_qa)) questions[ex.id] = ex.question;
    auto client = make_client(cfg, cfg.reader, stub_reader_reply);

    std::vector<std::string> lines(retrievals.size());
    std::atomic<std::size_t> dropped_lines{0};
    parallel_for(retrievals.size(), opt.threads, [&](std::size_t i) {
        const auto& r = retrievals[i];
        std::vector<PathConstrainedSubgraph> subgraphs;
        const auto kept = std::min<std::size_t>(r.valid_chains.size(),
                                                static_cast<std::size_t>(cfg.decode.n));
        for (std::size_t c = 0; c < kept; ++c) {
            RelationChain chain;
            for (const auto& label : r.valid_chains[c]) {
                auto rel = graph.find_relation(label);
                if (!rel) throw LookupError("read: unknown relation " + label);
                chain.push_back(*rel);
            }
            for (const auto& t : r.topics) {
                auto topic = graph.find_entity(t);
                if (!topic || !is_valid_chain(graph, *topic, chain, cfg.decode.traversal)) continue;
                subgraphs.push_back(
                    execute_chain(graph, {*topic, chain}, cfg.decode.traversal, cfg.decode.caps));
            }
        }
        auto rendering = serialize(cfg.reader_format, graph, subgraphs);
        apply_token_budget(rendering, cfg.reader_budget);
        dropped_lines += rendering.dropped_lines;
        auto it = questions.find(r.id);
        if (it == questions.end()) throw LookupError("read: question " + r.id + " not in test set");
        const auto answer = ask_reader(*client, it->second, rendering);
        std::ostringstream line;
        write_reader_answer(line, r.id, answer);
        lines[i] = line.str();
    });
    {
        auto o = open_out(out(cfg, "answers.jsonl"));
        for (const auto& l : lines) o << l;
    }
    stage.finish({{"questions", retrievals.size()}, {"budget_dropped_lines", dropped_lines.load()}});
}

void cmd_eval(const PipelineConfig& cfg, const StageOptions& opt) {
    std::vector<fs::path> inputs{out(cfg, "graph.snap"), out(cfg, "retrieval.jsonl"), cfg.test_qa};
    const bool with_answers = fs::exists(out(cfg, "answers.jsonl"));
    if (with_answers) inputs.push_back(out(cfg, "answers.jsonl"));
    Stage stage(cfg, opt, "eval", inputs, {out(cfg, "report.json"), out(cfg, "report.txt")});
    if (stage.up_to_date()) return;
    const auto graph = load_graph(cfg);
    std::map<std::string, QAExample> gold;
    for (auto& ex : load_qa(cfg.test_qa)) gold.emplace(ex.id, std::move(ex));

    std::vector<ExampleRetrieval> evaluated;
    for (const auto& r : load_retrievals(out(cfg, "retrieval.jsonl"))) {
        auto it = gold.find(r.id);
        if (it == gold.end()) throw LookupError("eval: question " + r.id + " not in test set");
        ExampleRetrieval e;
        e.id = r.id;
        e.score = retrieval_metrics(r.terminals, it->second.answers);
        e.answer_in_graph = std::any_of(it->second.answers.begin(), it->second.answers.end(),
                                        [&](const auto& a) { return graph.find_entity(a).has_value(); });
        e.result.terminals.resize(r.terminals.size());
        if (!r.valid_chains.empty()) e.result.retained.push_back(0);
        evaluated.push_back(std::move(e));
    }
    const auto report = summarize(evaluated, cfg.decode.k, cfg.decode.n);
    json j = {{"retrieval", json::parse(report_json(report))}};
    std::string text = format_report_table(report);

    if (with_answers) {
        std::vector<E2EScore> scores;
        auto in = open_in(out(cfg, "answers.jsonl"));
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            const auto a = json::parse(line);
            auto it = gold.find(a.at("id").get<std::string>());
            if (it == gold.end()) continue;
            scores.push_back(
                e2e_metrics(a.at("answers").get<std::vector<std::string>>(), it->second.answers));
        }
        if (!scores.empty()) {
            const auto m = aggregate(scores);
            j["e2e"] = {{"hits_at_1", std::stod(percent(m.hits_at_1))},
                        {"hits", std::stod(percent(m.hits))},
                        {"f1", std::stod(percent(m.f1))}};
            text += fmt::format("{:<18} {}\n{:<18} {}\n{:<18} {}\n", "e2e hits@1",
                                percent(m.hits_at_1), "e2e hits", percent(m.hits), "e2e f1",
                                percent(m.f1));
        }
    }
    write_text(out(cfg, "report.json"), j.dump(2) + "\n");
    write_text(out(cfg, "report.txt"), text);
    std::cout << text;
    stage.finish();
}

void cmd_sweep(const PipelineConfig& cfg, const StageOptions& opt) {
    Stage stage(cfg, opt, "sweep",
                {out(cfg, "graph.snap"), out(cfg, "vocab.txt"), out(cfg, "model.ckpt"), cfg.test_qa},
                {out(cfg, "sweep.json"), out(cfg, "sweep.txt")});
    if (stage.up_to_date()) return;
    const auto graph = load_graph(cfg);
    const auto model = load_model(cfg);
    const auto examples = load_qa(cfg.test_qa);
    const auto report = beam_sweep(model, graph, examples, cfg.sweep_ks, cfg.decode.n,
                                   cfg.decode.traversal);
    write_text(out(cfg, "sweep.json"), sweep_json(report));
    const std::string table = format_sweep_table(report);
    write_text(out(cfg, "sweep.txt"), table);
    std::cout << table;
    stage.finish();
}

void run_all(const PipelineConfig& cfg, const StageOptions& opt) {
    cmd_ingest(cfg, opt);
    cmd_mine(cfg, opt);
    cmd_filter(cfg, opt);
    cmd_select(cfg, opt);
    cmd_index_data(cfg, opt);
    cmd_train(cfg, opt);
    cmd_retrieve(cfg, opt);
    cmd_read(cfg, opt);
    cmd_eval(cfg, opt);
}

// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"gsr: generative subgraph retrieval pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    StageOptions opt;
    bool verbose = false;
    bool quiet = false;
    app.add_option("--config", config_path, "key=value configuration file");
    app.add_option("--seed", seed, "seed for every seeded component");
    app.add_flag("--force", opt.force, "rerun even when the manifest says up-to-date");
    app.add_option("--threads", opt.threads, "worker threads for retrieve/read")
        ->check(CLI::PositiveNumber);
    app.add_option("--set", overrides, "extra key=value settings, applied after --config");
    app.add_flag("-v,--verbose", verbose, "debug logging");
    app.add_flag("-q,--quiet", quiet, "warnings and errors only");

    using Fn = void (*)(const PipelineConfig&, const StageOptions&);
    const std::vector<std::tuple<const char*, const char*, Fn>> commands = {
        {"synth", "write a synthetic KG and question set", cmd_synth},
        {"ingest", "TSV triples -> graph snapshot", cmd_ingest},
        {"mine", "shortest-path chains for training questions", cmd_mine},
        {"filter", "keep forward-only chains", cmd_filter},
        {"select", "chain selection by LLM or mock judge", cmd_select},
        {"index-data", "pseudo questions per relation", cmd_index_data},
        {"train", "train the chain generator", cmd_train},
        {"retrieve", "beam decode + validity filtering on test questions", cmd_retrieve},
        {"read", "serialize subgraphs and ask the reader", cmd_read},
        {"eval", "retrieval and end-to-end metrics", cmd_eval},
        {"sweep", "retrieval metrics across beam sizes", cmd_sweep},
        {"all", "ingest through eval", run_all},
    };
    Fn chosen = nullptr;
    for (const auto& [name, help, fn] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->callback([&chosen, f = fn] { chosen = f; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    auto logger = spdlog::get("gsr");
    if (!logger) {
        logger = spdlog::stderr_color_mt("gsr");
        spdlog::set_default_logger(logger);
    }
    spdlog::set_level(verbose ? spdlog::level::debug
                      : quiet ? spdlog::level::warn
                              : spdlog::level::info);

    try {
        PipelineConfig cfg;
        fs::path base = fs::current_path();
        if (!config_path.empty()) {
            cfg = load_config(config_path);
            base = fs::absolute(config_path).parent_path();
        }
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value: " + kv);
            cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
        }
        if (seed) cfg.set("seed", std::to_string(*seed));
        cfg.finalize(base);
        chosen(cfg, opt);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}

} // namespace gsr::cli
