#include "synthetic.hpp"

#include <gsr/error.hpp>
#include <gsr/model.hpp>
#include <gsr/vocabulary.hpp>

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

using namespace gsr;

namespace {

std::vector<RelationStat> catalog(std::vector<std::string> labels) {
    std::vector<RelationStat> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out.push_back({RelationId{static_cast<std::uint32_t>(i)}, labels[i], 1});
    }
    return out;
}

ModelConfig micro_config() {
    ModelConfig c;
    c.width = 8;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.heads = 2;
    c.ff_width = 12;
    c.max_hops = 3;
    c.dropout = 0.0;
    c.seed = 5;
    return c;
}

Vocabulary micro_vocab() {
    const std::vector<std::string> qs{"x y z"};
    return build_vocab(qs, catalog({"ra", "rb"}), 1);
}

// Greedy decode straight from the log-probs, independent of the beam code.
std::vector<std::size_t> greedy(const GsrModel& m, std::string_view q) {
    const auto enc = m.encode(m.encode_question(Task::retrieval, q));
    std::vector<std::size_t> out;
    while (static_cast<int>(out.size()) < m.config().max_hops) {
        const auto lp = m.next_token_log_probs(enc, out);
        const auto best = static_cast<std::size_t>(
            std::max_element(lp.begin(), lp.end()) - lp.begin());
        if (best == m.end_target()) break;
        out.push_back(best);
    }
    return out;
}

} // namespace

TEST_CASE("vocabulary layout") {
    const std::vector<std::string> qs{"who is a", "who is b"};
    const auto v = build_vocab(qs, catalog({"r1", "r2", "g"}), 1);
    CHECK(v.relation_count() == 3);
    CHECK(v.words() == std::vector<std::string>{"a", "b", "is", "who"});
    CHECK(v.size() == 4 + 2 + 3 + 4);
    CHECK(v.target_size() == 4);
    CHECK(v.relation_token(0) == Vocabulary::kFirstRelation);
    CHECK(v.relation_index("g") == 2u);

    const auto strict = build_vocab(qs, catalog({"r1", "r2", "g"}), 2);
    CHECK(strict.words() == std::vector<std::string>{"is", "who"});
    CHECK(strict.word_token("a") == Vocabulary::kUnknown);

    CHECK_THROWS_AS(build_vocab(qs, {}, 1), Error);

    std::stringstream buf;
    v.save(buf);
    const auto back = Vocabulary::load(buf);
    CHECK(back == v);
    CHECK(back.hash() == v.hash());
    CHECK(strict.hash() != v.hash());
}

TEST_CASE("encode_input") {
    const std::vector<std::string> qs{"who was vp for nixon"};
    const auto v = build_vocab(qs, catalog({"r"}), 1);
    const auto ids = encode_input(v, Task::retrieval, "Who was VP for nixon", 32);
    REQUIRE(ids.size() == 6);
    CHECK(ids[0] == Vocabulary::kRetrievalPrefix);
    std::vector<std::string> words;
    for (std::size_t i = 1; i < ids.size(); ++i) words.push_back(v.token_text(ids[i]));
    CHECK(words == std::vector<std::string>{"who", "was", "vp", "for", "nixon"});

    CHECK(encode_input(v, Task::index, "", 32) == std::vector<TokenId>{Vocabulary::kIndexPrefix});
    CHECK(encode_input(v, Task::index, "who unknownword", 32)[2] == Vocabulary::kUnknown);
    CHECK(encode_input(v, Task::index, "who was vp for nixon", 2).size() == 3);
}

TEST_CASE("config validation and deterministic init") {
    auto cfg = micro_config();
    cfg.width = 128;
    cfg.heads = 3;
    CHECK_THROWS_AS(GsrModel(cfg, micro_vocab()), ConfigError);

    const GsrModel a(micro_config(), micro_vocab());
    const GsrModel b(micro_config(), micro_vocab());
    auto other_cfg = micro_config();
    other_cfg.seed = 6;
    const GsrModel c(other_cfg, micro_vocab());
    REQUIRE(a.parameters().size() == b.parameters().size());
    bool all_equal = true, any_diff = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        all_equal = all_equal && a.parameters()[i].value == b.parameters()[i].value;
        any_diff = any_diff || a.parameters()[i].value != c.parameters()[i].value;
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("next-token distribution") {
    const GsrModel m(micro_config(), micro_vocab());
    const auto enc = m.encode(m.encode_question(Task::retrieval, "x z"));
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::size_t> prefix(rng() % 3);
        for (auto& p : prefix) p = rng() % 2;
        const auto logits = m.next_token_logits(enc, prefix);
        REQUIRE(logits.size() == m.target_size());
        for (double x : logits) CHECK(std::isfinite(x));
        const auto lp = m.next_token_log_probs(enc, prefix);
        double sum = 0.0;
        for (double x : lp) sum += std::exp(x);
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }

    // sum of step log-probs against the product of step probabilities
    const std::vector<std::size_t> chain{1, 0, 1};
    double log_sum = 0.0, prod = 1.0;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        const auto lp = m.next_token_log_probs(enc, std::span(chain).first(i));
        log_sum += lp[chain[i]];
        const auto logits = m.next_token_logits(enc, std::span(chain).first(i));
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double x : logits) z += std::exp(x - mx);
        prod *= std::exp(logits[chain[i]] - mx) / z;
    }
    CHECK(std::abs(std::exp(log_sum) - prod) < 1e-9);

    const std::vector<std::size_t> too_long{0, 0, 0};
    CHECK_THROWS_AS(m.next_token_logits(enc, too_long), Error);
}

TEST_CASE("analytic gradients match central differences") {
    GsrModel m(micro_config(), micro_vocab());
    std::vector<TrainingPair> batch(3);
    REQUIRE(make_retrieval_pair(m, "x y", {{"ra", Direction::forward}, {"rb", Direction::forward}}, batch[0]));
    REQUIRE(make_retrieval_pair(m, "z x z", {{"rb", Direction::forward}}, batch[1]));
    batch[2] = make_indexing_pair(m, "y", 0);

    auto grads = m.zero_gradients();
    m.loss(batch, &grads);

    constexpr double eps = 1e-5;
    auto& params = m.mutable_parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        Matrix numeric(params[p].value.rows(), params[p].value.cols());
        for (Eigen::Index i = 0; i < params[p].value.size(); ++i) {
            double& x = params[p].value.data()[i];
            const double keep = x;
            x = keep + eps;
            const double up = m.loss(batch);
            x = keep - eps;
            const double down = m.loss(batch);
            x = keep;
            numeric.data()[i] = (up - down) / (2 * eps);
        }
        const double scale = numeric.norm() + grads[p].norm();
        const double rel = scale < 1e-10 ? 0.0 : (numeric - grads[p]).norm() / scale;
        INFO(params[p].name);
        CHECK(rel < 1e-3);
    }
}

TEST_CASE("loss rejects malformed pairs") {
    const GsrModel m(micro_config(), micro_vocab());
    std::vector<TrainingPair> empty{TrainingPair{}};
    CHECK_THROWS_AS(m.loss(empty), Error);
    std::vector<TrainingPair> long_one{{{Vocabulary::kRetrievalPrefix}, {0, 0, 0, 0, 2}}};
    CHECK_THROWS_AS(m.loss(long_one), Error);

    TrainingPair out;
    CHECK_FALSE(make_retrieval_pair(m, "x", {{"nope", Direction::forward}}, out));
    CHECK_FALSE(make_retrieval_pair(m, "x", LabeledChain(4, {"ra", Direction::forward}), out));
}

TEST_CASE("memorizes a handful of disjoint pairs") {
    const std::vector<std::pair<std::string, LabeledChain>> pairs{
        {"alpha one", {{"ra", Direction::forward}, {"rb", Direction::forward}}},
        {"beta two", {{"rb", Direction::forward}}},
        {"gamma three", {{"rc", Direction::forward}, {"ra", Direction::forward}}},
        {"delta four", {{"rc", Direction::forward}}},
        {"eps five", {{"rb", Direction::forward}, {"rb", Direction::forward}}},
    };
    std::vector<std::string> texts;
    for (const auto& [q, c] : pairs) texts.push_back(q);
    auto cfg = micro_config();
    cfg.width = 16;
    cfg.ff_width = 32;
    const GsrModel proto(cfg, build_vocab(texts, catalog({"ra", "rb", "rc"}), 1));

    std::vector<RetrievalSample> samples;
    for (const auto& [q, c] : pairs) samples.push_back({q, q, "t", Tier::selected, {c}});
    const auto data = prepare_training_data(proto, {}, samples);
    REQUIRE(data.retrieval.size() == pairs.size());

    GsrModel m = proto;
    TrainingRun run;
    run.schedule = Schedule::retrieval_only;
    run.epochs = 300;
    run.batch_size = 5;
    run.optimizer = OptimizerKind::adam;
    run.learning_rate = 0.01;
    train(m, data, run);
    CHECK(run.loss_curve.size() == run.steps);
    CHECK(run.consumed_index_samples == 0);

    for (const auto& [q, c] : pairs) {
        std::vector<std::size_t> want;
        for (const auto& h : c) want.push_back(*m.vocab().relation_index(h.relation));
        CHECK(greedy(m, q) == want);
    }
}

TEST_CASE("training contracts") {
    const GsrModel proto(micro_config(), micro_vocab());
    const std::vector<RetrievalSample> samples{
        {"s", "x y", "t", Tier::selected, {{{"ra", Direction::forward}}, {{"rb", Direction::forward}}}}};
    const std::vector<IndexingSample> idx{{"z", "ra"}, {"y", "rb"}};
    const auto data = prepare_training_data(proto, idx, samples);
    CHECK(data.retrieval.size() == 2); // one pair per chain
    CHECK(data.indexing.size() == 2);

    GsrModel zero = proto;
    TrainingRun none;
    none.epochs = 0;
    none.index_epochs = 0;
    train(zero, data, none);
    for (std::size_t i = 0; i < zero.parameters().size(); ++i) {
        CHECK(zero.parameters()[i].value == proto.parameters()[i].value);
    }
    CHECK(none.steps == 0);

    GsrModel r = proto;
    TrainingRun ro;
    ro.schedule = Schedule::retrieval_only;
    ro.epochs = 3;
    train(r, data, ro);
    CHECK(ro.consumed_index_samples == 0);
    CHECK(ro.consumed_retrieval_samples == 6);
    CHECK(ro.loss_curve.size() == ro.steps);
    CHECK(ro.epoch_loss.size() == 3);

    GsrModel j = proto;
    TrainingRun joint;
    joint.epochs = 2;
    joint.index_weight = 1.5;
    train(j, data, joint);
    CHECK(joint.consumed_index_samples == 6); // round(1.5 * 2) per epoch

    GsrModel it = proto;
    TrainingRun itr;
    itr.schedule = Schedule::index_then_retrieval;
    itr.index_epochs = 2;
    itr.epochs = 1;
    train(it, data, itr);
    CHECK(itr.consumed_index_samples == 4);
    CHECK(itr.consumed_retrieval_samples == 2);

    TrainingData no_index{{}, data.retrieval};
    GsrModel e = proto;
    TrainingRun needs;
    needs.schedule = Schedule::index_then_joint;
    CHECK_THROWS_AS(train(e, no_index, needs), Error);

    // same seed, same data: identical parameters
    GsrModel d1 = proto, d2 = proto;
    TrainingRun a1, a2;
    a1.epochs = a2.epochs = 2;
    train(d1, data, a1);
    train(d2, data, a2);
    for (std::size_t i = 0; i < d1.parameters().size(); ++i) {
        CHECK(d1.parameters()[i].value == d2.parameters()[i].value);
    }
}

TEST_CASE("checkpoint round trip") {
    GsrModel m(micro_config(), micro_vocab());
    std::stringstream buf;
    save_checkpoint(m, buf);
    const std::string bytes = buf.str();
    std::istringstream in(bytes);
    const auto back = load_checkpoint(in, m.vocab());

    std::mt19937_64 rng(2);
    const std::vector<std::string> words{"x", "y", "z", "other"};
    for (int trial = 0; trial < 100; ++trial) {
        std::string q;
        for (int w = 0; w < 1 + static_cast<int>(rng() % 4); ++w) q += words[rng() % 4] + " ";
        std::vector<std::size_t> prefix(rng() % 3);
        for (auto& p : prefix) p = rng() % 2;
        const auto e1 = m.encode(m.encode_question(Task::retrieval, q));
        const auto e2 = back.encode(back.encode_question(Task::retrieval, q));
        CHECK(m.next_token_logits(e1, prefix) == back.next_token_logits(e2, prefix));
    }

    const auto other = build_vocab(std::vector<std::string>{"x y w"}, catalog({"ra", "rb"}), 1);
    std::istringstream mismatch(bytes);
    CHECK_THROWS_AS(load_checkpoint(mismatch, other), FormatError);

    std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(truncated, m.vocab()), FormatError);

    std::string bumped = bytes;
    bumped[4] = static_cast<char>(kCheckpointVersion + 1);
    std::istringstream version(bumped);
    CHECK_THROWS_AS(load_checkpoint(version, m.vocab()), FormatError);
}

TEST_CASE("settings") {
    ModelConfig cfg;
    TrainingRun run;
    apply_setting(cfg, run, "model.width", "64");
    apply_setting(cfg, run, "train.schedule", "index_then_joint");
    apply_setting(cfg, run, "train.optimizer", "adam");
    CHECK(cfg.width == 64);
    CHECK(run.schedule == Schedule::index_then_joint);
    CHECK(run.optimizer == OptimizerKind::adam);
    CHECK_THROWS_AS(apply_setting(cfg, run, "model.colour", "1"), ConfigError);
    CHECK_THROWS_AS(apply_setting(cfg, run, "train.schedule", "sometimes"), ConfigError);
}

TEST_CASE("joint training lowers the loss on the synthetic corpus") {
    const auto s = gsr::testing::synthetic_setup();
    GsrModel m(ModelConfig{}, s.vocab);
    const auto data = prepare_training_data(m, s.indexing, s.selected);
    TrainingRun run;
    run.epochs = 3;
    train(m, data, run);
    REQUIRE(run.epoch_loss.size() == 3);
    MESSAGE("epoch losses " << run.epoch_loss[0] << " " << run.epoch_loss[1] << " "
                            << run.epoch_loss[2]);
    CHECK(run.epoch_loss[2] < run.epoch_loss[0]);
}
