#include <gsr/model.hpp>

#include <gsr/error.hpp>

#include "binary_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace gsr {

namespace {

constexpr double kNormEps = 1e-5;

Matrix sinusoidal_positions(Eigen::Index len, int width) {
    Matrix pe(len, width);
    for (Eigen::Index pos = 0; pos < len; ++pos) {
        for (int i = 0; i < width; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / width);
            pe(pos, i) = std::sin(static_cast<double>(pos) * freq);
            if (i + 1 < width) pe(pos, i + 1) = std::cos(static_cast<double>(pos) * freq);
        }
    }
    return pe;
}

void softmax_rows(Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp().matrix();
        m.row(i) /= m.row(i).sum();
    }
}

} // namespace

void ModelConfig::validate() const {
    if (width <= 0 || heads <= 0 || ff_width <= 0) {
        throw ConfigError("model width, heads and ff_width must be positive");
    }
    if (width % heads != 0) {
        throw ConfigError("model width " + std::to_string(width) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (encoder_layers < 0 || decoder_layers < 0) {
        throw ConfigError("layer counts must be non-negative");
    }
    if (max_hops < 1) throw ConfigError("max_hops must be >= 1");
    if (max_question_tokens < 1) throw ConfigError("max_question_tokens must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
}

// ---------------------------------------------------------------------------
// Forward/backward pass with explicit caches. One instance handles one
// sequence pair at a time; gradients accumulate into `grads` when set.
// ---------------------------------------------------------------------------
struct ModelPass {
    using Linear = GsrModel::Linear;
    using Norm = GsrModel::Norm;
    using Attention = GsrModel::Attention;
    using FeedForward = GsrModel::FeedForward;

    struct NormCache {
        Matrix xhat;
        Eigen::VectorXd inv;
    };
    struct AttnCache {
        Matrix xq, xkv, q, k, v, o;
        std::vector<Matrix> p;
    };
    struct FfCache {
        Matrix x, h;
    };
    struct EncoderCache {
        NormCache n1;
        AttnCache self;
        Matrix drop1;
        NormCache n2;
        FfCache ff;
        Matrix drop2;
    };
    struct DecoderCache {
        NormCache n1;
        AttnCache self;
        Matrix drop1;
        NormCache n2;
        AttnCache cross;
        Matrix drop2;
        NormCache n3;
        FfCache ff;
        Matrix drop3;
    };

    const GsrModel& m;
    std::vector<Matrix>* grads = nullptr;
    std::mt19937_64* rng = nullptr;

    const Matrix& P(std::size_t i) const { return m.params_[i].value; }
    Matrix& G(std::size_t i) const { return (*grads)[i]; }
    int heads() const { return m.config_.heads; }

    // --- primitives --------------------------------------------------------

    Matrix linear(const Linear& l, const Matrix& x) const {
        Matrix y = x * P(l.w);
        y.rowwise() += P(l.b).row(0);
        return y;
    }

    Matrix linear_back(const Linear& l, const Matrix& x, const Matrix& dy) const {
        if (grads) {
            G(l.w).noalias() += x.transpose() * dy;
            G(l.b) += dy.colwise().sum();
        }
        return dy * P(l.w).transpose();
    }

    Matrix norm(const Norm& n, const Matrix& x, NormCache& c) const {
        const Eigen::Index d = x.cols();
        c.xhat.resize(x.rows(), d);
        c.inv.resize(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const double mu = x.row(i).mean();
            auto centered = (x.row(i).array() - mu).matrix();
            const double var = centered.squaredNorm() / static_cast<double>(d);
            c.inv(i) = 1.0 / std::sqrt(var + kNormEps);
            c.xhat.row(i) = centered * c.inv(i);
        }
        Matrix y = (c.xhat.array().rowwise() * P(n.gamma).row(0).array()).matrix();
        y.rowwise() += P(n.beta).row(0);
        return y;
    }

    Matrix norm_back(const Norm& n, const NormCache& c, const Matrix& dy) const {
        if (grads) {
            G(n.gamma) += dy.cwiseProduct(c.xhat).colwise().sum();
            G(n.beta) += dy.colwise().sum();
        }
        const Matrix dxhat = (dy.array().rowwise() * P(n.gamma).row(0).array()).matrix();
        Matrix dx(dy.rows(), dy.cols());
        for (Eigen::Index i = 0; i < dy.rows(); ++i) {
            const double m1 = dxhat.row(i).mean();
            const double m2 = dxhat.row(i).cwiseProduct(c.xhat.row(i)).mean();
            dx.row(i) = c.inv(i) * ((dxhat.row(i).array() - m1).matrix() - c.xhat.row(i) * m2);
        }
        return dx;
    }

    Matrix attention(const Attention& a, const Matrix& xq, const Matrix& xkv, bool causal,
                     AttnCache& c) const {
        c.xq = xq;
        c.xkv = xkv;
        c.q = linear(a.q, xq);
        c.k = linear(a.k, xkv);
        c.v = linear(a.v, xkv);
        const int h_count = heads();
        const Eigen::Index dh = xq.cols() / h_count;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        c.o.resize(xq.rows(), xq.cols());
        c.p.resize(static_cast<std::size_t>(h_count));
        for (int h = 0; h < h_count; ++h) {
            Matrix s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
            if (causal) {
                for (Eigen::Index i = 0; i < s.rows(); ++i) {
                    for (Eigen::Index j = i + 1; j < s.cols(); ++j) {
                        s(i, j) = -std::numeric_limits<double>::infinity();
                    }
                }
            }
            softmax_rows(s);
            c.o.middleCols(h * dh, dh).noalias() = s * c.v.middleCols(h * dh, dh);
            c.p[static_cast<std::size_t>(h)] = std::move(s);
        }
        return linear(a.o, c.o);
    }

    void attention_back(const Attention& a, const AttnCache& c, const Matrix& dy, Matrix& dxq,
                        Matrix& dxkv) const {
        const Matrix d_o = linear_back(a.o, c.o, dy);
        const int h_count = heads();
        const Eigen::Index dh = c.xq.cols() / h_count;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Matrix dq(c.q.rows(), c.q.cols());
        Matrix dk(c.k.rows(), c.k.cols());
        Matrix dv(c.v.rows(), c.v.cols());
        for (int h = 0; h < h_count; ++h) {
            const Matrix& p = c.p[static_cast<std::size_t>(h)];
            const auto d_oh = d_o.middleCols(h * dh, dh);
            const Matrix dp = d_oh * c.v.middleCols(h * dh, dh).transpose();
            dv.middleCols(h * dh, dh).noalias() = p.transpose() * d_oh;
            const Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
            const Matrix ds =
                (p.array() * (dp.array().colwise() - row_dot.array())).matrix() * scale;
            dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
            dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
        }
        dxq = linear_back(a.q, c.xq, dq);
        dxkv = linear_back(a.k, c.xkv, dk);
        dxkv += linear_back(a.v, c.xkv, dv);
    }

    Matrix feed_forward(const FeedForward& f, const Matrix& x, FfCache& c) const {
        c.x = x;
        c.h = linear(f.up, x).cwiseMax(0.0);
        return linear(f.down, c.h);
    }

    Matrix feed_forward_back(const FeedForward& f, const FfCache& c, const Matrix& dy) const {
        Matrix dh = linear_back(f.down, c.h, dy);
        dh.array() *= (c.h.array() > 0.0).cast<double>();
        return linear_back(f.up, c.x, dh);
    }

    Matrix dropout(const Matrix& x, Matrix& mask) const {
        const double p = m.config_.dropout;
        if (rng == nullptr || p <= 0.0) {
            mask.resize(0, 0);
            return x;
        }
        std::bernoulli_distribution keep(1.0 - p);
        mask.resize(x.rows(), x.cols());
        const double scale = 1.0 / (1.0 - p);
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            for (Eigen::Index i = 0; i < x.rows(); ++i) mask(i, j) = keep(*rng) ? scale : 0.0;
        }
        return x.cwiseProduct(mask);
    }

    static Matrix dropout_back(const Matrix& dy, const Matrix& mask) {
        return mask.size() == 0 ? dy : Matrix(dy.cwiseProduct(mask));
    }

    Matrix embed(std::span<const TokenId> tokens) const {
        const Matrix& table = P(m.embedding_);
        Matrix x = sinusoidal_positions(static_cast<Eigen::Index>(tokens.size()),
                                        m.config_.width);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            x.row(static_cast<Eigen::Index>(i)) += table.row(tokens[i]);
        }
        return x;
    }

    void embed_back(std::span<const TokenId> tokens, const Matrix& dx) const {
        if (!grads) return;
        Matrix& g = G(m.embedding_);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            g.row(tokens[i]) += dx.row(static_cast<Eigen::Index>(i));
        }
    }

    // --- stacks ------------------------------------------------------------

    struct EncoderState {
        Matrix drop0;
        std::vector<EncoderCache> layers;
        NormCache final_norm;
        Matrix memory;
    };

    void encode(std::span<const TokenId> input, EncoderState& st) const {
        Matrix x = dropout(embed(input), st.drop0);
        st.layers.resize(m.encoder_.size());
        for (std::size_t l = 0; l < m.encoder_.size(); ++l) {
            const auto& L = m.encoder_[l];
            auto& c = st.layers[l];
            const Matrix a = norm(L.norm1, x, c.n1);
            x += dropout(attention(L.self, a, a, false, c.self), c.drop1);
            const Matrix b = norm(L.norm2, x, c.n2);
            x += dropout(feed_forward(L.ff, b, c.ff), c.drop2);
        }
        st.memory = norm(m.encoder_norm_, x, st.final_norm);
    }

    void encode_back(std::span<const TokenId> input, const EncoderState& st,
                     const Matrix& d_memory) const {
        Matrix dx = norm_back(m.encoder_norm_, st.final_norm, d_memory);
        for (std::size_t l = m.encoder_.size(); l-- > 0;) {
            const auto& L = m.encoder_[l];
            const auto& c = st.layers[l];
            const Matrix d_ff = feed_forward_back(L.ff, c.ff, dropout_back(dx, c.drop2));
            dx += norm_back(L.norm2, c.n2, d_ff);
            Matrix dq, dkv;
            attention_back(L.self, c.self, dropout_back(dx, c.drop1), dq, dkv);
            dq += dkv;
            dx += norm_back(L.norm1, c.n1, dq);
        }
        embed_back(input, dropout_back(dx, st.drop0));
    }

    struct DecoderState {
        Matrix drop0;
        std::vector<DecoderCache> layers;
        NormCache final_norm;
        Matrix hidden;
    };

    void decode(std::span<const TokenId> dec_input, const Matrix& memory,
                DecoderState& st) const {
        Matrix y = dropout(embed(dec_input), st.drop0);
        st.layers.resize(m.decoder_.size());
        for (std::size_t l = 0; l < m.decoder_.size(); ++l) {
            const auto& L = m.decoder_[l];
            auto& c = st.layers[l];
            const Matrix a = norm(L.norm1, y, c.n1);
            y += dropout(attention(L.self, a, a, true, c.self), c.drop1);
            const Matrix b = norm(L.norm2, y, c.n2);
            y += dropout(attention(L.cross, b, memory, false, c.cross), c.drop2);
            const Matrix e = norm(L.norm3, y, c.n3);
            y += dropout(feed_forward(L.ff, e, c.ff), c.drop3);
        }
        st.hidden = norm(m.decoder_norm_, y, st.final_norm);
    }

    void decode_back(std::span<const TokenId> dec_input, const DecoderState& st,
                     const Matrix& d_hidden, Matrix& d_memory) const {
        Matrix dy = norm_back(m.decoder_norm_, st.final_norm, d_hidden);
        for (std::size_t l = m.decoder_.size(); l-- > 0;) {
            const auto& L = m.decoder_[l];
            const auto& c = st.layers[l];
            const Matrix d_ff = feed_forward_back(L.ff, c.ff, dropout_back(dy, c.drop3));
            dy += norm_back(L.norm3, c.n3, d_ff);
            Matrix dq, dkv;
            attention_back(L.cross, c.cross, dropout_back(dy, c.drop2), dq, dkv);
            d_memory += dkv;
            dy += norm_back(L.norm2, c.n2, dq);
            attention_back(L.self, c.self, dropout_back(dy, c.drop1), dq, dkv);
            dq += dkv;
            dy += norm_back(L.norm1, c.n1, dq);
        }
        embed_back(dec_input, dropout_back(dy, st.drop0));
    }

    std::vector<TokenId> decoder_input(std::span<const std::size_t> prefix) const {
        std::vector<TokenId> out{Vocabulary::kBegin};
        for (std::size_t r : prefix) out.push_back(m.vocab_.relation_token(r));
        return out;
    }

    // Summed token negative log-likelihood of one pair; gradients scaled by
    // `grad_scale`.
    double pair_loss(const TrainingPair& pair, double grad_scale) const {
        EncoderState enc;
        encode(pair.input, enc);
        const std::span<const std::size_t> prefix(pair.targets.data(), pair.targets.size() - 1);
        const std::vector<TokenId> dec_in = decoder_input(prefix);
        DecoderState dec;
        decode(dec_in, enc.memory, dec);
        Matrix logits = linear(m.output_, dec.hidden);

        double nll = 0.0;
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            const double mx = logits.row(i).maxCoeff();
            const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
            const auto t = static_cast<Eigen::Index>(pair.targets[static_cast<std::size_t>(i)]);
            nll += lse - logits(i, t);
            if (grads) {
                logits.row(i) = (logits.row(i).array() - lse).exp().matrix();
                logits(i, t) -= 1.0;
            }
        }
        if (grads) {
            logits *= grad_scale;
            const Matrix d_hidden = linear_back(m.output_, dec.hidden, logits);
            Matrix d_memory = Matrix::Zero(enc.memory.rows(), enc.memory.cols());
            decode_back(dec_in, dec, d_hidden, d_memory);
            encode_back(pair.input, enc, d_memory);
        }
        return nll;
    }
};

// ---------------------------------------------------------------------------

std::size_t GsrModel::add_param(std::string name, Matrix value) {
    params_.push_back({std::move(name), std::move(value)});
    return params_.size() - 1;
}

GsrModel::Linear GsrModel::add_linear(const std::string& name, int in, int out,
                                      std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    Matrix w(in, out);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    }
    const std::size_t wi = add_param(name + ".weight", std::move(w));
    const std::size_t bi = add_param(name + ".bias", Matrix::Zero(1, out));
    return {wi, bi};
}

GsrModel::Norm GsrModel::add_norm(const std::string& name, int width) {
    const std::size_t g = add_param(name + ".gamma", Matrix::Ones(1, width));
    const std::size_t b = add_param(name + ".beta", Matrix::Zero(1, width));
    return {g, b};
}

GsrModel::Attention GsrModel::add_attention(const std::string& name, std::mt19937_64& rng) {
    const int d = config_.width;
    Attention a;
    a.q = add_linear(name + ".q", d, d, rng);
    a.k = add_linear(name + ".k", d, d, rng);
    a.v = add_linear(name + ".v", d, d, rng);
    a.o = add_linear(name + ".o", d, d, rng);
    return a;
}

GsrModel::FeedForward GsrModel::add_ff(const std::string& name, std::mt19937_64& rng) {
    FeedForward f;
    f.up = add_linear(name + ".up", config_.width, config_.ff_width, rng);
    f.down = add_linear(name + ".down", config_.ff_width, config_.width, rng);
    return f;
}

GsrModel::GsrModel(ModelConfig config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
    config_.validate();
    if (vocab_.relation_count() == 0) throw ConfigError("vocabulary has no relation tokens");

    std::mt19937_64 rng(config_.seed);
    const int d = config_.width;
    {
        std::normal_distribution<double> dist(0.0, 1.0);
        Matrix e(static_cast<Eigen::Index>(vocab_.size()), d);
        for (Eigen::Index j = 0; j < e.cols(); ++j) {
            for (Eigen::Index i = 0; i < e.rows(); ++i) e(i, j) = dist(rng);
        }
        embedding_ = add_param("embedding", std::move(e));
    }
    for (int l = 0; l < config_.encoder_layers; ++l) {
        const std::string p = "encoder." + std::to_string(l);
        EncoderLayer layer;
        layer.norm1 = add_norm(p + ".norm1", d);
        layer.self = add_attention(p + ".self", rng);
        layer.norm2 = add_norm(p + ".norm2", d);
        layer.ff = add_ff(p + ".ff", rng);
        encoder_.push_back(layer);
    }
    encoder_norm_ = add_norm("encoder.norm", d);
    for (int l = 0; l < config_.decoder_layers; ++l) {
        const std::string p = "decoder." + std::to_string(l);
        DecoderLayer layer;
        layer.norm1 = add_norm(p + ".norm1", d);
        layer.self = add_attention(p + ".self", rng);
        layer.norm2 = add_norm(p + ".norm2", d);
        layer.cross = add_attention(p + ".cross", rng);
        layer.norm3 = add_norm(p + ".norm3", d);
        layer.ff = add_ff(p + ".ff", rng);
        decoder_.push_back(layer);
    }
    decoder_norm_ = add_norm("decoder.norm", d);
    output_ = add_linear("output", d, static_cast<int>(vocab_.target_size()), rng);
}

std::size_t GsrModel::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

std::vector<Matrix> GsrModel::zero_gradients() const {
    std::vector<Matrix> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    return g;
}

std::vector<TokenId> GsrModel::encode_question(Task task, std::string_view question) const {
    return encode_input(vocab_, task, question,
                        static_cast<std::size_t>(config_.max_question_tokens));
}

EncodedQuestion GsrModel::encode(std::span<const TokenId> input) const {
    if (input.empty()) throw Error("encode: empty input sequence");
    ModelPass pass{*this};
    ModelPass::EncoderState st;
    pass.encode(input, st);
    return {std::move(st.memory)};
}

std::vector<double> GsrModel::next_token_logits(const EncodedQuestion& question,
                                                std::span<const std::size_t> prefix) const {
    if (prefix.size() >= static_cast<std::size_t>(config_.max_hops)) {
        throw Error("next_token_logits: prefix length " + std::to_string(prefix.size()) +
                    " reaches max hops " + std::to_string(config_.max_hops));
    }
    ModelPass pass{*this};
    const auto dec_in = pass.decoder_input(prefix);
    ModelPass::DecoderState st;
    pass.decode(dec_in, question.memory, st);
    const Matrix last = st.hidden.bottomRows(1);
    const Matrix logits = pass.linear(output_, last);
    return {logits.data(), logits.data() + logits.size()};
}

std::vector<double> GsrModel::next_token_log_probs(const EncodedQuestion& question,
                                                   std::span<const std::size_t> prefix) const {
    std::vector<double> v = next_token_logits(question, prefix);
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0.0;
    for (double x : v) sum += std::exp(x - mx);
    const double lse = mx + std::log(sum);
    for (double& x : v) x -= lse;
    return v;
}

double GsrModel::loss(std::span<const TrainingPair> batch, std::vector<Matrix>* grads,
                      std::mt19937_64* dropout_rng) const {
    std::size_t tokens = 0;
    for (const auto& p : batch) {
        if (p.input.empty() || p.targets.empty()) throw Error("loss: empty training pair");
        if (p.targets.size() > static_cast<std::size_t>(config_.max_hops) + 1) {
            throw Error("loss: target chain longer than max_hops");
        }
        tokens += p.targets.size();
    }
    if (tokens == 0) return 0.0;
    const double scale = 1.0 / static_cast<double>(tokens);
    ModelPass pass{*this, grads, dropout_rng};
    double total = 0.0;
    for (const auto& p : batch) total += pass.pair_loss(p, scale);
    return total * scale;
}

// ---------------------------------------------------------------------------

bool make_retrieval_pair(const GsrModel& model, std::string_view question,
                         const LabeledChain& chain, TrainingPair& out) {
    if (chain.size() > static_cast<std::size_t>(model.config().max_hops)) return false;
    out.input = model.encode_question(Task::retrieval, question);
    out.targets.clear();
    for (const auto& hop : chain) {
        auto idx = model.vocab().relation_index(hop.relation);
        if (!idx) return false;
        out.targets.push_back(*idx);
    }
    out.targets.push_back(model.end_target());
    return true;
}

TrainingPair make_indexing_pair(const GsrModel& model, std::string_view pseudo_question,
                                std::size_t relation_index) {
    return {model.encode_question(Task::index, pseudo_question),
            {relation_index, model.end_target()}};
}

TrainingData prepare_training_data(const GsrModel& model,
                                   std::span<const IndexingSample> indexing,
                                   std::span<const RetrievalSample> retrieval) {
    TrainingData data;
    std::size_t skipped = 0;
    for (const auto& s : indexing) {
        auto idx = model.vocab().relation_index(s.relation);
        if (!idx) {
            ++skipped;
            continue;
        }
        data.indexing.push_back(make_indexing_pair(model, s.pseudo_question, *idx));
    }
    for (const auto& s : retrieval) {
        for (const auto& chain : s.chains) {
            TrainingPair pair;
            if (make_retrieval_pair(model, s.question, chain, pair)) {
                data.retrieval.push_back(std::move(pair));
            } else {
                ++skipped;
            }
        }
    }
    if (skipped > 0) {
        spdlog::warn("training data: skipped {} items with unknown relations or over-long chains",
                     skipped);
    }
    return data;
}

std::string_view to_string(Schedule s) {
    switch (s) {
        case Schedule::joint: return "joint";
        case Schedule::retrieval_only: return "retrieval_only";
        case Schedule::index_then_retrieval: return "index_then_retrieval";
        case Schedule::index_then_joint: return "index_then_joint";
    }
    return "joint";
}

Schedule schedule_from_string(std::string_view s) {
    if (s == "joint") return Schedule::joint;
    if (s == "retrieval_only") return Schedule::retrieval_only;
    if (s == "index_then_retrieval") return Schedule::index_then_retrieval;
    if (s == "index_then_joint") return Schedule::index_then_joint;
    throw ConfigError("unknown schedule \"" + std::string(s) + "\"");
}

std::string_view to_string(OptimizerKind k) {
    return k == OptimizerKind::adam ? "adam" : "sgd_momentum";
}

OptimizerKind optimizer_from_string(std::string_view s) {
    if (s == "sgd_momentum" || s == "sgd") return OptimizerKind::sgd_momentum;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer \"" + std::string(s) + "\"");
}

namespace {

struct Phase {
    bool indexing;
    bool retrieval;
    int epochs;
};

class Optimizer {
public:
    Optimizer(const GsrModel& model, const TrainingRun& run)
        : run_(run), first_(model.zero_gradients()), second_(model.zero_gradients()) {}

    void step(std::vector<Parameter>& params, std::vector<Matrix>& grads) {
        if (run_.clip_norm > 0.0) {
            double sq = 0.0;
            for (const auto& g : grads) sq += g.squaredNorm();
            const double norm = std::sqrt(sq);
            if (norm > run_.clip_norm) {
                const double s = run_.clip_norm / norm;
                for (auto& g : grads) g *= s;
            }
        }
        ++t_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            Matrix& p = params[i].value;
            const Matrix& g = grads[i];
            if (run_.optimizer == OptimizerKind::sgd_momentum) {
                first_[i] = run_.momentum * first_[i] + g;
                p -= run_.learning_rate * first_[i];
            } else {
                constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
                first_[i] = b1 * first_[i] + (1.0 - b1) * g;
                second_[i] = b2 * second_[i] + (1.0 - b2) * g.cwiseAbs2();
                const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
                const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
                p.array() -= run_.learning_rate * (first_[i].array() / c1) /
                             ((second_[i].array() / c2).sqrt() + eps);
            }
        }
    }

private:
    const TrainingRun& run_;
    std::vector<Matrix> first_;
    std::vector<Matrix> second_;
    long long t_ = 0;
};

} // namespace

void train(GsrModel& model, const TrainingData& data, TrainingRun& run) {
    if (run.epochs < 0 || run.index_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (run.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (run.index_weight < 0.0) throw ConfigError("index_weight must be >= 0");

    std::vector<Phase> phases;
    const bool joint_uses_index = run.index_weight > 0.0;
    switch (run.schedule) {
        case Schedule::joint: phases = {{joint_uses_index, true, run.epochs}}; break;
        case Schedule::retrieval_only: phases = {{false, true, run.epochs}}; break;
        case Schedule::index_then_retrieval:
            phases = {{true, false, run.index_epochs}, {false, true, run.epochs}};
            break;
        case Schedule::index_then_joint:
            phases = {{true, false, run.index_epochs}, {joint_uses_index, true, run.epochs}};
            break;
    }
    bool needs_index = false;
    bool needs_retrieval = false;
    for (const auto& ph : phases) {
        if (ph.epochs == 0) continue;
        needs_index = needs_index || ph.indexing;
        needs_retrieval = needs_retrieval || ph.retrieval;
    }
    if (needs_index && data.indexing.empty()) {
        throw Error("train: schedule " + std::string(to_string(run.schedule)) +
                    " needs indexing data but the corpus is empty");
    }
    if (needs_retrieval && data.retrieval.empty()) {
        throw Error("train: retrieval corpus is empty");
    }

    std::mt19937_64 order_rng(run.seed);
    std::mt19937_64 dropout_rng(run.seed ^ 0x9e3779b97f4a7c15ULL);
    Optimizer opt(model, run);
    std::vector<Matrix> grads = model.zero_gradients();

    for (const auto& ph : phases) {
        for (int epoch = 0; epoch < ph.epochs; ++epoch) {
            // (is_index, position) items for this epoch.
            std::vector<std::pair<bool, std::size_t>> items;
            if (ph.retrieval) {
                for (std::size_t i = 0; i < data.retrieval.size(); ++i) items.emplace_back(false, i);
            }
            if (ph.indexing) {
                const double weight = ph.retrieval ? run.index_weight : 1.0;
                const auto want = static_cast<std::size_t>(
                    std::llround(weight * static_cast<double>(data.indexing.size())));
                std::vector<std::size_t> order(data.indexing.size());
                std::iota(order.begin(), order.end(), 0);
                for (std::size_t k = 0; k < want; ++k) {
                    if (k % order.size() == 0) std::shuffle(order.begin(), order.end(), order_rng);
                    items.emplace_back(true, order[k % order.size()]);
                }
            }
            std::shuffle(items.begin(), items.end(), order_rng);

            double epoch_sum = 0.0;
            std::size_t epoch_steps = 0;
            std::vector<TrainingPair> batch;
            for (std::size_t start = 0; start < items.size();
                 start += static_cast<std::size_t>(run.batch_size)) {
                const std::size_t stop =
                    std::min(items.size(), start + static_cast<std::size_t>(run.batch_size));
                batch.clear();
                for (std::size_t i = start; i < stop; ++i) {
                    const auto [is_index, pos] = items[i];
                    batch.push_back(is_index ? data.indexing[pos] : data.retrieval[pos]);
                    if (is_index) {
                        ++run.consumed_index_samples;
                    } else {
                        ++run.consumed_retrieval_samples;
                    }
                }
                for (auto& g : grads) g.setZero();
                const double l = model.loss(batch, &grads, &dropout_rng);
                opt.step(model.mutable_parameters(), grads);
                run.loss_curve.push_back(l);
                ++run.steps;
                epoch_sum += l;
                ++epoch_steps;
            }
            const double mean = epoch_steps ? epoch_sum / static_cast<double>(epoch_steps) : 0.0;
            run.epoch_loss.push_back(mean);
            spdlog::debug("train: {} epoch {} loss {:.4f}", ph.indexing && !ph.retrieval
                                                               ? "index"
                                                               : "main",
                          epoch + 1, mean);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint layout (little-endian):
//   "GSRM" | u8 version | u64 vocabulary hash
//   config: u32 width, encoder_layers, decoder_layers, heads, ff_width,
//           max_question_tokens, max_hops | f64 dropout | u64 seed
//   u32 parameter count, then per parameter:
//           u32 name length + name | u32 rows | u32 cols | f64 x rows*cols
//           (column-major)
// ---------------------------------------------------------------------------

void save_checkpoint(const GsrModel& model, std::ostream& out) {
    detail::BinaryWriter w(out);
    w.bytes("GSRM", 4);
    w.u8(kCheckpointVersion);
    w.u64(model.vocab().hash());
    const ModelConfig& c = model.config();
    for (int v : {c.width, c.encoder_layers, c.decoder_layers, c.heads, c.ff_width,
                  c.max_question_tokens, c.max_hops}) {
        w.u32(static_cast<std::uint32_t>(v));
    }
    w.f64(c.dropout);
    w.u64(c.seed);
    const auto params = model.parameters();
    w.u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.str(p.name);
        w.u32(static_cast<std::uint32_t>(p.value.rows()));
        w.u32(static_cast<std::uint32_t>(p.value.cols()));
        for (Eigen::Index i = 0; i < p.value.size(); ++i) w.f64(p.value.data()[i]);
    }
    if (!out) throw Error("checkpoint write failed");
}

GsrModel load_checkpoint(std::istream& in, const Vocabulary& vocab) {
    detail::BinaryReader r(in, "checkpoint");
    r.expect_magic("GSRM");
    r.expect_version(kCheckpointVersion);
    const std::uint64_t hash = r.u64();
    if (hash != vocab.hash()) {
        throw FormatError("checkpoint: vocabulary hash mismatch (checkpoint " +
                          std::to_string(hash) + ", vocabulary " + std::to_string(vocab.hash()) +
                          ")");
    }
    ModelConfig c;
    c.width = static_cast<int>(r.u32());
    c.encoder_layers = static_cast<int>(r.u32());
    c.decoder_layers = static_cast<int>(r.u32());
    c.heads = static_cast<int>(r.u32());
    c.ff_width = static_cast<int>(r.u32());
    c.max_question_tokens = static_cast<int>(r.u32());
    c.max_hops = static_cast<int>(r.u32());
    c.dropout = r.f64();
    c.seed = r.u64();
    GsrModel model(c, vocab);
    auto& params = model.mutable_parameters();
    const std::uint32_t n = r.u32();
    if (n != params.size()) {
        throw FormatError("checkpoint: expected " + std::to_string(params.size()) +
                          " parameters, found " + std::to_string(n));
    }
    for (auto& p : params) {
        const std::string name = r.str();
        const auto rows = static_cast<Eigen::Index>(r.u32());
        const auto cols = static_cast<Eigen::Index>(r.u32());
        if (name != p.name || rows != p.value.rows() || cols != p.value.cols()) {
            throw FormatError("checkpoint: parameter \"" + name + "\" does not match model");
        }
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = r.f64();
    }
    return model;
}

void save_checkpoint_file(const GsrModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    save_checkpoint(model, out);
}

GsrModel load_checkpoint_file(const std::filesystem::path& path, const Vocabulary& vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    return load_checkpoint(in, vocab);
}

// ---------------------------------------------------------------------------

namespace {

template <class T>
T parse_number(std::string_view key, std::string_view value) {
    T out{};
    if constexpr (std::is_floating_point_v<T>) {
        try {
            std::size_t used = 0;
            out = static_cast<T>(std::stod(std::string(value), &used));
            if (used != value.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ConfigError("bad number for " + std::string(key) + ": " + std::string(value));
        }
    } else {
        auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
        if (ec != std::errc{} || ptr != value.data() + value.size()) {
            throw ConfigError("bad integer for " + std::string(key) + ": " + std::string(value));
        }
    }
    return out;
}

} // namespace

void apply_setting(ModelConfig& config, TrainingRun& run, std::string_view key,
                   std::string_view value) {
    if (key == "model.width") config.width = parse_number<int>(key, value);
    else if (key == "model.encoder_layers") config.encoder_layers = parse_number<int>(key, value);
    else if (key == "model.decoder_layers") config.decoder_layers = parse_number<int>(key, value);
    else if (key == "model.heads") config.heads = parse_number<int>(key, value);
    else if (key == "model.ff_width") config.ff_width = parse_number<int>(key, value);
    else if (key == "model.max_question_tokens") config.max_question_tokens = parse_number<int>(key, value);
    else if (key == "model.max_hops") config.max_hops = parse_number<int>(key, value);
    else if (key == "model.dropout") config.dropout = parse_number<double>(key, value);
    else if (key == "model.seed") config.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "train.schedule") run.schedule = schedule_from_string(value);
    else if (key == "train.epochs") run.epochs = parse_number<int>(key, value);
    else if (key == "train.index_epochs") run.index_epochs = parse_number<int>(key, value);
    else if (key == "train.batch_size") run.batch_size = parse_number<int>(key, value);
    else if (key == "train.learning_rate") run.learning_rate = parse_number<double>(key, value);
    else if (key == "train.momentum") run.momentum = parse_number<double>(key, value);
    else if (key == "train.optimizer") run.optimizer = optimizer_from_string(value);
    else if (key == "train.clip_norm") run.clip_norm = parse_number<double>(key, value);
    else if (key == "train.index_weight") run.index_weight = parse_number<double>(key, value);
    else if (key == "train.seed") run.seed = parse_number<std::uint64_t>(key, value);
    else throw ConfigError("unknown setting \"" + std::string(key) + "\"");
}

} // namespace gsr
