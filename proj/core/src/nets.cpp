#include "hdlab/nets.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "hdlab/rng.hpp"

namespace hdlab {

namespace {

// Conditioning scalars live in [0,1]; keep the fastest sinusoid at one period
// over the interval so directional derivatives through the embedding stay
// tame.
constexpr double kTimeEmbedScale = 6.283185307179586;

std::shared_ptr<const Tensor> alias(const Tensor& t) {
    // Non-owning view; the record's lifetime is bounded by the net's.
    return std::shared_ptr<const Tensor>(std::shared_ptr<void>(), &t);
}

Tensor kaiming_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return random_uniform(rng, fan_in, fan_out, -bound, bound);
}

void require_unit_range(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw std::invalid_argument(std::string(what) + " must lie in [0,1], got " +
                                    std::to_string(v));
    }
}

}  // namespace

const std::vector<SizeConfig>& SizeConfig::presets() {
    static const std::vector<SizeConfig> kPresets = {
        {"S", 32, 1, 1e-3},  {"B", 64, 2, 1e-3},    {"L", 64, 4, 5e-4},
        {"XL", 64, 8, 1e-4}, {"XXL", 64, 16, 1e-4}, {"XXXL", 64, 32, 7e-5},
    };
    return kPresets;
}

SizeConfig SizeConfig::preset(const std::string& label) {
    for (const auto& cfg : presets()) {
        if (cfg.label == label) return cfg;
    }
    throw std::invalid_argument("unknown size label '" + label + "'");
}

VelocityNet VelocityNet::build(const SizeConfig& size, CondSet cond, std::uint64_t seed,
                               int data_dim, int num_classes) {
    if (size.hidden_dim < 1 || size.layers < 1) {
        throw std::invalid_argument("VelocityNet: hidden_dim and layers must be >= 1");
    }
    VelocityNet net;
    net.size_ = size;
    net.cond_ = cond;
    net.data_dim_ = data_dim;
    net.num_classes_ = num_classes;
    net.seed_ = seed;

    Rng rng(splitmix64(seed));
    const auto h = static_cast<std::size_t>(size.hidden_dim);
    const auto d = static_cast<std::size_t>(data_dim);
    const auto f = static_cast<std::size_t>(net.embed_dim());
    auto& p = net.params_;

    p.push_back({"in_proj.w", kaiming_uniform(rng, d, h)});
    p.push_back({"in_proj.b", Tensor::zeros(1, h)});
    if (cond.t) {
        p.push_back({"t_embed.w1", kaiming_uniform(rng, f, h)});
        p.push_back({"t_embed.b1", Tensor::zeros(1, h)});
        p.push_back({"t_embed.w2", kaiming_uniform(rng, h, h)});
        p.push_back({"t_embed.b2", Tensor::zeros(1, h)});
    }
    if (cond.r) {
        p.push_back({"r_embed.w1", kaiming_uniform(rng, f, h)});
        p.push_back({"r_embed.b1", Tensor::zeros(1, h)});
        p.push_back({"r_embed.w2", kaiming_uniform(rng, h, h)});
        p.push_back({"r_embed.b2", Tensor::zeros(1, h)});
    }
    if (cond.c) {
        p.push_back({"class_embed",
                     random_normal(rng, static_cast<std::size_t>(num_classes) + 1, h, 0.0, 0.02)});
    }
    for (int i = 0; i < size.layers; ++i) {
        const std::string prefix = "block" + std::to_string(i);
        p.push_back({prefix + ".w1", kaiming_uniform(rng, h, h)});
        p.push_back({prefix + ".b1", Tensor::zeros(1, h)});
        // Second linear starts at zero so every block begins as the skip path.
        p.push_back({prefix + ".w2", Tensor::zeros(h, h)});
        p.push_back({prefix + ".b2", Tensor::zeros(1, h)});
    }
    p.push_back({"out_proj.w", Tensor::zeros(h, d)});
    p.push_back({"out_proj.b", Tensor::zeros(1, d)});
    return net;
}

Tensor& VelocityNet::param(const std::string& name) {
    for (auto& np : params_) {
        if (np.name == name) return np.value;
    }
    throw std::invalid_argument("VelocityNet: no parameter named '" + name + "'");
}

const Tensor& VelocityNet::param(const std::string& name) const {
    return const_cast<VelocityNet*>(this)->param(name);
}

std::size_t VelocityNet::param_count() const {
    std::size_t n = 0;
    for (const auto& np : params_) n += np.value.numel();
    return n;
}

std::uint64_t VelocityNet::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& np : params_) {
        h ^= fnv1a64(np.name);
        h = splitmix64(h ^ fnv1a64(np.value.data().data(), np.value.numel() * sizeof(double)));
    }
    return h;
}

VelocityNet::Emitted VelocityNet::emit(ad::Graph& g, ad::ValueId x, std::optional<ad::ValueId> t,
                                       std::optional<ad::ValueId> r,
                                       std::optional<ad::ValueId> class_onehot, Mode mode) const {
    if (cond_.t != t.has_value() || cond_.r != r.has_value() || cond_.c != class_onehot.has_value()) {
        throw std::invalid_argument("VelocityNet::emit: conditioning inputs do not match CondSet");
    }

    Emitted out;
    std::vector<ad::ValueId> pid(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (mode == Mode::Trainable) {
            pid[i] = g.leaf(params_[i].value.shape(), params_[i].name);
            out.param_leaves.push_back(pid[i]);
        } else {
            pid[i] = g.constant(alias(params_[i].value));
        }
    }
    auto id_of = [&](const std::string& name) -> ad::ValueId {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].name == name) return pid[i];
        }
        throw std::logic_error("VelocityNet::emit: missing parameter " + name);
    };

    auto embed_scalar = [&](ad::ValueId col, const std::string& prefix) {
        ad::ValueId e = g.time_embed(col, embed_dim(), kTimeEmbedScale);
        ad::ValueId a = g.silu(g.add(g.matmul(e, id_of(prefix + ".w1")), id_of(prefix + ".b1")));
        return g.add(g.matmul(a, id_of(prefix + ".w2")), id_of(prefix + ".b2"));
    };

    ad::ValueId h = g.add(g.matmul(x, id_of("in_proj.w")), id_of("in_proj.b"));
    if (cond_.t) h = g.add(h, embed_scalar(*t, "t_embed"));
    if (cond_.r) h = g.add(h, embed_scalar(*r, "r_embed"));
    if (cond_.c) h = g.add(h, g.matmul(*class_onehot, id_of("class_embed")));

    for (int i = 0; i < size_.layers; ++i) {
        const std::string prefix = "block" + std::to_string(i);
        ad::ValueId u =
            g.silu(g.add(g.matmul(h, id_of(prefix + ".w1")), id_of(prefix + ".b1")));
        h = g.add(h, g.add(g.matmul(u, id_of(prefix + ".w2")), id_of(prefix + ".b2")));
        out.hidden.push_back(h);
    }
    out.output = g.add(g.matmul(h, id_of("out_proj.w")), id_of("out_proj.b"));
    return out;
}

Tensor VelocityNet::eval(const Tensor& x, double t, std::optional<double> r,
                         std::optional<int> class_id) const {
    const std::size_t n = x.rows();
    Tensor t_col = Tensor::full(n, 1, t);
    Tensor r_col = r ? Tensor::full(n, 1, *r) : Tensor();
    std::vector<int> labels;
    if (class_id) labels.assign(n, *class_id);
    return eval_batch(x, t_col, r ? &r_col : nullptr, class_id ? &labels : nullptr).output;
}

VelocityNet::BatchEval VelocityNet::eval_batch(const Tensor& x, const Tensor& t_col,
                                               const Tensor* r_col, const std::vector<int>* labels,
                                               bool want_hidden) const {
    if (cond_.t) {
        for (double v : t_col.data()) require_unit_range(v, "t");
    }
    if (cond_.r) {
        if (!r_col) throw std::invalid_argument("eval_batch: net expects r conditioning");
        for (double v : r_col->data()) require_unit_range(v, "r");
    }
    if (cond_.c && !labels) {
        throw std::invalid_argument("eval_batch: net expects class conditioning");
    }

    ad::Graph g;
    ad::ValueId xid = g.constant(x);
    std::optional<ad::ValueId> tid, rid, cid;
    if (cond_.t) tid = g.constant(t_col);
    if (cond_.r) rid = g.constant(*r_col);
    if (cond_.c) cid = g.constant(class_onehot(*labels));
    Emitted e = emit(g, xid, tid, rid, cid, Mode::Frozen);

    ad::Evaluation ev = ad::forward(g, {});
    BatchEval out;
    out.output = ev.at(e.output);
    if (want_hidden) {
        for (ad::ValueId hid : e.hidden) out.hidden.push_back(ev.at(hid));
    }
    return out;
}

Tensor VelocityNet::class_onehot(const std::vector<int>& labels) const {
    Tensor onehot(
        {labels.size(), static_cast<std::size_t>(num_classes_) + 1});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int c = labels[i];
        if (c == kNullClass) c = num_classes_;
        if (c < 0 || c > num_classes_) {
            throw std::invalid_argument("class_onehot: label out of range");
        }
        onehot(i, static_cast<std::size_t>(c)) = 1.0;
    }
    return onehot;
}

double spectral_sigma(const Tensor& w, SpectralState& state, int iterations) {
    if (iterations < 1) throw std::invalid_argument("spectral_sigma: iterations must be >= 1");
    const std::size_t r = w.rows(), c = w.cols();
    if (state.u.numel() != r) {
        state.u = Tensor::full(r, 1, 1.0 / std::sqrt(static_cast<double>(r)));
    }
    std::vector<double> v(c, 0.0);
    auto normalize = [](auto& vec) {
        double nrm = 0.0;
        for (double x : vec) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) return false;
        for (double& x : vec) x /= nrm;
        return true;
    };
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < r; ++i) acc += state.u[i] * w(i, j);
            v[j] = acc;
        }
        if (!normalize(v)) return 0.0;
        for (std::size_t i = 0; i < r; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < c; ++j) acc += w(i, j) * v[j];
            state.u[i] = acc;
        }
        std::span<double> uspan = state.u.data();
        if (!normalize(uspan)) return 0.0;
    }
    double sigma = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += w(i, j) * v[j];
        sigma += state.u[i] * acc;
    }
    return sigma;
}

Tensor spectral_normalize(const Tensor& matrix, int iterations) {
    SpectralState state;
    const double sigma = spectral_sigma(matrix, state, iterations);
    if (sigma == 0.0) return matrix;  // zero matrix: documented degenerate case
    return scale(matrix, 1.0 / sigma);
}

DiscriminatorHead DiscriminatorHead::build(HeadVariant variant, int token_dim,
                                           std::uint64_t seed) {
    if (token_dim < 1) throw std::invalid_argument("DiscriminatorHead: token_dim must be >= 1");
    DiscriminatorHead head;
    head.variant_ = variant;
    head.token_dim_ = token_dim;
    Rng rng(splitmix64(seed));
    const auto d = static_cast<std::size_t>(token_dim);
    if (variant == HeadVariant::Awd) {
        head.params_.push_back({"query", random_normal(rng, d, 1, 0.0, 0.1)});
        head.params_.push_back({"key.w", kaiming_uniform(rng, d, d)});
    }
    head.params_.push_back({"value.w", kaiming_uniform(rng, d, d)});
    head.params_.push_back({"score.w", kaiming_uniform(rng, d, 1)});
    head.params_.push_back({"score.b", Tensor::zeros(1, 1)});
    return head;
}

Tensor& DiscriminatorHead::param(const std::string& name) {
    for (auto& np : params_) {
        if (np.name == name) return np.value;
    }
    throw std::invalid_argument("DiscriminatorHead: no parameter named '" + name + "'");
}

const Tensor& DiscriminatorHead::param(const std::string& name) const {
    return const_cast<DiscriminatorHead*>(this)->param(name);
}

ad::ValueId layer_norm(ad::Graph& g, ad::ValueId x, std::size_t dim, double eps) {
    ad::ValueId ones = g.constant(Tensor::ones(dim, 1));
    ad::ValueId m = g.scale(g.matmul(x, ones), 1.0 / static_cast<double>(dim));
    ad::ValueId centered = g.sub(x, m);
    ad::ValueId var =
        g.scale(g.matmul(g.square(centered), ones), 1.0 / static_cast<double>(dim));
    return g.div(centered, g.sqrt(g.add_scalar(var, eps)));
}

DiscriminatorHead::Emitted DiscriminatorHead::emit(ad::Graph& g,
                                                   const std::vector<ad::ValueId>& tokens,
                                                   VelocityNet::Mode mode,
                                                   int sn_iterations, SnMode sn_mode) const {
    MultiEmitted multi = emit_many(g, {tokens}, mode, sn_iterations, sn_mode);
    Emitted out;
    out.score = multi.scores[0];
    out.weights = std::move(multi.weights[0]);
    out.param_leaves = std::move(multi.param_leaves);
    return out;
}

DiscriminatorHead::MultiEmitted DiscriminatorHead::emit_many(
    ad::Graph& g, const std::vector<std::vector<ad::ValueId>>& sequences, VelocityNet::Mode mode,
    int sn_iterations, SnMode sn_mode) const {
    if (sequences.empty()) throw std::invalid_argument("DiscriminatorHead: no token sequences");
    for (const auto& tokens : sequences) {
        if (tokens.empty()) {
            throw std::invalid_argument("DiscriminatorHead: empty token sequence");
        }
    }
    const auto d = static_cast<std::size_t>(token_dim_);

    MultiEmitted out;
    std::vector<ad::ValueId> pid(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (mode == VelocityNet::Mode::Trainable) {
            pid[i] = g.leaf(params_[i].value.shape(), "disc." + params_[i].name);
            out.param_leaves.push_back(pid[i]);
        } else {
            pid[i] = g.constant(alias(params_[i].value));
        }
    }
    auto id_of = [&](const std::string& name) -> ad::ValueId {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].name == name) return pid[i];
        }
        throw std::logic_error("DiscriminatorHead: missing parameter " + name);
    };
    // Spectral normalization: scale the weight by the current power-iteration
    // estimate. The estimate stays outside the gradient path and is computed
    // once per record so every path sees the same normalized weight.
    auto sn = [&](const std::string& name, SpectralState& state) -> ad::ValueId {
        double sigma;
        if (sn_mode == SnMode::Persistent) {
            sigma = spectral_sigma(param(name), state, sn_iterations);
        } else {
            SpectralState fresh;
            sigma = spectral_sigma(param(name), fresh, sn_iterations);
        }
        ad::ValueId w = id_of(name);
        return sigma == 0.0 ? w : g.scale(w, 1.0 / sigma);
    };

    ad::ValueId wv = sn("value.w", sn_value_);
    ad::ValueId wk = -1, q = -1;
    if (variant_ == HeadVariant::Awd) {
        wk = sn("key.w", sn_key_);
        q = id_of("query");
    }

    for (const auto& tokens : sequences) {
        const std::size_t n_tokens = tokens.size();
        std::vector<ad::ValueId> values;
        std::vector<ad::ValueId> normed;
        values.reserve(n_tokens);
        normed.reserve(n_tokens);
        for (ad::ValueId tok : tokens) {
            ad::ValueId ln = layer_norm(g, tok, d);
            normed.push_back(ln);
            values.push_back(g.matmul(ln, wv));
        }

        std::vector<ad::ValueId> weights;
        ad::ValueId pooled = -1;
        if (variant_ == HeadVariant::Awd) {
            const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
            std::vector<ad::ValueId> logits;
            logits.reserve(n_tokens);
            for (ad::ValueId ln : normed) {
                logits.push_back(g.scale(g.matmul(g.matmul(ln, wk), q), inv_sqrt_d));
            }
            // Shift by the (detached) row peak before exponentiating; softmax
            // is invariant to the shift.
            ad::ValueId peak = logits[0];
            for (std::size_t i = 1; i < n_tokens; ++i) peak = g.max(peak, logits[i]);
            peak = g.stop_gradient(peak);
            std::vector<ad::ValueId> exps;
            exps.reserve(n_tokens);
            ad::ValueId denom = -1;
            for (std::size_t i = 0; i < n_tokens; ++i) {
                exps.push_back(g.exp(g.sub(logits[i], peak)));
                denom = i == 0 ? exps[0] : g.add(denom, exps[i]);
            }
            for (std::size_t i = 0; i < n_tokens; ++i) {
                ad::ValueId w = g.div(exps[i], denom);
                weights.push_back(w);
                ad::ValueId weighted = g.mul(w, values[i]);
                pooled = i == 0 ? weighted : g.add(pooled, weighted);
            }
        } else {
            const double uniform = 1.0 / static_cast<double>(n_tokens);
            for (std::size_t i = 0; i < n_tokens; ++i) {
                weights.push_back(g.constant(Tensor::full(g.out_rows(tokens[i]), 1, uniform)));
                pooled = i == 0 ? values[i] : g.add(pooled, values[i]);
            }
            pooled = g.scale(pooled, uniform);
        }

        ad::ValueId scored = layer_norm(g, pooled, d);
        out.scores.push_back(g.add(g.matmul(scored, id_of("score.w")), id_of("score.b")));
        out.weights.push_back(std::move(weights));
    }
    return out;
}

DiscriminatorHead::ScoreResult DiscriminatorHead::score_batch(const std::vector<Tensor>& tokens,
                                                              int sn_iterations) const {
    if (tokens.empty()) throw std::invalid_argument("score_batch: empty token sequence");
    const std::size_t batch = tokens[0].rows();
    for (const Tensor& t : tokens) {
        if (t.rows() != batch || t.cols() != static_cast<std::size_t>(token_dim_)) {
            throw std::invalid_argument("score_batch: token shape mismatch");
        }
    }
    ad::Graph g;
    std::vector<ad::ValueId> tok_ids;
    tok_ids.reserve(tokens.size());
    for (const Tensor& t : tokens) tok_ids.push_back(g.constant(t));
    Emitted e = emit(g, tok_ids, VelocityNet::Mode::Frozen, sn_iterations, SnMode::Fresh);
    ad::Evaluation ev = ad::forward(g, {});

    ScoreResult res;
    res.score = ev.at(e.score);
    res.weights = Tensor({batch, tokens.size()});
    for (std::size_t j = 0; j < tokens.size(); ++j) {
        const Tensor& w = ev.at(e.weights[j]);
        for (std::size_t i = 0; i < batch; ++i) res.weights(i, j) = w[i];
    }
    return res;
}

std::pair<double, std::vector<double>> DiscriminatorHead::awd_score(
    const std::vector<Tensor>& tokens) const {
    ScoreResult res = score_batch(tokens);
    std::vector<double> w(res.weights.data().begin(), res.weights.data().end());
    return {res.score.value(), std::move(w)};
}

double DiscriminatorHead::gap_score(const std::vector<Tensor>& tokens) const {
    return score_batch(tokens).score.value();
}

}  // namespace hdlab
