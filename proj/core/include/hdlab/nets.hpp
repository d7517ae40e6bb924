#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hdlab/graph.hpp"
#include "hdlab/tensor.hpp"

namespace hdlab {

struct NamedParam {
    std::string name;
    Tensor value;
};

// Width/depth/learning-rate presets, S through XXXL.
struct SizeConfig {
    std::string label;
    int hidden_dim = 64;
    int layers = 2;
    double learning_rate = 1e-3;

    static const std::vector<SizeConfig>& presets();
    static SizeConfig preset(const std::string& label);
};

// Which scalars condition the network.
struct CondSet {
    bool t = true;
    bool r = false;
    bool c = false;
};

// Residual MLP mapping (x, t[, r][, class]) to a velocity-like output. Serves
// as the multi-step teacher, the mean-velocity student/generator, and the fake
// score branch. Each conditioned scalar enters through sinusoidal features and
// a two-layer projection added onto the input projection.
class VelocityNet {
public:
    enum class Mode { Frozen, Trainable };
    static constexpr int kNullClass = -1;

    static VelocityNet build(const SizeConfig& size, CondSet cond, std::uint64_t seed,
                             int data_dim = 2, int num_classes = 2);

    const SizeConfig& size() const { return size_; }
    const CondSet& cond() const { return cond_; }
    int data_dim() const { return data_dim_; }
    int num_classes() const { return num_classes_; }
    int hidden_dim() const { return size_.hidden_dim; }
    int depth() const { return size_.layers; }
    int embed_dim() const { return 2 * size_.hidden_dim; }
    std::uint64_t build_seed() const { return seed_; }

    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& params() const { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;
    std::size_t param_count() const;
    std::uint64_t checksum() const;

    struct Emitted {
        ad::ValueId output = -1;
        std::vector<ad::ValueId> hidden;        // post-skip activation per block
        std::vector<ad::ValueId> param_leaves;  // in params() order; empty when frozen
    };

    // Appends this network's forward computation to a record. Trainable mode
    // adds one leaf per parameter (in params() order); frozen mode embeds the
    // current parameter tensors as shared constants, so the record must not
    // outlive the network.
    Emitted emit(ad::Graph& g, ad::ValueId x, std::optional<ad::ValueId> t,
                 std::optional<ad::ValueId> r, std::optional<ad::ValueId> class_onehot,
                 Mode mode) const;

    // Value-path evaluation with frozen weights. t and r must lie in [0,1].
    Tensor eval(const Tensor& x, double t, std::optional<double> r = {},
                std::optional<int> class_id = {}) const;

    struct BatchEval {
        Tensor output;
        std::vector<Tensor> hidden;
    };
    BatchEval eval_batch(const Tensor& x, const Tensor& t_col, const Tensor* r_col = nullptr,
                         const std::vector<int>* labels = nullptr, bool want_hidden = false) const;

    // One-hot rows over num_classes + 1 columns; kNullClass selects the
    // dedicated unconditional embedding.
    Tensor class_onehot(const std::vector<int>& labels) const;

private:
    SizeConfig size_;
    CondSet cond_;
    int data_dim_ = 2;
    int num_classes_ = 2;
    std::uint64_t seed_ = 0;
    std::vector<NamedParam> params_;
};

// Persistent left singular vector estimate for power iteration.
struct SpectralState {
    Tensor u;
};

// Estimate of the top singular value; updates the persistent state in place.
double spectral_sigma(const Tensor& w, SpectralState& state, int iterations);

// Matrix scaled by its estimated top singular value. A zero matrix is
// returned unchanged.
Tensor spectral_normalize(const Tensor& matrix, int iterations);

enum class HeadVariant { Gap, Awd };

// How a head resolves its spectral-norm scale when emitting: Persistent
// advances the stored power-iteration estimate by sn_iterations (training
// semantics); Fresh derives a converged estimate from scratch and leaves the
// stored state untouched (pure evaluation semantics).
enum class SnMode { Persistent, Fresh };

// Scores a sequence of feature tokens. The GAP variant mean-pools value
// projections; the AWD variant weighs tokens by the softmax attention of a
// learnable query against spectrally normalized key projections.
class DiscriminatorHead {
public:
    static DiscriminatorHead build(HeadVariant variant, int token_dim, std::uint64_t seed);

    HeadVariant variant() const { return variant_; }
    int token_dim() const { return token_dim_; }
    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& params() const { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;

    struct Emitted {
        ad::ValueId score = -1;                 // [B,1]
        std::vector<ad::ValueId> weights;       // per-token [B,1] attention weights
        std::vector<ad::ValueId> param_leaves;  // empty when frozen
    };
    Emitted emit(ad::Graph& g, const std::vector<ad::ValueId>& tokens, VelocityNet::Mode mode,
                 int sn_iterations = 1, SnMode sn_mode = SnMode::Persistent) const;

    // Scores several token sequences with one shared set of parameters and a
    // single spectral-norm estimate, e.g. the real and fake paths of one
    // discriminator update.
    struct MultiEmitted {
        std::vector<ad::ValueId> scores;
        std::vector<std::vector<ad::ValueId>> weights;
        std::vector<ad::ValueId> param_leaves;
    };
    MultiEmitted emit_many(ad::Graph& g, const std::vector<std::vector<ad::ValueId>>& sequences,
                           VelocityNet::Mode mode, int sn_iterations = 1,
                           SnMode sn_mode = SnMode::Persistent) const;

    struct ScoreResult {
        Tensor score;    // [B,1]
        Tensor weights;  // [B,L]
    };
    ScoreResult score_batch(const std::vector<Tensor>& tokens, int sn_iterations = 64) const;

    // Single-sample conveniences matching the scoring contracts.
    std::pair<double, std::vector<double>> awd_score(const std::vector<Tensor>& tokens) const;
    double gap_score(const std::vector<Tensor>& tokens) const;

private:
    HeadVariant variant_ = HeadVariant::Gap;
    int token_dim_ = 0;
    std::vector<NamedParam> params_;
    mutable SpectralState sn_key_, sn_value_;
};

// Rowwise layer normalization without learned affine, composed from record
// primitives.
ad::ValueId layer_norm(ad::Graph& g, ad::ValueId x, std::size_t dim, double eps = 1e-5);

}  // namespace hdlab
