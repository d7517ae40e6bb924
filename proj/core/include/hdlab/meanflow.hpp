#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "hdlab/experiment.hpp"
#include "hdlab/flow.hpp"
#include "hdlab/nets.hpp"
#include "hdlab/optimizer.hpp"
#include "hdlab/rng.hpp"

namespace hdlab {

// Emits a mean-velocity model u(x, r, t) into a record. Networks provide
// frozen adapters; tests may inject closed forms.
using UEmit = std::function<ad::ValueId(ad::Graph&, ad::ValueId x, ad::ValueId r, ad::ValueId t)>;

UEmit u_emit_frozen(const VelocityNet& net);
UEmit u_emit_frozen(const VelocityNet& net, Tensor class_onehot);

// The regression target u_tgt = v - (t-r) du/dt, with du/dt taken as the
// directional derivative of u at (x_t, r, t) along (v, 0, 1). The result is a
// plain tensor, already detached from any gradient path. Requires r <= t.
Tensor mean_velocity_target(const UEmit& u, const Tensor& v, const Tensor& x_t,
                            const Tensor& r_col, const Tensor& t_col);

struct MfBatch {
    Tensor x_t;    // [B,d]
    Tensor r_col;  // [B,1]
    Tensor t_col;  // [B,1]
    Tensor v;      // [B,d] instantaneous velocity at (x_t, t)
};

// Mean over the batch of ||u(x_t,r,t) - sg(u_tgt)||^2.
double mf_loss(const UEmit& u, const MfBatch& batch);

// Single-evaluation generation x0 = x1 - u(x1, 0, 1).
Tensor one_step_sample(const UEmit& u, const Tensor& x1);
Tensor one_step_sample(const VelocityNet& u_net, const Tensor& x1,
                       const std::vector<int>* labels = nullptr);

enum class VelocitySource { GroundTruth, TeacherCfg };

struct MFConfig {
    double r_neq_t_ratio = 1.0;  // fraction of samples with r != t
    VelocitySource source = VelocitySource::TeacherCfg;
    double cfg_scale = 0.0;
    bool conditional = false;
};

struct DistillSettings {
    long iters = 20000;
    int batch = 128;
    AdamConfig adam{};
    int probe_every = 250;
    int probe_n = 4096;
};

// Thrown when a training loss stops being finite.
struct DivergenceError : std::runtime_error {
    long iteration;
    DivergenceError(const std::string& what, long iter)
        : std::runtime_error(what), iteration(iter) {}
};

// Draws (r, t) with t uniform on [0,1] and r uniform on [0,t] for the r != t
// fraction of the batch, r = t otherwise.
void sample_rt(Rng& rng, double r_neq_t_ratio, std::size_t n, Tensor& r_col, Tensor& t_col);

// Stage-1 trajectory distillation. The teacher is read-only; the student is
// trained in place for a fixed iteration budget. Per-iteration loss and a
// periodic one-step probe distance are appended to the returned record.
ExperimentRecord distill_stage1(VelocityNet& student, const VelocityNet* teacher,
                                std::uint64_t master_seed, const MFConfig& config,
                                const DistillSettings& settings,
                                const std::string& run_id = "td");

// Per-batch gradient variance at the student's current parameters, averaged
// over `batches` fresh batches: sum_e Var[g_e]. Reported, never asserted.
double mf_gradient_variance(const VelocityNet& student, const VelocityNet* teacher,
                            std::uint64_t master_seed, const MFConfig& config, int batch,
                            int batches);

}  // namespace hdlab
