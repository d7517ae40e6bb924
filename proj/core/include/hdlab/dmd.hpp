#pragma once

#include <cstdint>

#include "hdlab/flow.hpp"
#include "hdlab/nets.hpp"
#include "hdlab/optimizer.hpp"

namespace hdlab {

// Frozen real branch and trainable fake branch for distribution matching.
// The fake branch starts as an exact copy of the teacher; the real branch is
// the teacher itself and must not change during stage 2.
struct ScoreBranches {
    const VelocityNet* real = nullptr;
    VelocityNet fake;
    std::uint64_t real_checksum = 0;

    static ScoreBranches init(const VelocityNet& teacher);
    bool real_unchanged() const { return real->checksum() == real_checksum; }
};

struct DmdGrad {
    Tensor grad;  // [B,d]; constant by construction (never carries gradient)
    Tensor x_t;   // noised generator output used for the score evaluations
    int clamped = 0;  // samples whose normalizer hit the epsilon floor
};

// grad = t (F_fake(x_t,t) - F_real(x_t,t)) / max(||x0hat - x_t + t F_real||, eps)
// with x_t = interpolate(x0hat, noise, t), all per sample. Requires t in (0,1].
DmdGrad dmd_grad(const ScoreBranches& branches, const Tensor& x0hat, const Tensor& t_col,
                 const Tensor& noise, double eps = 1e-6);

// Value of mean_b ||x0hat - sg(x0hat - grad)||^2, which collapses to
// mean_b ||grad_b||^2.
double dmd_loss_value(const Tensor& grad);

// Trainable record for the generator update: the generator runs in one-step
// mode, x0hat = x1 - u(x1, 0, 1), and the loss applies the stop-gradient
// trick so its parameter gradient equals (2/B) sum_b grad_b^T dx0hat_b/dtheta.
struct DmdLossGraph {
    ad::Graph graph;
    ad::ValueId loss = -1;
    ad::ValueId x0hat = -1;
    ad::ValueId x1 = -1;
    ad::ValueId grad = -1;
    std::vector<ad::ValueId> param_leaves;
};

DmdLossGraph build_dmd_loss_graph(const VelocityNet& generator, std::size_t batch);

// One flow-matching regression step on the fake branch with x0 taken from
// generator samples. Keeps its own record and moment state across steps.
class FakeBranchTrainer {
public:
    FakeBranchTrainer(VelocityNet& fake, int batch, AdamConfig adam);
    // Returns the fake-branch FM loss before the update.
    double step(const Tensor& gen_x0, const Tensor& x1, const Tensor& t_col);

private:
    VelocityNet* fake_;
    FmLossGraph graph_;
    Adam adam_;
    std::vector<Tensor> bindings_;
};

// Single-step convenience matching the operation contract.
double fake_branch_step(ScoreBranches& branches, const Tensor& gen_x0, const Tensor& x1,
                        const Tensor& t_col, const AdamConfig& adam);

}  // namespace hdlab
