#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hdlab/nets.hpp"
#include "hdlab/tensor.hpp"

namespace hdlab {

// Batched velocity field evaluated at a shared time.
using VFn = std::function<Tensor(const Tensor& x, double t)>;
// Batched velocity field with per-sample times ([B,1] column).
using BatchVFn = std::function<Tensor(const Tensor& x, const Tensor& t_col)>;

// Linear path point x_t = (1-t) x0 + t x1. t (or every entry of the column
// form) must lie in [0,1].
Tensor interpolate(const Tensor& x0, const Tensor& x1, double t);
Tensor interpolate(const Tensor& x0, const Tensor& x1, const Tensor& t_col);

struct FmBatch {
    Tensor x0;     // [B,d] data
    Tensor x1;     // [B,d] noise
    Tensor t_col;  // [B,1]
};

// Mean over the batch of ||v(x_t,t) - (x1-x0)||^2.
double fm_loss(const BatchVFn& v, const FmBatch& batch);

struct Trajectory {
    std::vector<double> times;   // steps+1 entries, from t=1 down to t=0
    std::vector<Tensor> states;  // matching states, [B,d] each
};

struct SampleResult {
    Tensor x0;  // endpoint estimate
    Trajectory trajectory;
};

// Integrates dx/dt = v from t=1 to t=0 with fixed-step Euler updates
// x_{t-dt} = x_t - dt * v(x_t, t), recording every intermediate state.
SampleResult euler_sample(const VFn& v, const Tensor& x1, int steps);

// CSV with columns sample,step,t,x,y.
void write_trajectory_csv(const Trajectory& traj, const std::string& path);

// Guided velocity (1+w) F(x,t,c) - w F(x,t,null). Rejects w < 0.
Tensor teacher_velocity_cfg(const VelocityNet& teacher, const Tensor& x, const Tensor& t_col,
                            const std::vector<int>& labels, double w);

// Sampling adapters.
VFn velocity_fn(const VelocityNet& net);
VFn cfg_velocity_fn(const VelocityNet& teacher, double w, std::vector<int> labels);
BatchVFn batch_velocity_fn(const VelocityNet& net);

// Training-side record for one FM regression step: leaves are the network
// parameters followed by x_t, t, the regression target, and optionally the
// class one-hot matrix.
struct FmLossGraph {
    ad::Graph graph;
    ad::ValueId loss = -1;
    ad::ValueId x_t = -1;
    ad::ValueId t = -1;
    ad::ValueId target = -1;
    ad::ValueId class_onehot = -1;
    std::vector<ad::ValueId> param_leaves;
};

FmLossGraph build_fm_loss_graph(const VelocityNet& net, std::size_t batch);

}  // namespace hdlab
