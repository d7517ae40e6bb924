#include "hdlab/flow.hpp"

#include <stdexcept>

#include "hdlab/io.hpp"

namespace hdlab {

namespace {

void check_unit(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("interpolate: t must lie in [0,1], got " + std::to_string(t));
    }
}

}  // namespace

Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
    check_unit(t);
    if (!x0.same_shape(x1)) throw std::invalid_argument("interpolate: shape mismatch");
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (1.0 - t) * x0[i] + t * x1[i];
    return out;
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, const Tensor& t_col) {
    if (!x0.same_shape(x1)) throw std::invalid_argument("interpolate: shape mismatch");
    if (t_col.rows() != x0.rows() || t_col.cols() != 1) {
        throw std::invalid_argument("interpolate: t column must be [rows,1]");
    }
    for (double t : t_col.data()) check_unit(t);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < x0.rows(); ++i) {
        const double t = t_col[i];
        for (std::size_t j = 0; j < x0.cols(); ++j) {
            out(i, j) = (1.0 - t) * x0(i, j) + t * x1(i, j);
        }
    }
    return out;
}

double fm_loss(const BatchVFn& v, const FmBatch& batch) {
    const std::size_t n = batch.x0.rows();
    if (n == 0) throw std::invalid_argument("fm_loss: empty batch");
    Tensor x_t = interpolate(batch.x0, batch.x1, batch.t_col);
    Tensor pred = v(x_t, batch.t_col);
    Tensor target = sub(batch.x1, batch.x0);
    return squared_norm(sub(pred, target)) / static_cast<double>(n);
}

SampleResult euler_sample(const VFn& v, const Tensor& x1, int steps) {
    if (steps < 1) throw std::invalid_argument("euler_sample: steps must be >= 1");
    SampleResult res;
    res.trajectory.times.reserve(static_cast<std::size_t>(steps) + 1);
    res.trajectory.states.reserve(static_cast<std::size_t>(steps) + 1);
    Tensor x = x1;
    const double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        const double t = 1.0 - k * dt;
        res.trajectory.times.push_back(t);
        res.trajectory.states.push_back(x);
        x = sub(x, scale(v(x, t), dt));
    }
    res.trajectory.times.push_back(0.0);
    res.trajectory.states.push_back(x);
    res.x0 = std::move(x);
    return res;
}

void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
    std::string csv = "sample,step,t,x,y\n";
    for (std::size_t k = 0; k < traj.states.size(); ++k) {
        const Tensor& s = traj.states[k];
        for (std::size_t i = 0; i < s.rows(); ++i) {
            csv += std::to_string(i) + "," + std::to_string(k) + "," +
                   format_double(traj.times[k]) + "," + format_double(s(i, 0)) + "," +
                   format_double(s(i, 1)) + "\n";
        }
    }
    write_text_file(path, csv);
}

Tensor teacher_velocity_cfg(const VelocityNet& teacher, const Tensor& x, const Tensor& t_col,
                            const std::vector<int>& labels, double w) {
    if (w < 0.0) throw std::invalid_argument("teacher_velocity_cfg: guidance scale must be >= 0");
    if (!teacher.cond().c) {
        throw std::invalid_argument("teacher_velocity_cfg: teacher has no class conditioning");
    }
    Tensor cond = teacher.eval_batch(x, t_col, nullptr, &labels).output;
    if (w == 0.0) return cond;
    std::vector<int> null_labels(labels.size(), VelocityNet::kNullClass);
    Tensor uncond = teacher.eval_batch(x, t_col, nullptr, &null_labels).output;
    return sub(scale(cond, 1.0 + w), scale(uncond, w));
}

VFn velocity_fn(const VelocityNet& net) {
    return [&net](const Tensor& x, double t) {
        return net.eval_batch(x, Tensor::full(x.rows(), 1, t)).output;
    };
}

VFn cfg_velocity_fn(const VelocityNet& teacher, double w, std::vector<int> labels) {
    if (w < 0.0) throw std::invalid_argument("cfg_velocity_fn: guidance scale must be >= 0");
    return [&teacher, w, labels = std::move(labels)](const Tensor& x, double t) {
        return teacher_velocity_cfg(teacher, x, Tensor::full(x.rows(), 1, t), labels, w);
    };
}

BatchVFn batch_velocity_fn(const VelocityNet& net) {
    return [&net](const Tensor& x, const Tensor& t_col) {
        return net.eval_batch(x, t_col).output;
    };
}

FmLossGraph build_fm_loss_graph(const VelocityNet& net, std::size_t batch) {
    FmLossGraph lg;
    auto& g = lg.graph;
    const auto d = static_cast<std::size_t>(net.data_dim());
    lg.x_t = g.leaf({batch, d}, "x_t");
    lg.t = g.leaf({batch, 1}, "t");
    lg.target = g.leaf({batch, d}, "target");
    std::optional<ad::ValueId> cid;
    if (net.cond().c) {
        lg.class_onehot =
            g.leaf({batch, static_cast<std::size_t>(net.num_classes()) + 1}, "class_onehot");
        cid = lg.class_onehot;
    }
    auto emitted = net.emit(g, lg.x_t, lg.t, std::nullopt, cid, VelocityNet::Mode::Trainable);
    lg.param_leaves = emitted.param_leaves;
    ad::ValueId diff = g.sub(emitted.output, lg.target);
    lg.loss = g.scale(g.sum(g.square(diff)), 1.0 / static_cast<double>(batch));
    return lg;
}

}  // namespace hdlab
