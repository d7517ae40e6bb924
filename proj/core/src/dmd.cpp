#include "hdlab/dmd.hpp"

#include <cmath>
#include <stdexcept>

namespace hdlab {

ScoreBranches ScoreBranches::init(const VelocityNet& teacher) {
    ScoreBranches b;
    b.real = &teacher;
    b.fake = teacher;  // exact copy, including parameters
    b.real_checksum = teacher.checksum();
    return b;
}

DmdGrad dmd_grad(const ScoreBranches& branches, const Tensor& x0hat, const Tensor& t_col,
                 const Tensor& noise, double eps) {
    if (!x0hat.same_shape(noise)) throw std::invalid_argument("dmd_grad: shape mismatch");
    if (t_col.rows() != x0hat.rows() || t_col.cols() != 1) {
        throw std::invalid_argument("dmd_grad: t column must be [rows,1]");
    }
    for (double t : t_col.data()) {
        if (!(t > 0.0 && t <= 1.0)) {
            throw std::invalid_argument("dmd_grad: t must lie in (0,1], got " + std::to_string(t));
        }
    }

    DmdGrad out;
    out.x_t = interpolate(x0hat, noise, t_col);
    Tensor f_real = branches.real->eval_batch(out.x_t, t_col).output;
    Tensor f_fake = branches.fake.eval_batch(out.x_t, t_col).output;

    // Per-sample normalizer ||x0hat - x_t + t F_real|| with an epsilon floor.
    Tensor inner = add(sub(x0hat, out.x_t), mul(t_col, f_real));
    Tensor denom = row_norms(inner);
    for (std::size_t i = 0; i < denom.numel(); ++i) {
        if (denom[i] < eps) {
            denom[i] = eps;
            ++out.clamped;
        }
    }
    out.grad = div(mul(t_col, sub(f_fake, f_real)), denom);
    out.grad.require_finite("dmd_grad");
    return out;
}

double dmd_loss_value(const Tensor& grad) {
    return squared_norm(grad) / static_cast<double>(grad.rows());
}

DmdLossGraph build_dmd_loss_graph(const VelocityNet& generator, std::size_t batch) {
    if (!generator.cond().t || !generator.cond().r) {
        throw std::invalid_argument("build_dmd_loss_graph: generator must be (t, r) conditioned");
    }
    DmdLossGraph lg;
    auto& g = lg.graph;
    const auto d = static_cast<std::size_t>(generator.data_dim());
    lg.x1 = g.leaf({batch, d}, "x1");
    lg.grad = g.leaf({batch, d}, "grad");
    ad::ValueId r0 = g.constant(Tensor::zeros(batch, 1));
    ad::ValueId t1 = g.constant(Tensor::ones(batch, 1));
    auto emitted = generator.emit(g, lg.x1, t1, r0, std::nullopt, VelocityNet::Mode::Trainable);
    lg.param_leaves = emitted.param_leaves;
    lg.x0hat = g.sub(lg.x1, emitted.output);
    ad::ValueId target = g.stop_gradient(g.sub(lg.x0hat, lg.grad));
    ad::ValueId diff = g.sub(lg.x0hat, target);
    lg.loss = g.scale(g.sum(g.square(diff)), 1.0 / static_cast<double>(batch));
    return lg;
}

FakeBranchTrainer::FakeBranchTrainer(VelocityNet& fake, int batch, AdamConfig adam)
    : fake_(&fake),
      graph_(build_fm_loss_graph(fake, static_cast<std::size_t>(batch))),
      adam_(adam) {
    bindings_.resize(graph_.graph.leaf_count());
}

double FakeBranchTrainer::step(const Tensor& gen_x0, const Tensor& x1, const Tensor& t_col) {
    Tensor x_t = interpolate(gen_x0, x1, t_col);
    Tensor target = sub(x1, gen_x0);
    ad::set_leaf(bindings_, graph_.graph, graph_.x_t, x_t);
    ad::set_leaf(bindings_, graph_.graph, graph_.t, t_col);
    ad::set_leaf(bindings_, graph_.graph, graph_.target, target);
    for (std::size_t i = 0; i < fake_->params().size(); ++i) {
        ad::set_leaf(bindings_, graph_.graph, graph_.param_leaves[i], fake_->params()[i].value);
    }
    ad::Evaluation ev = ad::forward(graph_.graph, bindings_);
    const double loss = ev.at(graph_.loss).value();
    std::vector<Tensor> grads = ad::backward(graph_.graph, ev, graph_.loss, Tensor::scalar(1.0));
    std::vector<Tensor> param_grads(fake_->params().size());
    for (std::size_t i = 0; i < param_grads.size(); ++i) {
        const int leaf_index = graph_.graph.node(graph_.param_leaves[i]).leaf_index;
        param_grads[i] = std::move(grads[static_cast<std::size_t>(leaf_index)]);
    }
    adam_.step(fake_->params(), param_grads);
    return loss;
}

double fake_branch_step(ScoreBranches& branches, const Tensor& gen_x0, const Tensor& x1,
                        const Tensor& t_col, const AdamConfig& adam) {
    FakeBranchTrainer trainer(branches.fake, static_cast<int>(gen_x0.rows()), adam);
    return trainer.step(gen_x0, x1, t_col);
}

}  // namespace hdlab
