#include "hdlab/meanflow.hpp"

#include <cmath>

#include "hdlab/dataset.hpp"
#include "hdlab/metrics.hpp"

namespace hdlab {

UEmit u_emit_frozen(const VelocityNet& net) {
    if (!net.cond().t || !net.cond().r) {
        throw std::invalid_argument("u_emit_frozen: net must be (t, r) conditioned");
    }
    if (net.cond().c) {
        throw std::invalid_argument("u_emit_frozen: class-conditional net needs a one-hot batch");
    }
    return [&net](ad::Graph& g, ad::ValueId x, ad::ValueId r, ad::ValueId t) {
        return net.emit(g, x, t, r, std::nullopt, VelocityNet::Mode::Frozen).output;
    };
}

UEmit u_emit_frozen(const VelocityNet& net, Tensor class_onehot) {
    if (!net.cond().t || !net.cond().r || !net.cond().c) {
        throw std::invalid_argument("u_emit_frozen: net must be (t, r, c) conditioned");
    }
    return [&net, onehot = std::move(class_onehot)](ad::Graph& g, ad::ValueId x, ad::ValueId r,
                                                    ad::ValueId t) {
        ad::ValueId cid = g.constant(onehot);
        return net.emit(g, x, t, r, cid, VelocityNet::Mode::Frozen).output;
    };
}

namespace {

void check_rt(const Tensor& r_col, const Tensor& t_col) {
    if (r_col.rows() != t_col.rows() || r_col.cols() != 1 || t_col.cols() != 1) {
        throw std::invalid_argument("mean velocity: r and t must be matching columns");
    }
    for (std::size_t i = 0; i < r_col.rows(); ++i) {
        const double r = r_col[i], t = t_col[i];
        if (!(r >= 0.0 && t <= 1.0 && r <= t)) {
            throw std::invalid_argument("mean velocity: need 0 <= r <= t <= 1, got r=" +
                                        std::to_string(r) + " t=" + std::to_string(t));
        }
    }
}

}  // namespace

Tensor mean_velocity_target(const UEmit& u, const Tensor& v, const Tensor& x_t,
                            const Tensor& r_col, const Tensor& t_col) {
    check_rt(r_col, t_col);
    if (!v.same_shape(x_t)) {
        throw std::invalid_argument("mean_velocity_target: v and x_t shapes differ");
    }
    ad::Graph g;
    ad::ValueId x_id = g.leaf(x_t.shape(), "x");
    ad::ValueId r_id = g.leaf(r_col.shape(), "r");
    ad::ValueId t_id = g.leaf(t_col.shape(), "t");
    ad::ValueId out = u(g, x_id, r_id, t_id);

    // Total derivative along the trajectory: tangent (dx, dr, dt) = (v, 0, 1).
    std::vector<Tensor> leaves(g.leaf_count());
    std::vector<Tensor> tangents(g.leaf_count());
    ad::set_leaf(leaves, g, x_id, x_t);
    ad::set_leaf(leaves, g, r_id, r_col);
    ad::set_leaf(leaves, g, t_id, t_col);
    ad::set_leaf(tangents, g, x_id, v);
    ad::set_leaf(tangents, g, t_id, Tensor::ones(t_col.rows(), 1));
    Tensor du_dt = ad::jvp(g, leaves, tangents, out).tangent;

    return sub(v, mul(sub(t_col, r_col), du_dt));
}

double mf_loss(const UEmit& u, const MfBatch& batch) {
    const std::size_t n = batch.x_t.rows();
    if (n == 0) throw std::invalid_argument("mf_loss: empty batch");
    Tensor target = mean_velocity_target(u, batch.v, batch.x_t, batch.r_col, batch.t_col);

    ad::Graph g;
    ad::ValueId x_id = g.leaf(batch.x_t.shape(), "x");
    ad::ValueId r_id = g.leaf(batch.r_col.shape(), "r");
    ad::ValueId t_id = g.leaf(batch.t_col.shape(), "t");
    ad::ValueId out = u(g, x_id, r_id, t_id);
    std::vector<Tensor> leaves(g.leaf_count());
    ad::set_leaf(leaves, g, x_id, batch.x_t);
    ad::set_leaf(leaves, g, r_id, batch.r_col);
    ad::set_leaf(leaves, g, t_id, batch.t_col);
    Tensor pred = ad::forward(g, leaves).at(out);

    return squared_norm(sub(pred, target)) / static_cast<double>(n);
}

Tensor one_step_sample(const UEmit& u, const Tensor& x1) {
    ad::Graph g;
    ad::ValueId x_id = g.leaf(x1.shape(), "x");
    ad::ValueId r_id = g.constant(Tensor::zeros(x1.rows(), 1));
    ad::ValueId t_id = g.constant(Tensor::ones(x1.rows(), 1));
    // Constants stand in for r and t here; adapters that expect leaves for r
    // and t still work because UEmit only wires value ids.
    ad::ValueId out = u(g, x_id, r_id, t_id);
    std::vector<Tensor> leaves(g.leaf_count());
    ad::set_leaf(leaves, g, x_id, x1);
    return sub(x1, ad::forward(g, leaves).at(out));
}

Tensor one_step_sample(const VelocityNet& u_net, const Tensor& x1,
                       const std::vector<int>* labels) {
    Tensor t_col = Tensor::ones(x1.rows(), 1);
    Tensor r_col = Tensor::zeros(x1.rows(), 1);
    Tensor u = u_net.eval_batch(x1, t_col, &r_col, labels).output;
    return sub(x1, u);
}

void sample_rt(Rng& rng, double r_neq_t_ratio, std::size_t n, Tensor& r_col, Tensor& t_col) {
    if (r_neq_t_ratio < 0.0 || r_neq_t_ratio > 1.0) {
        throw std::invalid_argument("sample_rt: ratio must lie in [0,1]");
    }
    r_col = Tensor({n, 1});
    t_col = Tensor({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const double t = rng.uniform(0.0, 1.0);
        t_col[i] = t;
        r_col[i] = rng.bernoulli(r_neq_t_ratio) ? rng.uniform(0.0, t) : t;
    }
}

namespace {

struct DistillGraphs {
    // Trainable loss pass.
    ad::Graph loss_graph;
    ad::ValueId loss = -1, x = -1, r = -1, t = -1, onehot = -1, v = -1, du_dt = -1;
    std::vector<ad::ValueId> param_leaves;
    // Frozen pass for the directional derivative; parameters enter as shared
    // views of the live tensors, so updates show through without rebuilding.
    ad::Graph jvp_graph;
    ad::ValueId jx = -1, jr = -1, jt = -1, jonehot = -1, jout = -1;
};

DistillGraphs build_distill_graphs(const VelocityNet& student, std::size_t batch) {
    DistillGraphs dg;
    const auto d = static_cast<std::size_t>(student.data_dim());
    const std::size_t classes = static_cast<std::size_t>(student.num_classes()) + 1;

    auto& g = dg.loss_graph;
    dg.x = g.leaf({batch, d}, "x_t");
    dg.r = g.leaf({batch, 1}, "r");
    dg.t = g.leaf({batch, 1}, "t");
    std::optional<ad::ValueId> cid;
    if (student.cond().c) {
        dg.onehot = g.leaf({batch, classes}, "class_onehot");
        cid = dg.onehot;
    }
    dg.v = g.leaf({batch, d}, "v");
    dg.du_dt = g.leaf({batch, d}, "du_dt");
    auto emitted = student.emit(g, dg.x, dg.t, dg.r, cid, VelocityNet::Mode::Trainable);
    dg.param_leaves = emitted.param_leaves;
    ad::ValueId u_tgt = g.sub(dg.v, g.mul(g.sub(dg.t, dg.r), dg.du_dt));
    ad::ValueId diff = g.sub(emitted.output, g.stop_gradient(u_tgt));
    dg.loss = g.scale(g.sum(g.square(diff)), 1.0 / static_cast<double>(batch));

    auto& jg = dg.jvp_graph;
    dg.jx = jg.leaf({batch, d}, "x_t");
    dg.jr = jg.leaf({batch, 1}, "r");
    dg.jt = jg.leaf({batch, 1}, "t");
    std::optional<ad::ValueId> jcid;
    if (student.cond().c) {
        dg.jonehot = jg.leaf({batch, classes}, "class_onehot");
        jcid = dg.jonehot;
    }
    dg.jout = student.emit(jg, dg.jx, dg.jt, dg.jr, jcid, VelocityNet::Mode::Frozen).output;
    return dg;
}

}  // namespace

ExperimentRecord distill_stage1(VelocityNet& student, const VelocityNet* teacher,
                                std::uint64_t master_seed, const MFConfig& config,
                                const DistillSettings& settings, const std::string& run_id) {
    if (!student.cond().t || !student.cond().r) {
        throw std::invalid_argument("distill_stage1: student must be (t, r) conditioned");
    }
    if (config.source == VelocitySource::TeacherCfg && teacher == nullptr) {
        throw std::invalid_argument("distill_stage1: teacher velocity source requires a teacher");
    }
    if (config.conditional && !student.cond().c) {
        throw std::invalid_argument("distill_stage1: conditional run needs a class-aware student");
    }
    if (config.source == VelocitySource::TeacherCfg && config.cfg_scale != 0.0 &&
        !teacher->cond().c) {
        throw std::invalid_argument("distill_stage1: guidance needs a class-conditional teacher");
    }

    ExperimentRecord record;
    record.run_id = run_id;
    record.seed = master_seed;

    const auto batch = static_cast<std::size_t>(settings.batch);
    DistillGraphs dg = build_distill_graphs(student, batch);
    Adam adam(settings.adam);

    Rng data_rng = make_stream(master_seed, "td.data");
    Rng rt_rng = make_stream(master_seed, "td.rt");
    const Tensor probe = probe_prior(static_cast<std::size_t>(settings.probe_n));
    std::vector<int> probe_labels;
    if (config.conditional) {
        Rng probe_cls = make_stream(kProbeSeed, "probe.class");
        probe_labels.resize(probe.rows());
        for (int& c : probe_labels) c = probe_cls.uniform_int(0, student.num_classes() - 1);
    }

    auto probe_distance = [&]() {
        Tensor x0 = one_step_sample(student, probe, config.conditional ? &probe_labels : nullptr);
        return mean_circle_distance(x0);
    };

    record.summary()["td_initial_distance"] = probe_distance();

    std::vector<Tensor> loss_leaves(dg.loss_graph.leaf_count());
    std::vector<Tensor> jvp_leaves(dg.jvp_graph.leaf_count());
    std::vector<Tensor> jvp_tangents(dg.jvp_graph.leaf_count());
    std::vector<Tensor> last_good;
    last_good.reserve(student.params().size());
    for (const auto& np : student.params()) last_good.push_back(np.value);

    for (long iter = 1; iter <= settings.iters; ++iter) {
        Tensor x0, x1;
        std::vector<int> labels;
        if (config.conditional) {
            auto [data, lab] = ToyDataset::sample_target_classed(data_rng, batch);
            x0 = std::move(data);
            labels = std::move(lab);
        } else {
            x0 = ToyDataset::sample_target(data_rng, batch);
        }
        x1 = ToyDataset::sample_prior(data_rng, batch);
        Tensor r_col, t_col;
        sample_rt(rt_rng, config.r_neq_t_ratio, batch, r_col, t_col);
        Tensor x_t = interpolate(x0, x1, t_col);

        Tensor v;
        if (config.source == VelocitySource::GroundTruth) {
            v = sub(x1, x0);
        } else if (teacher->cond().c) {
            v = teacher_velocity_cfg(*teacher, x_t, t_col, labels, config.cfg_scale);
        } else {
            v = teacher->eval_batch(x_t, t_col).output;
        }

        Tensor onehot;
        if (config.conditional) onehot = student.class_onehot(labels);

        // Directional derivative of the current student along (v, 0, 1).
        ad::set_leaf(jvp_leaves, dg.jvp_graph, dg.jx, x_t);
        ad::set_leaf(jvp_leaves, dg.jvp_graph, dg.jr, r_col);
        ad::set_leaf(jvp_leaves, dg.jvp_graph, dg.jt, t_col);
        ad::set_leaf(jvp_tangents, dg.jvp_graph, dg.jx, v);
        ad::set_leaf(jvp_tangents, dg.jvp_graph, dg.jt, Tensor::ones(batch, 1));
        if (config.conditional) ad::set_leaf(jvp_leaves, dg.jvp_graph, dg.jonehot, onehot);
        Tensor du_dt = ad::jvp(dg.jvp_graph, jvp_leaves, jvp_tangents, dg.jout).tangent;

        ad::set_leaf(loss_leaves, dg.loss_graph, dg.x, x_t);
        ad::set_leaf(loss_leaves, dg.loss_graph, dg.r, r_col);
        ad::set_leaf(loss_leaves, dg.loss_graph, dg.t, t_col);
        ad::set_leaf(loss_leaves, dg.loss_graph, dg.v, v);
        ad::set_leaf(loss_leaves, dg.loss_graph, dg.du_dt, du_dt);
        if (config.conditional) ad::set_leaf(loss_leaves, dg.loss_graph, dg.onehot, onehot);
        for (std::size_t i = 0; i < student.params().size(); ++i) {
            ad::set_leaf(loss_leaves, dg.loss_graph, dg.param_leaves[i],
                         student.params()[i].value);
        }

        ad::Evaluation ev = ad::forward(dg.loss_graph, loss_leaves);
        const double loss = ev.at(dg.loss).value();
        if (!std::isfinite(loss)) {
            for (std::size_t i = 0; i < last_good.size(); ++i) {
                student.params()[i].value = last_good[i];
            }
            throw DivergenceError(run_id + ": loss became non-finite at iteration " +
                                      std::to_string(iter),
                                  iter);
        }
        std::vector<Tensor> grads =
            ad::backward(dg.loss_graph, ev, dg.loss, Tensor::scalar(1.0));

        std::vector<Tensor> param_grads(student.params().size());
        for (std::size_t i = 0; i < param_grads.size(); ++i) {
            const int leaf_index = dg.loss_graph.node(dg.param_leaves[i]).leaf_index;
            param_grads[i] = std::move(grads[static_cast<std::size_t>(leaf_index)]);
        }
        adam.step(student.params(), param_grads);

        MetricRow row;
        row.stage = "td";
        row.iteration = iter;
        row.loss = loss;
        if (settings.probe_every > 0 &&
            (iter % settings.probe_every == 0 || iter == settings.iters)) {
            row.circle_distance = probe_distance();
            for (std::size_t i = 0; i < last_good.size(); ++i) {
                last_good[i] = student.params()[i].value;
            }
        }
        record.add_row(std::move(row));
    }

    record.summary()["td_final_distance"] = probe_distance();
    return record;
}

double mf_gradient_variance(const VelocityNet& student, const VelocityNet* teacher,
                            std::uint64_t master_seed, const MFConfig& config, int batch,
                            int batches) {
    if (batches < 2) throw std::invalid_argument("mf_gradient_variance: need >= 2 batches");
    if (config.source == VelocitySource::TeacherCfg && teacher == nullptr) {
        throw std::invalid_argument("mf_gradient_variance: teacher source requires a teacher");
    }
    if (config.conditional) {
        throw std::invalid_argument("mf_gradient_variance: unconditional runs only");
    }
    VelocityNet probe_student = student;  // fixed parameters throughout
    const auto n = static_cast<std::size_t>(batch);
    DistillGraphs dg = build_distill_graphs(probe_student, n);

    Rng data_rng = make_stream(master_seed, "gradvar.data");
    Rng rt_rng = make_stream(master_seed, "gradvar.rt");

    std::vector<double> mean_acc, sq_acc;
    std::vector<Tensor> loss_leaves(dg.loss_graph.leaf_count());
    std::vector<Tensor> jvp_leaves(dg.jvp_graph.leaf_count());
    std::vector<Tensor> jvp_tangents(dg.jvp_graph.leaf_count());

    for (int k = 0; k < batches; ++k) {
        Tensor x0 = ToyDataset::sample_target(data_rng, n);
        Tensor x1 = ToyDataset::sample_prior(data_rng, n);
        Tensor r_col, t_col;
        sample_rt(rt_rng, config.r_neq_t_ratio, n, r_col, t_col);
        Tensor x_t = interpolate(x0, x1, t_col);
        Tensor v = config.source == VelocitySource::GroundTruth
                       ? sub(x1, x0)
                       : teacher->eval_batch(x_t, t_col).output;

        ad::set_leaf(jvp_leaves, dg.jvp_graph, dg.jx, x_t);
        ad::set_leaf(jvp_leaves, dg.jvp_graph, dg.jr, r_col);
        ad::set_leaf(jvp_leaves, dg.jvp_graph, dg.jt, t_col);
        ad::set_leaf(jvp_tangents, dg.jvp_graph, dg.jx, v);
        ad::set_leaf(jvp_tangents, dg.jvp_graph, dg.jt, Tensor::ones(n, 1));
        Tensor du_dt = ad::jvp(dg.jvp_graph, jvp_leaves, jvp_tangents, dg.jout).tangent;

        ad::set_leaf(loss_leaves, dg.loss_graph, dg.x, x_t);
        ad::set_leaf(loss_leaves, dg.loss_graph, dg.r, r_col);
        ad::set_leaf(loss_leaves, dg.loss_graph, dg.t, t_col);
        ad::set_leaf(loss_leaves, dg.loss_graph, dg.v, v);
        ad::set_leaf(loss_leaves, dg.loss_graph, dg.du_dt, du_dt);
        for (std::size_t i = 0; i < probe_student.params().size(); ++i) {
            ad::set_leaf(loss_leaves, dg.loss_graph, dg.param_leaves[i],
                         probe_student.params()[i].value);
        }
        ad::Evaluation ev = ad::forward(dg.loss_graph, loss_leaves);
        std::vector<Tensor> grads =
            ad::backward(dg.loss_graph, ev, dg.loss, Tensor::scalar(1.0));

        std::vector<double> flat;
        for (std::size_t i = 0; i < probe_student.params().size(); ++i) {
            const int leaf_index = dg.loss_graph.node(dg.param_leaves[i]).leaf_index;
            const Tensor& gt = grads[static_cast<std::size_t>(leaf_index)];
            flat.insert(flat.end(), gt.data().begin(), gt.data().end());
        }
        if (mean_acc.empty()) {
            mean_acc.assign(flat.size(), 0.0);
            sq_acc.assign(flat.size(), 0.0);
        }
        for (std::size_t e = 0; e < flat.size(); ++e) {
            mean_acc[e] += flat[e];
            sq_acc[e] += flat[e] * flat[e];
        }
    }

    const double kd = batches;
    double var_total = 0.0;
    for (std::size_t e = 0; e < mean_acc.size(); ++e) {
        const double m = mean_acc[e] / kd;
        var_total += sq_acc[e] / kd - m * m;
    }
    return var_total;
}

}  // namespace hdlab
