#include "doctest.h"

#include <cmath>

#include "hdlab/dataset.hpp"
#include "hdlab/meanflow.hpp"
#include "hdlab/metrics.hpp"
#include "hdlab/pipeline.hpp"
#include "testutil.hpp"

using namespace hdlab;
using hdlab::test::rel_error;

namespace {

// u(x, r, t) = r + t in every output coordinate; the exact mean velocity of
// the field v(x, tau) = 2 tau.
UEmit exact_mean_velocity_2t(std::size_t batch, std::size_t dim) {
    return [batch, dim](ad::Graph& g, ad::ValueId, ad::ValueId r, ad::ValueId t) {
        return g.mul(g.add(r, t), g.constant(Tensor::ones(batch, dim)));
    };
}

MfBatch random_mf_batch_2t(Rng& rng, std::size_t n) {
    MfBatch batch;
    batch.x_t = random_uniform(rng, n, 2, -1, 1);
    batch.r_col = Tensor({n, 1});
    batch.t_col = Tensor({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const double t = rng.uniform(0.0, 1.0);
        batch.t_col[i] = t;
        batch.r_col[i] = rng.uniform(0.0, t);
    }
    batch.v = Tensor({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        batch.v(i, 0) = 2.0 * batch.t_col[i];
        batch.v(i, 1) = 2.0 * batch.t_col[i];
    }
    return batch;
}

}  // namespace

TEST_CASE("mean_velocity_target: r == t returns v exactly") {
    Rng rng(1);
    const std::size_t n = 8;
    VelocityNet net = VelocityNet::build(SizeConfig::preset("S"), CondSet{true, true, false}, 3);
    for (auto& np : net.params()) {
        np.value = random_uniform(rng, np.value.rows(), np.value.cols(), -0.3, 0.3);
    }
    Tensor x = random_uniform(rng, n, 2, -1, 1);
    Tensor t = random_uniform(rng, n, 1, 0.1, 0.9);
    Tensor v = random_uniform(rng, n, 2, -1, 1);
    Tensor target = mean_velocity_target(u_emit_frozen(net), v, x, t, t);
    CHECK(max_abs_diff(target, v) == 0.0);
}

TEST_CASE("mean_velocity_target reproduces the closed-form mean velocity of 2t") {
    Rng rng(2);
    const std::size_t n = 64;
    auto batch = random_mf_batch_2t(rng, n);
    Tensor target = mean_velocity_target(exact_mean_velocity_2t(n, 2), batch.v, batch.x_t,
                                         batch.r_col, batch.t_col);
    // v - (t-r) du/dt = 2t - (t-r) = t + r = u.
    for (std::size_t i = 0; i < n; ++i) {
        const double want = batch.t_col[i] + batch.r_col[i];
        CHECK(std::abs(target(i, 0) - want) < 1e-10);
        CHECK(std::abs(target(i, 1) - want) < 1e-10);
    }
}

TEST_CASE("mean_velocity_target: constant u has zero directional term") {
    const std::size_t n = 4;
    UEmit const_u = [n](ad::Graph& g, ad::ValueId, ad::ValueId, ad::ValueId) {
        return g.constant(Tensor::full(n, 2, 0.7));
    };
    Rng rng(3);
    Tensor x = random_uniform(rng, n, 2, -1, 1);
    Tensor t = random_uniform(rng, n, 1, 0.5, 1.0);
    Tensor r = random_uniform(rng, n, 1, 0.0, 0.5);
    Tensor v = Tensor::full(n, 2, -1.25);
    Tensor target = mean_velocity_target(const_u, v, x, r, t);
    CHECK(max_abs_diff(target, v) == 0.0);
}

TEST_CASE("mean_velocity_target rejects r > t") {
    const std::size_t n = 2;
    Rng rng(4);
    Tensor x = random_uniform(rng, n, 2, -1, 1);
    Tensor v = random_uniform(rng, n, 2, -1, 1);
    Tensor r = Tensor::matrix(n, 1, {0.9, 0.2});
    Tensor t = Tensor::matrix(n, 1, {0.5, 0.8});
    CHECK_THROWS(static_cast<void>(
        mean_velocity_target(exact_mean_velocity_2t(n, 2), v, x, r, t)));
}

TEST_CASE("mf_loss: exact mean velocity scores (near) zero") {
    Rng rng(5);
    const std::size_t n = 32;
    auto batch = random_mf_batch_2t(rng, n);
    CHECK(mf_loss(exact_mean_velocity_2t(n, 2), batch) < 1e-12);
}

TEST_CASE("mf_loss: r == t batch with zero net and unit velocity gives 1") {
    const std::size_t n = 16;
    UEmit zero_u = [n](ad::Graph& g, ad::ValueId, ad::ValueId, ad::ValueId) {
        return g.constant(Tensor::zeros(n, 2));
    };
    Rng rng(6);
    MfBatch batch;
    batch.x_t = random_uniform(rng, n, 2, -1, 1);
    batch.t_col = random_uniform(rng, n, 1, 0, 1);
    batch.r_col = batch.t_col;
    batch.v = Tensor({n, 2});
    for (std::size_t i = 0; i < n; ++i) batch.v(i, 0) = 1.0;
    CHECK(mf_loss(zero_u, batch) == 1.0);
}

TEST_CASE("stop-gradient identity: loss gradient matches the frozen-target oracle") {
    // The training record wraps the target in a stop gradient; its parameter
    // gradient must equal that of a record whose target is a plain constant.
    Rng rng(7);
    const std::size_t n = 8;
    VelocityNet student =
        VelocityNet::build(SizeConfig::preset("S"), CondSet{true, true, false}, 11);
    for (auto& np : student.params()) {
        np.value = random_uniform(rng, np.value.rows(), np.value.cols(), -0.3, 0.3);
    }
    Tensor x_t = random_uniform(rng, n, 2, -1, 1);
    Tensor t_col = random_uniform(rng, n, 1, 0.3, 1.0);
    Tensor r_col = Tensor({n, 1});
    for (std::size_t i = 0; i < n; ++i) r_col[i] = t_col[i] * 0.5;
    Tensor v = random_uniform(rng, n, 2, -1, 1);

    // Directional derivative of the current student along (v, 0, 1).
    ad::Graph jg;
    ad::ValueId jx = jg.leaf({n, 2}, "x");
    ad::ValueId jr = jg.leaf({n, 1}, "r");
    ad::ValueId jt = jg.leaf({n, 1}, "t");
    ad::ValueId jout =
        student.emit(jg, jx, jt, jr, std::nullopt, VelocityNet::Mode::Frozen).output;
    std::vector<Tensor> jleaves(jg.leaf_count()), jtans(jg.leaf_count());
    ad::set_leaf(jleaves, jg, jx, x_t);
    ad::set_leaf(jleaves, jg, jr, r_col);
    ad::set_leaf(jleaves, jg, jt, t_col);
    ad::set_leaf(jtans, jg, jx, v);
    ad::set_leaf(jtans, jg, jt, Tensor::ones(n, 1));
    Tensor du_dt = ad::jvp(jg, jleaves, jtans, jout).tangent;
    Tensor u_tgt = sub(v, mul(sub(t_col, r_col), du_dt));

    auto build_loss = [&](bool use_sg) {
        struct Out {
            ad::Graph g;
            ad::ValueId loss;
            std::vector<ad::ValueId> params;
            std::vector<Tensor> leaves;
        };
        auto out = std::make_unique<Out>();
        auto& g = out->g;
        ad::ValueId x = g.leaf({n, 2}, "x");
        ad::ValueId r = g.leaf({n, 1}, "r");
        ad::ValueId t = g.leaf({n, 1}, "t");
        auto emitted = student.emit(g, x, t, r, std::nullopt, VelocityNet::Mode::Trainable);
        out->params = emitted.param_leaves;
        ad::ValueId tgt;
        if (use_sg) {
            ad::ValueId v_leaf = g.constant(v);
            ad::ValueId du_leaf = g.constant(du_dt);
            tgt = g.stop_gradient(g.sub(v_leaf, g.mul(g.sub(t, r), du_leaf)));
        } else {
            tgt = g.constant(u_tgt);
        }
        ad::ValueId diff = g.sub(emitted.output, tgt);
        out->loss = g.scale(g.sum(g.square(diff)), 1.0 / static_cast<double>(n));
        out->leaves.resize(g.leaf_count());
        ad::set_leaf(out->leaves, g, x, x_t);
        ad::set_leaf(out->leaves, g, r, r_col);
        ad::set_leaf(out->leaves, g, t, t_col);
        for (std::size_t i = 0; i < student.params().size(); ++i) {
            ad::set_leaf(out->leaves, g, emitted.param_leaves[i], student.params()[i].value);
        }
        return out;
    };

    auto with_sg = build_loss(true);
    auto frozen = build_loss(false);
    auto ev_sg = ad::forward(with_sg->g, with_sg->leaves);
    auto ev_fr = ad::forward(frozen->g, frozen->leaves);
    CHECK(std::abs(ev_sg.at(with_sg->loss).value() - ev_fr.at(frozen->loss).value()) < 1e-14);
    auto g_sg = ad::backward(with_sg->g, ev_sg, with_sg->loss, Tensor::scalar(1.0));
    auto g_fr = ad::backward(frozen->g, ev_fr, frozen->loss, Tensor::scalar(1.0));
    for (std::size_t i = 0; i < student.params().size(); ++i) {
        const int li_sg = with_sg->g.node(with_sg->params[i]).leaf_index;
        const int li_fr = frozen->g.node(frozen->params[i]).leaf_index;
        const Tensor& a = g_sg[static_cast<std::size_t>(li_sg)];
        const Tensor& b = g_fr[static_cast<std::size_t>(li_fr)];
        if (squared_norm(b) == 0.0) {
            CHECK(squared_norm(a) == 0.0);
        } else {
            CHECK(rel_error(a, b) < 1e-8);
        }
    }
}

TEST_CASE("one_step_sample trivial forms") {
    const std::size_t n = 4;
    Rng rng(8);
    Tensor x1 = random_uniform(rng, n, 2, -2, 2);
    UEmit zero_u = [n](ad::Graph& g, ad::ValueId, ad::ValueId, ad::ValueId) {
        return g.constant(Tensor::zeros(n, 2));
    };
    CHECK(max_abs_diff(one_step_sample(zero_u, x1), x1) == 0.0);

    UEmit identity_u = [](ad::Graph&, ad::ValueId x, ad::ValueId, ad::ValueId) { return x; };
    CHECK(squared_norm(one_step_sample(identity_u, x1)) == 0.0);

    // Exact mean velocity of v = 2 tau: u(x1, 0, 1) = 1.
    Tensor got = one_step_sample(exact_mean_velocity_2t(n, 2), x1);
    Tensor want = add_scalar(x1, -1.0);
    CHECK(max_abs_diff(got, want) < 1e-14);
}

TEST_CASE("sample_rt respects bounds and the r != t ratio") {
    Rng rng(9);
    Tensor r, t;
    sample_rt(rng, 1.0, 500, r, t);
    for (std::size_t i = 0; i < 500; ++i) {
        CHECK(r[i] >= 0.0);
        CHECK(r[i] <= t[i]);
        CHECK(t[i] <= 1.0);
    }
    sample_rt(rng, 0.0, 100, r, t);
    for (std::size_t i = 0; i < 100; ++i) CHECK(r[i] == t[i]);
    CHECK_THROWS(sample_rt(rng, 1.5, 10, r, t));
}

TEST_CASE("distill_stage1: zero iterations leave the student untouched") {
    VelocityNet teacher =
        VelocityNet::build(SizeConfig::preset("S"), CondSet{true, false, false}, 5);
    VelocityNet student =
        VelocityNet::build(SizeConfig::preset("S"), CondSet{true, true, false}, 6);
    const std::uint64_t before = student.checksum();
    MFConfig mf;
    mf.source = VelocitySource::TeacherCfg;
    DistillSettings ds;
    ds.iters = 0;
    ds.batch = 8;
    ds.probe_n = 32;
    distill_stage1(student, &teacher, 1, mf, ds);
    CHECK(student.checksum() == before);
}

TEST_CASE("distill_stage1: S student improves over its untrained self") {
    // Small but real run: teacher first, then trajectory distillation.
    const SizeConfig size = SizeConfig::preset("S");
    VelocityNet teacher = VelocityNet::build(size, CondSet{true, false, false}, 55);
    TeacherSettings ts;
    ts.iters = 800;
    ts.batch = 64;
    ts.adam.lr = size.learning_rate;
    ts.probe_every = 0;
    train_teacher(teacher, 123, ts);

    VelocityNet student = VelocityNet::build(size, CondSet{true, true, false}, 56);
    MFConfig mf;
    mf.source = VelocitySource::TeacherCfg;
    DistillSettings ds;
    ds.iters = 800;
    ds.batch = 64;
    ds.adam.lr = size.learning_rate;
    ds.probe_every = 0;
    ds.probe_n = 512;
    ExperimentRecord rec = distill_stage1(student, &teacher, 123, mf, ds);
    CHECK(rec.summary().at("td_final_distance") < rec.summary().at("td_initial_distance"));
}

TEST_CASE("distill_stage1 is deterministic for a fixed seed") {
    const SizeConfig size = SizeConfig::preset("S");
    VelocityNet teacher = VelocityNet::build(size, CondSet{true, false, false}, 77);
    auto run = [&]() {
        VelocityNet student = VelocityNet::build(size, CondSet{true, true, false}, 78);
        MFConfig mf;
        mf.source = VelocitySource::TeacherCfg;
        DistillSettings ds;
        ds.iters = 50;
        ds.batch = 16;
        ds.probe_every = 0;
        ds.probe_n = 16;
        return distill_stage1(student, &teacher, 9, mf, ds);
    };
    ExperimentRecord a = run();
    ExperimentRecord b = run();
    REQUIRE(a.rows().size() == b.rows().size());
    for (std::size_t i = 0; i < a.rows().size(); ++i) {
        CHECK(a.rows()[i].loss == b.rows()[i].loss);
    }
}

TEST_CASE("distill_stage1 aborts with a diagnostic when the loss diverges") {
    const SizeConfig size = SizeConfig::preset("S");
    VelocityNet teacher = VelocityNet::build(size, CondSet{true, false, false}, 31);
    VelocityNet student = VelocityNet::build(size, CondSet{true, true, false}, 32);
    MFConfig mf;
    mf.source = VelocitySource::GroundTruth;
    DistillSettings ds;
    ds.iters = 20;
    ds.batch = 8;
    ds.adam.lr = 1e200;  // force the parameters out of range
    ds.probe_every = 0;
    ds.probe_n = 8;
    CHECK_THROWS_AS(distill_stage1(student, nullptr, 2, mf, ds), DivergenceError);
    CHECK(student.param("out_proj.w").all_finite());
}

TEST_CASE("gradient variance probe runs for both velocity sources") {
    const SizeConfig size = SizeConfig::preset("S");
    VelocityNet teacher = VelocityNet::build(size, CondSet{true, false, false}, 41);
    TeacherSettings ts;
    ts.iters = 300;
    ts.batch = 64;
    ts.adam.lr = size.learning_rate;
    ts.probe_every = 0;
    train_teacher(teacher, 7, ts);
    VelocityNet student = VelocityNet::build(size, CondSet{true, true, false}, 42);

    MFConfig scratch;
    scratch.source = VelocitySource::GroundTruth;
    MFConfig distilled;
    distilled.source = VelocitySource::TeacherCfg;
    const double var_scratch = mf_gradient_variance(student, nullptr, 3, scratch, 64, 8);
    const double var_distilled = mf_gradient_variance(student, &teacher, 3, distilled, 64, 8);
    CHECK(std::isfinite(var_scratch));
    CHECK(std::isfinite(var_distilled));
    CHECK(var_scratch >= 0.0);
    CHECK(var_distilled >= 0.0);
    // Reported, not asserted: the distilled target is expected to carry less
    // per-batch gradient variance than the from-scratch pairing.
    MESSAGE("grad variance scratch=" << var_scratch << " distilled=" << var_distilled);
}
