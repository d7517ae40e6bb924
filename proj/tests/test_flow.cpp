#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "hdlab/flow.hpp"
#include "hdlab/io.hpp"
#include "hdlab/rng.hpp"
#include "testutil.hpp"

using namespace hdlab;

TEST_CASE("interpolate endpoints and midpoint") {
    Tensor x0 = Tensor::matrix(1, 2, {0, 0});
    Tensor x1 = Tensor::matrix(1, 2, {2, -2});
    CHECK(max_abs_diff(interpolate(x0, x1, 0.0), x0) == 0.0);
    CHECK(max_abs_diff(interpolate(x0, x1, 1.0), x1) == 0.0);
    Tensor mid = interpolate(x0, x1, 0.5);
    CHECK(mid[0] == 1.0);
    CHECK(mid[1] == -1.0);
    CHECK_THROWS(static_cast<void>(interpolate(x0, x1, 1.5)));
    CHECK_THROWS(static_cast<void>(interpolate(x0, x1, -0.1)));
}

TEST_CASE("interpolate(t) + interpolate(1-t) equals x0 + x1") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x0 = random_uniform(rng, 4, 2, -3, 3);
        Tensor x1 = random_uniform(rng, 4, 2, -3, 3);
        const double t = rng.uniform(0, 1);
        Tensor lhs = add(interpolate(x0, x1, t), interpolate(x0, x1, 1.0 - t));
        Tensor rhs = add(x0, x1);
        CHECK(max_abs_diff(lhs, rhs) < 1e-12);
    }
}

TEST_CASE("fm_loss: exact-velocity oracle gives zero loss") {
    Rng rng(11);
    FmBatch batch{random_uniform(rng, 16, 2, -1, 1), random_uniform(rng, 16, 2, -2, 2),
                  random_uniform(rng, 16, 1, 0, 1)};
    Tensor truth = sub(batch.x1, batch.x0);
    BatchVFn oracle = [&truth](const Tensor&, const Tensor&) { return truth; };
    CHECK(fm_loss(oracle, batch) == 0.0);
}

TEST_CASE("fm_loss: zero net gives mean squared velocity norm") {
    Rng rng(12);
    FmBatch batch{random_uniform(rng, 8, 2, -1, 1), random_uniform(rng, 8, 2, -2, 2),
                  random_uniform(rng, 8, 1, 0, 1)};
    BatchVFn zero = [](const Tensor& x, const Tensor&) {
        return Tensor::zeros(x.rows(), x.cols());
    };
    const double want = squared_norm(sub(batch.x1, batch.x0)) / 8.0;
    CHECK(fm_loss(zero, batch) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("fm_loss: single 1D sample, output 3 against target 1 gives 4") {
    FmBatch batch{Tensor::matrix(1, 1, {0.0}), Tensor::matrix(1, 1, {1.0}),
                  Tensor::matrix(1, 1, {0.5})};
    BatchVFn three = [](const Tensor& x, const Tensor&) { return Tensor::full(x.rows(), 1, 3.0); };
    CHECK(fm_loss(three, batch) == 4.0);
    FmBatch empty{Tensor({0, 1}), Tensor({0, 1}), Tensor({0, 1})};
    CHECK_THROWS(static_cast<void>(fm_loss(three, empty)));
}

TEST_CASE("euler: constant field over one step and many steps") {
    Tensor c = Tensor::matrix(1, 2, {0.3, -0.1});
    VFn constant = [&c](const Tensor& x, double) {
        Tensor out(x.shape());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            out(i, 0) = c[0];
            out(i, 1) = c[1];
        }
        return out;
    };
    Tensor x1 = Tensor::matrix(1, 2, {1.0, 1.0});
    Tensor one = euler_sample(constant, x1, 1).x0;
    CHECK(one(0, 0) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(one(0, 1) == doctest::Approx(1.1).epsilon(1e-15));
    // Exact for constant fields regardless of the step count.
    Tensor many = euler_sample(constant, x1, 64).x0;
    CHECK(max_abs_diff(one, many) < 1e-12);
    CHECK_THROWS(static_cast<void>(euler_sample(constant, x1, 0)));
}

TEST_CASE("euler: v(x,t) = 2t lands near x1 - 1 with 50 steps") {
    VFn field = [](const Tensor& x, double t) { return Tensor::full(x.rows(), x.cols(), 2.0 * t); };
    Tensor x1 = Tensor::matrix(1, 2, {0.4, -0.6});
    Tensor got = euler_sample(field, x1, 50).x0;
    CHECK(std::abs(got(0, 0) - (0.4 - 1.0)) < 0.05);
    CHECK(std::abs(got(0, 1) - (-0.6 - 1.0)) < 0.05);
}

TEST_CASE("euler trajectory has steps+1 states and replays its own updates") {
    Rng rng(3);
    VelocityNet net = VelocityNet::build(SizeConfig::preset("S"), CondSet{true, false, false}, 7);
    for (auto& np : net.params()) {
        np.value = random_uniform(rng, np.value.rows(), np.value.cols(), -0.2, 0.2);
    }
    Tensor x1 = random_uniform(rng, 5, 2, -2, 2);
    const int steps = 9;
    auto res = euler_sample(velocity_fn(net), x1, steps);
    REQUIRE(res.trajectory.states.size() == steps + 1);
    REQUIRE(res.trajectory.times.size() == steps + 1);
    const double dt = 1.0 / steps;
    for (int k = 0; k < steps; ++k) {
        const double t = res.trajectory.times[static_cast<std::size_t>(k)];
        Tensor expect = sub(res.trajectory.states[static_cast<std::size_t>(k)],
                            scale(net.eval_batch(res.trajectory.states[static_cast<std::size_t>(k)],
                                                 Tensor::full(5, 1, t))
                                      .output,
                                  dt));
        CHECK(max_abs_diff(expect, res.trajectory.states[static_cast<std::size_t>(k) + 1]) == 0.0);
    }
    CHECK(max_abs_diff(res.trajectory.states.back(), res.x0) == 0.0);
}

TEST_CASE("cfg: w=0 returns the conditional output exactly") {
    VelocityNet teacher =
        VelocityNet::build(SizeConfig::preset("S"), CondSet{true, false, true}, 13);
    Rng rng(4);
    for (auto& np : teacher.params()) {
        np.value = random_uniform(rng, np.value.rows(), np.value.cols(), -0.3, 0.3);
    }
    Tensor x = random_uniform(rng, 4, 2, -1, 1);
    Tensor t = Tensor::full(4, 1, 0.6);
    std::vector<int> labels = {0, 1, 0, 1};
    Tensor guided = teacher_velocity_cfg(teacher, x, t, labels, 0.0);
    Tensor plain = teacher.eval_batch(x, t, nullptr, &labels).output;
    CHECK(max_abs_diff(guided, plain) == 0.0);
    CHECK_THROWS(static_cast<void>(teacher_velocity_cfg(teacher, x, t, labels, -0.5)));
}

TEST_CASE("cfg: equal conditional and unconditional outputs cancel for any w") {
    VelocityNet teacher =
        VelocityNet::build(SizeConfig::preset("S"), CondSet{true, false, true}, 14);
    Rng rng(5);
    for (auto& np : teacher.params()) {
        np.value = random_uniform(rng, np.value.rows(), np.value.cols(), -0.3, 0.3);
    }
    // Make every class embedding identical so condition and null agree.
    Tensor& emb = teacher.param("class_embed");
    for (std::size_t r = 1; r < emb.rows(); ++r) {
        for (std::size_t c = 0; c < emb.cols(); ++c) emb(r, c) = emb(0, c);
    }
    Tensor x = random_uniform(rng, 3, 2, -1, 1);
    Tensor t = Tensor::full(3, 1, 0.3);
    std::vector<int> labels = {1, 0, 1};
    Tensor base = teacher.eval_batch(x, t, nullptr, &labels).output;
    for (double w : {0.5, 1.75, 4.0}) {
        Tensor guided = teacher_velocity_cfg(teacher, x, t, labels, w);
        CHECK(max_abs_diff(guided, base) < 1e-12);
    }
}

TEST_CASE("cfg: hand-set outputs at w = 1.75 combine to (3.75, 0)") {
    // (1+w) cond - w uncond with cond = (2,0), uncond = (1,0).
    const double w = 1.75;
    Tensor cond = Tensor::matrix(1, 2, {2, 0});
    Tensor uncond = Tensor::matrix(1, 2, {1, 0});
    Tensor out = sub(scale(cond, 1.0 + w), scale(uncond, w));
    CHECK(out(0, 0) == doctest::Approx(3.75).epsilon(1e-15));
    CHECK(out(0, 1) == 0.0);
}

TEST_CASE("trajectory csv export uses the documented schema") {
    VFn still = [](const Tensor& x, double) { return Tensor::zeros(x.rows(), x.cols()); };
    Tensor x1 = Tensor::matrix(2, 2, {1, 2, 3, 4});
    auto res = euler_sample(still, x1, 2);
    const std::string path = std::filesystem::temp_directory_path() / "hdlab_traj_test.csv";
    write_trajectory_csv(res.trajectory, path);
    const std::string text = read_text_file(path);
    CHECK(text.rfind("sample,step,t,x,y\n", 0) == 0);
    // 2 samples x 3 recorded states.
    std::size_t lines = 0;
    for (char ch : text) lines += ch == '\n';
    CHECK(lines == 1 + 2 * 3);
    std::filesystem::remove(path);
}
