#include "doctest.h"

#include <cmath>

#include "hdlab/graph.hpp"
#include "hdlab/nets.hpp"
#include "hdlab/rng.hpp"
#include "testutil.hpp"

using namespace hdlab;
using hdlab::test::rel_error;

namespace {

// Size table: label -> (params, hidden, layers, lr).
struct TableRow {
    const char* label;
    double params;
    int hidden;
    int layers;
    double lr;
};
constexpr TableRow kTable[] = {
    {"S", 5540, 32, 1, 1e-3},      {"B", 29630, 64, 2, 1e-3},   {"L", 46270, 64, 4, 5e-4},
    {"XL", 79550, 64, 8, 1e-4},    {"XXL", 146110, 64, 16, 1e-4},
    {"XXXL", 279230, 64, 32, 7e-5},
};

}  // namespace

TEST_CASE("size presets match the canonical table") {
    for (const TableRow& row : kTable) {
        SizeConfig cfg = SizeConfig::preset(row.label);
        CHECK(cfg.hidden_dim == row.hidden);
        CHECK(cfg.layers == row.layers);
        CHECK(cfg.learning_rate == doctest::Approx(row.lr));
    }
    CHECK_THROWS(SizeConfig::preset("M"));
}

TEST_CASE("parameter counts stay within 15% of the table across sizes") {
    std::size_t prev = 0;
    for (const TableRow& row : kTable) {
        VelocityNet net =
            VelocityNet::build(SizeConfig::preset(row.label), CondSet{true, false, false}, 0);
        const auto count = static_cast<double>(net.param_count());
        CHECK(count > 0.85 * row.params);
        CHECK(count < 1.15 * row.params);
        CHECK(net.param_count() > prev);  // monotone in capacity
        prev = net.param_count();
    }
}

TEST_CASE("S with t conditioning and XXXL with (t,r) hit the table counts") {
    VelocityNet s = VelocityNet::build(SizeConfig::preset("S"), CondSet{true, false, false}, 0);
    CHECK(static_cast<double>(s.param_count()) > 0.85 * 5540);
    CHECK(static_cast<double>(s.param_count()) < 1.15 * 5540);
    VelocityNet xxxl =
        VelocityNet::build(SizeConfig::preset("XXXL"), CondSet{true, true, false}, 0);
    CHECK(static_cast<double>(xxxl.param_count()) > 0.85 * 279230);
    CHECK(static_cast<double>(xxxl.param_count()) < 1.15 * 279230);
}

TEST_CASE("same seed builds bit-identical parameters") {
    VelocityNet a = VelocityNet::build(SizeConfig::preset("B"), CondSet{true, true, false}, 42);
    VelocityNet b = VelocityNet::build(SizeConfig::preset("B"), CondSet{true, true, false}, 42);
    REQUIRE(a.params().size() == b.params().size());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        CHECK(max_abs_diff(a.params()[i].value, b.params()[i].value) == 0.0);
    }
    CHECK(a.checksum() == b.checksum());
    VelocityNet c = VelocityNet::build(SizeConfig::preset("B"), CondSet{true, true, false}, 43);
    CHECK(a.checksum() != c.checksum());
}

TEST_CASE("fresh nets map everything to zero (zero output projection)") {
    VelocityNet net = VelocityNet::build(SizeConfig::preset("L"), CondSet{true, false, false}, 5);
    Rng rng(1);
    Tensor x = random_uniform(rng, 8, 2, -2, 2);
    Tensor out = net.eval_batch(x, Tensor::full(8, 1, 0.3)).output;
    CHECK(squared_norm(out) == 0.0);
}

TEST_CASE("eval rejects t or r outside [0,1]") {
    VelocityNet net = VelocityNet::build(SizeConfig::preset("S"), CondSet{true, true, false}, 5);
    Tensor x = Tensor::matrix(1, 2, {0.0, 0.0});
    CHECK_THROWS(static_cast<void>(net.eval(x, 1.5, 0.2)));
    CHECK_THROWS(static_cast<void>(net.eval(x, 0.5, -0.2)));
    CHECK_NOTHROW(static_cast<void>(net.eval(x, 1.0, 0.0)));
}

TEST_CASE("eval is deterministic per inputs") {
    VelocityNet net = VelocityNet::build(SizeConfig::preset("B"), CondSet{true, true, false}, 9);
    Rng rng(2);
    for (auto& np : net.params()) {
        np.value = random_uniform(rng, np.value.rows(), np.value.cols(), -0.3, 0.3);
    }
    Tensor x = random_uniform(rng, 4, 2, -1, 1);
    Tensor a = net.eval(x, 0.7, 0.2);
    Tensor b = net.eval(x, 0.7, 0.2);
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("weight perturbation matches the backward gradient (FD check)") {
    VelocityNet net = VelocityNet::build(SizeConfig::preset("S"), CondSet{true, false, false}, 3);
    Rng rng(17);
    for (auto& np : net.params()) {
        np.value = random_uniform(rng, np.value.rows(), np.value.cols(), -0.4, 0.4);
    }
    const std::size_t batch = 3;
    ad::Graph g;
    ad::ValueId x = g.leaf({batch, 2}, "x");
    ad::ValueId t = g.constant(Tensor::full(batch, 1, 0.4));
    auto emitted = net.emit(g, x, t, std::nullopt, std::nullopt, VelocityNet::Mode::Trainable);
    ad::ValueId out = g.sum(emitted.output);

    std::vector<Tensor> leaves(g.leaf_count());
    ad::set_leaf(leaves, g, x, random_uniform(rng, batch, 2, -1, 1));
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        ad::set_leaf(leaves, g, emitted.param_leaves[i], net.params()[i].value);
    }
    auto ev = ad::forward(g, leaves);
    auto grads = ad::backward(g, ev, out, Tensor::scalar(1.0));

    // Spot-check one weight per parameter tensor.
    Rng pick(5);
    for (std::size_t i = 0; i < net.params().size(); ++i) {
        const int leaf_index = g.node(emitted.param_leaves[i]).leaf_index;
        auto bound = leaves;
        const std::size_t e = static_cast<std::size_t>(
            pick.uniform_int(0, static_cast<int>(net.params()[i].value.numel() - 1)));
        const double h = 1e-6;
        bound[static_cast<std::size_t>(leaf_index)][e] += h;
        const double up = ad::forward(g, bound).at(out).value();
        bound[static_cast<std::size_t>(leaf_index)][e] -= 2 * h;
        const double dn = ad::forward(g, bound).at(out).value();
        const double fd = (up - dn) / (2 * h);
        const double got = grads[static_cast<std::size_t>(leaf_index)][e];
        if (fd == 0.0 && got == 0.0) continue;
        CHECK(rel_error(got, fd) < 1e-5);
    }
}

TEST_CASE("zeroing a block's weights turns it into the skip path") {
    VelocityNet net = VelocityNet::build(SizeConfig::preset("B"), CondSet{true, false, false}, 21);
    Rng rng(3);
    for (auto& np : net.params()) {
        np.value = random_uniform(rng, np.value.rows(), np.value.cols(), -0.4, 0.4);
    }
    for (const char* name : {"block1.w1", "block1.b1", "block1.w2", "block1.b2"}) {
        Tensor& p = net.param(name);
        for (double& v : p.data()) v = 0.0;
    }
    Tensor x = random_uniform(rng, 6, 2, -1, 1);
    auto ev = net.eval_batch(x, Tensor::full(6, 1, 0.5), nullptr, nullptr, true);
    REQUIRE(ev.hidden.size() == 2);
    CHECK(max_abs_diff(ev.hidden[0], ev.hidden[1]) == 0.0);
}

TEST_CASE("spectral_normalize: identity is unchanged") {
    Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tensor out = spectral_normalize(eye, 50);
    CHECK(max_abs_diff(out, eye) < 1e-12);
}

TEST_CASE("spectral_normalize: diag(4,1) becomes diag(1,0.25)") {
    Tensor m = Tensor::matrix(2, 2, {4, 0, 0, 1});
    Tensor out = spectral_normalize(m, 200);
    CHECK(out(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(out(1, 1) == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("spectral_normalize: zero matrix returned unchanged") {
    Tensor z = Tensor::zeros(3, 3);
    CHECK(max_abs_diff(spectral_normalize(z, 10), z) == 0.0);
    CHECK_THROWS(static_cast<void>(spectral_normalize(z, 0)));
}

TEST_CASE("spectral_normalize: random 8x8 reaches unit top singular value") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor m = random_uniform(rng, 8, 8, -1, 1);
        Tensor normed = spectral_normalize(m, 100);
        // Long power-iteration oracle on the normalized matrix.
        SpectralState oracle;
        const double sigma = spectral_sigma(normed, oracle, 1000);
        CHECK(std::abs(sigma - 1.0) < 1e-3);
    }
}

TEST_CASE("awd: identical tokens get uniform weights, single token weight 1") {
    DiscriminatorHead head = DiscriminatorHead::build(HeadVariant::Awd, 8, 11);
    Rng rng(4);
    Tensor tok = random_uniform(rng, 1, 8, -1, 1);
    auto [score, weights] = head.awd_score({tok, tok, tok, tok});
    for (double w : weights) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
    (void)score;
    auto single = head.awd_score({tok});
    CHECK(single.second.size() == 1);
    CHECK(single.second[0] == 1.0);
    CHECK_THROWS(static_cast<void>(head.awd_score({})));
}

TEST_CASE("awd weights form a probability vector across many random inputs") {
    DiscriminatorHead head = DiscriminatorHead::build(HeadVariant::Awd, 16, 2);
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        std::vector<Tensor> tokens;
        for (int i = 0; i < 5; ++i) tokens.push_back(random_uniform(rng, 4, 16, -3, 3));
        auto res = head.score_batch(tokens);
        for (std::size_t b = 0; b < 4; ++b) {
            double total = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                CHECK(res.weights(b, j) >= 0.0);
                total += res.weights(b, j);
            }
            CHECK(std::abs(total - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("awd with constant logits equals gap on tied value projections") {
    DiscriminatorHead awd = DiscriminatorHead::build(HeadVariant::Awd, 8, 77);
    for (double& v : awd.param("query").data()) v = 0.0;  // logits frozen at 0
    DiscriminatorHead gap = DiscriminatorHead::build(HeadVariant::Gap, 8, 78);
    gap.param("value.w") = awd.param("value.w");
    gap.param("score.w") = awd.param("score.w");
    gap.param("score.b") = awd.param("score.b");

    Rng rng(6);
    std::vector<Tensor> tokens;
    for (int i = 0; i < 3; ++i) tokens.push_back(random_uniform(rng, 2, 8, -1, 1));
    auto a = awd.score_batch(tokens);
    auto g = gap.score_batch(tokens);
    CHECK(max_abs_diff(a.score, g.score) < 1e-12);
}

TEST_CASE("gap: duplicated token scores like the single token") {
    DiscriminatorHead head = DiscriminatorHead::build(HeadVariant::Gap, 8, 5);
    Rng rng(8);
    Tensor tok = random_uniform(rng, 1, 8, -1, 1);
    CHECK(head.gap_score({tok, tok}) == doctest::Approx(head.gap_score({tok})).epsilon(1e-12));
}

TEST_CASE("gap: permutation invariant and matches a brute-force pooled mean") {
    DiscriminatorHead head = DiscriminatorHead::build(HeadVariant::Gap, 8, 5);
    Rng rng(9);
    std::vector<Tensor> tokens;
    for (int i = 0; i < 4; ++i) tokens.push_back(random_uniform(rng, 1, 8, -1, 1));
    const double base = head.gap_score(tokens);
    std::vector<Tensor> permuted = {tokens[2], tokens[0], tokens[3], tokens[1]};
    CHECK(head.gap_score(permuted) == doctest::Approx(base).epsilon(1e-12));

    // Brute-force oracle: pool the normalized value projections by hand and
    // push the mean through the scoring tail.
    SpectralState st;
    const double sigma = spectral_sigma(head.param("value.w"), st, 200);
    Tensor wv = scale(head.param("value.w"), 1.0 / sigma);
    Tensor pooled = Tensor::zeros(1, 8);
    for (const Tensor& tok : tokens) {
        ad::Graph g;
        ad::ValueId ln = layer_norm(g, g.constant(tok), 8);
        Tensor normed = ad::forward(g, {}).at(ln);
        pooled = add(pooled, matmul(normed, wv));
    }
    pooled = scale(pooled, 0.25);

    ad::Graph g2;
    ad::ValueId scored = layer_norm(g2, g2.constant(pooled), 8);
    Tensor final_in = ad::forward(g2, {}).at(scored);
    const double want =
        matmul(final_in, head.param("score.w")).value() + head.param("score.b").value();
    CHECK(base == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("head emit in trainable mode exposes parameter leaves") {
    DiscriminatorHead head = DiscriminatorHead::build(HeadVariant::Awd, 8, 3);
    ad::Graph g;
    Rng rng(12);
    std::vector<ad::ValueId> tokens = {g.constant(random_uniform(rng, 2, 8, -1, 1)),
                                       g.constant(random_uniform(rng, 2, 8, -1, 1))};
    auto emitted = head.emit(g, tokens, VelocityNet::Mode::Trainable);
    CHECK(emitted.param_leaves.size() == head.params().size());
    std::vector<Tensor> leaves(g.leaf_count());
    for (std::size_t i = 0; i < head.params().size(); ++i) {
        ad::set_leaf(leaves, g, emitted.param_leaves[i], head.params()[i].value);
    }
    auto ev = ad::forward(g, leaves);
    CHECK(ev.at(emitted.score).rows() == 2);
}
