#include "hdlab/dataset.hpp"

#include <cmath>
#include <numbers>

namespace hdlab {

Tensor ToyDataset::sample_prior(Rng& rng, std::size_t n) {
    Tensor out({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        out(i, 0) = rng.uniform(-2.0, 2.0);
        out(i, 1) = rng.uniform(-2.0, 0.0);
    }
    return out;
}

Tensor ToyDataset::sample_target(Rng& rng, std::size_t n) {
    Tensor out({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        const double theta = rng.uniform(0.0, std::numbers::pi);
        out(i, 0) = std::cos(theta);
        out(i, 1) = std::sin(theta);
    }
    return out;
}

std::pair<Tensor, std::vector<int>> ToyDataset::sample_target_classed(Rng& rng, std::size_t n) {
    Tensor out({n, 2});
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double theta = rng.uniform(0.0, std::numbers::pi);
        out(i, 0) = std::cos(theta);
        out(i, 1) = std::sin(theta);
        labels[i] = theta < std::numbers::pi / 2.0 ? 0 : 1;
    }
    return {std::move(out), std::move(labels)};
}

Tensor probe_prior(std::size_t n) {
    Rng rng = make_stream(kProbeSeed, "probe");
    return ToyDataset::sample_prior(rng, n);
}

}  // namespace hdlab
