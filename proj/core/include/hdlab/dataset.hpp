#pragma once

#include <utility>
#include <vector>

#include "hdlab/rng.hpp"
#include "hdlab/tensor.hpp"

namespace hdlab {

// The 2D transport task: prior p1 uniform over the rectangle
// x in [-2,2], y in [-2,0]; target p0 uniform over the upper unit semicircle.
// The optional two-class variant splits the semicircle at theta = pi/2.
struct ToyDataset {
    static Tensor sample_prior(Rng& rng, std::size_t n);
    static Tensor sample_target(Rng& rng, std::size_t n);
    static std::pair<Tensor, std::vector<int>> sample_target_classed(Rng& rng, std::size_t n);
};

// Fixed probe set shared by every run so paired comparisons see the same
// prior draws regardless of the run seed.
inline constexpr std::uint64_t kProbeSeed = 0x70726f6265ULL;
Tensor probe_prior(std::size_t n);

}  // namespace hdlab
