#pragma once

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "hdlab/tensor.hpp"

namespace hdlab::detail {

// Index plan for elementwise binary ops under the library broadcast rules.
// A stride of zero pins the corresponding axis to its only element.
struct BroadcastPlan {
    std::size_t out_rows, out_cols;
    std::size_t a_rstride, a_cstride;
    std::size_t b_rstride, b_cstride;
    std::vector<std::size_t> out_shape;

    std::size_t a_index(std::size_t i, std::size_t j) const {
        return i * a_rstride + j * a_cstride;
    }
    std::size_t b_index(std::size_t i, std::size_t j) const {
        return i * b_rstride + j * b_cstride;
    }
};

inline BroadcastPlan plan_broadcast(const Tensor& a, const Tensor& b, const char* opname) {
    const std::size_t ra = a.rows(), ca = a.cols();
    const std::size_t rb = b.rows(), cb = b.cols();
    const std::size_t orows = std::max(ra, rb);
    const std::size_t ocols = std::max(ca, cb);
    auto compatible = [](std::size_t d, std::size_t o) { return d == o || d == 1; };
    if (!compatible(ra, orows) || !compatible(ca, ocols) || !compatible(rb, orows) ||
        !compatible(cb, ocols)) {
        throw std::invalid_argument(std::string(opname) + ": incompatible shapes " +
                                    a.shape_str() + " and " + b.shape_str());
    }
    BroadcastPlan p;
    p.out_rows = orows;
    p.out_cols = ocols;
    p.a_rstride = (ra == orows) ? ca : 0;
    p.a_cstride = (ca == ocols) ? 1 : 0;
    p.b_rstride = (rb == orows) ? cb : 0;
    p.b_cstride = (cb == ocols) ? 1 : 0;
    if (a.rank() <= 1 && b.rank() <= 1 && orows == 1) {
        p.out_shape = {ocols};
    } else {
        p.out_shape = {orows, ocols};
    }
    return p;
}

}  // namespace hdlab::detail
