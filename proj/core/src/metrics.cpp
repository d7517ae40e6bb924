#include "hdlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hdlab {

std::vector<double> circle_distances(const Tensor& points) {
    if (points.cols() != 2) throw std::invalid_argument("circle_distances: points must be 2D");
    std::vector<double> out(points.rows());
    for (std::size_t i = 0; i < points.rows(); ++i) {
        out[i] = std::abs(std::hypot(points(i, 0), points(i, 1)) - 1.0);
    }
    return out;
}

double mean_circle_distance(const Tensor& points) {
    const std::vector<double> d = circle_distances(points);
    double acc = 0.0;
    for (double v : d) acc += v;
    return acc / static_cast<double>(d.size());
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace hdlab
