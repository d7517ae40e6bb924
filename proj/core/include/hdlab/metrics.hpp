#pragma once

#include <vector>

#include "hdlab/tensor.hpp"

namespace hdlab {

// Distance to the unit circle, d(z) = | ||z|| - 1 |, per 2D point.
std::vector<double> circle_distances(const Tensor& points);
double mean_circle_distance(const Tensor& points);

double median(std::vector<double> values);

}  // namespace hdlab
