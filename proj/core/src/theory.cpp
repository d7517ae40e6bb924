#include "hdlab/theory.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace hdlab {

AnalyticField AnalyticField::constant(double c) {
    return {"const", [c](double) { return c; }, [c](double, double) { return c; }};
}

AnalyticField AnalyticField::linear_2t() {
    return {"2t", [](double t) { return 2.0 * t; }, [](double r, double t) { return t + r; }};
}

AnalyticField AnalyticField::sin_t() {
    return {"sin(t)", [](double t) { return std::sin(t); },
            [](double r, double t) {
                // (cos r - cos t)/(t - r) without cancellation.
                return 2.0 * std::sin(0.5 * (t + r)) * std::sin(0.5 * (t - r)) / (t - r);
            }};
}

AnalyticField AnalyticField::sin_2pi_plus2() {
    using std::numbers::pi;
    return {"sin(2pi t)+2", [](double t) { return std::sin(2.0 * pi * t) + 2.0; },
            [](double r, double t) {
                return std::sin(pi * (t + r)) * std::sin(pi * (t - r)) / (pi * (t - r)) + 2.0;
            }};
}

AnalyticField AnalyticField::sin_2t_plus2() {
    return {"sin(2t)+2", [](double t) { return std::sin(2.0 * t) + 2.0; },
            [](double r, double t) {
                return std::sin(t + r) * std::sin(t - r) / (t - r) + 2.0;
            }};
}

double scm_residual(const AnalyticField& field, std::size_t grid_points, double t_min, double h) {
    if (grid_points < 2) throw std::invalid_argument("scm_residual: need >= 2 grid points");
    if (t_min < 1e-3) {
        throw std::invalid_argument("scm_residual: grid must start at t >= 1e-3");
    }
    if (h <= 0.0) throw std::invalid_argument("scm_residual: h must be positive");
    auto F = [&](double t) { return field.mean_u(0.0, t); };
    double worst = 0.0;
    const double step = (1.0 - t_min) / static_cast<double>(grid_points - 1);
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double t = t_min + step * static_cast<double>(i);
        const double dF = (F(t + h) - F(t - h)) / (2.0 * h);
        const double residual = std::abs(F(t) + t * dF - field.v(t));
        worst = std::max(worst, residual);
    }
    return worst;
}

PgdResult pgd_average(const AnalyticField& field, int N) {
    if (N < 0 || N > 30) throw std::invalid_argument("pgd_average: N out of range");
    const std::size_t m = std::size_t{1} << N;
    double acc = 0.0;
    for (std::size_t i = 1; i <= m; ++i) {
        acc += field.v(static_cast<double>(i) / static_cast<double>(m));
    }
    PgdResult res;
    res.average = acc / static_cast<double>(m);
    res.error = std::abs(res.average - field.mean_u(0.0, 1.0));
    return res;
}

bool pgd_recursion_equivalence(const AnalyticField& field, int N, double tol) {
    if (N < 0 || N > 20) throw std::invalid_argument("pgd_recursion_equivalence: N out of range");
    const std::size_t m = std::size_t{1} << N;
    // Level 0 holds the teacher's outputs at every grid index; level k keeps
    // the student defined on multiples of 2^k. Updates run in place because a
    // level only writes indices that are final for it.
    std::vector<double> grid(m + 1, 0.0);
    for (std::size_t i = 1; i <= m; ++i) {
        grid[i] = field.v(static_cast<double>(i) / static_cast<double>(m));
    }
    for (int k = 1; k <= N; ++k) {
        const std::size_t stride = std::size_t{1} << k;
        for (std::size_t idx = stride; idx <= m; idx += stride) {
            grid[idx] = 0.5 * (grid[idx] + grid[idx - stride / 2]);
        }
    }
    return std::abs(grid[m] - pgd_average(field, N).average) <= tol;
}

double scm_residual_coupled(const CoupledField& field, std::size_t grid_points, double t_min,
                            double h, std::size_t euler_steps) {
    if (t_min < 1e-3) {
        throw std::invalid_argument("scm_residual_coupled: grid must start at t >= 1e-3");
    }
    if (euler_steps < 10) {
        throw std::invalid_argument("scm_residual_coupled: integration grid too coarse");
    }
    std::vector<double> xs(euler_steps + 1);
    xs[0] = field.x0;
    const double dt = 1.0 / static_cast<double>(euler_steps);
    for (std::size_t k = 0; k < euler_steps; ++k) {
        const double t = dt * static_cast<double>(k);
        xs[k + 1] = xs[k] + dt * field.v(xs[k], t);
    }
    auto x_at = [&](double t) {
        const double pos = t / dt;
        const auto k = static_cast<std::size_t>(pos);
        if (k >= euler_steps) return xs[euler_steps];
        const double frac = pos - static_cast<double>(k);
        return xs[k] + frac * (xs[k + 1] - xs[k]);
    };
    auto F = [&](double t) { return (x_at(t) - field.x0) / t; };

    double worst = 0.0;
    const double step = (1.0 - t_min - h) / static_cast<double>(grid_points - 1);
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double t = t_min + step * static_cast<double>(i);
        const double dF = (F(t + h) - F(t - h)) / (2.0 * h);
        const double residual = std::abs(F(t) + t * dF - field.v(x_at(t), t));
        worst = std::max(worst, residual);
    }
    return worst;
}

}  // namespace hdlab
