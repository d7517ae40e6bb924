#pragma once

#include <cstddef>
#include <functional>
#include <string>

namespace hdlab {

// x-independent velocity field paired with its exact mean velocity
// U(r,t) = (1/(t-r)) * integral of v over [r,t], in cancellation-safe form.
struct AnalyticField {
    std::string name;
    std::function<double(double)> v;
    std::function<double(double, double)> mean_u;  // mean_u(r, t), r < t

    static AnalyticField constant(double c);
    static AnalyticField linear_2t();    // v = 2t
    static AnalyticField sin_t();        // v = sin t
    static AnalyticField sin_2pi_plus2();  // v = sin(2 pi t) + 2
    static AnalyticField sin_2t_plus2();   // v = sin(2t) + 2
};

// Max over a uniform grid on [t_min, 1] of |F(t) + t F'(t) - v(t)| where
// F(t) = U(0,t) and F' is a central difference of half-width h. Grids must
// start at t_min >= 1e-3 to stay away from the 1/t in F.
double scm_residual(const AnalyticField& field, std::size_t grid_points, double t_min, double h);

struct PgdResult {
    double average;  // (1/2^N) sum of v at t_i = i / 2^N, i = 1..2^N
    double error;    // |average - U(0,1)|
};

PgdResult pgd_average(const AnalyticField& field, int N);

// Runs the halving recursion level by level and checks it reproduces the
// closed-form arithmetic mean of the 2^N teacher outputs.
bool pgd_recursion_equivalence(const AnalyticField& field, int N, double tol = 1e-12);

// Trajectory-coupled variant for x-dependent fields: x(t) is integrated from
// x(0) = x0 on a fine Euler grid, the mean velocity over [0,t] is read off as
// (x(t) - x(0))/t, and the same residual is formed along the trajectory.
struct CoupledField {
    std::string name;
    std::function<double(double, double)> v;  // v(x, t)
    double x0 = 1.0;
};

double scm_residual_coupled(const CoupledField& field, std::size_t grid_points, double t_min,
                            double h, std::size_t euler_steps);

}  // namespace hdlab
