/**
 * @file objectives.hpp
 * @brief Analytic benchmark objectives.
 *
 * For the convex quadratic f(x) = x^T H x / 2 the whole chain is closed form:
 *
 *     L_f(x)   = |sqrt(H) x|^d det(H)^{-1/2} V_d(1)
 *     U(theta) = (V_d(1) / sqrt(det H))^{2/d} (mu^T H mu + Tr(H Sigma))
 *     kappa    = 2 pi / (Gamma(d/2 + 1) sqrt(det H))^{2/d}
 *     delta_mu = kappa Sigma H mu,   delta_sigma = kappa Sigma H Sigma
 */

#pragma once

#include "igo/ngd.hpp"

#include <string>
#include <vector>

namespace igo::objectives
{

double unit_ball_volume(int dim);

class QuadraticObjective
{
public:
    explicit QuadraticObjective(SpdMatrix hessian) : hessian_(std::move(hessian)) {}

    double operator()(const Vector &x) const { return 0.5 * x.dot(hessian_.matrix() * x); }

    const SpdMatrix &hessian() const { return hessian_; }
    int dim() const { return hessian_.dim(); }

private:
    SpdMatrix hessian_;
};

double kappa(const SpdMatrix &hessian);

/// Lebesgue measure of {y : f(y) <= f(x)}.
double volume_loss(const SpdMatrix &hessian, const Vector &x);

/// E[L_f(X)^{2/d}] for X ~ N(mu, Sigma).
double quadratic_utility(const SpdMatrix &hessian, const GaussianSearchDistribution &dist);

/// Vanilla gradient of the utility with respect to (mu, Sigma): kappa [H mu; H / 2].
NaturalGradient utility_gradient(const SpdMatrix &hessian, const GaussianSearchDistribution &dist);

/// Fisher-preconditioned gradient; delta_sigma is checked to be SPD.
NaturalGradient exact_natural_gradient(const SpdMatrix &hessian, const GaussianSearchDistribution &dist);

/// diag(c^{i/(d-1)}), i = 0..d-1; identity for d = 1.
SpdMatrix ellipsoid_hessian(int dim, double condition);

/// Upper bound on Cond(Sigma^t H) after t adaptive steps.
double condition_bound(std::size_t t, double nu_sigma_min, double initial_condition);

struct Benchmark
{
    std::string name;
    Objective function;
    SpdMatrix hessian; // Hessian of the underlying quadratic
    bool warped = false;
};

/// sphere, ellipsoid-10, ellipsoid-100, exp-sphere, cbrt-sphere in dimension `dim`.
std::vector<Benchmark> benchmark_suite(int dim);

} // namespace igo::objectives
