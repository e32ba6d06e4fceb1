#include "igo/objectives.hpp"

#include <cmath>
#include <numbers>

namespace igo::objectives
{

double unit_ball_volume(int dim)
{
    if (dim < 1)
    {
        throw linalg::InvalidInput("unit_ball_volume: dimension must be positive");
    }
    const double half = 0.5 * dim;
    return std::exp(half * std::log(std::numbers::pi) - std::lgamma(half + 1.0));
}

double kappa(const SpdMatrix &hessian)
{
    const int d = hessian.dim();
    const double log_det = hessian.log_determinant();
    // log of Gamma(d/2 + 1) * sqrt(det H)
    const double log_base = std::lgamma(0.5 * d + 1.0) + 0.5 * log_det;
    return 2.0 * std::numbers::pi * std::exp(-(2.0 / d) * log_base);
}

double volume_loss(const SpdMatrix &hessian, const Vector &x)
{
    const int d = hessian.dim();
    if (x.size() != d)
    {
        throw linalg::DimensionMismatch("volume_loss: point dimension mismatch");
    }
    const double radius = std::sqrt(x.dot(hessian.matrix() * x));
    return std::pow(radius, d) * std::exp(-0.5 * hessian.log_determinant()) * unit_ball_volume(d);
}

double quadratic_utility(const SpdMatrix &hessian, const GaussianSearchDistribution &dist)
{
    const int d = hessian.dim();
    const Matrix &h = hessian.matrix();
    const double factor =
        std::pow(unit_ball_volume(d) * std::exp(-0.5 * hessian.log_determinant()), 2.0 / d);
    return factor * (dist.mean.dot(h * dist.mean) + (h * dist.covariance.matrix()).trace());
}

NaturalGradient utility_gradient(const SpdMatrix &hessian, const GaussianSearchDistribution &dist)
{
    const double k = kappa(hessian);
    return NaturalGradient{k * (hessian.matrix() * dist.mean), 0.5 * k * hessian.matrix()};
}

NaturalGradient exact_natural_gradient(const SpdMatrix &hessian, const GaussianSearchDistribution &dist)
{
    if (hessian.dim() != dist.dim())
    {
        throw linalg::DimensionMismatch("exact_natural_gradient: Hessian and distribution dimensions differ");
    }
    const double k = kappa(hessian);
    const Matrix &sigma = dist.covariance.matrix();
    const Matrix &h = hessian.matrix();
    NaturalGradient grad{k * (sigma * (h * dist.mean)), linalg::symmetrize(k * (sigma * h * sigma))};
    // Structural check: a sandwich of SPD matrices must stay SPD.
    SpdMatrix check(grad.delta_sigma);
    (void)check;
    return grad;
}

SpdMatrix ellipsoid_hessian(int dim, double condition)
{
    Vector diag(dim);
    for (int i = 0; i < dim; ++i)
    {
        diag(i) = dim == 1 ? 1.0 : std::pow(condition, static_cast<double>(i) / (dim - 1));
    }
    return SpdMatrix::diagonal(diag);
}

double condition_bound(std::size_t t, double nu_sigma_min, double initial_condition)
{
    return 1.0 + std::pow(1.0 - nu_sigma_min, static_cast<double>(t)) * (initial_condition - 1.0);
}

std::vector<Benchmark> benchmark_suite(int dim)
{
    std::vector<Benchmark> out;
    const SpdMatrix id = SpdMatrix::identity(dim);
    const QuadraticObjective sphere(id);
    const QuadraticObjective ell10(ellipsoid_hessian(dim, 10.0));
    const QuadraticObjective ell100(ellipsoid_hessian(dim, 100.0));
    out.push_back({"sphere", sphere, id, false});
    out.push_back({"ellipsoid-10", ell10, ell10.hessian(), false});
    out.push_back({"ellipsoid-100", ell100, ell100.hessian(), false});
    out.push_back({"exp-sphere", [sphere](const Vector &x) { return std::exp(sphere(x)); }, id, true});
    out.push_back({"cbrt-sphere", [sphere](const Vector &x) { return std::cbrt(sphere(x)); }, id, true});
    return out;
}

} // namespace igo::objectives
