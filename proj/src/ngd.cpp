#include "igo/ngd.hpp"

#include "igo/format.hpp"
#include "igo/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <thread>

namespace igo
{

namespace
{

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b)
{
    if (a == kNegInf)
    {
        return b;
    }
    if (b == kNegInf)
    {
        return a;
    }
    const double hi = std::max(a, b);
    const double lo = std::min(a, b);
    return hi + std::log1p(std::exp(lo - hi));
}

double rank_key(double f)
{
    return std::isfinite(f) ? f : std::numeric_limits<double>::infinity();
}

double sandwich_spectral_radius(const SpdMatrix &sigma, const Matrix &delta)
{
    const Matrix inv_root = linalg::spd_inverse_sqrt(sigma).matrix();
    const linalg::EigenDecomposition eig = linalg::sym_eigen(linalg::symmetrize(inv_root * delta * inv_root));
    return std::max(std::abs(eig.values(0)), std::abs(eig.values(eig.values.size() - 1)));
}

TraceRow make_row(std::size_t iteration, const GaussianSearchDistribution &dist, double best_f,
                  const RunOptions &options)
{
    TraceRow row;
    row.iteration = iteration;
    row.mean = dist.mean;
    row.sigma = dist.covariance.matrix();
    row.best_f = best_f;
    row.norm_mu = dist.mean.norm();
    row.frobenius_sigma = linalg::frobenius_norm(row.sigma);
    if (options.reference_hessian)
    {
        row.cond_sigma_h = linalg::product_condition_number(dist.covariance, *options.reference_hessian);
    }
    return row;
}

} // namespace

void LearningRateSchedule::validate() const
{
    if (!(alpha_mu > 0.0 && alpha_mu <= 1.0))
    {
        throw ConfigError("alpha_mu must lie in (0, 1], got " + format_double(alpha_mu));
    }
    if (!(alpha_sigma > 0.0 && alpha_sigma <= 0.5))
    {
        throw ConfigError("alpha_sigma must lie in (0, 0.5], got " + format_double(alpha_sigma));
    }
}

StepSizes LearningRateSchedule::step_sizes(const SpdMatrix &sigma, const Matrix &delta_sigma) const
{
    StepSizes out;
    out.lambda1 = linalg::largest_relative_eigenvalue(sigma, delta_sigma);
    if (mode == RateMode::fixed)
    {
        out.nu_mu = alpha_mu;
        out.nu_sigma = alpha_sigma;
        return out;
    }
    double scale = out.lambda1;
    if (!(scale > 0.0))
    {
        scale = sandwich_spectral_radius(sigma, delta_sigma);
    }
    if (scale > 0.0 && std::isfinite(scale))
    {
        out.nu_mu = alpha_mu / scale;
        out.nu_sigma = alpha_sigma / scale;
    }
    return out;
}

double LearningRateSchedule::nu_mu_min() const
{
    return mode == RateMode::adaptive ? alpha_mu : std::numeric_limits<double>::quiet_NaN();
}

double LearningRateSchedule::nu_sigma_min() const
{
    return mode == RateMode::adaptive ? alpha_sigma : std::numeric_limits<double>::quiet_NaN();
}

double positivity_guard(const SpdMatrix &sigma, double nu_sigma, const Matrix &delta_sigma, double safety)
{
    const double lambda1 = linalg::largest_relative_eigenvalue(sigma, delta_sigma);
    if (!(lambda1 > 0.0))
    {
        return nu_sigma;
    }
    return std::min(nu_sigma, safety / lambda1);
}

GaussianSearchDistribution apply_update(const GaussianSearchDistribution &dist, const NaturalGradient &grad,
                                        double nu_mu, double nu_sigma)
{
    const int d = dist.dim();
    if (grad.delta_mu.size() != d || grad.delta_sigma.rows() != d || grad.delta_sigma.cols() != d)
    {
        throw linalg::DimensionMismatch("apply_update: gradient dimension does not match distribution");
    }
    Vector mean = dist.mean - nu_mu * grad.delta_mu;
    Matrix sigma = linalg::symmetrize(dist.covariance.matrix() - nu_sigma * grad.delta_sigma);
    if (!mean.allFinite())
    {
        throw StepRejected("step rejected: non-finite mean");
    }
    try
    {
        return GaussianSearchDistribution{std::move(mean), SpdMatrix(sigma)};
    }
    catch (const linalg::NotPositiveDefinite &e)
    {
        throw StepRejected(std::string("step rejected: covariance lost positive definiteness (") + e.what() + ")");
    }
    catch (const linalg::InvalidInput &e)
    {
        throw StepRejected(std::string("step rejected: ") + e.what());
    }
}

GaussianSearchDistribution cf_ngd_step(const GaussianSearchDistribution &dist, const NaturalGradient &exact,
                                       const LearningRateSchedule &schedule, const GuardOptions &guard,
                                       StepSizes *used)
{
    StepSizes rates = schedule.step_sizes(dist.covariance, exact.delta_sigma);
    if (guard.enabled)
    {
        rates.nu_sigma = positivity_guard(dist.covariance, rates.nu_sigma, exact.delta_sigma, guard.safety);
    }
    if (used)
    {
        *used = rates;
    }
    return apply_update(dist, exact, rates.nu_mu, rates.nu_sigma);
}

Population population_from_normals(const GaussianSearchDistribution &dist, std::vector<Vector> z)
{
    const Matrix root = linalg::spd_sqrt(dist.covariance).matrix();
    Population pop;
    pop.x.reserve(z.size());
    for (const Vector &zi : z)
    {
        if (zi.size() != dist.dim())
        {
            throw linalg::DimensionMismatch("population_from_normals: draw dimension mismatch");
        }
        pop.x.push_back(dist.mean + root * zi);
    }
    pop.z = std::move(z);
    return pop;
}

Population sample_population(const GaussianSearchDistribution &dist, int n, std::uint64_t seed,
                             std::uint64_t iteration)
{
    if (n < 1)
    {
        throw linalg::InvalidInput("sample_population: population size must be positive");
    }
    NormalRng rng(stream_seed(seed, iteration));
    std::vector<Vector> z(static_cast<std::size_t>(n), Vector(dist.dim()));
    for (Vector &zi : z)
    {
        for (int k = 0; k < dist.dim(); ++k)
        {
            zi(k) = rng.normal();
        }
    }
    return population_from_normals(dist, std::move(z));
}

LossEstimates estimate_loss(std::span<const double> f_values, const std::vector<Vector> &z, const SpdMatrix &sigma)
{
    const std::size_t n = f_values.size();
    if (n == 0 || z.size() != n)
    {
        throw linalg::InvalidInput("estimate_loss: need n >= 1 values with matching draws");
    }
    const int d = sigma.dim();
    const double log_prefactor =
        0.5 * (d * std::log(2.0 * std::numbers::pi) + sigma.log_determinant()) - std::log(static_cast<double>(n));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rank_key(f_values[a]) < rank_key(f_values[b]); });

    LossEstimates out;
    out.values.assign(n, 0.0);
    out.log_values.assign(n, kNegInf);

    double running = kNegInf;
    std::size_t group_start = 0;
    while (group_start < n)
    {
        const double key = rank_key(f_values[order[group_start]]);
        std::size_t group_end = group_start;
        while (group_end < n && rank_key(f_values[order[group_end]]) == key)
        {
            running = log_add(running, 0.5 * z[order[group_end]].squaredNorm());
            ++group_end;
        }
        for (std::size_t k = group_start; k < group_end; ++k)
        {
            const std::size_t i = order[k];
            out.log_values[i] = log_prefactor + running;
            out.values[i] = std::exp(out.log_values[i]);
        }
        group_start = group_end;
    }
    return out;
}

NaturalGradient mc_natural_gradient(const std::vector<Vector> &x, const LossEstimates &loss,
                                    const GaussianSearchDistribution &dist)
{
    const std::size_t n = x.size();
    if (n == 0 || loss.log_values.size() != n)
    {
        throw linalg::InvalidInput("mc_natural_gradient: loss estimates do not match the population");
    }
    const int d = dist.dim();
    const double exponent = 2.0 / d;
    const Matrix &sigma = dist.covariance.matrix();

    NaturalGradient grad{Vector::Zero(d), Matrix::Zero(d, d)};
    for (std::size_t i = 0; i < n; ++i)
    {
        const double w = std::exp(exponent * loss.log_values[i]);
        if (w == 0.0)
        {
            continue;
        }
        const Vector dev = x[i] - dist.mean;
        grad.delta_mu += w * dev;
        for (int r = 0; r < d; ++r)
        {
            for (int c = r; c < d; ++c)
            {
                grad.delta_sigma(r, c) += w * (dev(r) * dev(c) - sigma(r, c));
            }
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    grad.delta_mu *= inv_n;
    for (int r = 0; r < d; ++r)
    {
        for (int c = r; c < d; ++c)
        {
            grad.delta_sigma(r, c) *= inv_n;
            grad.delta_sigma(c, r) = grad.delta_sigma(r, c);
        }
    }
    return grad;
}

int default_population_size(int dim)
{
    if (dim < 1)
    {
        throw linalg::InvalidInput("default_population_size: dimension must be positive");
    }
    return 4 + static_cast<int>(std::floor(3.0 * std::log(static_cast<double>(dim)))) * 4;
}

OptimizerState make_state(GaussianSearchDistribution dist, std::uint64_t seed, int population_size,
                          LearningRateSchedule schedule, GuardOptions guard)
{
    schedule.validate();
    const int d = dist.dim();
    OptimizerState state{std::move(dist), 0, seed,
                         population_size > 0 ? population_size : default_population_size(d), schedule, guard};
    return state;
}

std::vector<double> evaluate_population(const Objective &objective, const std::vector<Vector> &x, int threads)
{
    std::vector<double> f(x.size(), 0.0);
    const std::size_t workers = std::clamp<std::size_t>(threads < 1 ? 1 : threads, 1, std::max<std::size_t>(1, x.size()));
    if (workers == 1)
    {
        for (std::size_t i = 0; i < x.size(); ++i)
        {
            f[i] = objective(x[i]);
        }
        return f;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (x.size() + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w)
    {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(x.size(), begin + chunk);
        pool.emplace_back([&, begin, end] {
            for (std::size_t i = begin; i < end; ++i)
            {
                f[i] = objective(x[i]);
            }
        });
    }
    for (std::thread &t : pool)
    {
        t.join();
    }
    return f;
}

OptimizerState mc_ngd_step(const OptimizerState &state, const Objective &objective, StepDiagnostics *diagnostics,
                           int threads)
{
    const Population pop = sample_population(state.dist, state.population_size, state.rng_seed, state.iteration);
    std::vector<double> f = evaluate_population(objective, pop.x, threads);

    StepDiagnostics diag;
    for (std::size_t i = 0; i < f.size(); ++i)
    {
        if (!std::isfinite(f[i]))
        {
            ++diag.non_finite;
            f[i] = std::numeric_limits<double>::infinity();
        }
        if (f[i] < diag.best_f || diag.best_x.size() == 0)
        {
            diag.best_f = f[i];
            diag.best_x = pop.x[i];
        }
    }

    const LossEstimates loss = estimate_loss(f, pop.z, state.dist.covariance);
    const NaturalGradient grad = mc_natural_gradient(pop.x, loss, state.dist);

    diag.requested = state.schedule.step_sizes(state.dist.covariance, grad.delta_sigma);
    double nu_sigma = diag.requested.nu_sigma;
    if (state.guard.enabled)
    {
        nu_sigma = positivity_guard(state.dist.covariance, nu_sigma, grad.delta_sigma, state.guard.safety);
    }
    diag.nu_sigma_applied = nu_sigma;
    diag.guard_clamped = nu_sigma < diag.requested.nu_sigma;

    OptimizerState next = state;
    next.dist = apply_update(state.dist, grad, diag.requested.nu_mu, nu_sigma);
    ++next.iteration;
    if (diagnostics)
    {
        *diagnostics = std::move(diag);
    }
    return next;
}

Trace run_mc_ngd(const RunOptions &options, OptimizerState state, const Objective &objective)
{
    Trace trace;
    trace.rows.push_back(make_row(state.iteration, state.dist, objective(state.dist.mean), options));
    for (std::size_t k = 0; k < options.max_iterations; ++k)
    {
        if (linalg::frobenius_norm(state.dist.covariance.matrix()) < options.sigma_tolerance ||
            linalg::condition_number(state.dist.covariance) > options.max_condition)
        {
            break;
        }
        StepDiagnostics diag;
        state = mc_ngd_step(state, objective, &diag, options.threads);
        TraceRow row = make_row(state.iteration, state.dist, diag.best_f, options);
        row.rates = diag.requested;
        row.rates.nu_sigma = diag.nu_sigma_applied;
        row.non_finite = diag.non_finite;
        trace.rows.push_back(std::move(row));
    }
    return trace;
}

Trace run_cf_ngd(const RunOptions &options, GaussianSearchDistribution dist, const LearningRateSchedule &schedule,
                 const Objective &objective, const AnalyticGradient &gradient, const GuardOptions &guard)
{
    schedule.validate();
    Trace trace;
    trace.rows.push_back(make_row(0, dist, objective(dist.mean), options));
    for (std::size_t k = 0; k < options.max_iterations; ++k)
    {
        if (linalg::frobenius_norm(dist.covariance.matrix()) < options.sigma_tolerance ||
            linalg::condition_number(dist.covariance) > options.max_condition)
        {
            break;
        }
        StepSizes used;
        dist = cf_ngd_step(dist, gradient(dist), schedule, guard, &used);
        TraceRow row = make_row(k + 1, dist, objective(dist.mean), options);
        row.rates = used;
        trace.rows.push_back(std::move(row));
    }
    return trace;
}

void write_trace_csv(std::ostream &out, const Trace &trace, const std::vector<TraceColumn> &extra,
                     std::size_t first_row)
{
    const int d = trace.rows.empty() ? 0 : static_cast<int>(trace.rows.front().mean.size());
    out << "iteration,best_f,norm_mu,frobenius_sigma,cond_sigma_h";
    for (const TraceColumn &col : extra)
    {
        out << ',' << col.name;
    }
    for (int k = 0; k < d; ++k)
    {
        out << ",mu_" << (k + 1);
    }
    out << '\n';
    for (std::size_t r = first_row; r < trace.rows.size(); ++r)
    {
        const TraceRow &row = trace.rows[r];
        out << row.iteration << ',' << format_double(row.best_f) << ',' << format_double(row.norm_mu) << ','
            << format_double(row.frobenius_sigma) << ',' << format_double(row.cond_sigma_h);
        for (const TraceColumn &col : extra)
        {
            const std::size_t idx = r - first_row;
            out << ',' << (idx < col.values.size() ? format_double(col.values[idx]) : std::string("nan"));
        }
        for (int k = 0; k < d; ++k)
        {
            out << ',' << format_double(row.mean(k));
        }
        out << '\n';
    }
}

} // namespace igo
