/**
 * @file ngd.hpp
 * @brief Natural gradient descent over Gaussian search distributions.
 *
 * Two flavours share the same update:
 *
 *     mu    <- mu    - nu_mu    * delta_mu
 *     Sigma <- Sigma - nu_sigma * delta_sigma
 *
 * - closed form: delta terms are supplied by an analytic objective
 *   (see objectives.hpp for the convex quadratic);
 * - Monte-Carlo: delta terms are estimated from a sampled population through
 *   the rank-based volume estimator L_hat and the weights L_hat^{2/d}.
 *
 * The adaptive schedule sets nu = alpha / lambda_1(Sigma^{-1} delta_sigma).
 * The covariance step is passed through a positivity guard that caps
 * nu_sigma below safety / lambda_1(sqrt(Sigma)^{-1} delta_sigma sqrt(Sigma)^{-1}).
 */

#pragma once

#include "igo/matrix_kernel.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace igo
{

using linalg::Matrix;
using linalg::SpdMatrix;
using linalg::Vector;

class StepRejected : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

struct GaussianSearchDistribution
{
    Vector mean;
    SpdMatrix covariance;

    int dim() const { return static_cast<int>(mean.size()); }
};

enum class RateMode
{
    fixed,
    adaptive
};

struct StepSizes
{
    double nu_mu = 0.0;
    double nu_sigma = 0.0;
    /// lambda_1(Sigma^{-1} delta_sigma) at the time the rates were computed.
    double lambda1 = std::numeric_limits<double>::quiet_NaN();
};

/**
 * Learning rates for mean and covariance.
 *
 * fixed:    nu_mu = alpha_mu, nu_sigma = alpha_sigma.
 * adaptive: nu = alpha / lambda_1(Sigma^{-1} delta_sigma), so that
 *           nu_mu * lambda_1 = alpha_mu and nu_sigma * lambda_1 = alpha_sigma.
 *           When lambda_1 <= 0 (possible for Monte-Carlo estimates) the
 *           spectral radius is used instead; zero delta gives zero rates.
 */
struct LearningRateSchedule
{
    double alpha_mu = 1.0;
    double alpha_sigma = 0.5;
    RateMode mode = RateMode::adaptive;

    /// alpha_mu in (0, 1], alpha_sigma in (0, 1/2]; throws ConfigError naming the field.
    void validate() const;

    StepSizes step_sizes(const SpdMatrix &sigma, const Matrix &delta_sigma) const;

    /// Lower bounds on nu * lambda_1 guaranteed by the schedule (adaptive mode only).
    double nu_mu_min() const;
    double nu_sigma_min() const;
};

struct GuardOptions
{
    bool enabled = true;
    double safety = 0.5;
};

/**
 * Largest nu' <= nu_sigma with nu' <= safety / lambda_1 where lambda_1 is the
 * top eigenvalue of sqrt(Sigma)^{-1} delta_sigma sqrt(Sigma)^{-1}. Returns
 * nu_sigma unchanged when lambda_1 <= 0.
 */
double positivity_guard(const SpdMatrix &sigma, double nu_sigma, const Matrix &delta_sigma, double safety = 0.5);

struct NaturalGradient
{
    Vector delta_mu;
    Matrix delta_sigma;
};

/// Applies the update with the given rates; throws StepRejected if the new
/// covariance is not symmetric positive definite.
GaussianSearchDistribution apply_update(const GaussianSearchDistribution &dist, const NaturalGradient &grad,
                                        double nu_mu, double nu_sigma);

/// One closed-form step from exact natural-gradient terms.
GaussianSearchDistribution cf_ngd_step(const GaussianSearchDistribution &dist, const NaturalGradient &exact,
                                       const LearningRateSchedule &schedule, const GuardOptions &guard = {},
                                       StepSizes *used = nullptr);

// ---------------------------------------------------------------------------
// Monte-Carlo machinery
// ---------------------------------------------------------------------------

struct Population
{
    std::vector<Vector> z; // standard normal draws
    std::vector<Vector> x; // candidates mean + sqrt(Sigma) z
};

/// Draws are a pure function of (seed, iteration); every iteration gets its own stream.
Population sample_population(const GaussianSearchDistribution &dist, int n, std::uint64_t seed,
                             std::uint64_t iteration);

/// Candidates from caller-supplied standard normal vectors.
Population population_from_normals(const GaussianSearchDistribution &dist, std::vector<Vector> z);

struct LossEstimates
{
    std::vector<double> values;     // L_hat(x_i)
    std::vector<double> log_values; // log L_hat(x_i)
};

/**
 * L_hat(x_i) = sqrt((2 pi)^d det Sigma) / n * sum_{j : f_j <= f_i} exp(|z_j|^2 / 2),
 * evaluated in log space with one sort and a running log-sum-exp.
 * Non-finite f values rank as +infinity. Tied values share the sum over the
 * whole tie group.
 */
LossEstimates estimate_loss(std::span<const double> f_values, const std::vector<Vector> &z,
                            const SpdMatrix &sigma);

/// Weighted estimates of delta_mu and delta_sigma with weights L_hat^{2/d}, summed in index order.
NaturalGradient mc_natural_gradient(const std::vector<Vector> &x, const LossEstimates &loss,
                                    const GaussianSearchDistribution &dist);

using Objective = std::function<double(const Vector &)>;
using AnalyticGradient = std::function<NaturalGradient(const GaussianSearchDistribution &)>;

/// 4 + floor(3 ln d) * 4.
int default_population_size(int dim);

struct OptimizerState
{
    GaussianSearchDistribution dist;
    std::uint64_t iteration = 0;
    std::uint64_t rng_seed = 0;
    int population_size = 0;
    LearningRateSchedule schedule;
    GuardOptions guard;
};

OptimizerState make_state(GaussianSearchDistribution dist, std::uint64_t seed, int population_size = 0,
                          LearningRateSchedule schedule = {}, GuardOptions guard = {});

struct StepDiagnostics
{
    double best_f = std::numeric_limits<double>::infinity();
    Vector best_x;
    int non_finite = 0;
    StepSizes requested;
    double nu_sigma_applied = 0.0;
    bool guard_clamped = false;
};

/// Evaluates f at every candidate. Work is split into contiguous chunks over
/// `threads` workers; results land by index so the outcome does not depend on scheduling.
std::vector<double> evaluate_population(const Objective &objective, const std::vector<Vector> &x, int threads = 1);

/// One Monte-Carlo natural-gradient iteration.
OptimizerState mc_ngd_step(const OptimizerState &state, const Objective &objective,
                           StepDiagnostics *diagnostics = nullptr, int threads = 1);

// ---------------------------------------------------------------------------
// Driver and trace
// ---------------------------------------------------------------------------

struct RunOptions
{
    std::size_t max_iterations = 100;
    /// Stop once frobenius_norm(Sigma) drops below this value.
    double sigma_tolerance = 0.0;
    /// Stop once Cond(Sigma) exceeds this value; beyond ~1e14 updates are dominated by round-off.
    double max_condition = 1e14;
    std::optional<SpdMatrix> reference_hessian;
    int threads = 1;
};

struct TraceRow
{
    std::size_t iteration = 0;
    Vector mean;
    Matrix sigma;
    double best_f = 0.0;
    double norm_mu = 0.0;
    double frobenius_sigma = 0.0;
    double cond_sigma_h = std::numeric_limits<double>::quiet_NaN();
    /// Rates used to produce this row; NaN on the initial row.
    StepSizes rates{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    int non_finite = 0;
};

struct Trace
{
    std::vector<TraceRow> rows;
};

Trace run_mc_ngd(const RunOptions &options, OptimizerState state, const Objective &objective);
Trace run_cf_ngd(const RunOptions &options, GaussianSearchDistribution dist, const LearningRateSchedule &schedule,
                 const Objective &objective, const AnalyticGradient &gradient, const GuardOptions &guard = {});

struct TraceColumn
{
    std::string name;
    std::vector<double> values; // one per written row
};

/**
 * CSV header `iteration,best_f,norm_mu,frobenius_sigma,cond_sigma_h,<extra...>,mu_1..mu_d`.
 * `first_row` skips leading rows (1 drops the initial state).
 */
void write_trace_csv(std::ostream &out, const Trace &trace, const std::vector<TraceColumn> &extra = {},
                     std::size_t first_row = 0);

} // namespace igo
