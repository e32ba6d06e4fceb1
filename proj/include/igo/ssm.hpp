/**
 * @file ssm.hpp
 * @brief Two-latent-variable state-space forecaster.
 *
 *     x_{t+1} = Phi x_t + c_t + w_t,    w_t ~ N(0, Q)
 *     z_t     = h x_t + v_t,            v_t ~ N(0, R)
 *
 * with Phi = [[p1, p2], [0, p3]], h = [p4, p5], Q built from (p6, p7, p8),
 * R from p9, P0 = diag from (p10, p11) and the drive term
 *
 *     c_t = [p12 (0.5 + p13 - k_t); p14 (0.5 + p15 - k_t)]
 *
 * where k_t is the position of the last close inside its trailing 20-period
 * range.
 *
 * Optimizer-facing parameters live in the box [0, 100]^15 ("raw"
 * coordinates) and are mapped to the model by a versioned affine mapping.
 * The filter runs on observations normalized against the first close:
 * z = 100 (close - anchor) / anchor, so noise scales are in percent of the
 * anchor price.
 */

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace igo::ssm
{

inline constexpr int kNumParams = 15;
inline constexpr double kRawMin = 0.0;
inline constexpr double kRawMax = 100.0;
inline constexpr const char *kMappingVersion = "v1";
inline constexpr std::size_t kRangeWindow = 20;
/// Largest noise standard deviation reachable by the mapping, in observation units.
inline constexpr double kNoiseScale = 5.0;

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Row2 = Eigen::RowVector2d;
using RawParams = std::array<double, kNumParams>;

class NumericalDegeneracy : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class DegenerateFit : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Model-space parameters.
struct SsmModel
{
    Mat2 phi = Mat2::Identity();
    Row2 obs = Row2(1.0, 0.0);
    Mat2 q = Mat2::Zero();
    double r = 1.0;
    Mat2 p0 = Mat2::Identity();
    double gain1 = 0.0;   // p12
    double offset1 = 0.0; // p13
    double gain2 = 0.0;   // p14
    double offset2 = 0.0; // p15
};

/**
 * Mapping v1 from raw [0, 100] coordinates (values are clamped to the box):
 *
 *   p1, p2, p3  -> Phi entries       1.1 * p / 100           in [0, 1.1]
 *   p4, p5      -> observation row   1.1 * p / 100           in [0, 1.1]
 *   p6, p8      -> Q standard devs   5 p / 100               in [0, 5]
 *   p7          -> Q correlation     2 p / 100 - 1           in [-1, 1]
 *   p9          -> R standard dev    5 p / 100               (R = sd^2)
 *   p10, p11    -> P0 standard devs  5 p / 100               (P0 = diag(sd^2))
 *   p12, p14    -> drive gains       2 p / 100 - 1           in [-1, 1]
 *   p13, p15    -> drive offsets     p / 100 - 0.5           in [-0.5, 0.5]
 *
 * Q = [[s6^2, rho s6 s8], [rho s6 s8, s8^2]] is PSD by construction.
 */
SsmModel to_model(const RawParams &raw);

/// Inverse of to_model where representable; results are clamped to the box.
RawParams to_raw(const SsmModel &model);

struct SsmParams
{
    RawParams raw{};

    SsmModel model() const { return to_model(raw); }
};

struct FilterState
{
    Vec2 x_hat = Vec2::Zero();
    Mat2 p = Mat2::Zero();
};

/// (last - min) / (max - min) over the trailing `window` closes; 0.5 on a flat range.
double compute_k(std::span<const double> closes, std::size_t window = kRangeWindow);

/// k_t for every prefix closes[0..t].
std::vector<double> compute_k_series(std::span<const double> closes, std::size_t window = kRangeWindow);

Vec2 drive_term(const SsmModel &model, double k);

struct Prediction
{
    Vec2 x_pred;
    Mat2 p_pred;
    double forecast = 0.0;
    double innovation_variance = 0.0;
};

/// Time update with drive k_t; throws NumericalDegeneracy when h P h^T + R <= 0.
Prediction kalman_predict(const FilterState &state, const SsmModel &model, double k);

/// Measurement update of a prediction with observation z.
FilterState kalman_update(const Prediction &prediction, double z, const SsmModel &model);

struct KalmanStep
{
    FilterState next;
    double forecast = 0.0;
    double innovation_variance = 0.0;
};

KalmanStep kalman_step(const FilterState &state, double z, const SsmModel &model, double k);

/// Observation normalization against an anchor price.
struct ObsScale
{
    double anchor = 1.0;
    double unit = 0.01;

    static ObsScale from_first(double first_close) { return ObsScale{first_close, first_close / 100.0}; }
    double normalize(double price) const { return (price - anchor) / unit; }
    double denormalize(double z) const { return anchor + unit * z; }
};

/// Initial mean with h x0 = z: every latent gets z / (p4 + p5); zero row splits z equally.
Vec2 initial_mean(const SsmModel &model, double z);

struct FilterRun
{
    std::vector<double> forecasts;            // forecast of observation t+1 given 0..t
    std::vector<double> innovation_variances; // matching variances
    std::vector<FilterState> filtered;        // state after observing t
};

/// Filters already-normalized observations with the given drive values k_t.
FilterRun run_filter(std::span<const double> z, std::span<const double> k, const SsmModel &model, const Vec2 &m0);

/// One-step-ahead price forecasts; forecasts[t] targets closes[t + 1].
std::vector<double> forecast_series(std::span<const double> closes, const SsmModel &model);

/// Gaussian log-likelihood of normalized observations.
double log_likelihood(std::span<const double> z, std::span<const double> k, const SsmModel &model, const Vec2 &m0);

/// Limit of the one-step innovation variance under the Riccati recursion.
double steady_state_innovation_variance(const SsmModel &model);

struct Simulation
{
    std::vector<double> z;
    std::vector<double> k;
};

/// Draws a normalized observation path; the drive uses k_t of the simulated path itself.
Simulation simulate(const SsmModel &model, const Vec2 &m0, std::size_t length, std::uint64_t seed);

struct EmOptions
{
    std::size_t max_iterations = 100;
    double relative_tolerance = 1e-8;
    double min_observation_variance = 1e-12;
};

struct EmResult
{
    SsmModel model;
    Vec2 m0 = Vec2::Zero();
    std::vector<double> log_likelihood; // entry 0 is the starting model
    std::size_t iterations = 0;
};

/**
 * Expectation-maximization on normalized observations. Phi (upper triangular),
 * h, Q, R, the initial mean and a diagonal P0 are re-estimated; the drive
 * coefficients are held fixed. Phi is maximized given the previous Q, then Q
 * given the new Phi, so every iteration is a conditional maximization and the
 * likelihood cannot decrease.
 */
EmResult em_fit_observations(std::span<const double> z, std::span<const double> k, const SsmModel &initial,
                             const Vec2 &m0, const EmOptions &options = {});

/// EM on a close series: normalizes against the first close, computes k_t, seeds m0 from h.
EmResult em_fit(std::span<const double> closes, const SsmModel &initial, const EmOptions &options = {});

/// `p1,...,p15,mapping` header plus one data row.
void write_params_csv(std::ostream &out, const RawParams &raw);
RawParams read_params_csv(std::istream &in);

} // namespace igo::ssm
