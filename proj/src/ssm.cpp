#include "igo/ssm.hpp"

#include "igo/format.hpp"
#include "igo/random.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

namespace igo::ssm
{

namespace
{

double clamp_raw(double v)
{
    if (std::isnan(v))
    {
        throw std::invalid_argument("raw parameter is NaN");
    }
    return std::clamp(v, kRawMin, kRawMax);
}

Mat2 symmetrize2(const Mat2 &m)
{
    return 0.5 * (m + m.transpose());
}

/// Symmetrizes and clips negative eigenvalues at zero.
Mat2 clean_covariance(const Mat2 &m)
{
    Mat2 s = symmetrize2(m);
    Eigen::SelfAdjointEigenSolver<Mat2> eig(s);
    if (eig.eigenvalues().minCoeff() >= 0.0)
    {
        return s;
    }
    const Vec2 clipped = eig.eigenvalues().cwiseMax(0.0);
    return symmetrize2(eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose());
}

Mat2 psd_sqrt(const Mat2 &m)
{
    Eigen::SelfAdjointEigenSolver<Mat2> eig(symmetrize2(m));
    const Vec2 root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

Mat2 pseudo_inverse(const Mat2 &m)
{
    return Eigen::CompleteOrthogonalDecomposition<Mat2>(m).pseudoInverse();
}

void check_inputs(std::span<const double> z, std::span<const double> k)
{
    if (z.empty())
    {
        throw std::invalid_argument("empty observation series");
    }
    if (k.size() != z.size())
    {
        throw std::invalid_argument("drive series length differs from observations");
    }
}

/// Full forward pass keeping everything the smoother needs.
struct ForwardPass
{
    std::vector<Vec2> x_pred; // x_{t|t-1}; entry 0 is the prior
    std::vector<Mat2> p_pred;
    std::vector<Vec2> x_filt;
    std::vector<Mat2> p_filt;
    std::vector<double> forecasts;
    std::vector<double> variances;
    double log_likelihood = 0.0;
};

ForwardPass forward(std::span<const double> z, std::span<const double> k, const SsmModel &model, const Vec2 &m0)
{
    check_inputs(z, k);
    const std::size_t n = z.size();
    ForwardPass out;
    out.x_pred.reserve(n);
    out.p_pred.reserve(n);
    out.x_filt.reserve(n);
    out.p_filt.reserve(n);
    out.forecasts.reserve(n);
    out.variances.reserve(n);

    Prediction pred;
    pred.x_pred = m0;
    pred.p_pred = clean_covariance(model.p0);
    pred.forecast = model.obs * m0;
    pred.innovation_variance = (model.obs * pred.p_pred * model.obs.transpose())(0, 0) + model.r;
    if (!(pred.innovation_variance > 0.0))
    {
        throw NumericalDegeneracy("innovation variance is not positive at the first observation");
    }
    for (std::size_t t = 0; t < n; ++t)
    {
        const double e = z[t] - pred.forecast;
        const double s = pred.innovation_variance;
        out.log_likelihood -= 0.5 * (std::log(2.0 * std::numbers::pi * s) + e * e / s);
        out.x_pred.push_back(pred.x_pred);
        out.p_pred.push_back(pred.p_pred);

        const FilterState filt = kalman_update(pred, z[t], model);
        out.x_filt.push_back(filt.x_hat);
        out.p_filt.push_back(filt.p);

        pred = kalman_predict(filt, model, k[t]);
        out.forecasts.push_back(pred.forecast);
        out.variances.push_back(pred.innovation_variance);
    }
    return out;
}

struct Smoothed
{
    std::vector<Vec2> x;     // E[x_t | all]
    std::vector<Mat2> p;     // Cov(x_t | all)
    std::vector<Mat2> cross; // Cov(x_{t+1}, x_t | all), t = 0..n-2
};

Smoothed rts_smoother(const ForwardPass &fp, const SsmModel &model)
{
    const std::size_t n = fp.x_filt.size();
    Smoothed s;
    s.x.resize(n);
    s.p.resize(n);
    s.cross.resize(n > 0 ? n - 1 : 0);
    s.x[n - 1] = fp.x_filt[n - 1];
    s.p[n - 1] = fp.p_filt[n - 1];
    for (std::size_t i = n - 1; i-- > 0;)
    {
        const Mat2 j = fp.p_filt[i] * model.phi.transpose() * pseudo_inverse(fp.p_pred[i + 1]);
        s.x[i] = fp.x_filt[i] + j * (s.x[i + 1] - fp.x_pred[i + 1]);
        s.p[i] = symmetrize2(fp.p_filt[i] + j * (s.p[i + 1] - fp.p_pred[i + 1]) * j.transpose());
        s.cross[i] = s.p[i + 1] * j.transpose();
    }
    return s;
}

} // namespace

SsmModel to_model(const RawParams &raw)
{
    RawParams p{};
    for (int i = 0; i < kNumParams; ++i)
    {
        p[i] = clamp_raw(raw[i]) / 100.0;
    }
    SsmModel m;
    m.phi << 1.1 * p[0], 1.1 * p[1], 0.0, 1.1 * p[2];
    m.obs << 1.1 * p[3], 1.1 * p[4];
    const double s6 = kNoiseScale * p[5];
    const double rho = 2.0 * p[6] - 1.0;
    const double s8 = kNoiseScale * p[7];
    const double s9 = kNoiseScale * p[8];
    m.q << s6 * s6, rho * s6 * s8, rho * s6 * s8, s8 * s8;
    m.r = s9 * s9;
    m.p0 << std::pow(kNoiseScale * p[9], 2), 0.0, 0.0, std::pow(kNoiseScale * p[10], 2);
    m.gain1 = 2.0 * p[11] - 1.0;
    m.offset1 = p[12] - 0.5;
    m.gain2 = 2.0 * p[13] - 1.0;
    m.offset2 = p[14] - 0.5;
    return m;
}

RawParams to_raw(const SsmModel &m)
{
    const double s6 = std::sqrt(std::max(m.q(0, 0), 0.0));
    const double s8 = std::sqrt(std::max(m.q(1, 1), 0.0));
    const double rho = (s6 > 0.0 && s8 > 0.0) ? std::clamp(m.q(0, 1) / (s6 * s8), -1.0, 1.0) : 0.0;
    RawParams raw{m.phi(0, 0) / 1.1,
                  m.phi(0, 1) / 1.1,
                  m.phi(1, 1) / 1.1,
                  m.obs(0) / 1.1,
                  m.obs(1) / 1.1,
                  s6 / kNoiseScale,
                  0.5 * (rho + 1.0),
                  s8 / kNoiseScale,
                  std::sqrt(std::max(m.r, 0.0)) / kNoiseScale,
                  std::sqrt(std::max(m.p0(0, 0), 0.0)) / kNoiseScale,
                  std::sqrt(std::max(m.p0(1, 1), 0.0)) / kNoiseScale,
                  0.5 * (m.gain1 + 1.0),
                  m.offset1 + 0.5,
                  0.5 * (m.gain2 + 1.0),
                  m.offset2 + 0.5};
    for (double &v : raw)
    {
        v = clamp_raw(100.0 * v);
    }
    return raw;
}

double compute_k(std::span<const double> closes, std::size_t window)
{
    if (closes.empty())
    {
        throw std::invalid_argument("compute_k: empty series");
    }
    if (window == 0)
    {
        throw std::invalid_argument("compute_k: window must be positive");
    }
    const std::size_t start = closes.size() > window ? closes.size() - window : 0;
    const auto [lo, hi] = std::minmax_element(closes.begin() + static_cast<std::ptrdiff_t>(start), closes.end());
    const double range = *hi - *lo;
    if (range == 0.0)
    {
        return 0.5;
    }
    return (closes.back() - *lo) / range;
}

std::vector<double> compute_k_series(std::span<const double> closes, std::size_t window)
{
    std::vector<double> out;
    out.reserve(closes.size());
    for (std::size_t t = 0; t < closes.size(); ++t)
    {
        out.push_back(compute_k(closes.first(t + 1), window));
    }
    return out;
}

Vec2 drive_term(const SsmModel &model, double k)
{
    return Vec2(model.gain1 * (0.5 + model.offset1 - k), model.gain2 * (0.5 + model.offset2 - k));
}

Prediction kalman_predict(const FilterState &state, const SsmModel &model, double k)
{
    Prediction out;
    out.x_pred = model.phi * state.x_hat + drive_term(model, k);
    out.p_pred = clean_covariance(model.phi * state.p * model.phi.transpose() + model.q);
    out.forecast = model.obs * out.x_pred;
    out.innovation_variance = (model.obs * out.p_pred * model.obs.transpose())(0, 0) + model.r;
    if (!(out.innovation_variance > 0.0))
    {
        throw NumericalDegeneracy("innovation variance is not positive");
    }
    return out;
}

FilterState kalman_update(const Prediction &prediction, double z, const SsmModel &model)
{
    const Vec2 gain = prediction.p_pred * model.obs.transpose() / prediction.innovation_variance;
    FilterState out;
    out.x_hat = prediction.x_pred + gain * (z - prediction.forecast);
    out.p = clean_covariance(prediction.p_pred - gain * prediction.innovation_variance * gain.transpose());
    return out;
}

KalmanStep kalman_step(const FilterState &state, double z, const SsmModel &model, double k)
{
    const Prediction pred = kalman_predict(state, model, k);
    return KalmanStep{kalman_update(pred, z, model), pred.forecast, pred.innovation_variance};
}

Vec2 initial_mean(const SsmModel &model, double z)
{
    const double total = model.obs(0) + model.obs(1);
    if (std::abs(total) < 1e-12)
    {
        return Vec2(0.5 * z, 0.5 * z);
    }
    return Vec2(z / total, z / total);
}

FilterRun run_filter(std::span<const double> z, std::span<const double> k, const SsmModel &model, const Vec2 &m0)
{
    ForwardPass fp = forward(z, k, model, m0);
    FilterRun out;
    out.forecasts = std::move(fp.forecasts);
    out.innovation_variances = std::move(fp.variances);
    out.filtered.reserve(fp.x_filt.size());
    for (std::size_t t = 0; t < fp.x_filt.size(); ++t)
    {
        out.filtered.push_back(FilterState{fp.x_filt[t], fp.p_filt[t]});
    }
    return out;
}

std::vector<double> forecast_series(std::span<const double> closes, const SsmModel &model)
{
    if (closes.size() < 2)
    {
        throw std::invalid_argument("forecast_series: need at least 2 closes");
    }
    const ObsScale scale = ObsScale::from_first(closes[0]);
    std::vector<double> z(closes.size());
    std::transform(closes.begin(), closes.end(), z.begin(), [&](double c) { return scale.normalize(c); });
    const std::vector<double> k = compute_k_series(closes);
    FilterRun run = run_filter(z, k, model, initial_mean(model, z[0]));
    for (double &f : run.forecasts)
    {
        f = scale.denormalize(f);
    }
    return run.forecasts;
}

double log_likelihood(std::span<const double> z, std::span<const double> k, const SsmModel &model, const Vec2 &m0)
{
    return forward(z, k, model, m0).log_likelihood;
}

double steady_state_innovation_variance(const SsmModel &model)
{
    Mat2 p = clean_covariance(model.p0);
    double last = std::numeric_limits<double>::quiet_NaN();
    for (int i = 0; i < 100000; ++i)
    {
        const Mat2 pred = clean_covariance(model.phi * p * model.phi.transpose() + model.q);
        const double s = (model.obs * pred * model.obs.transpose())(0, 0) + model.r;
        if (!(s > 0.0))
        {
            throw NumericalDegeneracy("steady state: innovation variance is not positive");
        }
        const Vec2 gain = pred * model.obs.transpose() / s;
        p = clean_covariance(pred - gain * s * gain.transpose());
        if (std::abs(s - last) <= 1e-14 * s)
        {
            return s;
        }
        last = s;
    }
    return last;
}

Simulation simulate(const SsmModel &model, const Vec2 &m0, std::size_t length, std::uint64_t seed)
{
    NormalRng rng(stream_seed(seed, 0x55aULL));
    const Mat2 q_root = psd_sqrt(model.q);
    const Mat2 p0_root = psd_sqrt(model.p0);
    const double r_root = std::sqrt(std::max(model.r, 0.0));
    Simulation out;
    out.z.reserve(length);
    out.k.reserve(length);
    Vec2 x = m0 + p0_root * Vec2(rng.normal(), rng.normal());
    for (std::size_t t = 0; t < length; ++t)
    {
        out.z.push_back(model.obs * x + r_root * rng.normal());
        out.k.push_back(compute_k(std::span<const double>(out.z)));
        x = model.phi * x + drive_term(model, out.k.back()) + q_root * Vec2(rng.normal(), rng.normal());
    }
    return out;
}

EmResult em_fit_observations(std::span<const double> z, std::span<const double> k, const SsmModel &initial,
                             const Vec2 &m0, const EmOptions &options)
{
    check_inputs(z, k);
    const std::size_t n = z.size();
    if (n < 10)
    {
        throw std::invalid_argument("em_fit: need at least 10 observations");
    }
    EmResult result;
    result.model = initial;
    result.m0 = m0;

    ForwardPass fp = forward(z, k, result.model, result.m0);
    result.log_likelihood.push_back(fp.log_likelihood);

    for (std::size_t iter = 0; iter < options.max_iterations; ++iter)
    {
        SsmModel &m = result.model;
        const Smoothed sm = rts_smoother(fp, m);

        // Sufficient statistics. Transitions use y_t = x_{t+1} - c_t.
        Mat2 sxx = Mat2::Zero();
        Mat2 syx = Mat2::Zero();
        Mat2 syy = Mat2::Zero();
        for (std::size_t t = 0; t + 1 < n; ++t)
        {
            const Vec2 c = drive_term(m, k[t]);
            const Mat2 exx = sm.p[t] + sm.x[t] * sm.x[t].transpose();
            const Mat2 enx = sm.cross[t] + sm.x[t + 1] * sm.x[t].transpose();
            const Mat2 enn = sm.p[t + 1] + sm.x[t + 1] * sm.x[t + 1].transpose();
            sxx += exx;
            syx += enx - c * sm.x[t].transpose();
            syy += enn - c * sm.x[t + 1].transpose() - sm.x[t + 1] * c.transpose() + c * c.transpose();
        }

        // Phi with the lower-left entry pinned at zero, weighted by the current Q^{-1}.
        const double ridge = 1e-12 * std::max(1.0, m.q.trace());
        const Mat2 w = pseudo_inverse(m.q + ridge * Mat2::Identity());
        const Mat2 rhs = w * syx;
        const int free_i[3] = {0, 0, 1};
        const int free_j[3] = {0, 1, 1};
        Eigen::Matrix3d a;
        Eigen::Vector3d b;
        for (int row = 0; row < 3; ++row)
        {
            const int i = free_i[row];
            const int j = free_j[row];
            b(row) = rhs(i, j);
            for (int col = 0; col < 3; ++col)
            {
                a(row, col) = w(i, free_i[col]) * sxx(free_j[col], j);
            }
        }
        const Eigen::Vector3d theta = a.completeOrthogonalDecomposition().solve(b);
        m.phi << theta(0), theta(1), 0.0, theta(2);

        const double transitions = static_cast<double>(n - 1);
        m.q = clean_covariance((syy - m.phi * syx.transpose() - syx * m.phi.transpose() +
                                m.phi * sxx * m.phi.transpose()) /
                               transitions);

        // Observation row and noise.
        Mat2 sall = Mat2::Zero();
        Row2 szx = Row2::Zero();
        double szz = 0.0;
        for (std::size_t t = 0; t < n; ++t)
        {
            sall += sm.p[t] + sm.x[t] * sm.x[t].transpose();
            szx += z[t] * sm.x[t].transpose();
            szz += z[t] * z[t];
        }
        m.obs = szx * pseudo_inverse(sall);
        m.r = (szz - 2.0 * (m.obs * szx.transpose())(0, 0) + (m.obs * sall * m.obs.transpose())(0, 0)) /
              static_cast<double>(n);
        if (!(m.r >= options.min_observation_variance))
        {
            throw DegenerateFit("observation noise variance collapsed below " +
                                format_double(options.min_observation_variance));
        }

        result.m0 = sm.x[0];
        m.p0 = Mat2::Zero();
        m.p0(0, 0) = std::max(sm.p[0](0, 0), 0.0);
        m.p0(1, 1) = std::max(sm.p[0](1, 1), 0.0);

        fp = forward(z, k, m, result.m0);
        const double previous = result.log_likelihood.back();
        result.log_likelihood.push_back(fp.log_likelihood);
        result.iterations = iter + 1;
        if (std::abs(fp.log_likelihood - previous) < options.relative_tolerance * std::abs(previous))
        {
            break;
        }
    }
    return result;
}

EmResult em_fit(std::span<const double> closes, const SsmModel &initial, const EmOptions &options)
{
    if (closes.empty())
    {
        throw std::invalid_argument("em_fit: empty series");
    }
    const ObsScale scale = ObsScale::from_first(closes[0]);
    std::vector<double> z(closes.size());
    std::transform(closes.begin(), closes.end(), z.begin(), [&](double c) { return scale.normalize(c); });
    const std::vector<double> k = compute_k_series(closes);
    return em_fit_observations(z, k, initial, initial_mean(initial, z[0]), options);
}

void write_params_csv(std::ostream &out, const RawParams &raw)
{
    for (int i = 0; i < kNumParams; ++i)
    {
        out << 'p' << (i + 1) << ',';
    }
    out << "mapping\n";
    for (int i = 0; i < kNumParams; ++i)
    {
        out << format_double(raw[i]) << ',';
    }
    out << kMappingVersion << '\n';
}

RawParams read_params_csv(std::istream &in)
{
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(in, line))
    {
        if (!line.empty() && line.back() == '\r')
        {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#')
        {
            continue;
        }
        rows.push_back(line);
    }
    if (rows.size() < 2)
    {
        throw std::invalid_argument("params csv: expected a header and one data row");
    }
    std::vector<std::string> fields;
    std::stringstream ss(rows[1]);
    std::string field;
    while (std::getline(ss, field, ','))
    {
        fields.push_back(field);
    }
    if (fields.size() != static_cast<std::size_t>(kNumParams) + 1)
    {
        throw std::invalid_argument("params csv: expected 15 values and a mapping tag");
    }
    if (fields.back() != kMappingVersion)
    {
        throw std::invalid_argument("params csv: unsupported mapping '" + fields.back() + "'");
    }
    RawParams raw{};
    for (int i = 0; i < kNumParams; ++i)
    {
        std::size_t used = 0;
        try
        {
            raw[i] = std::stod(fields[i], &used);
        }
        catch (const std::exception &)
        {
            used = 0;
        }
        if (used != fields[i].size() || fields[i].empty())
        {
            throw std::invalid_argument("params csv: malformed value for p" + std::to_string(i + 1));
        }
    }
    return raw;
}

} // namespace igo::ssm
