#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "igo/ssm.hpp"
#include "ssm_oracle.hpp"

#include <cmath>
#include <sstream>

using namespace igo;
using namespace igo::ssm;

namespace
{

SsmModel pass_through(double q, double r)
{
    SsmModel m;
    m.phi = Mat2::Identity();
    m.obs = Row2(1.0, 0.0);
    m.q = Mat2::Zero();
    m.q(0, 0) = q;
    m.r = r;
    m.p0 = Mat2::Identity();
    return m;
}

SsmModel truth_model()
{
    SsmModel m;
    m.phi << 0.9, 0.3, 0.0, 0.7;
    m.obs = Row2(1.0, 0.6);
    m.q << 0.4, 0.1, 0.1, 0.3;
    m.r = 0.5;
    m.p0 = Mat2::Identity();
    m.gain1 = 0.4;
    m.offset1 = 0.1;
    m.gain2 = -0.3;
    m.offset2 = -0.2;
    return m;
}

double min_eig(const Mat2 &m)
{
    return Eigen::SelfAdjointEigenSolver<Mat2>(m).eigenvalues().minCoeff();
}

} // namespace

TEST_CASE("compute_k examples")
{
    const std::vector<double> mid{10, 20, 15};
    CHECK(compute_k(mid) == doctest::Approx(0.5));
    const std::vector<double> top{10, 12, 20};
    CHECK(compute_k(top) == 1.0);
    const std::vector<double> flat{7, 7, 7};
    CHECK(compute_k(flat) == 0.5);
    CHECK(compute_k(std::vector<double>{3.0}) == 0.5);
    CHECK_THROWS_AS(compute_k(std::vector<double>{}), std::invalid_argument);
    CHECK_THROWS_AS(compute_k(mid, 0), std::invalid_argument);

    // only the trailing window counts
    std::vector<double> long_series(30, 50.0);
    long_series[0] = 0.0; // outside a 20-wide window
    long_series[15] = 60.0;
    long_series.back() = 55.0;
    CHECK(compute_k(long_series) == doctest::Approx(0.5));
    const auto ks = compute_k_series(long_series);
    CHECK(ks.size() == 30);
    CHECK(ks.back() == compute_k(long_series));
}

TEST_CASE("drive_term examples")
{
    SsmModel m;
    CHECK(drive_term(m, 0.5).norm() == 0.0);
    m.gain1 = 1.0;
    m.offset1 = 0.2;
    m.gain2 = 0.7;
    CHECK(drive_term(m, 0.3)(0) == doctest::Approx(0.4));
    CHECK(drive_term(m, 0.5)(1) == doctest::Approx(0.0));
    m.gain1 = m.gain2 = 0.0;
    CHECK(drive_term(m, 0.1).norm() == 0.0);
}

TEST_CASE("mapping v1")
{
    RawParams raw{};
    raw.fill(50.0);
    const SsmModel m = to_model(raw);
    CHECK(m.phi(0, 0) == doctest::Approx(0.55));
    CHECK(m.phi(1, 0) == 0.0);
    CHECK(m.obs(1) == doctest::Approx(0.55));
    CHECK(m.q(0, 0) == doctest::Approx(6.25));
    CHECK(m.q(0, 1) == doctest::Approx(0.0)); // correlation 0 at the midpoint
    CHECK(m.r == doctest::Approx(6.25));
    CHECK(m.p0(1, 1) == doctest::Approx(6.25));
    CHECK(m.gain1 == doctest::Approx(0.0));
    CHECK(m.offset2 == doctest::Approx(0.0));

    raw[0] = 150.0;
    raw[1] = -3.0;
    const SsmModel clamped = to_model(raw);
    CHECK(clamped.phi(0, 0) == doctest::Approx(1.1));
    CHECK(clamped.phi(0, 1) == 0.0);
    raw[2] = std::nan("");
    CHECK_THROWS_AS(to_model(raw), std::invalid_argument);
}

TEST_CASE("property: to_raw inverts to_model inside the box and Q is PSD")
{
    NormalRng rng(31);
    for (int trial = 0; trial < 50; ++trial)
    {
        RawParams raw{};
        for (double &v : raw)
            v = 1.0 + 98.0 * rng.uniform();
        const SsmModel m = to_model(raw);
        const RawParams back = to_raw(m);
        for (int i = 0; i < kNumParams; ++i)
            CHECK(back[i] == doctest::Approx(raw[i]).epsilon(1e-10));
        CHECK(min_eig(m.q) >= -1e-12);
        CHECK(m.r >= 0.0);
    }
}

TEST_CASE("noiseless fixed point")
{
    SsmModel m = pass_through(0.0, 1e-12);
    FilterState s;
    s.x_hat = Vec2(5.0, 0.0);
    s.p = Mat2::Zero();
    const KalmanStep step = kalman_step(s, 5.0, m, 0.5);
    CHECK(step.forecast == doctest::Approx(5.0));
    CHECK(step.next.x_hat(0) == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(step.next.x_hat(1) == 0.0);
}

TEST_CASE("huge observation noise leaves the prior untouched")
{
    SsmModel m = pass_through(1.0, 1e14);
    FilterState s;
    s.x_hat = Vec2(2.0, 1.0);
    s.p = Mat2::Identity();
    const Prediction pred = kalman_predict(s, m, 0.5);
    const FilterState post = kalman_update(pred, 1000.0, m);
    CHECK(std::abs(post.x_hat(0) - pred.x_pred(0)) < 1e-10);
    CHECK(std::abs(post.p(0, 0) - pred.p_pred(0, 0)) < 1e-12);
}

TEST_CASE("zero innovation variance is reported")
{
    SsmModel m = pass_through(0.0, 0.0);
    FilterState s;
    CHECK_THROWS_AS(kalman_predict(s, m, 0.5), NumericalDegeneracy);
}

TEST_CASE("filter matches joint-Gaussian conditioning, scalar-like T=3")
{
    SsmModel m = truth_model();
    m.phi(0, 1) = 0.0;
    m.obs(1) = 0.0;
    const std::vector<double> z{0.3, -0.4, 1.1};
    const std::vector<double> k{0.5, 0.2, 0.9};
    const Vec2 m0(0.1, -0.2);
    const FilterRun run = run_filter(z, k, m, m0);
    const auto oracle = igo::testing::joint_gaussian_oracle(z, k, m, m0);
    for (std::size_t t = 0; t < z.size(); ++t)
    {
        CHECK((run.filtered[t].x_hat - oracle.mean[t]).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((run.filtered[t].p - oracle.cov[t]).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(std::abs(run.forecasts[t] - oracle.forecast[t]) < 1e-12);
        CHECK(std::abs(run.innovation_variances[t] - oracle.forecast_var[t]) < 1e-12);
    }
}

TEST_CASE("single-latent pass-through tracks the closes with a lag (oracle, T=5)")
{
    const SsmModel m = pass_through(0.5, 0.5);
    const std::vector<double> closes{100, 101, 103, 102, 104};
    const std::vector<double> f = forecast_series(closes, m);
    std::vector<double> z;
    for (double c : closes)
        z.push_back(ObsScale::from_first(100).normalize(c));
    const auto oracle = igo::testing::joint_gaussian_oracle(z, compute_k_series(closes), m, initial_mean(m, z[0]));
    for (std::size_t t = 0; t < closes.size(); ++t)
    {
        CHECK(f[t] == doctest::Approx(ObsScale::from_first(100).denormalize(oracle.forecast[t])).epsilon(1e-12));
        if (t >= 1)
        {
            // exponential smoothing: the new forecast moves part of the way towards the new close
            CHECK((f[t] - f[t - 1]) * (f[t] - closes[t]) <= 1e-9);
            CHECK(std::abs(f[t] - closes[t]) > 1e-6);
        }
    }
}

TEST_CASE("property: filtered covariances stay symmetric PSD")
{
    NormalRng rng(5);
    for (int trial = 0; trial < 20; ++trial)
    {
        const SsmModel m = to_model(igo::testing::random_raw(rng));
        const Simulation sim = simulate(m, Vec2::Zero(), 60, 100 + trial);
        const FilterRun run = run_filter(sim.z, sim.k, m, Vec2::Zero());
        for (const FilterState &s : run.filtered)
        {
            CHECK(s.p == s.p.transpose());
            CHECK(min_eig(s.p) >= -1e-12);
        }
    }
}

TEST_CASE("forecast_series examples")
{
    SsmModel zero = pass_through(0.0, 1e-12);
    zero.p0 = Mat2::Zero();
    const std::vector<double> flat(12, 2500.0);
    for (double f : forecast_series(flat, zero))
        CHECK(f == 2500.0);

    const SsmModel m = truth_model();
    const std::vector<double> closes{100, 100.5, 99.8, 101.2, 102.0, 101.1, 100.4};
    CHECK(forecast_series(closes, m) == forecast_series(closes, m));
    CHECK(forecast_series(closes, m).size() == closes.size());
    CHECK_THROWS_AS(forecast_series(std::vector<double>{1.0}, m), std::invalid_argument);
}

TEST_CASE("property: forecast_series is causal")
{
    NormalRng rng(8);
    std::vector<double> closes{2500.0};
    for (int i = 1; i < 80; ++i)
        closes.push_back(closes.back() * std::exp(0.01 * rng.normal()));
    const SsmModel m = to_model(igo::testing::random_raw(rng));
    const std::vector<double> full = forecast_series(closes, m);
    for (std::size_t t : {1u, 5u, 19u, 20u, 41u, 78u})
    {
        const std::vector<double> part = forecast_series(std::span<const double>(closes).first(t + 1), m);
        for (std::size_t s = 0; s <= t; ++s)
            CHECK(part[s] == full[s]);
    }
}

TEST_CASE("steady-state innovation variance matches the filter's long-run value")
{
    const SsmModel m = truth_model();
    const Simulation sim = simulate(m, Vec2::Zero(), 400, 3);
    const FilterRun run = run_filter(sim.z, sim.k, m, Vec2::Zero());
    CHECK(run.innovation_variances.back() == doctest::Approx(steady_state_innovation_variance(m)).epsilon(1e-10));
}

TEST_CASE("EM: zero iterations return the start unchanged")
{
    const SsmModel m = truth_model();
    const Simulation sim = simulate(m, Vec2::Zero(), 200, 1);
    EmOptions opts;
    opts.max_iterations = 0;
    const EmResult r = em_fit_observations(sim.z, sim.k, m, Vec2::Zero(), opts);
    CHECK(r.iterations == 0);
    CHECK(r.log_likelihood.size() == 1);
    CHECK(r.model.phi == m.phi);
    CHECK(r.model.q == m.q);
    CHECK(r.model.r == m.r);
    CHECK(r.m0 == Vec2::Zero());
}

TEST_CASE("EM: one iteration from the truth does not decrease the likelihood")
{
    const SsmModel m = truth_model();
    const Simulation sim = simulate(m, Vec2::Zero(), 500, 2);
    EmOptions opts;
    opts.max_iterations = 1;
    const EmResult r = em_fit_observations(sim.z, sim.k, m, Vec2::Zero(), opts);
    REQUIRE(r.log_likelihood.size() == 2);
    CHECK(r.log_likelihood[1] >= r.log_likelihood[0] - 1e-9);
    CHECK(r.log_likelihood[0] == doctest::Approx(log_likelihood(sim.z, sim.k, m, Vec2::Zero())));
}

TEST_CASE("EM: monotone likelihood and recovered innovation variance")
{
    const SsmModel truth = truth_model();
    const Simulation sim = simulate(truth, Vec2::Zero(), 2000, 11);
    SsmModel start = truth;
    start.phi << 0.6, 0.0, 0.0, 0.5;
    start.q = Mat2::Identity();
    start.r = 2.0;
    start.obs = Row2(0.8, 0.8);
    EmOptions opts;
    opts.max_iterations = 50;
    opts.relative_tolerance = 0.0;
    const EmResult r = em_fit_observations(sim.z, sim.k, start, Vec2::Zero(), opts);
    for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
        CHECK(r.log_likelihood[i] >= r.log_likelihood[i - 1] - 1e-9);
    CHECK(r.log_likelihood.back() > r.log_likelihood.front());
    CHECK(r.model.phi(1, 0) == 0.0);
    CHECK(r.model.gain1 == truth.gain1);
    CHECK(r.model.offset2 == truth.offset2);
    const double fitted = steady_state_innovation_variance(r.model);
    const double expected = steady_state_innovation_variance(truth);
    CHECK(std::abs(fitted - expected) <= 0.2 * expected);
}

TEST_CASE("EM errors")
{
    const SsmModel m = truth_model();
    const Simulation sim = simulate(m, Vec2::Zero(), 100, 4);
    CHECK_THROWS_AS(em_fit_observations(std::span<const double>(sim.z).first(9), std::span<const double>(sim.k).first(9),
                                        m, Vec2::Zero()),
                    std::invalid_argument);
    EmOptions opts;
    opts.min_observation_variance = 1e6;
    CHECK_THROWS_AS(em_fit_observations(sim.z, sim.k, m, Vec2::Zero(), opts), DegenerateFit);
}

TEST_CASE("em_fit on closes normalizes against the first close")
{
    const SsmModel m = truth_model();
    const Simulation sim = simulate(m, Vec2::Zero(), 300, 6);
    std::vector<double> closes;
    for (double z : sim.z)
        closes.push_back(ObsScale::from_first(2000.0).denormalize(z - sim.z[0]));
    EmOptions opts;
    opts.max_iterations = 5;
    const EmResult r = em_fit(closes, m, opts);
    CHECK(r.log_likelihood.size() >= 2);
    CHECK(r.log_likelihood.back() >= r.log_likelihood.front());
}

TEST_CASE("params csv round trip")
{
    RawParams raw{};
    for (int i = 0; i < kNumParams; ++i)
        raw[i] = 100.0 / 3.0 * (i % 4);
    std::ostringstream out;
    write_params_csv(out, raw);
    CHECK(out.str().rfind("p1,p2,p3,p4,p5,p6,p7,p8,p9,p10,p11,p12,p13,p14,p15,mapping\n", 0) == 0);
    std::istringstream in("# seed=1\n" + out.str());
    CHECK(read_params_csv(in) == raw);

    std::string bad = out.str();
    bad.replace(bad.rfind("v1"), 2, "v0");
    std::istringstream in_bad(bad);
    CHECK_THROWS_AS(read_params_csv(in_bad), std::invalid_argument);
}
