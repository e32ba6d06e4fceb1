#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "igo/ngd.hpp"
#include "igo/objectives.hpp"
#include "test_support.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

using namespace igo;
using igo::testing::max_abs;

namespace
{

GaussianSearchDistribution make_dist(const Vector &mu, const Matrix &sigma)
{
    return GaussianSearchDistribution{mu, SpdMatrix(sigma)};
}

Vector vec(std::initializer_list<double> v)
{
    Vector out(static_cast<int>(v.size()));
    int i = 0;
    for (double x : v)
        out(i++) = x;
    return out;
}

const double kSqrt2Pi = std::sqrt(2.0 * std::numbers::pi);

} // namespace

TEST_CASE("sample_population examples")
{
    const auto std_normal = make_dist(Vector::Zero(2), Matrix::Identity(2, 2));
    const Population p = sample_population(std_normal, 5, 3, 0);
    REQUIRE(p.x.size() == 5);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(p.x[i] == p.z[i]);

    const auto shifted = make_dist(vec({1, 1}), Matrix::Identity(2, 2));
    CHECK(max_abs(population_from_normals(shifted, {Vector::Zero(2)}).x[0] - vec({1, 1})) == 0.0);

    Matrix s = Matrix::Zero(2, 2);
    s.diagonal() << 4, 1;
    const auto scaled = make_dist(Vector::Zero(2), s);
    CHECK(max_abs(population_from_normals(scaled, {vec({1, 1})}).x[0] - vec({2, 1})) < 1e-15);
}

TEST_CASE("sample_population is reproducible from seed and iteration")
{
    const auto dist = make_dist(vec({0.5, -1, 2}), Matrix::Identity(3, 3));
    const Population a = sample_population(dist, 7, 42, 3);
    const Population b = sample_population(dist, 7, 42, 3);
    const Population c = sample_population(dist, 7, 42, 4);
    for (std::size_t i = 0; i < 7; ++i)
        CHECK(a.x[i] == b.x[i]);
    CHECK(a.z[0] != c.z[0]);
    CHECK_THROWS_AS(sample_population(dist, 0, 1, 0), linalg::InvalidInput);
}

TEST_CASE("estimate_loss examples")
{
    const SpdMatrix one = SpdMatrix::identity(1);
    const LossEstimates single = estimate_loss(std::vector<double>{3.0}, {Vector::Zero(1)}, one);
    CHECK(single.values[0] == doctest::Approx(kSqrt2Pi).epsilon(1e-14));

    // x = z, f = |x|
    const std::vector<Vector> z{vec({0}), vec({1})};
    const LossEstimates two = estimate_loss(std::vector<double>{0.0, 1.0}, z, one);
    CHECK(two.values[0] == doctest::Approx(kSqrt2Pi / 2).epsilon(1e-14));
    CHECK(two.values[1] == doctest::Approx(kSqrt2Pi / 2 * (1 + std::exp(0.5))).epsilon(1e-14));
    CHECK(two.values[0] == doctest::Approx(1.2533).epsilon(1e-4));
    CHECK(two.values[1] == doctest::Approx(3.3197).epsilon(1e-4));
    CHECK(two.log_values[1] == doctest::Approx(std::log(two.values[1])));

    const LossEstimates tied = estimate_loss(std::vector<double>{2.0, 2.0, 2.0}, {vec({0}), vec({1}), vec({-2})}, one);
    CHECK(tied.values[0] == tied.values[1]);
    CHECK(tied.values[1] == tied.values[2]);
}

TEST_CASE("estimate_loss ranks non-finite values worst and stays finite in log space")
{
    const SpdMatrix one = SpdMatrix::identity(1);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const LossEstimates l =
        estimate_loss(std::vector<double>{nan, 1.0, 5.0}, {vec({0.1}), vec({0.2}), vec({0.3})}, one);
    CHECK(l.values[0] > l.values[2]);
    CHECK(l.values[2] > l.values[1]);

    // |z|^2 / 2 = 800 overflows exp() but not the log-domain sum
    const int d = 20;
    Vector big = Vector::Constant(d, 40.0 / std::sqrt(static_cast<double>(d)));
    const LossEstimates wide = estimate_loss(std::vector<double>{0.0, 1.0}, {Vector::Zero(d), big},
                                             SpdMatrix::identity(d));
    CHECK(std::isfinite(wide.log_values[1]));
    CHECK(wide.log_values[1] == doctest::Approx(0.5 * d * std::log(2 * std::numbers::pi) - std::log(2.0) + 800.0));
}

TEST_CASE("property: loss estimates depend on f only through ranks and are monotone")
{
    NormalRng rng(21);
    for (int trial = 0; trial < 20; ++trial)
    {
        const int d = 1 + trial % 5;
        const int n = 5 + trial;
        std::vector<Vector> z;
        std::vector<double> f, g;
        for (int i = 0; i < n; ++i)
        {
            z.push_back(igo::testing::random_matrix(rng, d, 1));
            // coarse values to force ties
            f.push_back(std::round(3 * rng.normal()));
            g.push_back(std::exp(f.back()) + f.back() * f.back() * f.back());
        }
        const SpdMatrix sigma(igo::testing::random_spd(rng, d));
        const LossEstimates lf = estimate_loss(f, z, sigma);
        const LossEstimates lg = estimate_loss(g, z, sigma);
        for (int i = 0; i < n; ++i)
        {
            CHECK(lf.values[i] == lg.values[i]);
            for (int j = 0; j < n; ++j)
                if (f[i] <= f[j])
                    CHECK(lf.values[i] <= lf.values[j]);
        }
    }
}

TEST_CASE("mc_natural_gradient examples")
{
    const auto dist = make_dist(Vector::Zero(1), Matrix::Identity(1, 1));
    LossEstimates zero{{0.0, 0.0}, {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()}};
    const NaturalGradient g0 = mc_natural_gradient({vec({0.3}), vec({-1})}, zero, dist);
    CHECK(g0.delta_mu(0) == 0.0);
    CHECK(g0.delta_sigma(0, 0) == 0.0);

    const auto d2 = make_dist(vec({1, 2}), Matrix::Identity(2, 2) * 3.0);
    LossEstimates unit{{1.0}, {0.0}};
    const NaturalGradient g1 = mc_natural_gradient({vec({1, 2})}, unit, d2);
    CHECK(max_abs(g1.delta_mu) == 0.0);
    CHECK(max_abs(g1.delta_sigma + d2.covariance.matrix()) == 0.0);

    const std::vector<Vector> xs{vec({0}), vec({1})};
    const LossEstimates l = estimate_loss(std::vector<double>{0.0, 1.0}, xs, SpdMatrix::identity(1));
    const NaturalGradient g = mc_natural_gradient(xs, l, dist);
    const double w0 = l.values[0] * l.values[0];
    const double w1 = l.values[1] * l.values[1];
    CHECK(g.delta_mu(0) == doctest::Approx(w1 / 2).epsilon(1e-13));
    CHECK(g.delta_sigma(0, 0) == doctest::Approx(-w0 / 2).epsilon(1e-13));
    CHECK(g.delta_mu(0) == doctest::Approx(3.3197 * 3.3197 / 2).epsilon(1e-4));
}

TEST_CASE("mc_natural_gradient output is exactly symmetric")
{
    NormalRng rng(4);
    const int d = 4;
    const auto dist = make_dist(Vector::Zero(d), igo::testing::random_spd(rng, d));
    const Population pop = sample_population(dist, 30, 9, 0);
    std::vector<double> f;
    for (const Vector &x : pop.x)
        f.push_back(x.squaredNorm());
    const NaturalGradient g = mc_natural_gradient(pop.x, estimate_loss(f, pop.z, dist.covariance), dist);
    CHECK(g.delta_sigma == g.delta_sigma.transpose());
}

TEST_CASE("positivity_guard examples")
{
    const SpdMatrix id = SpdMatrix::identity(2);
    Matrix d = Matrix::Zero(2, 2);
    d.diagonal() << 2, -1;
    CHECK(positivity_guard(id, 0.6, d, 0.5) == doctest::Approx(0.25));
    CHECK(positivity_guard(id, 0.6, -Matrix::Identity(2, 2), 0.5) == 0.6);
    CHECK(positivity_guard(id, 0.4, Matrix::Identity(2, 2), 0.5) == 0.4);
}

TEST_CASE("learning rate schedule")
{
    LearningRateSchedule s{0.5, 0.25, RateMode::adaptive};
    Matrix delta = Matrix::Zero(2, 2);
    delta.diagonal() << 4, 1;
    const StepSizes r = s.step_sizes(SpdMatrix::identity(2), delta);
    CHECK(r.lambda1 == doctest::Approx(4.0));
    CHECK(r.nu_mu * r.lambda1 == doctest::Approx(0.5));
    CHECK(r.nu_sigma * r.lambda1 == doctest::Approx(0.25));

    const StepSizes zero = s.step_sizes(SpdMatrix::identity(2), Matrix::Zero(2, 2));
    CHECK(zero.nu_mu == 0.0);
    CHECK(zero.nu_sigma == 0.0);

    LearningRateSchedule fixed{0.3, 0.2, RateMode::fixed};
    const StepSizes f = fixed.step_sizes(SpdMatrix::identity(2), delta);
    CHECK(f.nu_mu == 0.3);
    CHECK(f.nu_sigma == 0.2);

    CHECK_THROWS_AS((LearningRateSchedule{0.0, 0.5}.validate()), ConfigError);
    CHECK_THROWS_AS((LearningRateSchedule{1.5, 0.5}.validate()), ConfigError);
    CHECK_THROWS_WITH_AS((LearningRateSchedule{1.0, 0.9}.validate()), doctest::Contains("alpha_sigma"), ConfigError);
}

TEST_CASE("cf_ngd_step examples")
{
    const auto dist = make_dist(vec({1}), Matrix::Identity(1, 1));
    const NaturalGradient none{Vector::Zero(1), Matrix::Zero(1, 1)};
    const auto same = cf_ngd_step(dist, none, LearningRateSchedule{});
    CHECK(same.mean(0) == 1.0);
    CHECK(same.covariance(0, 0) == 1.0);

    const NaturalGradient exact =
        objectives::exact_natural_gradient(SpdMatrix::identity(1), dist); // kappa = 8
    CHECK(exact.delta_mu(0) == doctest::Approx(8.0));
    const auto half = cf_ngd_step(dist, exact, LearningRateSchedule{0.5, 0.5});
    CHECK(half.mean(0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(half.covariance(0, 0) == doctest::Approx(0.5).epsilon(1e-14));

    const auto full = cf_ngd_step(dist, exact, LearningRateSchedule{1.0, 0.5});
    CHECK(full.mean(0) == 0.0);
}

TEST_CASE("step from the scalar Monte-Carlo gradient with fixed rates")
{
    const auto dist = make_dist(Vector::Zero(1), Matrix::Identity(1, 1));
    const std::vector<Vector> xs{vec({0}), vec({1})};
    const LossEstimates l = estimate_loss(std::vector<double>{0.0, 1.0}, xs, SpdMatrix::identity(1));
    const NaturalGradient g = mc_natural_gradient(xs, l, dist);
    const auto next = cf_ngd_step(dist, g, LearningRateSchedule{0.1, 0.1, RateMode::fixed});
    CHECK(next.mean(0) == doctest::Approx(-0.1 * g.delta_mu(0)));
    CHECK(next.covariance(0, 0) == doctest::Approx(1 - 0.1 * g.delta_sigma(0, 0)));
}

TEST_CASE("apply_update rejects a covariance that is no longer positive definite")
{
    const auto dist = make_dist(Vector::Zero(2), Matrix::Identity(2, 2));
    Matrix d = Matrix::Zero(2, 2);
    d.diagonal() << 3, 1;
    const NaturalGradient g{Vector::Zero(2), d};
    CHECK_THROWS_AS(apply_update(dist, g, 0.0, 0.5), StepRejected);
    CHECK_THROWS_AS(cf_ngd_step(dist, g, LearningRateSchedule{1.0, 0.5, RateMode::fixed}, GuardOptions{false, 0.5}),
                    StepRejected);
    const auto guarded = cf_ngd_step(dist, g, LearningRateSchedule{1.0, 0.5, RateMode::fixed});
    CHECK(guarded.covariance.min_eigenvalue() > 0.0);
}

TEST_CASE("default population size")
{
    CHECK(default_population_size(1) == 4);
    CHECK(default_population_size(2) == 12);
    CHECK(default_population_size(18) == 36);
}

TEST_CASE("mc_ngd_step flags non-finite objective values")
{
    OptimizerState s = make_state(make_dist(Vector::Zero(2), Matrix::Identity(2, 2)), 5, 10);
    StepDiagnostics diag;
    const Objective f = [](const Vector &x) {
        return x(0) > 0 ? std::numeric_limits<double>::quiet_NaN() : x.squaredNorm();
    };
    const OptimizerState next = mc_ngd_step(s, f, &diag);
    CHECK(diag.non_finite > 0);
    CHECK(std::isfinite(diag.best_f));
    CHECK(next.iteration == 1);
    CHECK(next.dist.covariance.min_eigenvalue() > 0.0);
}

TEST_CASE("mc_ngd_step is deterministic and thread-count independent")
{
    const auto bench = objectives::benchmark_suite(3);
    const OptimizerState s0 = make_state(make_dist(Vector::Ones(3), Matrix::Identity(3, 3)), 17);
    OptimizerState a = s0, b = s0;
    for (int t = 0; t < 20; ++t)
    {
        a = mc_ngd_step(a, bench[1].function);
        b = mc_ngd_step(b, bench[1].function, nullptr, 3);
    }
    CHECK(a.dist.mean == b.dist.mean);
    CHECK(a.dist.covariance.matrix() == b.dist.covariance.matrix());
}

TEST_CASE("property: positivity holds after every accepted Monte-Carlo step")
{
    for (const auto &b : objectives::benchmark_suite(4))
    {
        OptimizerState s = make_state(make_dist(Vector::Ones(4), Matrix::Identity(4, 4)), 3, 0,
                                      LearningRateSchedule{1.0, 0.5});
        for (int t = 0; t < 100; ++t)
        {
            s = mc_ngd_step(s, b.function);
            CHECK(s.dist.covariance.min_eigenvalue() > 0.0);
            CHECK(s.dist.covariance.matrix() == s.dist.covariance.matrix().transpose());
        }
    }
}

TEST_CASE("run_cf_ngd: zero iterations and quadratic convergence")
{
    const SpdMatrix h = SpdMatrix::identity(2);
    const objectives::QuadraticObjective q(h);
    const AnalyticGradient grad = [&](const GaussianSearchDistribution &d) {
        return objectives::exact_natural_gradient(h, d);
    };
    const auto start = make_dist(vec({1.0, -2.0}), Matrix::Identity(2, 2));

    RunOptions none;
    none.max_iterations = 0;
    const Trace t0 = run_cf_ngd(none, start, LearningRateSchedule{0.5, 0.5}, q, grad);
    CHECK(t0.rows.size() == 1);

    RunOptions fifty;
    fifty.max_iterations = 50;
    fifty.reference_hessian = h;
    const LearningRateSchedule sched{0.5, 0.5};
    const Trace t = run_cf_ngd(fifty, start, sched, q, grad);
    REQUIRE(t.rows.size() == 51);
    CHECK(t.rows[50].norm_mu < t.rows[0].norm_mu * std::pow(1 - sched.nu_mu_min(), 45));
    for (std::size_t k = 1; k < t.rows.size(); ++k)
        CHECK(t.rows[k].rates.nu_mu * t.rows[k].rates.lambda1 == doctest::Approx(0.5));

    const Trace again = run_cf_ngd(fifty, start, sched, q, grad);
    for (std::size_t k = 0; k < t.rows.size(); ++k)
        CHECK(again.rows[k].mean == t.rows[k].mean);
}

TEST_CASE("run_mc_ngd stops on the covariance tolerance and is reproducible")
{
    const auto bench = objectives::benchmark_suite(2);
    const OptimizerState s = make_state(make_dist(Vector::Ones(2), Matrix::Identity(2, 2)), 8);
    RunOptions opts;
    opts.max_iterations = 200;
    opts.sigma_tolerance = 1e-3;
    const Trace a = run_mc_ngd(opts, s, bench[0].function);
    const Trace b = run_mc_ngd(opts, s, bench[0].function);
    REQUIRE(a.rows.size() == b.rows.size());
    CHECK(a.rows.size() < 201);
    CHECK(a.rows[a.rows.size() - 2].frobenius_sigma >= 1e-3);
    CHECK(a.rows.back().frobenius_sigma < 1e-3);
    for (std::size_t k = 0; k < a.rows.size(); ++k)
    {
        CHECK(a.rows[k].mean == b.rows[k].mean);
        CHECK(a.rows[k].sigma == b.rows[k].sigma);
    }
}

TEST_CASE("trace csv layout")
{
    Trace t;
    TraceRow r;
    r.iteration = 0;
    r.mean = vec({1, 2});
    r.best_f = 2.5;
    r.norm_mu = std::sqrt(5.0);
    t.rows.push_back(r);
    std::ostringstream out;
    write_trace_csv(out, t, {TraceColumn{"extra", {7.0}}});
    const std::string s = out.str();
    CHECK(s.rfind("iteration,best_f,norm_mu,frobenius_sigma,cond_sigma_h,extra,mu_1,mu_2\n", 0) == 0);
}
