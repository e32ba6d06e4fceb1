#include "igo/commands.hpp"

#include "igo/format.hpp"
#include "igo/objectives.hpp"
#include "igo/random.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <type_traits>

namespace igo::app
{

using nlohmann::json;

namespace
{

// ---------------------------------------------------------------------------
// JSON plumbing
// ---------------------------------------------------------------------------

class FieldReader
{
public:
    FieldReader(const json &j, std::string prefix) : j_(j), prefix_(std::move(prefix))
    {
        if (!j_.is_object())
        {
            throw ConfigError("config field '" + (prefix_.empty() ? std::string("<root>") : prefix_) +
                              "' must be an object");
        }
    }

    template <typename T>
    void operator()(const char *key, T &out)
    {
        seen_.insert(key);
        if (!j_.contains(key))
        {
            return;
        }
        const json &v = j_.at(key);
        if constexpr (std::is_unsigned_v<T>)
        {
            if (!v.is_number_unsigned())
            {
                throw ConfigError("config field '" + name(key) + "' must be a non-negative integer");
            }
        }
        else if constexpr (std::is_integral_v<T>)
        {
            if (!v.is_number_integer())
            {
                throw ConfigError("config field '" + name(key) + "' must be an integer");
            }
        }
        try
        {
            out = v.get<T>();
        }
        catch (const json::exception &)
        {
            throw ConfigError("config field '" + name(key) + "' has the wrong type");
        }
    }

    /// Nested object handled by `fn(reader)`.
    void object(const char *key, const std::function<void(FieldReader &)> &fn)
    {
        seen_.insert(key);
        const json empty = json::object();
        FieldReader nested(j_.contains(key) ? j_.at(key) : empty, name(key) + ".");
        fn(nested);
        nested.finish();
    }

    void finish() const
    {
        for (const auto &item : j_.items())
        {
            if (!seen_.count(item.key()))
            {
                throw ConfigError("unknown config field '" + name(item.key().c_str()) + "'");
            }
        }
    }

    std::string name(const char *key) const { return prefix_ + key; }

private:
    const json &j_;
    std::string prefix_;
    std::set<std::string> seen_;
};

void read_grid(FieldReader &r, ActionGrid &g)
{
    r("threshold_ticks", g.threshold_ticks);
    r("stop_loss_ticks", g.stop_loss_ticks);
    r("profit_target_ticks", g.profit_target_ticks);
}

json grid_json(const ActionGrid &g)
{
    return json{{"threshold_ticks", g.threshold_ticks},
                {"stop_loss_ticks", g.stop_loss_ticks},
                {"profit_target_ticks", g.profit_target_ticks}};
}

void require(bool ok, const std::string &field, const std::string &what)
{
    if (!ok)
    {
        throw ConfigError("config field '" + field + "' " + what);
    }
}

void validate_grid(const ActionGrid &g, const std::string &prefix)
{
    require(!g.threshold_ticks.empty(), prefix + "threshold_ticks", "must not be empty");
    require(!g.stop_loss_ticks.empty(), prefix + "stop_loss_ticks", "must not be empty");
    require(!g.profit_target_ticks.empty(), prefix + "profit_target_ticks", "must not be empty");
    for (double v : g.threshold_ticks)
    {
        require(std::isfinite(v) && v >= 0.0, prefix + "threshold_ticks", "must be finite and non-negative");
    }
    for (int v : g.stop_loss_ticks)
    {
        require(v >= 1, prefix + "stop_loss_ticks", "must be positive");
    }
    for (int v : g.profit_target_ticks)
    {
        require(v >= 1, prefix + "profit_target_ticks", "must be positive");
    }
}

LearningRateSchedule make_schedule(double alpha_mu, double alpha_sigma, const std::string &mode,
                                   const std::string &prefix)
{
    LearningRateSchedule s;
    s.alpha_mu = alpha_mu;
    s.alpha_sigma = alpha_sigma;
    s.mode = mode == "fixed" ? RateMode::fixed : RateMode::adaptive;
    try
    {
        s.validate();
    }
    catch (const ConfigError &e)
    {
        throw ConfigError(prefix + e.what());
    }
    return s;
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------------------
// Artifact writing
// ---------------------------------------------------------------------------

class OutputDir
{
public:
    explicit OutputDir(const RunConfig &config) : root_(config.output_dir), provenance_(provenance_line(config))
    {
        std::error_code ec;
        std::filesystem::create_directories(root_, ec);
        if (ec)
        {
            throw data::DataError("cannot create output directory " + root_.string() + ": " + ec.message());
        }
        std::ofstream cfg(root_ / "config.json", std::ios::binary);
        cfg << config_to_json(config).dump(2) << '\n';
        if (!cfg)
        {
            throw data::DataError("cannot write " + (root_ / "config.json").string());
        }
    }

    void write(const std::string &name, const std::function<void(std::ostream &)> &body) const
    {
        std::ostringstream buffer;
        buffer << provenance_ << '\n';
        body(buffer);
        std::ofstream out(root_ / name, std::ios::binary);
        out << buffer.str();
        if (!out)
        {
            throw data::DataError("cannot write " + (root_ / name).string());
        }
    }

    std::string path(const std::string &name) const { return (root_ / name).string(); }
    const std::string &provenance() const { return provenance_; }

private:
    std::filesystem::path root_;
    std::string provenance_;
};

void write_action_csv(std::ostream &out, const strategy::ActionParams &a)
{
    out << "threshold_ticks,stop_loss_ticks,profit_target_ticks\n"
        << format_double(a.threshold_ticks) << ',' << a.stop_loss_ticks << ',' << a.profit_target_ticks << '\n';
}

strategy::ActionParams read_action_csv(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw data::DataError("cannot open " + path);
    }
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(in, line))
    {
        if (!line.empty() && line.back() == '\r')
        {
            line.pop_back();
        }
        if (!line.empty() && line[0] != '#')
        {
            rows.push_back(line);
        }
    }
    if (rows.size() < 2 || rows[0] != "threshold_ticks,stop_loss_ticks,profit_target_ticks")
    {
        throw data::DataError(path + ": expected an action header and one row");
    }
    strategy::ActionParams a;
    char comma1 = 0;
    char comma2 = 0;
    std::istringstream ss(rows[1]);
    if (!(ss >> a.threshold_ticks >> comma1 >> a.stop_loss_ticks >> comma2 >> a.profit_target_ticks) ||
        comma1 != ',' || comma2 != ',')
    {
        throw data::DataError(path + ": malformed action row");
    }
    a.validate();
    return a;
}

ssm::RawParams load_params(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw data::DataError("cannot open " + path);
    }
    try
    {
        return ssm::read_params_csv(in);
    }
    catch (const std::invalid_argument &e)
    {
        throw data::DataError(path + ": " + e.what());
    }
}

std::vector<TraceColumn> rate_columns(const Trace &trace, std::size_t first_row)
{
    TraceColumn nu_mu{"nu_mu", {}};
    TraceColumn nu_sigma{"nu_sigma", {}};
    TraceColumn min_eig{"min_eig_sigma", {}};
    TraceColumn non_finite{"non_finite", {}};
    for (std::size_t r = first_row; r < trace.rows.size(); ++r)
    {
        const TraceRow &row = trace.rows[r];
        nu_mu.values.push_back(row.rates.nu_mu);
        nu_sigma.values.push_back(row.rates.nu_sigma);
        min_eig.values.push_back(linalg::sym_eigen(row.sigma).values.minCoeff());
        non_finite.values.push_back(row.non_finite);
    }
    return {nu_mu, nu_sigma, min_eig, non_finite};
}

std::pair<data::BarSeries, data::BarSeries> split(const RunConfig &config)
{
    const data::BarSeries series = load_or_generate(config);
    return data::split_train_test(series, config.data.split_fraction);
}

void check_loglik_trace(const std::vector<double> &ll)
{
    for (std::size_t i = 1; i < ll.size(); ++i)
    {
        if (ll[i] < ll[i - 1] - 1e-9 * std::max(1.0, std::abs(ll[i - 1])))
        {
            throw InvariantViolation("EM log-likelihood decreased at iteration " + std::to_string(i));
        }
    }
}

} // namespace

std::vector<strategy::ActionParams> ActionGrid::points() const
{
    std::vector<strategy::ActionParams> out;
    for (double t : threshold_ticks)
    {
        for (int s : stop_loss_ticks)
        {
            for (int p : profit_target_ticks)
            {
                out.push_back(strategy::ActionParams{t, s, p});
            }
        }
    }
    return out;
}

RunConfig config_from_json(const json &j)
{
    RunConfig c;
    FieldReader r(j, "");
    r("seed", c.seed);
    r("threads", c.threads);
    r("output_dir", c.output_dir);
    r("mapping", c.mapping);
    r.object("data", [&](FieldReader &d) {
        d("path", c.data.path);
        d("split_fraction", c.data.split_fraction);
        d("tick_size", c.data.tick_size);
        d("multiplier", c.data.multiplier);
    });
    r.object("synth", [&](FieldReader &s) {
        s("n_bars", c.synth.n_bars);
        s("bars_per_day", c.synth.bars_per_day);
        s("bar_seconds", c.synth.bar_seconds);
        s("start_price", c.synth.start_price);
        s("min_regime", c.synth.min_regime);
        s("max_regime", c.synth.max_regime);
        s("min_drift", c.synth.min_drift);
        s("max_drift", c.synth.max_drift);
        s("volatility", c.synth.volatility);
        s("output", c.synth.output);
    });
    r.object("optimizer", [&](FieldReader &o) {
        o("population", c.optimizer.population);
        o("max_iterations", c.optimizer.max_iterations);
        o("alpha_mu", c.optimizer.alpha_mu);
        o("alpha_sigma", c.optimizer.alpha_sigma);
        o("mode", c.optimizer.mode);
        o("sigma_tolerance", c.optimizer.sigma_tolerance);
        o("max_condition", c.optimizer.max_condition);
        o("initial_mean", c.optimizer.initial_mean);
        o("initial_sd", c.optimizer.initial_sd);
    });
    r.object("loss", [&](FieldReader &l) {
        l("lambda_l1", c.loss.lambda_l1);
        l("zero_trade_penalty", c.loss.zero_trade_penalty);
        l("costs_per_side", c.loss.costs_per_side);
        l("capital", c.loss.capital);
        l("annualization", c.loss.annualization);
    });
    r.object("baseline", [&](FieldReader &b) {
        b("fast_window", c.baseline.fast_window);
        b("slow_window", c.baseline.slow_window);
        b.object("grid", [&](FieldReader &g) { read_grid(g, c.baseline.grid); });
    });
    r.object("em", [&](FieldReader &e) {
        e("max_iterations", c.em.max_iterations);
        e("initial_params", c.em.initial_params);
        e.object("grid", [&](FieldReader &g) { read_grid(g, c.em.grid); });
    });
    r.object("bench", [&](FieldReader &b) {
        b("dims", c.bench.dims);
        b("iterations", c.bench.iterations);
        b("mc_iterations", c.bench.mc_iterations);
        b("population", c.bench.population);
        b("alpha_mu", c.bench.alpha_mu);
        b("alpha_sigma", c.bench.alpha_sigma);
        b("mode", c.bench.mode);
        b("initial_mean", c.bench.initial_mean);
        b("initial_sd", c.bench.initial_sd);
    });
    r.object("backtest", [&](FieldReader &b) {
        b("params_path", c.backtest.params_path);
        b("action_path", c.backtest.action_path);
        b("segment", c.backtest.segment);
        b.object("action", [&](FieldReader &a) {
            a("threshold_ticks", c.backtest.action.threshold_ticks);
            a("stop_loss_ticks", c.backtest.action.stop_loss_ticks);
            a("profit_target_ticks", c.backtest.action.profit_target_ticks);
        });
    });
    r.finish();
    return c;
}

json config_to_json(const RunConfig &c)
{
    json j;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["output_dir"] = c.output_dir;
    j["mapping"] = c.mapping;
    j["data"] = {{"path", c.data.path},
                 {"split_fraction", c.data.split_fraction},
                 {"tick_size", c.data.tick_size},
                 {"multiplier", c.data.multiplier}};
    j["synth"] = {{"n_bars", c.synth.n_bars},         {"bars_per_day", c.synth.bars_per_day},
                  {"bar_seconds", c.synth.bar_seconds}, {"start_price", c.synth.start_price},
                  {"min_regime", c.synth.min_regime}, {"max_regime", c.synth.max_regime},
                  {"min_drift", c.synth.min_drift},   {"max_drift", c.synth.max_drift},
                  {"volatility", c.synth.volatility}, {"output", c.synth.output}};
    j["optimizer"] = {{"population", c.optimizer.population},
                      {"max_iterations", c.optimizer.max_iterations},
                      {"alpha_mu", c.optimizer.alpha_mu},
                      {"alpha_sigma", c.optimizer.alpha_sigma},
                      {"mode", c.optimizer.mode},
                      {"sigma_tolerance", c.optimizer.sigma_tolerance},
                      {"max_condition", c.optimizer.max_condition},
                      {"initial_mean", c.optimizer.initial_mean},
                      {"initial_sd", c.optimizer.initial_sd}};
    j["loss"] = {{"lambda_l1", c.loss.lambda_l1},
                 {"zero_trade_penalty", c.loss.zero_trade_penalty},
                 {"costs_per_side", c.loss.costs_per_side},
                 {"capital", c.loss.capital},
                 {"annualization", c.loss.annualization}};
    j["baseline"] = {{"fast_window", c.baseline.fast_window},
                     {"slow_window", c.baseline.slow_window},
                     {"grid", grid_json(c.baseline.grid)}};
    j["em"] = {{"max_iterations", c.em.max_iterations},
               {"initial_params", c.em.initial_params},
               {"grid", grid_json(c.em.grid)}};
    j["bench"] = {{"dims", c.bench.dims},
                  {"iterations", c.bench.iterations},
                  {"mc_iterations", c.bench.mc_iterations},
                  {"population", c.bench.population},
                  {"alpha_mu", c.bench.alpha_mu},
                  {"alpha_sigma", c.bench.alpha_sigma},
                  {"mode", c.bench.mode},
                  {"initial_mean", c.bench.initial_mean},
                  {"initial_sd", c.bench.initial_sd}};
    j["backtest"] = {{"params_path", c.backtest.params_path},
                     {"action_path", c.backtest.action_path},
                     {"segment", c.backtest.segment},
                     {"action",
                      {{"threshold_ticks", c.backtest.action.threshold_ticks},
                       {"stop_loss_ticks", c.backtest.action.stop_loss_ticks},
                       {"profit_target_ticks", c.backtest.action.profit_target_ticks}}}};
    return j;
}

RunConfig load_config(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
    {
        throw ConfigError("cannot open config file " + path);
    }
    json j;
    try
    {
        j = json::parse(in);
    }
    catch (const json::exception &e)
    {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

void validate(const RunConfig &c)
{
    require(c.threads >= 1, "threads", "must be at least 1");
    require(!c.output_dir.empty(), "output_dir", "must not be empty");
    require(c.mapping == ssm::kMappingVersion, "mapping", std::string("must be '") + ssm::kMappingVersion + "'");

    require(c.data.split_fraction > 0.0 && c.data.split_fraction < 1.0, "data.split_fraction", "must lie in (0, 1)");
    require(c.data.tick_size > 0.0, "data.tick_size", "must be positive");
    require(c.data.multiplier > 0.0, "data.multiplier", "must be positive");
    require(c.data.path.empty() || std::filesystem::exists(c.data.path), "data.path",
            "refers to a missing file '" + c.data.path + "'");

    require(c.synth.n_bars >= 2, "synth.n_bars", "must be at least 2");
    require(c.synth.bars_per_day >= 1, "synth.bars_per_day", "must be positive");
    require(c.synth.bar_seconds >= 1, "synth.bar_seconds", "must be positive");
    require(static_cast<long long>(c.synth.bars_per_day) * c.synth.bar_seconds < 86400, "synth.bars_per_day",
            "times bar_seconds must fit in one day");
    require(c.synth.start_price > 0.0, "synth.start_price", "must be positive");
    require(c.synth.min_regime >= 1, "synth.min_regime", "must be positive");
    require(c.synth.max_regime >= c.synth.min_regime, "synth.max_regime", "must be >= synth.min_regime");
    require(c.synth.max_drift >= c.synth.min_drift, "synth.max_drift", "must be >= synth.min_drift");
    require(c.synth.volatility >= 0.0, "synth.volatility", "must be non-negative");
    require(!c.synth.output.empty(), "synth.output", "must not be empty");

    require(c.optimizer.population == 0 || c.optimizer.population >= 2, "optimizer.population",
            "must be 0 (default) or at least 2");
    require(c.optimizer.max_condition > 1.0, "optimizer.max_condition", "must exceed 1");
    require(c.optimizer.mode == "adaptive" || c.optimizer.mode == "fixed", "optimizer.mode",
            "must be 'adaptive' or 'fixed'");
    make_schedule(c.optimizer.alpha_mu, c.optimizer.alpha_sigma, c.optimizer.mode, "optimizer.");
    require(c.optimizer.initial_mean.empty() || c.optimizer.initial_mean.size() == strategy::kNumJointParams,
            "optimizer.initial_mean", "must hold 18 values");
    require(c.optimizer.initial_sd.empty() || c.optimizer.initial_sd.size() == 1 ||
                c.optimizer.initial_sd.size() == strategy::kNumJointParams,
            "optimizer.initial_sd", "must hold 1 or 18 values");
    for (double v : c.optimizer.initial_sd)
    {
        require(std::isfinite(v) && v > 0.0, "optimizer.initial_sd", "must be positive");
    }
    for (double v : c.optimizer.initial_mean)
    {
        require(std::isfinite(v), "optimizer.initial_mean", "must be finite");
    }

    require(c.loss.lambda_l1 >= 0.0, "loss.lambda_l1", "must be non-negative");
    require(c.loss.costs_per_side >= 0.0, "loss.costs_per_side", "must be non-negative");
    require(c.loss.capital > 0.0, "loss.capital", "must be positive");
    require(c.loss.annualization > 0.0, "loss.annualization", "must be positive");

    require(c.baseline.fast_window >= 1, "baseline.fast_window", "must be positive");
    require(c.baseline.slow_window > c.baseline.fast_window, "baseline.slow_window",
            "must exceed baseline.fast_window");
    validate_grid(c.baseline.grid, "baseline.grid.");

    require(c.em.initial_params.empty() || c.em.initial_params.size() == ssm::kNumParams, "em.initial_params",
            "must hold 15 values");
    validate_grid(c.em.grid, "em.grid.");

    for (int d : c.bench.dims)
    {
        require(d >= 1, "bench.dims", "must be positive");
    }
    require(c.bench.population == 0 || c.bench.population >= 2, "bench.population",
            "must be 0 (default) or at least 2");
    require(c.bench.mode == "adaptive" || c.bench.mode == "fixed", "bench.mode", "must be 'adaptive' or 'fixed'");
    make_schedule(c.bench.alpha_mu, c.bench.alpha_sigma, c.bench.mode, "bench.");
    require(c.bench.initial_sd > 0.0, "bench.initial_sd", "must be positive");

    require(c.backtest.segment == "all" || c.backtest.segment == "train" || c.backtest.segment == "test",
            "backtest.segment", "must be 'all', 'train' or 'test'");
    require(c.backtest.params_path.empty() || std::filesystem::exists(c.backtest.params_path),
            "backtest.params_path", "refers to a missing file '" + c.backtest.params_path + "'");
    require(c.backtest.action_path.empty() || std::filesystem::exists(c.backtest.action_path),
            "backtest.action_path", "refers to a missing file '" + c.backtest.action_path + "'");
    try
    {
        c.backtest.action.validate();
    }
    catch (const std::invalid_argument &e)
    {
        throw ConfigError(std::string("config field 'backtest.action': ") + e.what());
    }
}

std::string config_hash(const RunConfig &config)
{
    json j = config_to_json(config);
    j.erase("threads");
    j.erase("output_dir");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text)
    {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return hex64(h);
}

std::string provenance_line(const RunConfig &config)
{
    return "# seed=" + std::to_string(config.seed) + " config_hash=" + config_hash(config) +
           " mapping=" + config.mapping;
}

strategy::EngineOptions engine_options(const RunConfig &config)
{
    return strategy::EngineOptions{config.loss.costs_per_side, config.loss.capital, config.loss.annualization};
}

strategy::JointParams default_initial_mean()
{
    const double one = 100.0 / 1.1; // raw value mapping to a unit coefficient
    // Local linear trend: level + slope, level observed; drive terms neutral.
    return strategy::JointParams{one, one, one, one, 0.0, 20.0, 50.0, 2.0, 10.0, 20.0, 2.0, 50.0, 50.0, 50.0, 50.0,
                                 4.0, 25.0, 50.0};
}

std::vector<double> default_initial_sd()
{
    return std::vector<double>(strategy::kNumJointParams, 5.0);
}

data::BarSeries load_or_generate(const RunConfig &config)
{
    const data::Instrument inst{config.data.tick_size, config.data.multiplier};
    if (!config.data.path.empty())
    {
        data::BarSeries series = data::load_bars(config.data.path, inst);
        data::validate_series(series);
        return series;
    }
    const SynthConfig &s = config.synth;
    data::RegimeSwitchSpec spec{s.min_regime, s.max_regime, s.min_drift, s.max_drift, s.volatility};
    const auto regimes = data::random_regimes(stream_seed(config.seed, 2), s.n_bars, spec);
    data::SynthOptions opts;
    opts.start_price = s.start_price;
    opts.bars_per_day = s.bars_per_day;
    opts.bar_seconds = s.bar_seconds;
    opts.instrument = inst;
    return data::synth_trend_series(stream_seed(config.seed, 1), s.n_bars, regimes, opts);
}

OptimizeResult optimize_joint(const RunConfig &config, const data::BarSeries &train, const data::BarSeries &test)
{
    const OptimizerConfig &oc = config.optimizer;
    const LearningRateSchedule schedule = make_schedule(oc.alpha_mu, oc.alpha_sigma, oc.mode, "optimizer.");
    const strategy::EngineOptions engine = engine_options(config);
    strategy::JointLossOptions loss;
    loss.lambda_l1 = config.loss.lambda_l1;
    loss.zero_trade_penalty = config.loss.zero_trade_penalty;
    loss.engine = engine;

    const int d = strategy::kNumJointParams;
    Vector mean(d);
    Vector sd(d);
    const strategy::JointParams start = default_initial_mean();
    const std::vector<double> start_sd = default_initial_sd();
    for (int i = 0; i < d; ++i)
    {
        mean(i) = oc.initial_mean.empty() ? start[i] : oc.initial_mean[i];
        sd(i) = oc.initial_sd.empty() ? start_sd[i] : (oc.initial_sd.size() == 1 ? oc.initial_sd[0] : oc.initial_sd[i]);
    }
    GaussianSearchDistribution dist{mean, SpdMatrix::diagonal(sd.cwiseProduct(sd))};

    const Objective objective = [&](const Vector &v) {
        strategy::JointParams theta{};
        std::copy(v.data(), v.data() + d, theta.begin());
        return strategy::joint_loss(theta, train, loss);
    };

    OptimizeResult result;
    RunOptions run;
    run.max_iterations = oc.max_iterations;
    run.sigma_tolerance = oc.sigma_tolerance;
    run.max_condition = oc.max_condition;
    run.threads = config.threads;
    const OptimizerState state = make_state(dist, stream_seed(config.seed, 3), oc.population, schedule);
    result.trace = run_mc_ngd(run, state, objective);

    const Vector &final_mean = result.trace.rows.back().mean;
    for (int i = 0; i < d; ++i)
    {
        result.params[i] = std::clamp(final_mean(i), ssm::kRawMin, ssm::kRawMax);
    }
    const ssm::SsmModel model = ssm::to_model(strategy::model_raw(result.params));
    const strategy::ActionParams action = strategy::action_from_joint(result.params);
    result.train = strategy::backtest(train, model, action, engine);
    result.test = strategy::backtest(test, model, action, engine);

    const BaselineConfig &bc = config.baseline;
    const strategy::GridResult best =
        strategy::grid_search_actions(bc.grid.points(), [&](const strategy::ActionParams &a) {
            return strategy::ma_crossover_backtest(train, bc.fast_window, bc.slow_window, a, engine);
        });
    result.baseline_action = best.action;
    result.baseline_train = best.report;
    result.baseline_test = strategy::ma_crossover_backtest(test, bc.fast_window, bc.slow_window, best.action, engine);
    return result;
}

int cmd_bench(const RunConfig &config, std::ostream &log)
{
    const BenchConfig &bc = config.bench;
    const LearningRateSchedule schedule = make_schedule(bc.alpha_mu, bc.alpha_sigma, bc.mode, "bench.");
    const OutputDir out(config);
    bool violated = false;
    std::uint64_t stream = 0;
    for (int d : bc.dims)
    {
        for (const objectives::Benchmark &b : objectives::benchmark_suite(d))
        {
            ++stream;
            const GaussianSearchDistribution dist0{Vector::Constant(d, bc.initial_mean),
                                                   SpdMatrix::diagonal(Vector::Constant(d, bc.initial_sd * bc.initial_sd))};
            RunOptions run;
            run.reference_hessian = b.hessian;
            run.threads = config.threads;

            // Closed form: the natural gradient only depends on the sublevel sets, so the
            // quadratic's expression serves the warped objectives as well.
            run.max_iterations = bc.iterations;
            const SpdMatrix hessian = b.hessian;
            const Trace cf = run_cf_ngd(run, dist0, schedule, b.function, [hessian](const GaussianSearchDistribution &g) {
                return objectives::exact_natural_gradient(hessian, g);
            });
            std::vector<TraceColumn> cf_cols = rate_columns(cf, 1);
            TraceColumn bound{"cond_bound", {}};
            const double cond0 = cf.rows.front().cond_sigma_h;
            for (std::size_t r = 1; r < cf.rows.size(); ++r)
            {
                const double limit = objectives::condition_bound(r, schedule.nu_sigma_min(), cond0);
                bound.values.push_back(limit);
                if (std::isfinite(limit) && cf.rows[r].cond_sigma_h > limit + 1e-9)
                {
                    violated = true;
                    log << "bound violated: " << b.name << " d=" << d << " t=" << r << '\n';
                }
            }
            cf_cols.insert(cf_cols.begin(), bound);
            const std::string suffix = b.name + "_d" + std::to_string(d) + ".csv";
            out.write("bench_cf_" + suffix, [&](std::ostream &os) { write_trace_csv(os, cf, cf_cols, 1); });

            run.max_iterations = bc.mc_iterations;
            const OptimizerState state =
                make_state(dist0, stream_seed(config.seed, 100 + stream), bc.population, schedule);
            const Trace mc = run_mc_ngd(run, state, b.function);
            const std::vector<TraceColumn> mc_cols = rate_columns(mc, 1);
            for (double v : mc_cols[2].values)
            {
                if (!(v > 0.0))
                {
                    violated = true;
                    log << "covariance lost positivity: " << b.name << " d=" << d << '\n';
                }
            }
            out.write("bench_mc_" + suffix, [&](std::ostream &os) { write_trace_csv(os, mc, mc_cols, 1); });
            log << "bench " << b.name << " d=" << d << ": cf " << cf.rows.size() - 1 << " rows, mc "
                << mc.rows.size() - 1 << " rows\n";
        }
    }
    return violated ? kInvariantViolation : kOk;
}

int cmd_optimize(const RunConfig &config, std::ostream &log)
{
    const auto [train, test] = split(config);
    const OutputDir out(config);
    const OptimizeResult r = optimize_joint(config, train, test);
    const strategy::ActionParams action = strategy::action_from_joint(r.params);

    out.write("params.csv", [&](std::ostream &os) { ssm::write_params_csv(os, strategy::model_raw(r.params)); });
    out.write("action.csv", [&](std::ostream &os) { write_action_csv(os, action); });
    out.write("optimizer_trace.csv",
              [&](std::ostream &os) { write_trace_csv(os, r.trace, rate_columns(r.trace, 0), 0); });
    out.write("report_train.csv", [&](std::ostream &os) { strategy::write_report_csv(os, r.train); });
    out.write("report_test.csv", [&](std::ostream &os) { strategy::write_report_csv(os, r.test); });
    out.write("trades_train.csv", [&](std::ostream &os) { strategy::write_trades_csv(os, r.train.trades); });
    out.write("trades_test.csv", [&](std::ostream &os) { strategy::write_trades_csv(os, r.test.trades); });
    out.write("equity_test.csv", [&](std::ostream &os) { strategy::write_equity_csv(os, r.test); });
    out.write("baseline_action.csv", [&](std::ostream &os) { write_action_csv(os, r.baseline_action); });
    out.write("baseline_report_train.csv", [&](std::ostream &os) { strategy::write_report_csv(os, r.baseline_train); });
    out.write("baseline_report_test.csv", [&](std::ostream &os) { strategy::write_report_csv(os, r.baseline_test); });
    log << "optimize: train sharpe " << format_double(r.train.sharpe) << ", test sharpe "
        << format_double(r.test.sharpe) << ", baseline test sharpe " << format_double(r.baseline_test.sharpe) << '\n';
    return kOk;
}

int cmd_fit_em(const RunConfig &config, std::ostream &log)
{
    const auto [train, test] = split(config);
    const OutputDir out(config);
    ssm::RawParams raw0{};
    if (config.em.initial_params.empty())
    {
        raw0 = strategy::model_raw(default_initial_mean());
    }
    else
    {
        std::copy(config.em.initial_params.begin(), config.em.initial_params.end(), raw0.begin());
    }
    const std::vector<std::size_t> days = strategy::daily_decision_indices(train);
    const std::vector<double> closes = strategy::closes_at(train, days);
    ssm::EmOptions options;
    options.max_iterations = config.em.max_iterations;
    const ssm::EmResult fit = ssm::em_fit(closes, ssm::to_model(raw0), options);
    out.write("em_loglik.csv", [&](std::ostream &os) {
        os << "iteration,log_likelihood\n";
        for (std::size_t i = 0; i < fit.log_likelihood.size(); ++i)
        {
            os << i << ',' << format_double(fit.log_likelihood[i]) << '\n';
        }
    });
    check_loglik_trace(fit.log_likelihood);

    const strategy::EngineOptions engine = engine_options(config);
    const strategy::GridResult best =
        strategy::grid_search_actions(config.em.grid.points(), [&](const strategy::ActionParams &a) {
            return strategy::backtest(train, fit.model, a, engine);
        });
    const strategy::BacktestReport test_report = strategy::backtest(test, fit.model, best.action, engine);

    out.write("params.csv", [&](std::ostream &os) { ssm::write_params_csv(os, ssm::to_raw(fit.model)); });
    out.write("action.csv", [&](std::ostream &os) { write_action_csv(os, best.action); });
    out.write("report_train.csv", [&](std::ostream &os) { strategy::write_report_csv(os, best.report); });
    out.write("report_test.csv", [&](std::ostream &os) { strategy::write_report_csv(os, test_report); });
    out.write("trades_test.csv", [&](std::ostream &os) { strategy::write_trades_csv(os, test_report.trades); });
    log << "fit-em: " << fit.iterations << " iterations, log-likelihood "
        << format_double(fit.log_likelihood.front()) << " -> " << format_double(fit.log_likelihood.back())
        << ", test sharpe " << format_double(test_report.sharpe) << '\n';
    return kOk;
}

int cmd_backtest(const RunConfig &config, std::ostream &log)
{
    if (config.backtest.params_path.empty())
    {
        throw ConfigError("config field 'backtest.params_path' is required for backtest");
    }
    const ssm::RawParams raw = load_params(config.backtest.params_path);
    const strategy::ActionParams action =
        config.backtest.action_path.empty() ? config.backtest.action : read_action_csv(config.backtest.action_path);
    data::BarSeries series = load_or_generate(config);
    if (config.backtest.segment != "all")
    {
        auto parts = data::split_train_test(series, config.data.split_fraction);
        series = config.backtest.segment == "train" ? std::move(parts.first) : std::move(parts.second);
    }
    const OutputDir out(config);
    const strategy::BacktestReport report =
        strategy::backtest(series, ssm::to_model(raw), action, engine_options(config));
    out.write("report.csv", [&](std::ostream &os) { strategy::write_report_csv(os, report); });
    out.write("trades.csv", [&](std::ostream &os) { strategy::write_trades_csv(os, report.trades); });
    out.write("equity.csv", [&](std::ostream &os) { strategy::write_equity_csv(os, report); });
    log << "backtest: " << report.trade_count << " trades, sharpe " << format_double(report.sharpe) << '\n';
    return kOk;
}

int cmd_gen_data(const RunConfig &config, std::ostream &log)
{
    RunConfig synthetic = config;
    synthetic.data.path.clear();
    const data::BarSeries series = load_or_generate(synthetic);
    const OutputDir out(config);
    data::save_bars(out.path(config.synth.output), series, out.provenance() + "\n");
    log << "gen-data: " << series.size() << " bars -> " << out.path(config.synth.output) << '\n';
    return kOk;
}

int run_command(const std::string &name, const RunConfig &config, std::ostream &log, std::ostream &err)
{
    try
    {
        validate(config);
        if (name == "bench")
        {
            return cmd_bench(config, log);
        }
        if (name == "optimize")
        {
            return cmd_optimize(config, log);
        }
        if (name == "fit-em")
        {
            return cmd_fit_em(config, log);
        }
        if (name == "backtest")
        {
            return cmd_backtest(config, log);
        }
        if (name == "gen-data")
        {
            return cmd_gen_data(config, log);
        }
        err << "unknown command '" << name << "'\n";
        return kUsageError;
    }
    catch (const ConfigError &e)
    {
        err << "config error: " << e.what() << '\n';
        return kUsageError;
    }
    catch (const data::DataError &e)
    {
        err << "data error: " << e.what() << '\n';
        return kDataError;
    }
    catch (const InvariantViolation &e)
    {
        err << "invariant violation: " << e.what() << '\n';
        return kInvariantViolation;
    }
    catch (const std::invalid_argument &e)
    {
        err << "invalid input: " << e.what() << '\n';
        return kUsageError;
    }
    catch (const std::exception &e)
    {
        err << "error: " << e.what() << '\n';
        return kInvariantViolation;
    }
}

} // namespace igo::app
