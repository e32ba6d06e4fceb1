/**
 * @file commands.hpp
 * @brief Run configuration and the command implementations behind the CLI.
 *
 * A run is fully described by a JSON document (see RunConfig). Every artifact
 * starts with a `# seed=... config_hash=... mapping=...` line and the resolved
 * configuration is written to `config.json` in the output directory, so any
 * run can be replayed from its own outputs.
 */

#pragma once

#include "igo/data_io.hpp"
#include "igo/ngd.hpp"
#include "igo/ssm.hpp"
#include "igo/strategy.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace igo::app
{

enum ExitCode : int
{
    kOk = 0,
    kUsageError = 1,
    kDataError = 2,
    kInvariantViolation = 3,
};

class InvariantViolation : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

struct DataConfig
{
    std::string path; // empty: generate from `synth`
    double split_fraction = 0.5;
    double tick_size = 0.25;
    double multiplier = 50.0;
};

struct SynthConfig
{
    std::size_t n_bars = 24000;
    int bars_per_day = 40;
    int bar_seconds = 60;
    double start_price = 2500.0;
    std::size_t min_regime = 600;
    std::size_t max_regime = 2400;
    double min_drift = 0.0;
    double max_drift = 2.0e-4;
    double volatility = 1.6e-3;
    std::string output = "bars.csv";
};

struct ActionGrid
{
    std::vector<double> threshold_ticks{0.0};
    std::vector<int> stop_loss_ticks{50, 100, 200};
    std::vector<int> profit_target_ticks{100, 200, 400};

    std::vector<strategy::ActionParams> points() const;
};

struct OptimizerConfig
{
    int population = 0; // 0: default for the dimension
    std::size_t max_iterations = 1000;
    double alpha_mu = 1.0;
    double alpha_sigma = 0.5;
    std::string mode = "adaptive";
    double sigma_tolerance = 0.0;
    double max_condition = 1e14;
    std::vector<double> initial_mean; // 18 raw values; empty: built-in start
    std::vector<double> initial_sd;   // 1 or 18 values
};

struct LossConfig
{
    double lambda_l1 = 1e-3;
    double zero_trade_penalty = 10.0;
    double costs_per_side = 0.0;
    double capital = 100000.0;
    double annualization = 252.0;
};

struct BaselineConfig
{
    std::size_t fast_window = 20;
    std::size_t slow_window = 50;
    ActionGrid grid;
};

struct EmConfig
{
    std::size_t max_iterations = 100;
    std::vector<double> initial_params; // 15 raw values; empty: model part of the optimizer start
    ActionGrid grid{{0.0, 4.0, 8.0}, {50, 100, 200}, {100, 200, 400}};
};

struct BenchConfig
{
    std::vector<int> dims{2, 5};
    std::size_t iterations = 50;
    std::size_t mc_iterations = 100;
    int population = 0;
    double alpha_mu = 1.0;
    double alpha_sigma = 0.5;
    std::string mode = "adaptive";
    double initial_mean = 1.0;
    double initial_sd = 1.0;
};

struct BacktestConfig
{
    std::string params_path;
    std::string action_path; // empty: use `action`
    strategy::ActionParams action{0.0, 100, 200};
    std::string segment = "test"; // all | train | test
};

struct RunConfig
{
    std::uint64_t seed = 1;
    int threads = 1;
    std::string output_dir = "out";
    std::string mapping = ssm::kMappingVersion;
    DataConfig data;
    SynthConfig synth;
    OptimizerConfig optimizer;
    LossConfig loss;
    BaselineConfig baseline;
    EmConfig em;
    BenchConfig bench;
    BacktestConfig backtest;
};

/// Missing keys keep their defaults; unknown keys and wrong types throw ConfigError naming the field.
RunConfig config_from_json(const nlohmann::json &j);
nlohmann::json config_to_json(const RunConfig &config);
RunConfig load_config(const std::string &path);

/// Throws ConfigError naming the first offending field.
void validate(const RunConfig &config);

/// FNV-1a (64 bit, hex) of the canonical JSON, ignoring `threads` and `output_dir`.
std::string config_hash(const RunConfig &config);
std::string provenance_line(const RunConfig &config);

strategy::EngineOptions engine_options(const RunConfig &config);
strategy::JointParams default_initial_mean();
std::vector<double> default_initial_sd();

/// Bars from `data.path`, or a synthetic regime-switching series seeded from `seed`.
data::BarSeries load_or_generate(const RunConfig &config);

struct OptimizeResult
{
    strategy::JointParams params{}; // final search mean clamped to the box
    Trace trace;
    strategy::BacktestReport train;
    strategy::BacktestReport test;
    strategy::ActionParams baseline_action;
    strategy::BacktestReport baseline_train;
    strategy::BacktestReport baseline_test;
};

/// Joint search over (model, action) on `train`; the baseline's action is grid-searched on `train`.
OptimizeResult optimize_joint(const RunConfig &config, const data::BarSeries &train, const data::BarSeries &test);

int cmd_bench(const RunConfig &config, std::ostream &log);
int cmd_optimize(const RunConfig &config, std::ostream &log);
int cmd_fit_em(const RunConfig &config, std::ostream &log);
int cmd_backtest(const RunConfig &config, std::ostream &log);
int cmd_gen_data(const RunConfig &config, std::ostream &log);

/// Validates, dispatches and maps exceptions onto exit codes; messages go to `err`.
int run_command(const std::string &name, const RunConfig &config, std::ostream &log, std::ostream &err);

} // namespace igo::app
