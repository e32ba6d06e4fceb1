/**
 * @file strategy.hpp
 * @brief Trend-following action layer, trade engine and performance statistics.
 *
 * Decisions are taken once per UTC day at the close of its last bar. While
 * flat, a forecast of the next daily close above (below) the last close plus
 * (minus) a threshold opens a long (short) position at the open of the next
 * bar. Positions are then managed bar by bar against a profit target and a
 * stop loss, both in ticks.
 */

#pragma once

#include "igo/data_io.hpp"
#include "igo/ssm.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace igo::strategy
{

using data::Bar;
using data::BarSeries;
using data::Instrument;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

class InsufficientData : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

enum class Direction : int
{
    short_side = -1,
    none = 0,
    long_side = 1,
};

enum class ExitReason
{
    target,
    stop,
    end_of_data,
};

std::string to_string(Direction d);
std::string to_string(ExitReason r);

struct ActionParams
{
    double threshold_ticks = 0.0;
    int stop_loss_ticks = 1;
    int profit_target_ticks = 1;

    void validate() const;
};

struct Trade
{
    Direction direction = Direction::none;
    std::int64_t entry_time = 0;
    std::int64_t exit_time = 0;
    double entry_price = 0.0;
    double exit_price = 0.0;
    double gross_pnl = 0.0; // before costs
    double pnl = 0.0;       // after both sides' costs
    ExitReason exit_reason = ExitReason::end_of_data;
    std::size_t entry_index = 0; // bar of the entry fill
    std::size_t exit_index = 0;  // bar of the exit fill
};

struct EngineOptions
{
    double costs_per_side = 0.0;
    double capital = 100000.0;
    double annualization = 252.0;
};

struct BacktestReport
{
    std::vector<Trade> trades;
    std::vector<std::int64_t> decision_times;
    std::vector<double> daily_equity; // mark-to-market at each decision close
    std::vector<double> daily_returns; // equity change over capital
    std::vector<double> trade_equity; // 0 followed by cumulative pnl after each trade
    double net_profit = 0.0;
    double gross_profit = 0.0;
    double gross_loss = 0.0; // positive number
    double total_costs = 0.0;
    double avg_trade = 0.0;
    double avg_winning_trade = 0.0;
    double percent_profitable = 0.0;
    double total_net_profit_pct = 0.0;
    double annualized_net_profit_pct = 0.0;
    double volatility_pct = 0.0;
    double sharpe = 0.0;
    double max_drawdown = 0.0; // positive number
    double recovery_factor = 0.0;
    double profit_factor = 0.0;
    std::size_t trade_count = 0;
    std::size_t max_consecutive_winners = 0;
    std::size_t days = 0;
};

Direction signal(double forecast, double last_close, double mu_sig);

/// Round a price to the nearest tick.
double round_to_tick(double price, double tick);

/**
 * Manages one position from bars[entry_index] on. The entry bar's range
 * counts. A bar reaching both levels fills the stop; a bar opening beyond a
 * level fills at its open.
 */
Trade simulate_trade(std::span<const Bar> bars, std::size_t entry_index, Direction direction, double entry_price,
                     std::int64_t entry_time, const ActionParams &action, const Instrument &instrument,
                     double costs_per_side = 0.0);

/// Index of the last bar of every UTC day, in order.
std::vector<std::size_t> daily_decision_indices(const BarSeries &series);
std::vector<double> closes_at(const BarSeries &series, std::span<const std::size_t> indices);

/// Runs the engine from pre-computed per-decision signals.
BacktestReport run_engine(const BarSeries &series, std::span<const std::size_t> decisions,
                          std::span<const Direction> signals, const ActionParams &action,
                          const EngineOptions &options = {});

/// Signals from per-decision forecasts of the next decision close.
BacktestReport backtest_forecasts(const BarSeries &series, std::span<const std::size_t> decisions,
                                  std::span<const double> forecasts, const ActionParams &action,
                                  const EngineOptions &options = {});

/// Full pipeline: daily closes, SSM forecasts, signals, engine.
BacktestReport backtest(const BarSeries &series, const ssm::SsmModel &model, const ActionParams &action,
                        const EngineOptions &options = {});

/// Crossing signals of simple moving averages over daily closes.
std::vector<Direction> ma_crossover_signals(std::span<const double> closes, std::size_t fast_window,
                                            std::size_t slow_window);

BacktestReport ma_crossover_backtest(const BarSeries &series, std::size_t fast_window, std::size_t slow_window,
                                     const ActionParams &action, const EngineOptions &options = {});

double sharpe(std::span<const double> period_returns, double annualization_factor);
double max_drawdown(std::span<const double> equity);
double profit_factor(std::span<const Trade> trades);
std::size_t consecutive_winners(std::span<const Trade> trades);
double recovery_factor(const BacktestReport &report);

/// Fills every summary field from trades and daily returns.
void summarize(BacktestReport &report, const EngineOptions &options);

inline constexpr int kNumJointParams = ssm::kNumParams + 3;
using JointParams = std::array<double, kNumJointParams>;

/// Action raw coordinates: threshold = raw ticks, stop and target = max(1, round(4 raw)) ticks.
ActionParams action_from_raw(double threshold_raw, double stop_raw, double target_raw);
ssm::RawParams model_raw(const JointParams &theta);
ActionParams action_from_joint(const JointParams &theta);

struct JointLossOptions
{
    double lambda_l1 = 1e-3;
    double zero_trade_penalty = 10.0;
    double box_penalty = 1e-2;
    EngineOptions engine;
};

/**
 * -Sharpe of the backtest plus lambda * sum |theta_i| over the 15 model
 * coordinates. Inactive or numerically degenerate strategies score the fixed
 * penalty. Coordinates outside [0, 100] are clamped for evaluation and pay a
 * quadratic distance penalty.
 */
double joint_loss(const JointParams &theta, const BarSeries &train, const JointLossOptions &options = {});

/// Best report over a grid of action parameters (ties keep the first point).
struct GridResult
{
    ActionParams action;
    BacktestReport report;
};

GridResult grid_search_actions(const std::vector<ActionParams> &grid,
                               const std::function<BacktestReport(const ActionParams &)> &run);

/// One row per report field: `field,value`.
void write_report_csv(std::ostream &out, const BacktestReport &report);
/// `entry_time,exit_time,direction,entry,exit,pnl,reason`.
void write_trades_csv(std::ostream &out, std::span<const Trade> trades);
/// `timestamp,equity` at each decision close.
void write_equity_csv(std::ostream &out, const BacktestReport &report);

} // namespace igo::strategy
