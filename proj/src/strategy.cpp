#include "igo/strategy.hpp"

#include "igo/format.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace igo::strategy
{

namespace
{

double clamp_box(double v)
{
    return std::clamp(v, ssm::kRawMin, ssm::kRawMax);
}

double box_distance_sq(double v)
{
    const double below = std::max(ssm::kRawMin - v, 0.0);
    const double above = std::max(v - ssm::kRawMax, 0.0);
    return below * below + above * above;
}

double sample_std(std::span<const double> v)
{
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v)
    {
        ss += (x - mean) * (x - mean);
    }
    return std::sqrt(ss / (n - 1.0));
}

} // namespace

std::string to_string(Direction d)
{
    switch (d)
    {
    case Direction::long_side:
        return "long";
    case Direction::short_side:
        return "short";
    case Direction::none:
        break;
    }
    return "none";
}

std::string to_string(ExitReason r)
{
    switch (r)
    {
    case ExitReason::target:
        return "target";
    case ExitReason::stop:
        return "stop";
    case ExitReason::end_of_data:
        break;
    }
    return "end-of-data";
}

void ActionParams::validate() const
{
    if (!(threshold_ticks >= 0.0) || !std::isfinite(threshold_ticks))
    {
        throw std::invalid_argument("threshold_ticks must be a finite non-negative number");
    }
    if (stop_loss_ticks < 1)
    {
        throw std::invalid_argument("stop_loss_ticks must be positive");
    }
    if (profit_target_ticks < 1)
    {
        throw std::invalid_argument("profit_target_ticks must be positive");
    }
}

Direction signal(double forecast, double last_close, double mu_sig)
{
    if (forecast >= last_close + mu_sig)
    {
        return Direction::long_side;
    }
    if (forecast <= last_close - mu_sig)
    {
        return Direction::short_side;
    }
    return Direction::none;
}

double round_to_tick(double price, double tick)
{
    return std::round(price / tick) * tick;
}

Trade simulate_trade(std::span<const Bar> bars, std::size_t entry_index, Direction direction, double entry_price,
                     std::int64_t entry_time, const ActionParams &action, const Instrument &instrument,
                     double costs_per_side)
{
    if (entry_index >= bars.size())
    {
        throw InsufficientData("simulate_trade: no bar at the entry index");
    }
    if (direction == Direction::none)
    {
        throw std::invalid_argument("simulate_trade: direction must be long or short");
    }
    action.validate();
    const double dir = static_cast<double>(static_cast<int>(direction));
    const double target = entry_price + dir * action.profit_target_ticks * instrument.tick_size;
    const double stop = entry_price - dir * action.stop_loss_ticks * instrument.tick_size;

    Trade trade;
    trade.direction = direction;
    trade.entry_time = entry_time;
    trade.entry_price = entry_price;
    trade.entry_index = entry_index;
    trade.exit_index = bars.size() - 1;
    trade.exit_price = bars.back().close;
    trade.exit_time = bars.back().timestamp;
    trade.exit_reason = ExitReason::end_of_data;
    for (std::size_t i = entry_index; i < bars.size(); ++i)
    {
        const Bar &bar = bars[i];
        const bool stop_hit = direction == Direction::long_side ? bar.low <= stop : bar.high >= stop;
        const bool target_hit = direction == Direction::long_side ? bar.high >= target : bar.low <= target;
        if (stop_hit || target_hit)
        {
            trade.exit_index = i;
            trade.exit_time = bar.timestamp;
            const double level = stop_hit ? stop : target;
            // a bar opening beyond the level fills at its open
            const bool gapped = stop_hit ? dir * (bar.open - stop) < 0.0 : dir * (bar.open - target) > 0.0;
            trade.exit_price = gapped ? bar.open : level;
            trade.exit_reason = stop_hit ? ExitReason::stop : ExitReason::target;
            break;
        }
    }
    trade.gross_pnl = dir * (trade.exit_price - trade.entry_price) * instrument.multiplier;
    trade.pnl = trade.gross_pnl - 2.0 * costs_per_side;
    return trade;
}

std::vector<std::size_t> daily_decision_indices(const BarSeries &series)
{
    std::vector<std::size_t> out;
    const auto day_of = [](std::int64_t ts) { return ts >= 0 ? ts / 86400 : (ts - 86399) / 86400; };
    for (std::size_t i = 0; i < series.size(); ++i)
    {
        const bool last_of_day =
            i + 1 == series.size() || day_of(series.bars[i + 1].timestamp) != day_of(series.bars[i].timestamp);
        if (last_of_day)
        {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<double> closes_at(const BarSeries &series, std::span<const std::size_t> indices)
{
    std::vector<double> out;
    out.reserve(indices.size());
    for (std::size_t i : indices)
    {
        out.push_back(series.bars.at(i).close);
    }
    return out;
}

BacktestReport run_engine(const BarSeries &series, std::span<const std::size_t> decisions,
                          std::span<const Direction> signals, const ActionParams &action,
                          const EngineOptions &options)
{
    action.validate();
    if (signals.size() != decisions.size())
    {
        throw std::invalid_argument("run_engine: one signal per decision point is required");
    }
    if (decisions.size() < 2)
    {
        throw InsufficientData("run_engine: need at least 2 decision points");
    }
    const std::span<const Bar> bars(series.bars);
    const Instrument &inst = series.instrument;

    BacktestReport report;
    double realized = 0.0;
    double previous_equity = 0.0;
    bool open = false;
    Trade current;
    for (std::size_t d = 0; d < decisions.size(); ++d)
    {
        const std::size_t i = decisions[d];
        if (d > 0 && i <= decisions[d - 1])
        {
            throw std::invalid_argument("run_engine: decision points must be increasing");
        }
        if (open && current.exit_index <= i)
        {
            realized += current.pnl;
            report.trades.push_back(current);
            open = false;
        }
        double equity = realized;
        if (open && current.entry_index <= i)
        {
            const double dir = static_cast<double>(static_cast<int>(current.direction));
            equity += dir * (bars[i].close - current.entry_price) * inst.multiplier - options.costs_per_side;
        }
        report.decision_times.push_back(bars[i].timestamp);
        report.daily_equity.push_back(equity);
        report.daily_returns.push_back((equity - previous_equity) / options.capital);
        previous_equity = equity;

        if (!open && signals[d] != Direction::none && i + 1 < bars.size())
        {
            const double entry = round_to_tick(bars[i + 1].open, inst.tick_size);
            current = simulate_trade(bars, i + 1, signals[d], entry, bars[i].timestamp, action, inst,
                                     options.costs_per_side);
            open = true;
        }
    }
    if (open)
    {
        report.trades.push_back(current);
    }
    summarize(report, options);
    return report;
}

BacktestReport backtest_forecasts(const BarSeries &series, std::span<const std::size_t> decisions,
                                  std::span<const double> forecasts, const ActionParams &action,
                                  const EngineOptions &options)
{
    if (forecasts.size() != decisions.size())
    {
        throw std::invalid_argument("backtest_forecasts: one forecast per decision point is required");
    }
    const double mu = action.threshold_ticks * series.instrument.tick_size;
    std::vector<Direction> signals;
    signals.reserve(forecasts.size());
    for (std::size_t d = 0; d < forecasts.size(); ++d)
    {
        signals.push_back(signal(forecasts[d], series.bars.at(decisions[d]).close, mu));
    }
    return run_engine(series, decisions, signals, action, options);
}

BacktestReport backtest(const BarSeries &series, const ssm::SsmModel &model, const ActionParams &action,
                        const EngineOptions &options)
{
    const std::vector<std::size_t> decisions = daily_decision_indices(series);
    if (decisions.size() < 2)
    {
        throw InsufficientData("backtest: need at least 2 decision points");
    }
    const std::vector<double> closes = closes_at(series, decisions);
    const std::vector<double> forecasts = ssm::forecast_series(closes, model);
    return backtest_forecasts(series, decisions, forecasts, action, options);
}

std::vector<Direction> ma_crossover_signals(std::span<const double> closes, std::size_t fast_window,
                                            std::size_t slow_window)
{
    if (fast_window < 1 || slow_window <= fast_window)
    {
        throw std::invalid_argument("ma_crossover: need slow_window > fast_window >= 1");
    }
    std::vector<double> prefix(closes.size() + 1, 0.0);
    for (std::size_t i = 0; i < closes.size(); ++i)
    {
        prefix[i + 1] = prefix[i] + closes[i];
    }
    const auto mean_ending_at = [&](std::size_t t, std::size_t w) {
        return (prefix[t + 1] - prefix[t + 1 - w]) / static_cast<double>(w);
    };
    std::vector<Direction> out(closes.size(), Direction::none);
    int previous = 0;
    for (std::size_t t = 0; t < closes.size(); ++t)
    {
        int state = 0;
        if (t + 1 >= slow_window)
        {
            const double fast = mean_ending_at(t, fast_window);
            const double slow = mean_ending_at(t, slow_window);
            state = fast > slow ? 1 : (fast < slow ? -1 : 0);
        }
        if (state == 1 && previous <= 0)
        {
            out[t] = Direction::long_side;
        }
        else if (state == -1 && previous >= 0)
        {
            out[t] = Direction::short_side;
        }
        previous = state;
    }
    return out;
}

BacktestReport ma_crossover_backtest(const BarSeries &series, std::size_t fast_window, std::size_t slow_window,
                                     const ActionParams &action, const EngineOptions &options)
{
    const std::vector<std::size_t> decisions = daily_decision_indices(series);
    const std::vector<double> closes = closes_at(series, decisions);
    const std::vector<Direction> signals = ma_crossover_signals(closes, fast_window, slow_window);
    return run_engine(series, decisions, signals, action, options);
}

double sharpe(std::span<const double> period_returns, double annualization_factor)
{
    if (period_returns.size() < 2)
    {
        throw InsufficientData("sharpe: need at least 2 returns");
    }
    const double mean =
        std::accumulate(period_returns.begin(), period_returns.end(), 0.0) / static_cast<double>(period_returns.size());
    const double sd = sample_std(period_returns);
    if (sd == 0.0)
    {
        // Sign of the mean decides; a flat strategy scores zero.
        return mean > 0.0 ? kInfinity : (mean < 0.0 ? -kInfinity : 0.0);
    }
    return mean / sd * std::sqrt(annualization_factor);
}

double max_drawdown(std::span<const double> equity)
{
    double peak = -kInfinity;
    double worst = 0.0;
    for (double e : equity)
    {
        peak = std::max(peak, e);
        worst = std::max(worst, peak - e);
    }
    return worst;
}

double profit_factor(std::span<const Trade> trades)
{
    double wins = 0.0;
    double losses = 0.0;
    for (const Trade &t : trades)
    {
        if (t.gross_pnl > 0.0)
        {
            wins += t.gross_pnl;
        }
        else
        {
            losses -= t.gross_pnl;
        }
    }
    if (losses == 0.0)
    {
        return wins > 0.0 ? kInfinity : 0.0;
    }
    return wins / losses;
}

std::size_t consecutive_winners(std::span<const Trade> trades)
{
    std::size_t best = 0;
    std::size_t run = 0;
    for (const Trade &t : trades)
    {
        run = t.pnl > 0.0 ? run + 1 : 0;
        best = std::max(best, run);
    }
    return best;
}

double recovery_factor(const BacktestReport &report)
{
    if (report.trades.empty())
    {
        return 0.0;
    }
    if (report.max_drawdown == 0.0)
    {
        return kInfinity;
    }
    return report.net_profit / std::abs(report.max_drawdown);
}

void summarize(BacktestReport &report, const EngineOptions &options)
{
    const std::vector<Trade> &trades = report.trades;
    report.trade_count = trades.size();
    report.trade_equity.assign(1, 0.0);
    report.net_profit = 0.0;
    report.gross_profit = 0.0;
    report.gross_loss = 0.0;
    report.total_costs = 0.0;
    double winning_sum = 0.0;
    std::size_t winners = 0;
    for (const Trade &t : trades)
    {
        report.net_profit += t.pnl;
        report.total_costs += t.gross_pnl - t.pnl;
        if (t.gross_pnl > 0.0)
        {
            report.gross_profit += t.gross_pnl;
        }
        else
        {
            report.gross_loss -= t.gross_pnl;
        }
        if (t.pnl > 0.0)
        {
            winning_sum += t.pnl;
            ++winners;
        }
        report.trade_equity.push_back(report.trade_equity.back() + t.pnl);
    }
    const double count = static_cast<double>(trades.size());
    report.avg_trade = trades.empty() ? 0.0 : report.net_profit / count;
    report.avg_winning_trade = winners == 0 ? 0.0 : winning_sum / static_cast<double>(winners);
    report.percent_profitable = trades.empty() ? 0.0 : 100.0 * static_cast<double>(winners) / count;
    report.max_drawdown = max_drawdown(report.trade_equity);
    report.profit_factor = profit_factor(trades);
    report.max_consecutive_winners = consecutive_winners(trades);
    report.recovery_factor = recovery_factor(report);

    report.days = report.daily_returns.size();
    report.total_net_profit_pct = 100.0 * report.net_profit / options.capital;
    report.annualized_net_profit_pct =
        report.days == 0 ? 0.0 : report.total_net_profit_pct * options.annualization / static_cast<double>(report.days);
    if (report.days >= 2)
    {
        report.volatility_pct = 100.0 * sample_std(report.daily_returns) * std::sqrt(options.annualization);
        report.sharpe = sharpe(report.daily_returns, options.annualization);
    }
    else
    {
        report.volatility_pct = 0.0;
        report.sharpe = 0.0;
    }
}

ActionParams action_from_raw(double threshold_raw, double stop_raw, double target_raw)
{
    ActionParams a;
    a.threshold_ticks = clamp_box(threshold_raw);
    a.stop_loss_ticks = std::max(1, static_cast<int>(std::lround(4.0 * clamp_box(stop_raw))));
    a.profit_target_ticks = std::max(1, static_cast<int>(std::lround(4.0 * clamp_box(target_raw))));
    return a;
}

ssm::RawParams model_raw(const JointParams &theta)
{
    ssm::RawParams raw{};
    std::copy_n(theta.begin(), ssm::kNumParams, raw.begin());
    return raw;
}

ActionParams action_from_joint(const JointParams &theta)
{
    return action_from_raw(theta[ssm::kNumParams], theta[ssm::kNumParams + 1], theta[ssm::kNumParams + 2]);
}

double joint_loss(const JointParams &theta, const BarSeries &train, const JointLossOptions &options)
{
    double box = 0.0;
    double l1 = 0.0;
    for (int i = 0; i < kNumJointParams; ++i)
    {
        if (std::isnan(theta[i]))
        {
            return std::numeric_limits<double>::quiet_NaN();
        }
        box += box_distance_sq(theta[i]);
        if (i < ssm::kNumParams)
        {
            l1 += std::abs(theta[i]);
        }
    }
    box *= options.box_penalty;
    try
    {
        const BacktestReport report =
            backtest(train, ssm::to_model(model_raw(theta)), action_from_joint(theta), options.engine);
        if (report.trade_count == 0)
        {
            return options.zero_trade_penalty + box;
        }
        return -report.sharpe + options.lambda_l1 * l1 + box;
    }
    catch (const ssm::NumericalDegeneracy &)
    {
        return options.zero_trade_penalty + box;
    }
}

GridResult grid_search_actions(const std::vector<ActionParams> &grid,
                               const std::function<BacktestReport(const ActionParams &)> &run)
{
    if (grid.empty())
    {
        throw std::invalid_argument("grid_search_actions: empty grid");
    }
    GridResult best{grid.front(), run(grid.front())};
    for (std::size_t i = 1; i < grid.size(); ++i)
    {
        BacktestReport report = run(grid[i]);
        if (report.sharpe > best.report.sharpe)
        {
            best = GridResult{grid[i], std::move(report)};
        }
    }
    return best;
}

void write_report_csv(std::ostream &out, const BacktestReport &r)
{
    const auto row = [&](const char *name, double v) { out << name << ',' << format_double(v) << '\n'; };
    out << "field,value\n";
    row("net_profit", r.net_profit);
    row("total_net_profit_pct", r.total_net_profit_pct);
    row("annualized_net_profit_pct", r.annualized_net_profit_pct);
    row("volatility_pct", r.volatility_pct);
    row("sharpe", r.sharpe);
    row("max_drawdown", r.max_drawdown);
    row("recovery_factor", r.recovery_factor);
    row("profit_factor", r.profit_factor);
    row("trade_count", static_cast<double>(r.trade_count));
    row("avg_trade", r.avg_trade);
    row("avg_winning_trade", r.avg_winning_trade);
    row("percent_profitable", r.percent_profitable);
    row("max_consecutive_winners", static_cast<double>(r.max_consecutive_winners));
    row("gross_profit", r.gross_profit);
    row("gross_loss", r.gross_loss);
    row("total_costs", r.total_costs);
    row("days", static_cast<double>(r.days));
}

void write_trades_csv(std::ostream &out, std::span<const Trade> trades)
{
    out << "entry_time,exit_time,direction,entry,exit,pnl,reason\n";
    for (const Trade &t : trades)
    {
        out << t.entry_time << ',' << t.exit_time << ',' << to_string(t.direction) << ','
            << format_double(t.entry_price) << ',' << format_double(t.exit_price) << ',' << format_double(t.pnl)
            << ',' << to_string(t.exit_reason) << '\n';
    }
}

void write_equity_csv(std::ostream &out, const BacktestReport &report)
{
    out << "timestamp,equity\n";
    for (std::size_t i = 0; i < report.daily_equity.size(); ++i)
    {
        out << report.decision_times[i] << ',' << format_double(report.daily_equity[i]) << '\n';
    }
}

} // namespace igo::strategy
