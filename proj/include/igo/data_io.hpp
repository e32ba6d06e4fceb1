/**
 * @file data_io.hpp
 * @brief OHLC bar series: CSV ingestion, synthetic generation, train/test split.
 *
 * CSV format (header required verbatim):
 *
 *     timestamp,open,high,low,close,volume
 *
 * Lines starting with '#' before the header are ignored.
 * Timestamps are UTC epoch seconds stamped at the bar close. Files ending in
 * `.gz` are read and written through zlib.
 */

#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace igo::data
{

class DataError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public DataError
{
public:
    ParseError(std::size_t line, const std::string &message)
        : DataError("line " + std::to_string(line) + ": " + message), line_(line)
    {
    }

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class OrderingError : public DataError
{
public:
    using DataError::DataError;
};

struct Bar
{
    std::int64_t timestamp = 0;
    double open = 0.0;
    double high = 0.0;
    double low = 0.0;
    double close = 0.0;
    double volume = 0.0;
};

/// Contract metadata needed to turn price moves into currency.
struct Instrument
{
    double tick_size = 0.25;
    double multiplier = 50.0;
};

struct BarSeries
{
    std::vector<Bar> bars;
    Instrument instrument;

    std::size_t size() const { return bars.size(); }
    bool empty() const { return bars.empty(); }
};

/// Checks low <= min(open, close) <= max(open, close) <= high and positive prices.
bool bar_is_valid(const Bar &bar);

/// Throws DataError / OrderingError when any series invariant fails.
void validate_series(const BarSeries &series);

BarSeries parse_bars(std::istream &in, const Instrument &instrument = {});
BarSeries load_bars(const std::string &path, const Instrument &instrument = {});

void write_bars(std::ostream &out, const BarSeries &series);
/// `preamble` is written verbatim ahead of the header (e.g. '#' comment lines).
void save_bars(const std::string &path, const BarSeries &series, const std::string &preamble = {});

struct Regime
{
    std::size_t length = 0; // bars
    double drift = 0.0;     // mean log return per bar
    double volatility = 0.0; // log-return standard deviation per bar
};

struct SynthOptions
{
    double start_price = 2500.0;
    std::int64_t start_time = 1483281000; // 2017-01-01 14:30:00 UTC
    int bars_per_day = 390;
    int bar_seconds = 60;
    Instrument instrument;
};

/**
 * Piecewise geometric random walk. Each bar is built from four sub-steps with
 * drift/4 and variance volatility^2/4; the regime list is cycled until
 * `n_bars` bars exist. Bars lie in daily sessions of `bars_per_day` bars.
 */
BarSeries synth_trend_series(std::uint64_t seed, std::size_t n_bars, const std::vector<Regime> &regimes,
                             const SynthOptions &options = {});

struct RegimeSwitchSpec
{
    std::size_t min_length = 400;
    std::size_t max_length = 2400;
    double min_drift = 0.0;
    double max_drift = 1.0e-4;
    double volatility = 1.6e-3;
};

/// Random alternating up/down regimes covering at least `n_bars` bars.
std::vector<Regime> random_regimes(std::uint64_t seed, std::size_t n_bars, const RegimeSwitchSpec &spec = {});

/// Prefix of floor(fraction * n) bars and the remaining suffix.
std::pair<BarSeries, BarSeries> split_train_test(const BarSeries &series, double fraction);

} // namespace igo::data
