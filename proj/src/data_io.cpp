#include "igo/data_io.hpp"

#include "igo/format.hpp"
#include "igo/random.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace igo::data
{

namespace
{

constexpr const char *kHeader = "timestamp,open,high,low,close,volume";

bool ends_with(const std::string &s, const std::string &suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string read_gzip(const std::string &path)
{
    gzFile file = gzopen(path.c_str(), "rb");
    if (!file)
    {
        throw DataError("cannot open " + path);
    }
    std::string out;
    char buf[1 << 16];
    int got = 0;
    while ((got = gzread(file, buf, sizeof(buf))) > 0)
    {
        out.append(buf, static_cast<std::size_t>(got));
    }
    const bool failed = got < 0;
    gzclose(file);
    if (failed)
    {
        throw DataError("corrupt gzip stream in " + path);
    }
    return out;
}

template <typename T>
T parse_field(std::string_view field, std::size_t line, const char *name)
{
    T value{};
    const char *begin = field.data();
    const char *end = field.data() + field.size();
    const auto result = std::from_chars(begin, end, value);
    if (result.ec != std::errc() || result.ptr != end)
    {
        throw ParseError(line, std::string("malformed ") + name + " '" + std::string(field) + "'");
    }
    return value;
}

} // namespace

bool bar_is_valid(const Bar &bar)
{
    const bool finite = std::isfinite(bar.open) && std::isfinite(bar.high) && std::isfinite(bar.low) &&
                        std::isfinite(bar.close) && std::isfinite(bar.volume);
    if (!finite)
    {
        return false;
    }
    const double lo = std::min(bar.open, bar.close);
    const double hi = std::max(bar.open, bar.close);
    return bar.low > 0.0 && bar.low <= lo && hi <= bar.high && bar.volume >= 0.0;
}

void validate_series(const BarSeries &series)
{
    for (std::size_t i = 0; i < series.bars.size(); ++i)
    {
        if (!bar_is_valid(series.bars[i]))
        {
            throw DataError("bar " + std::to_string(i) + " violates OHLC invariants");
        }
        if (i > 0 && series.bars[i].timestamp <= series.bars[i - 1].timestamp)
        {
            throw OrderingError("bar " + std::to_string(i) + " timestamp is not strictly increasing");
        }
    }
    if (!(series.instrument.tick_size > 0.0) || !(series.instrument.multiplier > 0.0))
    {
        throw DataError("tick size and multiplier must be positive");
    }
}

BarSeries parse_bars(std::istream &in, const Instrument &instrument)
{
    BarSeries series;
    series.instrument = instrument;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line))
    {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
        {
            line.pop_back();
        }
        if (!have_header)
        {
            if (!line.empty() && line[0] == '#')
            {
                continue; // provenance comments may precede the header
            }
            if (line != kHeader)
            {
                throw ParseError(line_no, std::string("expected header '") + kHeader + "'");
            }
            have_header = true;
            continue;
        }
        if (line.empty())
        {
            continue;
        }
        std::string_view rest(line);
        std::string_view fields[6];
        std::size_t count = 0;
        while (true)
        {
            const std::size_t comma = rest.find(',');
            if (count == 6)
            {
                throw ParseError(line_no, "too many fields");
            }
            fields[count++] = rest.substr(0, comma);
            if (comma == std::string_view::npos)
            {
                break;
            }
            rest.remove_prefix(comma + 1);
        }
        if (count != 6)
        {
            throw ParseError(line_no, "expected 6 fields, got " + std::to_string(count));
        }
        Bar bar;
        bar.timestamp = parse_field<std::int64_t>(fields[0], line_no, "timestamp");
        bar.open = parse_field<double>(fields[1], line_no, "open");
        bar.high = parse_field<double>(fields[2], line_no, "high");
        bar.low = parse_field<double>(fields[3], line_no, "low");
        bar.close = parse_field<double>(fields[4], line_no, "close");
        bar.volume = parse_field<double>(fields[5], line_no, "volume");
        if (!bar_is_valid(bar))
        {
            throw ParseError(line_no, "bar violates low <= min(open, close) <= max(open, close) <= high");
        }
        if (!series.bars.empty() && bar.timestamp <= series.bars.back().timestamp)
        {
            throw OrderingError("line " + std::to_string(line_no) + ": timestamps are not strictly increasing");
        }
        series.bars.push_back(bar);
    }
    if (!have_header)
    {
        throw ParseError(line_no + 1, "missing header");
    }
    return series;
}

BarSeries load_bars(const std::string &path, const Instrument &instrument)
{
    if (ends_with(path, ".gz"))
    {
        std::istringstream in(read_gzip(path));
        return parse_bars(in, instrument);
    }
    std::ifstream in(path, std::ios::binary);
    if (!in)
    {
        throw DataError("cannot open " + path);
    }
    return parse_bars(in, instrument);
}

void write_bars(std::ostream &out, const BarSeries &series)
{
    out << kHeader << '\n';
    for (const Bar &bar : series.bars)
    {
        out << bar.timestamp << ',' << format_double(bar.open) << ',' << format_double(bar.high) << ','
            << format_double(bar.low) << ',' << format_double(bar.close) << ',' << format_double(bar.volume)
            << '\n';
    }
}

void save_bars(const std::string &path, const BarSeries &series, const std::string &preamble)
{
    std::ostringstream buffer;
    buffer << preamble;
    write_bars(buffer, series);
    const std::string text = buffer.str();
    if (ends_with(path, ".gz"))
    {
        // zlib writes a fixed header (mtime 0, no file name), so output is reproducible.
        gzFile file = gzopen(path.c_str(), "wb9");
        if (!file)
        {
            throw DataError("cannot write " + path);
        }
        const int wrote = gzwrite(file, text.data(), static_cast<unsigned>(text.size()));
        gzclose(file);
        if (wrote != static_cast<int>(text.size()))
        {
            throw DataError("short write to " + path);
        }
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out)
    {
        throw DataError("cannot write " + path);
    }
    out << text;
}

BarSeries synth_trend_series(std::uint64_t seed, std::size_t n_bars, const std::vector<Regime> &regimes,
                             const SynthOptions &options)
{
    if (regimes.empty())
    {
        throw DataError("synth_trend_series: at least one regime is required");
    }
    for (const Regime &r : regimes)
    {
        if (r.length == 0 || r.volatility < 0.0)
        {
            throw DataError("synth_trend_series: regimes need positive length and non-negative volatility");
        }
    }
    if (options.bars_per_day < 1 || options.bar_seconds < 1 ||
        static_cast<std::int64_t>(options.bars_per_day) * options.bar_seconds >= 86400)
    {
        throw DataError("synth_trend_series: a session must fit inside one day");
    }

    BarSeries series;
    series.instrument = options.instrument;
    series.bars.reserve(n_bars);
    NormalRng rng(stream_seed(seed, 0x5eedULL));

    double log_price = std::log(options.start_price);
    std::size_t regime_index = 0;
    std::size_t left_in_regime = regimes[0].length;
    for (std::size_t i = 0; i < n_bars; ++i)
    {
        if (left_in_regime == 0)
        {
            regime_index = (regime_index + 1) % regimes.size();
            left_in_regime = regimes[regime_index].length;
        }
        const Regime &regime = regimes[regime_index];
        --left_in_regime;

        Bar bar;
        const std::int64_t day = static_cast<std::int64_t>(i) / options.bars_per_day;
        const std::int64_t slot = static_cast<std::int64_t>(i) % options.bars_per_day;
        bar.timestamp = options.start_time + day * 86400 + (slot + 1) * options.bar_seconds;
        bar.open = std::exp(log_price);
        bar.high = bar.open;
        bar.low = bar.open;
        for (int s = 0; s < 4; ++s)
        {
            log_price += 0.25 * regime.drift + 0.5 * regime.volatility * rng.normal();
            const double p = std::exp(log_price);
            bar.high = std::max(bar.high, p);
            bar.low = std::min(bar.low, p);
            bar.close = p;
        }
        bar.volume = 1000.0;
        series.bars.push_back(bar);
    }
    return series;
}

std::vector<Regime> random_regimes(std::uint64_t seed, std::size_t n_bars, const RegimeSwitchSpec &spec)
{
    if (spec.min_length == 0 || spec.max_length < spec.min_length)
    {
        throw DataError("random_regimes: invalid length range");
    }
    NormalRng rng(stream_seed(seed, 0x7e91e5ULL));
    std::vector<Regime> out;
    std::size_t covered = 0;
    double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    while (covered < n_bars)
    {
        Regime r;
        const std::size_t span = spec.max_length - spec.min_length + 1;
        r.length = spec.min_length + static_cast<std::size_t>(rng.next_u64() % span);
        r.drift = sign * (spec.min_drift + (spec.max_drift - spec.min_drift) * rng.uniform());
        r.volatility = spec.volatility;
        out.push_back(r);
        covered += r.length;
        sign = -sign;
    }
    return out;
}

std::pair<BarSeries, BarSeries> split_train_test(const BarSeries &series, double fraction)
{
    if (!(fraction > 0.0 && fraction < 1.0))
    {
        throw DataError("split fraction must lie in (0, 1)");
    }
    const std::size_t n = series.size();
    const auto cut = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
    if (cut == 0 || cut >= n)
    {
        throw DataError("split leaves an empty side (" + std::to_string(cut) + "/" + std::to_string(n - std::min(cut, n)) + ")");
    }
    BarSeries train{std::vector<Bar>(series.bars.begin(), series.bars.begin() + static_cast<std::ptrdiff_t>(cut)),
                    series.instrument};
    BarSeries test{std::vector<Bar>(series.bars.begin() + static_cast<std::ptrdiff_t>(cut), series.bars.end()),
                   series.instrument};
    return {std::move(train), std::move(test)};
}

} // namespace igo::data
