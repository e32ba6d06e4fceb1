#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "igo/data_io.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace igo::data;

namespace
{

BarSeries parse(const std::string &text)
{
    std::istringstream in(text);
    return parse_bars(in);
}

std::filesystem::path temp_dir()
{
    auto dir = std::filesystem::temp_directory_path() / "igo_test_data_io";
    std::filesystem::create_directories(dir);
    return dir;
}

void check_same(const BarSeries &a, const BarSeries &b)
{
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
    {
        CHECK(a.bars[i].timestamp == b.bars[i].timestamp);
        CHECK(a.bars[i].open == b.bars[i].open);
        CHECK(a.bars[i].high == b.bars[i].high);
        CHECK(a.bars[i].low == b.bars[i].low);
        CHECK(a.bars[i].close == b.bars[i].close);
        CHECK(a.bars[i].volume == b.bars[i].volume);
    }
}

const std::string kHeader = "timestamp,open,high,low,close,volume\n";

} // namespace

TEST_CASE("parse_bars examples")
{
    CHECK(parse(kHeader).empty());
    const BarSeries two = parse(kHeader + "60,100,101,99.5,100.25,10\n120,100.25,100.5,100,100.5,3\n");
    REQUIRE(two.size() == 2);
    CHECK(two.bars[1].close == 100.5);
    CHECK(two.bars[0].low == 99.5);
}

TEST_CASE("parse_bars reports the offending line")
{
    try
    {
        parse(kHeader + "60,100,101,99,100,1\n120,100,99,101,100,1\n");
        FAIL("expected a parse error");
    }
    catch (const ParseError &e)
    {
        CHECK(e.line() == 3);
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse(kHeader + "60,100,101,abc,100,1\n"), ParseError);
    CHECK_THROWS_AS(parse(kHeader + "60,100,101,99,100\n"), ParseError);
    CHECK_THROWS_AS(parse(kHeader + "60,100,101,99,100,1,7\n"), ParseError);
    CHECK_THROWS_AS(parse("time,open,high,low,close,volume\n"), ParseError);
    CHECK_THROWS_AS(parse(""), ParseError);
    CHECK_THROWS_AS(parse(kHeader + "60,-1,1,-2,0.5,1\n"), ParseError);
}

TEST_CASE("parse_bars rejects unsorted timestamps")
{
    CHECK_THROWS_AS(parse(kHeader + "120,100,101,99,100,1\n60,100,101,99,100,1\n"), OrderingError);
    CHECK_THROWS_AS(parse(kHeader + "60,100,101,99,100,1\n60,100,101,99,100,1\n"), OrderingError);
}

TEST_CASE("parse_bars skips comment lines before the header and accepts CRLF")
{
    const BarSeries s = parse("# seed=1 config_hash=abc mapping=v1\r\n" + std::string("timestamp,open,high,low,close,volume\r\n") +
                              "60,100,101,99,100,1\r\n");
    CHECK(s.size() == 1);
}

TEST_CASE("round trip through text and gzip keeps full precision")
{
    std::vector<Regime> regimes{{50, 1e-4, 2e-3}};
    const BarSeries s = synth_trend_series(5, 200, regimes);
    std::ostringstream out;
    write_bars(out, s);
    check_same(parse(out.str()), s);

    const auto dir = temp_dir();
    const std::string plain = (dir / "bars.csv").string();
    const std::string gz = (dir / "bars.csv.gz").string();
    save_bars(plain, s, "# comment\n");
    save_bars(gz, s);
    check_same(load_bars(plain), s);
    check_same(load_bars(gz), s);
    CHECK_THROWS_AS(load_bars((dir / "missing.csv").string()), DataError);
}

TEST_CASE("synthetic series examples")
{
    const BarSeries up = synth_trend_series(1, 300, {{300, 1e-3, 0.0}});
    for (std::size_t i = 1; i < up.size(); ++i)
        CHECK(up.bars[i].close > up.bars[i - 1].close);

    const std::vector<Regime> regimes{{100, 2e-4, 1e-3}, {80, -1e-4, 2e-3}};
    const BarSeries a = synth_trend_series(9, 500, regimes);
    const BarSeries b = synth_trend_series(9, 500, regimes);
    check_same(a, b);
    CHECK(synth_trend_series(10, 500, regimes).bars.back().close != a.bars.back().close);
}

TEST_CASE("synthetic series: per-regime drift within three standard errors")
{
    const double vol = 1e-3;
    const std::vector<Regime> regimes{{500, 1e-3, vol}, {500, -1e-3, vol}};
    const BarSeries s = synth_trend_series(3, 1000, regimes);
    const double se = vol / std::sqrt(500.0);
    const double up = std::log(s.bars[499].close / s.bars[0].open) / 500.0;
    const double down = std::log(s.bars[999].close / s.bars[499].close) / 500.0;
    CHECK(std::abs(up - 1e-3) < 3 * se);
    CHECK(std::abs(down + 1e-3) < 3 * se);
}

TEST_CASE("property: every synthetic bar satisfies the OHLC invariants")
{
    for (std::uint64_t seed = 1; seed <= 5; ++seed)
    {
        const auto regimes = random_regimes(seed, 5000, RegimeSwitchSpec{});
        const BarSeries s = synth_trend_series(seed, 5000, regimes, SynthOptions{2500.0, 1483281000, 40, 60, {}});
        CHECK_NOTHROW(validate_series(s));
        for (const Bar &bar : s.bars)
            CHECK(bar_is_valid(bar));
    }
}

TEST_CASE("synthetic sessions stay inside one UTC day")
{
    const BarSeries s = synth_trend_series(1, 120, {{120, 0.0, 1e-3}}, SynthOptions{100.0, 1483281000, 40, 60, {}});
    CHECK(s.bars[39].timestamp / 86400 == s.bars[0].timestamp / 86400);
    CHECK(s.bars[40].timestamp / 86400 == s.bars[0].timestamp / 86400 + 1);
}

TEST_CASE("random regimes alternate direction and cover the request")
{
    RegimeSwitchSpec spec;
    spec.min_drift = 1e-5;
    const auto r = random_regimes(4, 10000, spec);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < r.size(); ++i)
    {
        covered += r[i].length;
        CHECK(r[i].length >= spec.min_length);
        CHECK(r[i].length <= spec.max_length);
        if (i > 0)
            CHECK(r[i].drift * r[i - 1].drift < 0.0);
    }
    CHECK(covered >= 10000);
}

TEST_CASE("split_train_test examples")
{
    const BarSeries s100 = synth_trend_series(1, 100, {{100, 0.0, 1e-3}});
    const auto [a, b] = split_train_test(s100, 0.5);
    CHECK(a.size() == 50);
    CHECK(b.size() == 50);
    CHECK(a.bars.back().timestamp < b.bars.front().timestamp);
    CHECK(a.bars.back().timestamp == s100.bars[49].timestamp);
    CHECK(b.bars.front().timestamp == s100.bars[50].timestamp);

    const BarSeries s10 = synth_trend_series(1, 10, {{10, 0.0, 1e-3}});
    const auto [c, d] = split_train_test(s10, 0.99);
    CHECK(c.size() == 9);
    CHECK(d.size() == 1);

    CHECK_THROWS_AS(split_train_test(s10, 0.05), DataError);
    CHECK_THROWS_AS(split_train_test(s10, 0.0), DataError);
    CHECK_THROWS_AS(split_train_test(s10, 1.0), DataError);
}
