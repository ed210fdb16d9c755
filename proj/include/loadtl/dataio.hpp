#pragma once

// Hourly building-load ingestion: CSV parsing, imputation, calendar features,
// min-max normalization, sliding windows and the train/eval budget split.
// Also a seeded synthetic building generator that writes the same schema.

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "loadtl/numcore.hpp"

namespace loadtl {

/// Whole hours since 1970-01-01T00:00Z.
struct HourStamp {
    std::int64_t hours = 0;
    friend auto operator<=>(const HourStamp&, const HourStamp&) = default;
};

inline std::chrono::sys_days to_sys_days(HourStamp t) {
    std::int64_t days = t.hours / 24;
    if (t.hours % 24 < 0) --days;
    return std::chrono::sys_days{std::chrono::days{days}};
}

inline int hour_of_day(HourStamp t) { return static_cast<int>(((t.hours % 24) + 24) % 24); }

inline HourStamp make_hour(int year, unsigned month, unsigned day, int hour) {
    const std::chrono::year_month_day ymd{std::chrono::year{year}, std::chrono::month{month},
                                          std::chrono::day{day}};
    const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
    return HourStamp{static_cast<std::int64_t>(days) * 24 + hour};
}

inline std::string format_timestamp(HourStamp t) {
    const std::chrono::year_month_day ymd{to_sys_days(t)};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:00:00", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  hour_of_day(t));
    return buf;
}

namespace detail {

inline bool parse_uint(std::string_view s, int& out) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            return out;
        }
        out.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
}

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

}  // namespace detail

/// Accepts YYYY-MM-DD[T| ]HH:MM[:SS][Z]; minutes and seconds must be zero.
inline HourStamp parse_timestamp(std::string_view s, std::size_t line = 0) {
    const std::string text(s);
    auto fail = [&](const std::string& why) -> HourStamp {
        throw ParseError("invalid timestamp '" + text + "': " + why, line);
    };
    if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
    if (s.size() != 16 && s.size() != 19) return fail("expected YYYY-MM-DDTHH:MM[:SS]");
    if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':')
        return fail("expected YYYY-MM-DDTHH:MM[:SS]");
    int y, mo, d, h, mi, sec = 0;
    if (!detail::parse_uint(s.substr(0, 4), y) || !detail::parse_uint(s.substr(5, 2), mo) ||
        !detail::parse_uint(s.substr(8, 2), d) || !detail::parse_uint(s.substr(11, 2), h) ||
        !detail::parse_uint(s.substr(14, 2), mi))
        return fail("non-numeric field");
    if (s.size() == 19 && (s[16] != ':' || !detail::parse_uint(s.substr(17, 2), sec)))
        return fail("bad seconds field");
    const std::chrono::year_month_day ymd{std::chrono::year{y},
                                          std::chrono::month{static_cast<unsigned>(mo)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) return fail("no such calendar date");
    if (h > 23 || mi > 59 || sec > 59) return fail("time of day out of range");
    if (mi != 0 || sec != 0) return fail("not aligned to the hour");
    return make_hour(y, static_cast<unsigned>(mo), static_cast<unsigned>(d), h);
}

/// Weather columns carried on every record. The last two are parsed and
/// written back but never used as model inputs.
enum class Weather : std::size_t {
    air_temp,
    cloud_coverage,
    dew_temp,
    precip_depth,
    wind_speed,
    sea_level_pressure,
    wind_direction,
};
inline constexpr std::size_t kWeatherCount = 7;
inline constexpr std::size_t kModeledWeatherCount = 5;

struct LoadRecord {
    HourStamp time;
    double load = 0.0;  // kWh
    std::array<std::optional<double>, kWeatherCount> weather{};

    std::optional<double>& operator[](Weather w) { return weather[static_cast<std::size_t>(w)]; }
    const std::optional<double>& operator[](Weather w) const {
        return weather[static_cast<std::size_t>(w)];
    }
    friend bool operator==(const LoadRecord&, const LoadRecord&) = default;
};

/// Header names for each field. Defaults follow the ASHRAE meter/weather export.
struct CsvSchema {
    std::string timestamp = "timestamp";
    std::string load = "meter_reading";
    std::array<std::string, kWeatherCount> weather = {
        "air_temperature",   "cloud_coverage",     "dew_temperature", "precip_depth_1_hr",
        "wind_speed",        "sea_level_pressure", "wind_direction"};
};

struct ParsedDataset {
    std::vector<LoadRecord> records;
    std::vector<std::string> warnings;
};

inline ParsedDataset parse_dataset(std::istream& in, const CsvSchema& schema = {}) {
    ParsedDataset out;
    std::string line;
    std::size_t line_no = 0;
    // Skip leading blank lines.
    while (std::getline(in, line)) {
        ++line_no;
        if (!detail::trim(line).empty()) break;
    }
    if (detail::trim(line).empty()) throw ParseError("missing header row", line_no);

    const auto header = detail::split_csv_line(line);
    std::optional<std::size_t> ts_col, load_col;
    std::array<std::optional<std::size_t>, kWeatherCount> weather_col{};
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string_view name = header[c];
        bool known = false;
        if (name == schema.timestamp) ts_col = c, known = true;
        if (name == schema.load) load_col = c, known = true;
        for (std::size_t w = 0; w < kWeatherCount; ++w)
            if (name == schema.weather[w]) weather_col[w] = c, known = true;
        if (!known) out.warnings.push_back("ignoring unknown column '" + std::string(name) + "'");
    }
    if (!ts_col) throw ParseError("header lacks column '" + schema.timestamp + "'", line_no);
    if (!load_col) throw ParseError("header lacks column '" + schema.load + "'", line_no);

    std::vector<std::size_t> record_lines;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " cells, found " +
                                 std::to_string(cells.size()),
                             line_no);
        LoadRecord rec;
        rec.time = parse_timestamp(cells[*ts_col], line_no);
        auto number = [&](std::string_view cell, const std::string& col) {
            double v = 0.0;
            auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc{} || p != cell.data() + cell.size() || !std::isfinite(v))
                throw ParseError("column '" + col + "': not a number '" + std::string(cell) + "'",
                                 line_no);
            return v;
        };
        const auto load_cell = cells[*load_col];
        if (load_cell.empty()) throw ValidationError("line " + std::to_string(line_no) + ": missing load");
        rec.load = number(load_cell, schema.load);
        if (rec.load < 0)
            throw ValidationError("line " + std::to_string(line_no) + ": negative load " +
                                  detail::format_double(rec.load));
        for (std::size_t w = 0; w < kWeatherCount; ++w) {
            if (!weather_col[w] || cells[*weather_col[w]].empty()) continue;
            rec.weather[w] = number(cells[*weather_col[w]], schema.weather[w]);
        }
        out.records.push_back(rec);
        record_lines.push_back(line_no);
    }

    std::vector<std::size_t> order(out.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return out.records[a].time < out.records[b].time;
    });
    std::vector<LoadRecord> sorted;
    sorted.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i > 0 && out.records[order[i]].time == out.records[order[i - 1]].time)
            throw ValidationError("duplicate hour " + format_timestamp(out.records[order[i]].time) +
                                  " on lines " + std::to_string(record_lines[order[i - 1]]) +
                                  " and " + std::to_string(record_lines[order[i]]));
        sorted.push_back(out.records[order[i]]);
    }
    out.records = std::move(sorted);
    return out;
}

inline ParsedDataset parse_dataset(std::string_view text, const CsvSchema& schema = {}) {
    std::istringstream in{std::string(text)};
    return parse_dataset(in, schema);
}

/// Writes the schema's columns in a fixed order; missing values become empty cells.
inline void write_dataset(std::ostream& out, const std::vector<LoadRecord>& records,
                          const CsvSchema& schema = {}) {
    out << schema.timestamp << ',' << schema.load;
    for (const auto& w : schema.weather) out << ',' << w;
    out << '\n';
    for (const auto& r : records) {
        out << format_timestamp(r.time) << ',' << detail::format_double(r.load);
        for (const auto& w : r.weather) {
            out << ',';
            if (w) out << detail::format_double(*w);
        }
        out << '\n';
    }
}

inline std::string weather_name(std::size_t w) { return CsvSchema{}.weather[w]; }

/// Forward-fills each modeled weather column; a leading gap takes the mean of
/// the values present in that column.
inline std::vector<LoadRecord> impute_missing(std::vector<LoadRecord> records) {
    for (std::size_t w = 0; w < kModeledWeatherCount; ++w) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& r : records)
            if (r.weather[w]) sum += *r.weather[w], ++n;
        if (n == 0) throw ValidationError("column '" + weather_name(w) + "' has no values to impute from");
        std::optional<double> last;
        const double mean = sum / static_cast<double>(n);
        for (auto& r : records) {
            if (r.weather[w])
                last = r.weather[w];
            else
                r.weather[w] = last ? *last : mean;
        }
    }
    return records;
}

enum Feature : std::size_t {
    kLoadLag,
    kAirTemp,
    kCloudCoverage,
    kDewTemp,
    kPrecipDepth,
    kWindSpeed,
    kHour,
    kDayOfWeek,
    kDayOfMonth,
    kMonth,
    kSeason,
    kIsWeekend,
    kFeatureCount
};

inline const std::array<std::string, kFeatureCount>& feature_names() {
    static const std::array<std::string, kFeatureCount> names = {
        "load_lag",   "air_temp", "cloud_coverage", "dew_temp",     "precip_depth", "wind_speed",
        "hour",       "day_of_week", "day_of_month", "month",       "season",       "is_weekend"};
    return names;
}

struct FeatureTable {
    std::vector<std::string> names;
    std::vector<HourStamp> times;
    Matrix values;  // rows x kFeatureCount

    std::size_t rows() const noexcept { return times.size(); }
    std::size_t cols() const noexcept { return names.size(); }
};

struct CalendarFields {
    int hour, day_of_week, day_of_month, month, season;
    bool weekend;
};

/// Monday = 0; seasons Dec-Feb 0, Mar-May 1, Jun-Aug 2, Sep-Nov 3.
inline CalendarFields calendar_fields(HourStamp t) {
    const auto days = to_sys_days(t);
    const std::chrono::year_month_day ymd{days};
    const std::chrono::weekday wd{days};
    CalendarFields f{};
    f.hour = hour_of_day(t);
    f.day_of_week = static_cast<int>(wd.iso_encoding()) - 1;
    f.day_of_month = static_cast<int>(static_cast<unsigned>(ymd.day()));
    f.month = static_cast<int>(static_cast<unsigned>(ymd.month()));
    f.season = (f.month % 12) / 3;
    f.weekend = f.day_of_week >= 5;
    return f;
}

inline FeatureTable engineer_features(const std::vector<LoadRecord>& records) {
    FeatureTable table;
    table.names.assign(feature_names().begin(), feature_names().end());
    table.values = Matrix(records.size(), kFeatureCount);
    table.times.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (i > 0 && !(records[i - 1].time < r.time))
            throw ValidationError("engineer_features: records not strictly time-ordered");
        auto row = table.values.row_span(i);
        row[kLoadLag] = r.load;
        for (std::size_t w = 0; w < kModeledWeatherCount; ++w) {
            if (!r.weather[w])
                throw ValidationError("engineer_features: missing " + weather_name(w) + " at " +
                                      format_timestamp(r.time) + " (impute first)");
            row[kAirTemp + w] = *r.weather[w];
        }
        const auto cal = calendar_fields(r.time);
        row[kHour] = cal.hour;
        row[kDayOfWeek] = cal.day_of_week;
        row[kDayOfMonth] = cal.day_of_month;
        row[kMonth] = cal.month;
        row[kSeason] = cal.season;
        row[kIsWeekend] = cal.weekend ? 1.0 : 0.0;
        table.times.push_back(r.time);
    }
    return table;
}

struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
};

struct NormalizerStats {
    std::vector<double> min;
    std::vector<double> max;
    double target_min = 0.0;
    double target_max = 0.0;
    friend bool operator==(const NormalizerStats&, const NormalizerStats&) = default;
};

inline double min_max_scale(double x, double lo, double hi) { return hi == lo ? 0.0 : (x - lo) / (hi - lo); }

inline NormalizerStats fit_normalizer(const FeatureTable& table, RowRange range) {
    if (range.begin >= range.end || range.end > table.rows())
        throw ValidationError("fit_normalizer: empty or out-of-bounds training range [" +
                              std::to_string(range.begin) + ", " + std::to_string(range.end) + ")");
    NormalizerStats s;
    s.min.assign(table.cols(), 0.0);
    s.max.assign(table.cols(), 0.0);
    for (std::size_t c = 0; c < table.cols(); ++c) {
        double lo = table.values(range.begin, c), hi = lo;
        for (std::size_t r = range.begin; r < range.end; ++r) {
            lo = std::min(lo, table.values(r, c));
            hi = std::max(hi, table.values(r, c));
        }
        s.min[c] = lo;
        s.max[c] = hi;
    }
    s.target_min = s.min[kLoadLag];
    s.target_max = s.max[kLoadLag];
    return s;
}

inline FeatureTable apply(const NormalizerStats& stats, const FeatureTable& table) {
    if (stats.min.size() != table.cols())
        throw DimensionError("normalizer has " + std::to_string(stats.min.size()) +
                             " features, table has " + std::to_string(table.cols()));
    FeatureTable out = table;
    for (std::size_t r = 0; r < table.rows(); ++r)
        for (std::size_t c = 0; c < table.cols(); ++c)
            out.values(r, c) = min_max_scale(table.values(r, c), stats.min[c], stats.max[c]);
    return out;
}

inline double normalize_target(const NormalizerStats& stats, double y) {
    return min_max_scale(y, stats.target_min, stats.target_max);
}

inline double invert_target(const NormalizerStats& stats, double y_norm) {
    if (stats.target_max == stats.target_min) return stats.target_min;
    return y_norm * (stats.target_max - stats.target_min) + stats.target_min;
}

struct WindowSample {
    Matrix inputs;       // window x features, oldest hour first
    double target = 0.0;  // normalized load `horizon` hours after the last input row
    HourStamp target_time;
    std::size_t target_row = 0;  // row of the target in the source table
};

/// One sample per row t whose hours t-window+1 .. t+horizon are consecutive.
inline std::vector<WindowSample> make_windows(const FeatureTable& table, std::size_t window = 6,
                                              std::size_t horizon = 1) {
    if (window < 1 || horizon < 1) throw ValidationError("make_windows: window and horizon must be >= 1");
    std::vector<WindowSample> out;
    const std::size_t n = table.rows();
    if (window + horizon > n) return out;
    // run[i]: length of the contiguous hourly run ending at row i.
    std::vector<std::size_t> run(n, 1);
    for (std::size_t i = 1; i < n; ++i)
        if (table.times[i].hours == table.times[i - 1].hours + 1) run[i] = run[i - 1] + 1;
    for (std::size_t t = window - 1; t + horizon < n; ++t) {
        if (run[t + horizon] < window + horizon) continue;
        WindowSample s;
        s.inputs = Matrix(window, table.cols());
        for (std::size_t k = 0; k < window; ++k) {
            auto src = table.values.row_span(t + 1 - window + k);
            std::copy(src.begin(), src.end(), s.inputs.row_span(k).begin());
        }
        s.target = table.values(t + horizon, kLoadLag);
        s.target_time = table.times[t + horizon];
        s.target_row = t + horizon;
        out.push_back(std::move(s));
    }
    return out;
}

/// Rows needed to build the first `samples` windows of a gap-free series.
inline std::size_t rows_spanned(std::size_t samples, std::size_t window, std::size_t horizon) {
    return samples + window + horizon - 1;
}

template <class T>
struct Split {
    std::vector<T> train;
    std::vector<T> eval;
};

/// Chronological: the first `budget` items train, the rest evaluate.
template <class T>
Split<T> split_budget(const std::vector<T>& samples, std::size_t budget = 336) {
    if (budget < 1) throw ValidationError("split_budget: budget must be >= 1");
    if (budget >= samples.size())
        throw ValidationError("split_budget: budget " + std::to_string(budget) + " leaves no evaluation data out of " +
                              std::to_string(samples.size()) + " samples");
    Split<T> s;
    s.train.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(budget));
    s.eval.assign(samples.begin() + static_cast<std::ptrdiff_t>(budget), samples.end());
    return s;
}

struct SyntheticProfile {
    double base_kw = 100.0;
    double daily_amp = 150.0;
    double weekend_factor = 0.4;
    double noise_sd = 3.0;
    double temp_coupling = 1.5;
};

/// Occupancy shape: zero outside 06:00-20:00, half-sine peaking at 13:00.
inline double occupancy_shape(int hour) {
    if (hour <= 6 || hour >= 20) return 0.0;
    return std::sin(std::numbers::pi * (hour - 6) / 14.0);
}

/// Hourly records starting at `start`. Weather anomalies are AR(1) processes
/// whose innovation scale is 10 * noise_sd / base_kw, so noise_sd = 0 yields an
/// exactly day-periodic (weather) and week-periodic (load) series.
inline std::vector<LoadRecord> generate_synthetic_building(std::uint64_t seed, std::size_t days,
                                                           const SyntheticProfile& p,
                                                           HourStamp start = make_hour(2016, 1, 1, 0)) {
    if (days < 1) throw ValidationError("generate_synthetic_building: days must be >= 1");
    if (!(p.base_kw > 0)) throw ValidationError("generate_synthetic_building: base_kw must be positive");
    Rng rng(seed);
    const double wx = 10.0 * p.noise_sd / p.base_kw;
    double temp_anom = 0.0, cloud_anom = 0.0, wind_anom = 0.0;
    std::vector<LoadRecord> out;
    out.reserve(days * 24);
    for (std::size_t i = 0; i < days * 24; ++i) {
        const HourStamp t{start.hours + static_cast<std::int64_t>(i)};
        const auto cal = calendar_fields(t);
        temp_anom = 0.95 * temp_anom + rng.normal(0.0, wx);
        cloud_anom = 0.9 * cloud_anom + rng.normal(0.0, wx);
        wind_anom = 0.8 * wind_anom + rng.normal(0.0, 0.5 * wx);
        const double noise = rng.normal(0.0, 1.0) * p.noise_sd;
        const double precip_draw = rng.normal(0.0, 1.0) * wx;

        const double temp = 12.0 + 6.0 * std::sin(2.0 * std::numbers::pi * (cal.hour - 9) / 24.0) + temp_anom;
        double load = p.base_kw + p.daily_amp * occupancy_shape(cal.hour);
        if (cal.weekend) load *= p.weekend_factor;
        load += p.temp_coupling * std::abs(temp - 15.0) + noise;

        LoadRecord r;
        r.time = t;
        r.load = std::max(0.0, load);
        r[Weather::air_temp] = temp;
        r[Weather::cloud_coverage] = std::clamp(std::round(4.0 + 2.0 * cloud_anom), 0.0, 9.0);
        r[Weather::dew_temp] = temp - 4.0 - 0.5 * cloud_anom;
        r[Weather::precip_depth] = std::max(0.0, std::round(precip_draw - 1.0));
        r[Weather::wind_speed] =
            std::max(0.0, 3.0 + 1.5 * std::sin(2.0 * std::numbers::pi * cal.hour / 24.0) + wind_anom);
        r[Weather::sea_level_pressure] = 1015.0;
        r[Weather::wind_direction] = std::fmod(360.0 + 180.0 + 40.0 * wind_anom, 360.0);
        out.push_back(r);
    }
    return out;
}

}  // namespace loadtl
