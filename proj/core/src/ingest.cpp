#include "longmix/ingest.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "longmix/csv.hpp"
#include "longmix/error.hpp"

namespace longmix {

const std::vector<std::string> kCanonicalColumns = {
    "origin_id",     "destination_id", "month",         "avg_ridership",
    "origin_borough", "destination_borough", "origin_name", "destination_name",
    "max_temp",      "avg_temp",       "min_temp",      "max_dew_point",
    "avg_dew_point", "min_dew_point",  "total_precip",  "max_wind",
    "avg_wind",      "max_gust",       "avg_gust",      "season",
};

namespace {

// Fixed-point with trailing zeros trimmed; round-trips exactly through
// strtod at these precisions (<= 9 significant digits in practice).
std::string format_trimmed(double x, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, x);
    std::string s(buf);
    if (s.find('.') != std::string::npos) {
        while (!s.empty() && s.back() == '0') s.pop_back();
        if (!s.empty() && s.back() == '.') s.pop_back();
    }
    if (s == "-0") s = "0";
    return s;
}

void check_weather_ordering(const Observation& o, std::size_t row) {
    auto bad = [&](const std::string& what) {
        std::ostringstream msg;
        msg << "inconsistent weather at data row " << row << " (month " << o.month
            << "): " << what;
        fail(ErrorCode::InconsistentWeather, msg.str());
    };
    const auto& w = o.weather;
    // kWeatherColumns order: 0 max_temp, 1 avg_temp, 2 min_temp, 3 max_dew,
    // 4 avg_dew, 5 min_dew, 6 total_precip, 7 max_wind, 8 avg_wind,
    // 9 max_gust, 10 avg_gust
    if (!(w[2] <= w[1] && w[1] <= w[0])) bad("temperature min <= avg <= max violated");
    if (!(w[5] <= w[4] && w[4] <= w[3])) bad("dew point min <= avg <= max violated");
    if (!(w[8] <= w[7])) bad("avg_wind > max_wind");
    if (!(w[10] <= w[9])) bad("avg_gust > max_gust");
    if (!(w[6] >= 0.0)) bad("total_precip < 0");
}

}  // namespace

void validate_panel(const Panel& panel) {
    if (panel.empty()) fail(ErrorCode::EmptyInput, "panel has no observations");

    std::map<std::string, std::set<int>> months_by_pair;
    std::map<std::string, Borough> borough_by_pair;
    std::map<int, std::array<double, 11>> weather_by_month;
    std::size_t row = 0;
    for (const auto& o : panel.rows()) {
        ++row;
        if (o.month < 1 || o.month > 12) {
            fail(ErrorCode::OutOfRange,
                 "month " + std::to_string(o.month) + " outside 1..12 at data row " +
                     std::to_string(row));
        }
        if (o.avg_ridership < 0.0) {
            fail(ErrorCode::OutOfRange,
                 "negative avg_ridership at data row " + std::to_string(row));
        }
        if (o.season != classify_season(o.month)) {
            fail(ErrorCode::InvalidSeason,
                 "season does not match month " + std::to_string(o.month) + " at data row " +
                     std::to_string(row));
        }
        check_weather_ordering(o, row);

        const std::string pid = o.pair_id();
        if (!months_by_pair[pid].insert(o.month).second) {
            fail(ErrorCode::UnbalancedPanel,
                 "pair " + pid + " has duplicate month " + std::to_string(o.month));
        }
        auto [it, inserted] = borough_by_pair.emplace(pid, o.origin_borough);
        if (!inserted && it->second != o.origin_borough) {
            fail(ErrorCode::CrossedGroups, "pair " + pid + " appears under two origin boroughs");
        }
        auto [wit, winserted] = weather_by_month.emplace(o.month, o.weather);
        if (!winserted && wit->second != o.weather) {
            fail(ErrorCode::InconsistentWeather,
                 "weather differs within month " + std::to_string(o.month));
        }
    }

    std::vector<std::string> offenders;
    for (const auto& [pid, months] : months_by_pair) {
        if (months.size() != 12) offenders.push_back(pid);
    }
    if (!offenders.empty()) {
        std::ostringstream msg;
        msg << "unbalanced panel; pairs without all 12 months:";
        for (const auto& pid : offenders) msg << ' ' << pid;
        fail(ErrorCode::UnbalancedPanel, msg.str());
    }
}

Panel parse_dataset(const std::string& path) {
    const csv::Table table = csv::read_file(path);

    if (table.header.size() != kCanonicalColumns.size()) {
        std::ostringstream msg;
        msg << "expected exactly " << kCanonicalColumns.size() << " columns, got "
            << table.header.size();
        fail(ErrorCode::MissingColumn, msg.str());
    }
    std::vector<std::size_t> idx;
    idx.reserve(kCanonicalColumns.size());
    for (const auto& name : kCanonicalColumns) idx.push_back(table.col(name));

    std::vector<Observation> obs;
    obs.reserve(table.rows.size());
    std::size_t row = 0;
    for (const auto& fields : table.rows) {
        ++row;
        Observation o;
        o.origin_id = fields[idx[0]];
        o.destination_id = fields[idx[1]];
        o.month = csv::to_int(fields[idx[2]], "month", row);
        o.avg_ridership = csv::to_double(fields[idx[3]], "avg_ridership", row);
        o.origin_borough = borough_from_string(fields[idx[4]]);
        o.destination_borough = borough_from_string(fields[idx[5]]);
        o.origin_name = fields[idx[6]];
        o.destination_name = fields[idx[7]];
        for (std::size_t w = 0; w < 11; ++w) {
            o.weather[w] = csv::to_double(fields[idx[8 + w]], kWeatherColumns[w], row);
        }
        o.season = season_from_string(fields[idx[19]]);
        obs.push_back(std::move(o));
    }

    Panel panel(std::move(obs));
    validate_panel(panel);
    return panel;
}

void write_dataset(const std::string& path, const Panel& panel) {
    csv::Table table;
    table.header = kCanonicalColumns;
    table.rows.reserve(panel.size());
    for (const auto& o : panel.rows()) {
        std::vector<std::string> row;
        row.reserve(20);
        row.push_back(o.origin_id);
        row.push_back(o.destination_id);
        row.push_back(std::to_string(o.month));
        row.push_back(format_trimmed(o.avg_ridership, 6));
        row.push_back(to_string(o.origin_borough));
        row.push_back(to_string(o.destination_borough));
        row.push_back(o.origin_name);
        row.push_back(o.destination_name);
        for (double w : o.weather) row.push_back(format_trimmed(w, 4));
        row.push_back(to_string(o.season));
        table.rows.push_back(std::move(row));
    }
    csv::write_file_atomic(path, table);
}

// ---- raw inputs ----------------------------------------------------------

std::vector<RawOdRow> parse_raw_od(const std::string& path) {
    const csv::Table table = csv::read_file(path);
    const std::size_t c_origin = table.col("origin_id");
    const std::size_t c_dest = table.col("destination_id");
    const std::size_t c_month = table.col("month");
    const std::size_t c_hour = table.col("hour");
    const std::size_t c_riders = table.col("estimated_ridership");

    std::vector<RawOdRow> rows;
    rows.reserve(table.rows.size());
    std::size_t row = 0;
    for (const auto& fields : table.rows) {
        ++row;
        RawOdRow r;
        r.origin_id = fields[c_origin];
        r.destination_id = fields[c_dest];
        r.month = csv::to_int(fields[c_month], "month", row);
        r.hour = csv::to_int(fields[c_hour], "hour", row);
        r.estimated_ridership = csv::to_double(fields[c_riders], "estimated_ridership", row);
        if (r.month < 1 || r.month > 12) {
            fail(ErrorCode::OutOfRange,
                 "month " + std::to_string(r.month) + " outside 1..12 at data row " +
                     std::to_string(row));
        }
        if (r.estimated_ridership < 0.0) {
            fail(ErrorCode::OutOfRange,
                 "negative estimated_ridership at data row " + std::to_string(row));
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) fail(ErrorCode::EmptyInput, "raw OD file has no rows: " + path);
    return rows;
}

std::map<std::string, StationInfo> parse_stations(const std::string& path) {
    const csv::Table table = csv::read_file(path);
    const std::size_t c_id = table.col("station_id");
    const std::size_t c_name = table.col("name");
    const std::size_t c_borough = table.col("borough");

    std::map<std::string, StationInfo> stations;
    for (const auto& fields : table.rows) {
        StationInfo info;
        info.name = fields[c_name];
        info.borough = borough_from_string(fields[c_borough]);
        stations[fields[c_id]] = std::move(info);
    }
    if (stations.empty()) fail(ErrorCode::EmptyInput, "station file has no rows: " + path);
    return stations;
}

std::vector<MonthlyWeather> parse_weather(const std::string& path) {
    const csv::Table table = csv::read_file(path);
    const std::size_t c_month = table.col("month");
    std::array<std::size_t, 11> cols{};
    for (std::size_t w = 0; w < 11; ++w) cols[w] = table.col(kWeatherColumns[w]);

    std::vector<MonthlyWeather> weather;
    std::size_t row = 0;
    for (const auto& fields : table.rows) {
        ++row;
        MonthlyWeather m;
        m.month = csv::to_int(fields[c_month], "month", row);
        for (std::size_t w = 0; w < 11; ++w) {
            m.values[w] = csv::to_double(fields[cols[w]], kWeatherColumns[w], row);
        }
        weather.push_back(m);
    }
    std::sort(weather.begin(), weather.end(),
              [](const MonthlyWeather& a, const MonthlyWeather& b) { return a.month < b.month; });
    for (int j = 0; j < 12; ++j) {
        if (static_cast<std::size_t>(j) >= weather.size() || weather[j].month != j + 1) {
            fail(ErrorCode::UnbalancedPanel, "weather file must cover months 1..12 exactly once");
        }
    }
    if (weather.size() != 12) {
        fail(ErrorCode::UnbalancedPanel, "weather file must cover months 1..12 exactly once");
    }
    return weather;
}

std::vector<PairMonthMean> aggregate_monthly(const std::vector<RawOdRow>& rows) {
    if (rows.empty()) fail(ErrorCode::EmptyInput, "no raw OD rows to aggregate");
    // Collect values per key and sum them in sorted value order so the mean
    // is a bit-identical function of the multiset (input row order invariant).
    std::map<std::tuple<std::string, std::string, int>, std::vector<double>> groups;
    for (const auto& r : rows) {
        groups[{r.origin_id, r.destination_id, r.month}].push_back(r.estimated_ridership);
    }
    std::vector<PairMonthMean> means;
    means.reserve(groups.size());
    for (auto& [key, values] : groups) {
        std::sort(values.begin(), values.end());
        double sum = 0.0;
        for (double v : values) sum += v;
        PairMonthMean m;
        m.origin_id = std::get<0>(key);
        m.destination_id = std::get<1>(key);
        m.month = std::get<2>(key);
        m.mean_ridership = sum / static_cast<double>(values.size());
        means.push_back(std::move(m));
    }
    return means;  // map iteration order: sorted by (origin, destination, month)
}

std::vector<std::pair<std::string, std::string>> sample_pairs(
    const std::vector<PairMonthMean>& means, int n, std::uint64_t seed) {
    std::map<std::pair<std::string, std::string>, std::set<int>> months;
    for (const auto& m : means) months[{m.origin_id, m.destination_id}].insert(m.month);

    std::vector<std::pair<std::string, std::string>> eligible;
    for (const auto& [key, ms] : months) {
        if (ms.size() == 12) eligible.push_back(key);
    }
    if (static_cast<int>(eligible.size()) < n) {
        std::ostringstream msg;
        msg << "not enough complete pairs: " << eligible.size() << " available, " << n
            << " requested";
        fail(ErrorCode::NotEnoughCompletePairs, msg.str());
    }

    // Fisher-Yates over the sorted eligible list with a portable bounded draw
    // (rejection sampling on the raw 64-bit stream, not
    // uniform_int_distribution, whose output is implementation-defined).
    std::mt19937_64 rng(seed);
    auto draw = [&rng](std::uint64_t bound) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t x;
        do {
            x = rng();
        } while (x >= limit);
        return x % bound;
    };
    for (std::size_t i = 0; i + 1 < eligible.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(draw(eligible.size() - i));
        std::swap(eligible[i], eligible[j]);
    }
    eligible.resize(static_cast<std::size_t>(n));
    std::sort(eligible.begin(), eligible.end());
    return eligible;
}

Panel assemble_panel(const std::vector<PairMonthMean>& means,
                     const std::vector<std::pair<std::string, std::string>>& pairs,
                     const std::map<std::string, StationInfo>& stations,
                     const std::vector<MonthlyWeather>& weather) {
    std::set<std::pair<std::string, std::string>> chosen(pairs.begin(), pairs.end());
    std::array<const MonthlyWeather*, 12> by_month{};
    for (const auto& w : weather) {
        if (w.month >= 1 && w.month <= 12) by_month[static_cast<std::size_t>(w.month - 1)] = &w;
    }
    for (int j = 0; j < 12; ++j) {
        if (!by_month[static_cast<std::size_t>(j)]) {
            fail(ErrorCode::UnbalancedPanel, "weather missing month " + std::to_string(j + 1));
        }
    }
    auto station = [&stations](const std::string& id) -> const StationInfo& {
        auto it = stations.find(id);
        if (it == stations.end()) {
            fail(ErrorCode::MissingColumn, "station metadata missing for id " + id);
        }
        return it->second;
    };

    std::vector<Observation> obs;
    obs.reserve(pairs.size() * 12);
    for (const auto& m : means) {
        if (!chosen.count({m.origin_id, m.destination_id})) continue;
        Observation o;
        o.origin_id = m.origin_id;
        o.destination_id = m.destination_id;
        o.month = m.month;
        o.avg_ridership = m.mean_ridership;
        const StationInfo& origin = station(m.origin_id);
        const StationInfo& dest = station(m.destination_id);
        o.origin_borough = origin.borough;
        o.destination_borough = dest.borough;
        o.origin_name = origin.name;
        o.destination_name = dest.name;
        o.weather = by_month[static_cast<std::size_t>(m.month - 1)]->values;
        o.season = classify_season(m.month);
        obs.push_back(std::move(o));
    }

    Panel panel(std::move(obs));
    validate_panel(panel);
    return panel;
}

Eigen::MatrixXd monthly_weather_summary(const Panel& panel) {
    if (panel.empty()) fail(ErrorCode::EmptyInput, "panel has no observations");
    Eigen::MatrixXd summary(12, 11);
    std::array<bool, 12> seen{};
    for (const auto& o : panel.rows()) {
        const auto j = static_cast<Eigen::Index>(o.month - 1);
        if (!seen[static_cast<std::size_t>(j)]) {
            for (Eigen::Index w = 0; w < 11; ++w) {
                summary(j, w) = o.weather[static_cast<std::size_t>(w)];
            }
            seen[static_cast<std::size_t>(j)] = true;
        } else {
            for (Eigen::Index w = 0; w < 11; ++w) {
                if (summary(j, w) != o.weather[static_cast<std::size_t>(w)]) {
                    fail(ErrorCode::InconsistentWeather,
                         "weather differs within month " + std::to_string(o.month));
                }
            }
        }
    }
    for (int j = 0; j < 12; ++j) {
        if (!seen[static_cast<std::size_t>(j)]) {
            fail(ErrorCode::UnbalancedPanel, "panel missing month " + std::to_string(j + 1));
        }
    }
    return summary;
}

Panel stratify(const Panel& panel, Borough origin) {
    std::vector<Observation> obs;
    for (const auto& o : panel.rows()) {
        if (o.origin_borough == origin) obs.push_back(o);
    }
    if (obs.empty()) {
        fail(ErrorCode::EmptyStratum, "no observations with origin borough " + to_string(origin));
    }
    Panel sub(std::move(obs));
    validate_panel(sub);
    return sub;
}

}  // namespace longmix
