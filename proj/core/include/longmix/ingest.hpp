#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "longmix/panel.hpp"

namespace longmix {

// ---- canonical panel I/O ----------------------------------------------

// The canonical 20-column CSV schema, in order.
extern const std::vector<std::string> kCanonicalColumns;

// Parse the canonical CSV and validate every panel invariant: schema, month
// range, borough/season enums, non-negative ridership, weather ordering
// (min<=avg<=max for temperature and dew point, avg<=max for wind and gust,
// total_precip>=0), weather constant within month, balanced 12-month pairs.
Panel parse_dataset(const std::string& path);

// Validation alone (used by parse_dataset and by pipeline assembly).
void validate_panel(const Panel& panel);

// Write the canonical CSV (atomic temp-file-rename). Numeric formatting is
// stable: ridership %.6f-trimmed, weather %.4f-trimmed, so a write/parse
// round trip reproduces values bit-for-bit at this precision.
void write_dataset(const std::string& path, const Panel& panel);

// ---- raw inputs (pipeline mode) ----------------------------------------

struct RawOdRow {
    std::string origin_id;
    std::string destination_id;
    int month = 0;
    int hour = 0;
    double estimated_ridership = 0.0;
};

struct StationInfo {
    std::string name;
    Borough borough = Borough::M;
};

struct MonthlyWeather {
    int month = 0;
    std::array<double, 11> values{};  // kWeatherColumns order
};

std::vector<RawOdRow> parse_raw_od(const std::string& path);
std::map<std::string, StationInfo> parse_stations(const std::string& path);
std::vector<MonthlyWeather> parse_weather(const std::string& path);

// Mean estimated ridership per (origin, destination, month), keys sorted.
struct PairMonthMean {
    std::string origin_id;
    std::string destination_id;
    int month = 0;
    double mean_ridership = 0.0;
};
std::vector<PairMonthMean> aggregate_monthly(const std::vector<RawOdRow>& rows);

// Deterministic sample of n pairs among those observed in all 12 months.
// Selection: sort eligible pair keys, Fisher-Yates with seeded mt19937_64
// (portable: own bounded-draw, not uniform_int_distribution), then re-sort
// the chosen keys. Throws NotEnoughCompletePairs if fewer than n eligible.
std::vector<std::pair<std::string, std::string>> sample_pairs(
    const std::vector<PairMonthMean>& means, int n, std::uint64_t seed);

// Assemble the canonical panel from raw parts for the sampled pairs.
Panel assemble_panel(const std::vector<PairMonthMean>& means,
                     const std::vector<std::pair<std::string, std::string>>& pairs,
                     const std::map<std::string, StationInfo>& stations,
                     const std::vector<MonthlyWeather>& weather);

// ---- panel-derived summaries -------------------------------------------

// 12x11 matrix of the weather covariates by month (rows: months 1..12 in
// order; cols: kWeatherColumns). Verifies weather is constant within month.
Eigen::MatrixXd monthly_weather_summary(const Panel& panel);

// Sub-panel of pairs whose origin borough matches. Throws EmptyStratum.
Panel stratify(const Panel& panel, Borough origin);

}  // namespace longmix
