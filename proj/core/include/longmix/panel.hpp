#pragma once

#include <Eigen/Core>
#include <array>
#include <map>
#include <string>
#include <vector>

namespace longmix {

enum class Borough { M, Bk, Bx, Q };
enum class Season { winter, spring, summer, fall };

std::string to_string(Borough b);
std::string to_string(Season s);
Borough borough_from_string(const std::string& s);
Season season_from_string(const std::string& s);

// Meteorological convention: {12,1,2} winter, {3,4,5} spring, {6,7,8} summer,
// {9,10,11} fall. month must be 1..12.
Season classify_season(int month);

// The eleven monthly weather covariates, in canonical column order. This
// order is shared by the canonical CSV, the weather summary matrix, and the
// PCA loading table.
inline constexpr std::array<const char*, 11> kWeatherColumns = {
    "max_temp",   "avg_temp",      "min_temp",     "max_dew_point",
    "avg_dew_point", "min_dew_point", "total_precip", "max_wind",
    "avg_wind",   "max_gust",      "avg_gust",
};

// One row of the canonical analysis panel: an origin-destination pair
// observed in one calendar month, joined with that month's weather.
struct Observation {
    std::string origin_id;
    std::string destination_id;
    int month = 0;  // 1..12
    double avg_ridership = 0.0;
    Borough origin_borough = Borough::M;
    Borough destination_borough = Borough::M;
    std::string origin_name;
    std::string destination_name;
    std::array<double, 11> weather{};  // kWeatherColumns order
    Season season = Season::winter;

    std::string pair_id() const { return origin_id + "_" + destination_id; }
};

// Balanced longitudinal panel, canonically ordered by (pair_id, month).
// Derived numeric columns (indicators, month, weather) are exposed by name so
// the design layer never hand-rolls per-model extraction. PC score columns
// appear after merge_scores().
class Panel {
public:
    Panel() = default;
    explicit Panel(std::vector<Observation> obs);

    const std::vector<Observation>& rows() const { return obs_; }
    std::size_t size() const { return obs_.size(); }
    bool empty() const { return obs_.empty(); }

    // Distinct pair ids in canonical (sorted) order.
    std::vector<std::string> pair_ids() const;
    int n_pairs() const;

    bool has_column(const std::string& name) const;
    // Named numeric column over all rows. Known names: avg_ridership, month,
    // the 11 weather columns, M, N, Bk, Bx, Q, dest_M, dest_Bk, dest_Bx,
    // dest_Q, december, manhattan_origin, and any merged score column
    // (PC1, PC2, ...). Throws UnknownColumn.
    Eigen::VectorXd column(const std::string& name) const;
    std::vector<std::string> score_columns() const;
    void set_score_column(const std::string& name, const Eigen::VectorXd& values);

private:
    std::vector<Observation> obs_;
    std::map<std::string, Eigen::VectorXd> scores_;
};

}  // namespace longmix
