#include "longmix/panel.hpp"

#include <algorithm>

#include "longmix/error.hpp"

namespace longmix {

std::string to_string(Borough b) {
    switch (b) {
        case Borough::M: return "M";
        case Borough::Bk: return "Bk";
        case Borough::Bx: return "Bx";
        case Borough::Q: return "Q";
    }
    fail(ErrorCode::InvalidBorough, "invalid borough enum value");
}

std::string to_string(Season s) {
    switch (s) {
        case Season::winter: return "winter";
        case Season::spring: return "spring";
        case Season::summer: return "summer";
        case Season::fall: return "fall";
    }
    fail(ErrorCode::InvalidSeason, "invalid season enum value");
}

Borough borough_from_string(const std::string& s) {
    if (s == "M") return Borough::M;
    if (s == "Bk") return Borough::Bk;
    if (s == "Bx") return Borough::Bx;
    if (s == "Q") return Borough::Q;
    fail(ErrorCode::InvalidBorough, "invalid borough '" + s + "' (expected M, Bk, Bx, or Q)");
}

Season season_from_string(const std::string& s) {
    if (s == "winter") return Season::winter;
    if (s == "spring") return Season::spring;
    if (s == "summer") return Season::summer;
    if (s == "fall") return Season::fall;
    fail(ErrorCode::InvalidSeason,
         "invalid season '" + s + "' (expected winter, spring, summer, or fall)");
}

Season classify_season(int month) {
    if (month < 1 || month > 12) {
        fail(ErrorCode::OutOfRange, "month " + std::to_string(month) + " outside 1..12");
    }
    if (month == 12 || month <= 2) return Season::winter;
    if (month <= 5) return Season::spring;
    if (month <= 8) return Season::summer;
    return Season::fall;
}

Panel::Panel(std::vector<Observation> obs) : obs_(std::move(obs)) {
    std::stable_sort(obs_.begin(), obs_.end(), [](const Observation& a, const Observation& b) {
        const std::string pa = a.pair_id();
        const std::string pb = b.pair_id();
        if (pa != pb) return pa < pb;
        return a.month < b.month;
    });
}

std::vector<std::string> Panel::pair_ids() const {
    std::vector<std::string> ids;
    for (const auto& o : obs_) {
        const std::string id = o.pair_id();
        if (ids.empty() || ids.back() != id) ids.push_back(id);
    }
    // rows are sorted by pair_id, so consecutive de-dup yields the sorted set
    return ids;
}

int Panel::n_pairs() const { return static_cast<int>(pair_ids().size()); }

namespace {

int weather_index(const std::string& name) {
    for (std::size_t i = 0; i < kWeatherColumns.size(); ++i) {
        if (name == kWeatherColumns[i]) return static_cast<int>(i);
    }
    return -1;
}

}  // namespace

bool Panel::has_column(const std::string& name) const {
    if (scores_.count(name)) return true;
    if (weather_index(name) >= 0) return true;
    static const char* kDerived[] = {"avg_ridership", "month",  "M",       "N",
                                     "Bk",            "Bx",     "Q",       "dest_M",
                                     "dest_Bk",       "dest_Bx", "dest_Q", "december",
                                     "manhattan_origin"};
    for (const char* d : kDerived) {
        if (name == d) return true;
    }
    return false;
}

Eigen::VectorXd Panel::column(const std::string& name) const {
    const auto n = static_cast<Eigen::Index>(obs_.size());
    auto it = scores_.find(name);
    if (it != scores_.end()) return it->second;

    Eigen::VectorXd v(n);
    const int w = weather_index(name);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Observation& o = obs_[static_cast<std::size_t>(i)];
        double x;
        if (w >= 0) {
            x = o.weather[static_cast<std::size_t>(w)];
        } else if (name == "avg_ridership") {
            x = o.avg_ridership;
        } else if (name == "month") {
            x = o.month;
        } else if (name == "M") {
            x = o.origin_borough == Borough::M ? 1.0 : 0.0;
        } else if (name == "N") {
            x = o.origin_borough != Borough::M ? 1.0 : 0.0;
        } else if (name == "Bk") {
            x = o.origin_borough == Borough::Bk ? 1.0 : 0.0;
        } else if (name == "Bx") {
            x = o.origin_borough == Borough::Bx ? 1.0 : 0.0;
        } else if (name == "Q") {
            x = o.origin_borough == Borough::Q ? 1.0 : 0.0;
        } else if (name == "dest_M") {
            x = o.destination_borough == Borough::M ? 1.0 : 0.0;
        } else if (name == "dest_Bk") {
            x = o.destination_borough == Borough::Bk ? 1.0 : 0.0;
        } else if (name == "dest_Bx") {
            x = o.destination_borough == Borough::Bx ? 1.0 : 0.0;
        } else if (name == "dest_Q") {
            x = o.destination_borough == Borough::Q ? 1.0 : 0.0;
        } else if (name == "december") {
            x = o.month == 12 ? 1.0 : 0.0;
        } else if (name == "manhattan_origin") {
            x = o.origin_borough == Borough::M ? 1.0 : 0.0;
        } else {
            fail(ErrorCode::UnknownColumn, "unknown column: " + name);
        }
        v[i] = x;
    }
    return v;
}

std::vector<std::string> Panel::score_columns() const {
    std::vector<std::string> names;
    for (const auto& [name, values] : scores_) names.push_back(name);
    return names;  // std::map iteration: already sorted
}

void Panel::set_score_column(const std::string& name, const Eigen::VectorXd& values) {
    if (values.size() != static_cast<Eigen::Index>(obs_.size())) {
        fail(ErrorCode::DimensionMismatch,
             "score column " + name + " has " + std::to_string(values.size()) + " values for " +
                 std::to_string(obs_.size()) + " rows");
    }
    scores_[name] = values;
}

}  // namespace longmix
