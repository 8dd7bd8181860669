#include "longmix/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace longmix {

using nlohmann::json;

std::string format_fixed(double x, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, x);
    return buf;
}

std::string render_fit_text(const FitResult& fit) { return fit.to_table(); }

std::string render_comparison_text(const Comparison& cmp) {
    std::ostringstream os;
    std::size_t name_w = 5;
    for (const auto& row : cmp.rows) name_w = std::max(name_w, row.id.size());
    os << "model ranking by aic:\n";
    os << "  " << std::string(name_w, ' ')
       << "        aic        bic     loglik   k\n";
    for (const auto& row : cmp.rows) {
        os << "  " << row.id << std::string(name_w - row.id.size(), ' ');
        auto cell = [&os](const std::string& text, int width) {
            os << std::string(width > static_cast<int>(text.size())
                                  ? static_cast<std::size_t>(width) - text.size()
                                  : 1,
                              ' ')
               << text;
        };
        cell(format_fixed(row.aic_value, 3), 11);
        cell(format_fixed(row.bic_value, 3), 11);
        cell(format_fixed(row.loglik_value, 3), 11);
        cell(std::to_string(row.k), 4);
        os << "\n";
    }
    if (!cmp.comparable) os << "warning: " << cmp.warning << "\n";
    return os.str();
}

std::string fit_to_json(const FitResult& fit) { return fit.to_json(); }

std::string comparison_to_json(const Comparison& cmp) {
    json j;
    j["rows"] = json::array();
    for (const auto& row : cmp.rows) {
        json r;
        r["model"] = row.id;
        r["aic"] = row.aic_value;
        r["bic"] = row.bic_value;
        r["loglik"] = row.loglik_value;
        r["k"] = row.k;
        j["rows"].push_back(std::move(r));
    }
    j["comparable"] = cmp.comparable;
    j["warning"] = cmp.warning;
    return j.dump(2);
}

}  // namespace longmix
