#include "longmix/design.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include <Eigen/QR>

#include "json.hpp"
#include "longmix/error.hpp"

namespace longmix {

using nlohmann::json;

// ---- term factories --------------------------------------------------------

Term Term::intercept() {
    Term t;
    t.kind = Kind::intercept;
    return t;
}

Term Term::column(std::string name) {
    Term t;
    t.kind = Kind::column;
    t.name = std::move(name);
    return t;
}

Term Term::factor(std::string name, double baseline) {
    Term t;
    t.kind = Kind::factor;
    t.name = std::move(name);
    t.baseline = baseline;
    return t;
}

Term Term::interaction(std::string a, std::string b) {
    Term t;
    t.kind = Kind::interaction;
    t.name = std::move(a);
    t.other = std::move(b);
    return t;
}

Term Term::indicator_intercept(std::string name) {
    Term t;
    t.kind = Kind::indicator_scaled_intercept;
    t.name = std::move(name);
    return t;
}

Term Term::indicator_slope(std::string name, std::string time) {
    Term t;
    t.kind = Kind::indicator_scaled_slope;
    t.name = std::move(name);
    t.other = std::move(time);
    return t;
}

namespace {

std::string level_label(double level) {
    const double rounded = std::round(level);
    if (std::abs(level - rounded) < 1e-9) {
        std::ostringstream os;
        os << static_cast<long long>(rounded);
        return os.str();
    }
    std::ostringstream os;
    os << level;
    return os.str();
}

// ---- enum <-> string (JSON spellings) -----------------------------------

std::string kind_to_string(Term::Kind k) {
    switch (k) {
        case Term::Kind::intercept: return "intercept";
        case Term::Kind::column: return "column";
        case Term::Kind::factor: return "factor";
        case Term::Kind::interaction: return "interaction";
        case Term::Kind::indicator_scaled_intercept: return "indicator_intercept";
        case Term::Kind::indicator_scaled_slope: return "indicator_slope";
    }
    fail(ErrorCode::DecodeFailure, "unhandled term kind");
}

Term::Kind kind_from_string(const std::string& s) {
    if (s == "intercept") return Term::Kind::intercept;
    if (s == "column") return Term::Kind::column;
    if (s == "factor") return Term::Kind::factor;
    if (s == "interaction") return Term::Kind::interaction;
    if (s == "indicator_intercept") return Term::Kind::indicator_scaled_intercept;
    if (s == "indicator_slope") return Term::Kind::indicator_scaled_slope;
    fail(ErrorCode::DecodeFailure, "unknown term kind: " + s);
}

json term_to_json(const Term& t) {
    json j;
    j["kind"] = kind_to_string(t.kind);
    if (!t.name.empty()) j["name"] = t.name;
    if (!t.other.empty()) j["other"] = t.other;
    if (t.kind == Term::Kind::factor) j["baseline"] = t.baseline;
    return j;
}

Term term_from_json(const json& j) {
    Term t;
    t.kind = kind_from_string(j.at("kind").get<std::string>());
    t.name = j.value("name", std::string());
    t.other = j.value("other", std::string());
    t.baseline = j.value("baseline", 0.0);
    return t;
}

std::string grouping_to_string(Grouping g) {
    return g == Grouping::flat_pair ? "flat_pair" : "nested_borough_pair";
}

Grouping grouping_from_string(const std::string& s) {
    if (s == "flat_pair") return Grouping::flat_pair;
    if (s == "nested_borough_pair") return Grouping::nested_borough_pair;
    fail(ErrorCode::DecodeFailure, "unknown grouping: " + s);
}

std::string residual_to_string(ResidualKind r) {
    return r == ResidualKind::independent ? "independent" : "compound_symmetry";
}

ResidualKind residual_from_string(const std::string& s) {
    if (s == "independent") return ResidualKind::independent;
    if (s == "compound_symmetry") return ResidualKind::compound_symmetry;
    fail(ErrorCode::DecodeFailure, "unknown residual kind: " + s);
}

}  // namespace

// ---- model spec JSON -------------------------------------------------------

std::string ModelSpec::to_json() const {
    json j;
    j["response"] = response;
    j["fixed"] = json::array();
    for (const auto& t : fixed) j["fixed"].push_back(term_to_json(t));
    j["suppress_global_intercept"] = suppress_global_intercept;
    j["grouping"] = grouping_to_string(grouping);
    j["random"] = json::array();
    for (const auto& level : random) {
        json jl = json::array();
        for (const auto& t : level) jl.push_back(term_to_json(t));
        j["random"].push_back(std::move(jl));
    }
    j["d_structure"] = d_structure == DStructure::general ? "general" : "diagonal";
    j["residual"] = residual_to_string(residual.kind);
    j["method"] = method == FitMethod::reml ? "reml" : "ml";
    if (stratum) {
        j["stratum"] = to_string(*stratum);
    } else {
        j["stratum"] = nullptr;
    }
    j["needs_scores"] = needs_scores;
    return j.dump(2);
}

ModelSpec ModelSpec::from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail(ErrorCode::DecodeFailure, std::string("model spec is not valid JSON: ") + e.what());
    }
    try {
        ModelSpec spec;
        spec.response = j.value("response", std::string("avg_ridership"));
        for (const auto& jt : j.at("fixed")) spec.fixed.push_back(term_from_json(jt));
        spec.suppress_global_intercept = j.value("suppress_global_intercept", false);
        spec.grouping = grouping_from_string(j.value("grouping", std::string("flat_pair")));
        for (const auto& jl : j.at("random")) {
            std::vector<Term> level;
            for (const auto& jt : jl) level.push_back(term_from_json(jt));
            spec.random.push_back(std::move(level));
        }
        spec.d_structure = j.value("d_structure", std::string("general")) == "diagonal"
                               ? DStructure::diagonal
                               : DStructure::general;
        spec.residual.kind =
            residual_from_string(j.value("residual", std::string("independent")));
        spec.method = j.value("method", std::string("reml")) == "ml" ? FitMethod::ml
                                                                     : FitMethod::reml;
        if (j.contains("stratum") && !j.at("stratum").is_null()) {
            spec.stratum = borough_from_string(j.at("stratum").get<std::string>());
        }
        spec.needs_scores = j.value("needs_scores", 0);
        return spec;
    } catch (const json::exception& e) {
        fail(ErrorCode::DecodeFailure, std::string("malformed model spec: ") + e.what());
    }
}

// ---- term expansion --------------------------------------------------------

void expand_term(const Panel& panel, const Term& term, std::vector<std::string>& names,
                 std::vector<Eigen::VectorXd>& cols) {
    const auto n = static_cast<Eigen::Index>(panel.size());
    switch (term.kind) {
        case Term::Kind::intercept: {
            names.emplace_back("(Intercept)");
            cols.emplace_back(Eigen::VectorXd::Ones(n));
            return;
        }
        case Term::Kind::column:
        case Term::Kind::indicator_scaled_intercept: {
            names.push_back(term.name);
            cols.push_back(panel.column(term.name));
            return;
        }
        case Term::Kind::interaction:
        case Term::Kind::indicator_scaled_slope: {
            names.push_back(term.name + ":" + term.other);
            cols.emplace_back(
                panel.column(term.name).cwiseProduct(panel.column(term.other)));
            return;
        }
        case Term::Kind::factor: {
            const Eigen::VectorXd values = panel.column(term.name);
            std::set<double> levels(values.data(), values.data() + values.size());
            if (!levels.count(term.baseline)) {
                fail(ErrorCode::OutOfRange,
                     "factor(" + term.name + ") baseline level " + level_label(term.baseline) +
                         " not present in the data");
            }
            for (double level : levels) {
                if (level == term.baseline) continue;
                names.push_back(term.name + level_label(level));
                Eigen::VectorXd dummy(n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    dummy[i] = values[i] == level ? 1.0 : 0.0;
                }
                cols.push_back(std::move(dummy));
            }
            return;
        }
    }
    fail(ErrorCode::DecodeFailure, "unhandled term kind");
}

// ---- grouping --------------------------------------------------------------

std::vector<std::pair<std::string, Borough>> nested_grouping(const Panel& panel) {
    std::map<std::string, Borough> borough_by_pair;
    for (const auto& o : panel.rows()) {
        auto [it, inserted] = borough_by_pair.emplace(o.pair_id(), o.origin_borough);
        if (!inserted && it->second != o.origin_borough) {
            fail(ErrorCode::CrossedGroups,
                 "pair " + o.pair_id() + " appears under two origin boroughs");
        }
    }
    return {borough_by_pair.begin(), borough_by_pair.end()};
}

// ---- design bundle ---------------------------------------------------------

int DesignBundle::max_block() const {
    int m = 0;
    for (const auto& g : groups) {
        for (int s : g.cs_sizes) m = std::max(m, s);
    }
    return m;
}

Eigen::MatrixXd DesignBundle::stacked_x() const {
    Eigen::MatrixXd x(n_obs, p());
    Eigen::Index at = 0;
    for (const auto& g : groups) {
        x.middleRows(at, g.X.rows()) = g.X;
        at += g.X.rows();
    }
    return x;
}

Eigen::VectorXd DesignBundle::stacked_y() const {
    Eigen::VectorXd y(n_obs);
    Eigen::Index at = 0;
    for (const auto& g : groups) {
        y.segment(at, g.y.size()) = g.y;
        at += g.y.size();
    }
    return y;
}

namespace {

struct ExpandedColumns {
    std::vector<std::string> names;
    std::vector<Eigen::VectorXd> cols;

    Eigen::MatrixXd rows(const std::vector<int>& row_index) const {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(row_index.size()),
                          static_cast<Eigen::Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) {
            for (std::size_t r = 0; r < row_index.size(); ++r) {
                m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                    cols[c][row_index[r]];
            }
        }
        return m;
    }
};

ExpandedColumns expand_terms(const Panel& panel, const std::vector<Term>& terms) {
    ExpandedColumns out;
    for (const auto& t : terms) expand_term(panel, t, out.names, out.cols);
    return out;
}

}  // namespace

DesignBundle build_design(const Panel& panel, const ModelSpec& spec) {
    if (panel.empty()) fail(ErrorCode::EmptyInput, "panel has no observations");
    if (spec.fixed.empty()) fail(ErrorCode::EmptyTermList, "model has no fixed-effect terms");
    for (int k = 1; k <= spec.needs_scores; ++k) {
        const std::string name = "PC" + std::to_string(k);
        if (!panel.has_column(name)) {
            fail(ErrorCode::MissingScores,
                 "model needs score column " + name + "; attach scores before building");
        }
    }

    // Fixed design: explicit terms, with a global intercept prepended unless
    // the spec suppresses it or already lists one.
    std::vector<Term> fixed = spec.fixed;
    const bool has_intercept =
        std::any_of(fixed.begin(), fixed.end(),
                    [](const Term& t) { return t.kind == Term::Kind::intercept; });
    if (!spec.suppress_global_intercept && !has_intercept) {
        fixed.insert(fixed.begin(), Term::intercept());
    }
    const ExpandedColumns x = expand_terms(panel, fixed);

    const std::size_t want_levels = spec.grouping == Grouping::flat_pair ? 1 : 2;
    if (spec.random.size() != want_levels) {
        fail(ErrorCode::DimensionMismatch,
             "expected " + std::to_string(want_levels) + " random-effect level(s), got " +
                 std::to_string(spec.random.size()));
    }
    for (const auto& level : spec.random) {
        if (level.empty()) {
            fail(ErrorCode::EmptyTermList, "a random-effect level has no terms");
        }
    }
    const ExpandedColumns z_outer = expand_terms(panel, spec.random[0]);
    const ExpandedColumns z_inner = want_levels == 2
                                        ? expand_terms(panel, spec.random[1])
                                        : ExpandedColumns{};

    const Eigen::VectorXd y = panel.column(spec.response);

    DesignBundle bundle;
    bundle.x_names = x.names;
    bundle.z_names = z_outer.names;
    bundle.z_names.insert(bundle.z_names.end(), z_inner.names.begin(), z_inner.names.end());
    bundle.q_outer = static_cast<int>(z_outer.names.size());
    bundle.q_inner = static_cast<int>(z_inner.names.size());
    bundle.n_obs = static_cast<int>(panel.size());
    bundle.n_pairs = panel.n_pairs();
    bundle.residual = spec.residual.kind;
    bundle.d_structure = spec.d_structure;
    bundle.method = spec.method;

    // Rows per pair, in canonical panel order.
    std::vector<std::pair<std::string, std::vector<int>>> pair_rows;
    for (std::size_t i = 0; i < panel.size(); ++i) {
        const std::string pid = panel.rows()[i].pair_id();
        if (pair_rows.empty() || pair_rows.back().first != pid) {
            pair_rows.emplace_back(pid, std::vector<int>{});
        }
        pair_rows.back().second.push_back(static_cast<int>(i));
    }

    if (spec.grouping == Grouping::flat_pair) {
        for (const auto& [pid, rows] : pair_rows) {
            GroupBlock g;
            g.key = pid;
            g.row_index = rows;
            g.X = x.rows(rows);
            g.Z = z_outer.rows(rows);
            g.y.resize(static_cast<Eigen::Index>(rows.size()));
            for (std::size_t r = 0; r < rows.size(); ++r) {
                g.y[static_cast<Eigen::Index>(r)] = y[rows[r]];
            }
            g.cs_sizes = {static_cast<int>(rows.size())};
            bundle.groups.push_back(std::move(g));
        }
    } else {
        const auto borough_of = nested_grouping(panel);
        std::map<std::string, Borough> borough_by_pair(borough_of.begin(), borough_of.end());
        std::map<std::string, std::vector<const std::pair<std::string, std::vector<int>>*>>
            by_borough;
        for (const auto& pr : pair_rows) {
            by_borough[to_string(borough_by_pair.at(pr.first))].push_back(&pr);
        }
        for (const auto& [label, pairs] : by_borough) {
            GroupBlock g;
            g.key = label;
            int total_rows = 0;
            for (const auto* pr : pairs) total_rows += static_cast<int>(pr->second.size());
            const int q_out = bundle.q_outer;
            const int q_in = bundle.q_inner;
            g.Z = Eigen::MatrixXd::Zero(total_rows,
                                        q_out + q_in * static_cast<int>(pairs.size()));
            g.y.resize(total_rows);
            g.row_index.reserve(static_cast<std::size_t>(total_rows));
            std::vector<int> all_rows;
            int at = 0;
            int pair_index = 0;
            for (const auto* pr : pairs) {
                const auto& rows = pr->second;
                const int m = static_cast<int>(rows.size());
                g.cs_sizes.push_back(m);
                g.pair_z_offsets.emplace_back(pr->first, q_out + pair_index * q_in);
                g.Z.block(at, 0, m, q_out) = z_outer.rows(rows);
                g.Z.block(at, q_out + pair_index * q_in, m, q_in) = z_inner.rows(rows);
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    g.y[at + static_cast<Eigen::Index>(r)] = y[rows[r]];
                    g.row_index.push_back(rows[r]);
                }
                all_rows.insert(all_rows.end(), rows.begin(), rows.end());
                at += m;
                ++pair_index;
            }
            g.X = x.rows(all_rows);
            bundle.groups.push_back(std::move(g));
        }
    }

    // Hard full-rank requirement on the stacked fixed design: silently
    // dropping columns would change reported coefficients.
    const Eigen::MatrixXd x_all = bundle.stacked_x();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x_all);
    qr.setThreshold(1e-10);
    if (qr.rank() < x_all.cols()) {
        std::ostringstream msg;
        msg << "fixed-effect design is rank deficient (rank " << qr.rank() << " of "
            << x_all.cols() << "); columns:";
        for (const auto& name : bundle.x_names) msg << ' ' << name;
        fail(ErrorCode::RankDeficientFixed, msg.str());
    }

    return bundle;
}

}  // namespace longmix
