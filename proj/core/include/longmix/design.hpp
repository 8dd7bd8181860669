#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "longmix/panel.hpp"

namespace longmix {

// ---- model terms ---------------------------------------------------------

// A fixed- or random-effect term. Kinds:
//   intercept                  -> all-ones column "(Intercept)"
//   column(name)               -> numeric column as-is
//   factor(name, baseline)     -> one dummy per level except the baseline,
//                                 levels sorted ascending, names name<level>
//   interaction(a, b)          -> elementwise product of two columns "a:b"
//   indicator_scaled_intercept(name)        -> indicator column (group-wise
//                                 intercept when the global one is removed)
//   indicator_scaled_slope(name, time)      -> indicator * time column,
//                                 "name:time" (group-wise slope)
struct Term {
    enum class Kind {
        intercept,
        column,
        factor,
        interaction,
        indicator_scaled_intercept,
        indicator_scaled_slope,
    };

    Kind kind = Kind::intercept;
    std::string name;      // column | factor | indicator_* base column
    std::string other;     // interaction second column | slope time column
    double baseline = 0.0; // factor baseline level

    static Term intercept();
    static Term column(std::string name);
    static Term factor(std::string name, double baseline);
    static Term interaction(std::string a, std::string b);
    static Term indicator_intercept(std::string name);
    static Term indicator_slope(std::string name, std::string time);
};

enum class Grouping { flat_pair, nested_borough_pair };
enum class DStructure { general, diagonal };
enum class ResidualKind { independent, compound_symmetry };
enum class FitMethod { reml, ml };

struct ResidualSpec {
    ResidualKind kind = ResidualKind::independent;
};

struct ModelSpec {
    std::string response = "avg_ridership";
    std::vector<Term> fixed;
    bool suppress_global_intercept = false;
    Grouping grouping = Grouping::flat_pair;
    // Random terms per grouping level, outermost first. flat_pair uses
    // levels[0] (pair); nested_borough_pair uses levels[0] (borough) and
    // levels[1] (pair).
    std::vector<std::vector<Term>> random;
    DStructure d_structure = DStructure::general;
    ResidualSpec residual;
    FitMethod method = FitMethod::reml;
    // Restrict to pairs whose origin borough matches before building.
    std::optional<Borough> stratum;
    // Number of PC score columns any term references (0 = none); the fit
    // entry point merges scores before building when > 0.
    int needs_scores = 0;

    std::string to_json() const;
    static ModelSpec from_json(const std::string& json_text);
};

// ---- design bundle -------------------------------------------------------

// One top-level group: a pair (flat grouping) or a borough (nested grouping).
// Residual blocks: with compound_symmetry residuals, rows of a pair form one
// correlated block; nested grouping keeps per-pair sub-blocks inside a
// borough group (cs_sizes covers the group's rows in order).
struct GroupBlock {
    std::string key;                 // pair_id or borough label
    std::vector<int> row_index;      // rows of the source panel, in order
    Eigen::MatrixXd X;
    Eigen::MatrixXd Z;
    Eigen::VectorXd y;
    std::vector<int> cs_sizes;       // residual block sizes (sum = rows)
    // Nested grouping: Z = [borough-level cols | per-pair blocks]; this
    // records each pair's column offset so BLUPs can be sliced per level.
    std::vector<std::pair<std::string, int>> pair_z_offsets;
};

struct DesignBundle {
    std::vector<GroupBlock> groups;  // sorted by key
    std::vector<std::string> x_names;
    std::vector<std::string> z_names;        // one random-effect design row
    int q_outer = 0;                 // leading Z cols at the outer level
    int q_inner = 0;                 // per-pair Z cols (nested) or 0
    int n_obs = 0;
    int n_pairs = 0;
    ResidualKind residual = ResidualKind::independent;
    DStructure d_structure = DStructure::general;
    FitMethod method = FitMethod::reml;

    int p() const { return static_cast<int>(x_names.size()); }
    int max_block() const;           // largest residual block size
    Eigen::MatrixXd stacked_x() const;
    Eigen::VectorXd stacked_y() const;
};

// Expand a term into named numeric columns over the panel.
void expand_term(const Panel& panel, const Term& term,
                 std::vector<std::string>& names,
                 std::vector<Eigen::VectorXd>& cols);

// Verify that each pair maps to exactly one borough (nested grouping is a
// partition, not a crossing). Returns pair -> borough. Throws CrossedGroups.
std::vector<std::pair<std::string, Borough>> nested_grouping(const Panel& panel);

// Build the per-group design. Validates: non-empty fixed list, known columns,
// full column rank of stacked X (hard error, no silent drops), non-empty
// random list per level, grouping consistency.
DesignBundle build_design(const Panel& panel, const ModelSpec& spec);

}  // namespace longmix
