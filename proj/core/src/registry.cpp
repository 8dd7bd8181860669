#include "longmix/registry.hpp"

#include <sstream>

#include "longmix/error.hpp"

namespace longmix {

namespace {

ModelSpec two_line_growth(DStructure structure) {
    ModelSpec spec;
    spec.fixed = {Term::indicator_intercept("M"), Term::indicator_intercept("N"),
                  Term::indicator_slope("M", "month"), Term::indicator_slope("N", "month")};
    spec.suppress_global_intercept = true;
    spec.random = {{Term::indicator_intercept("M"), Term::indicator_intercept("N"),
                    Term::column("month")}};
    spec.d_structure = structure;
    spec.residual.kind = ResidualKind::compound_symmetry;
    return spec;
}

std::vector<Term> borough_lines() {
    return {Term::indicator_intercept("M"),         Term::indicator_intercept("Bk"),
            Term::indicator_intercept("Bx"),        Term::indicator_intercept("Q"),
            Term::indicator_slope("M", "month"),    Term::indicator_slope("Bk", "month"),
            Term::indicator_slope("Bx", "month"),   Term::indicator_slope("Q", "month")};
}

ModelSpec pair_intercept_weather(std::vector<Term> fixed) {
    ModelSpec spec;
    spec.fixed = std::move(fixed);
    spec.random = {{Term::intercept()}};
    spec.residual.kind = ResidualKind::independent;
    return spec;
}

ModelSpec nested_intercepts(std::vector<Term> fixed) {
    ModelSpec spec;
    spec.fixed = std::move(fixed);
    spec.grouping = Grouping::nested_borough_pair;
    spec.random = {{Term::intercept()}, {Term::intercept()}};
    spec.residual.kind = ResidualKind::independent;
    return spec;
}

ModelSpec stratum_gust(Borough b) {
    ModelSpec spec = pair_intercept_weather({Term::intercept(), Term::column("max_gust")});
    spec.stratum = b;
    return spec;
}

std::vector<RegistryEntry> build_registry() {
    std::vector<RegistryEntry> entries;

    entries.push_back({"m221",
                       "two ridership trajectories (Manhattan vs non-Manhattan origin): "
                       "group intercepts and month slopes, correlated random "
                       "intercept/slope set, exchangeable within-pair residuals",
                       two_line_growth(DStructure::general)});
    entries.push_back({"m221_diag",
                       "m221 with independent random effects (diagonal covariance)",
                       two_line_growth(DStructure::diagonal)});

    {
        ModelSpec spec;
        spec.fixed = borough_lines();
        spec.suppress_global_intercept = true;
        spec.random = {{Term::intercept(), Term::column("month")}};
        spec.residual.kind = ResidualKind::compound_symmetry;
        entries.push_back({"m222",
                           "per-borough ridership lines with a random intercept/slope "
                           "per pair and exchangeable within-pair residuals",
                           spec});
    }
    {
        ModelSpec spec;
        spec.fixed = borough_lines();
        spec.suppress_global_intercept = true;
        spec.random = {{Term::indicator_intercept("M"), Term::indicator_intercept("Bk"),
                        Term::indicator_intercept("Bx"), Term::indicator_intercept("Q"),
                        Term::column("month")}};
        spec.residual.kind = ResidualKind::compound_symmetry;
        entries.push_back(
            {"m223",
             "per-borough lines with borough-indicator random effects; the "
             "indicators never co-occur within a pair, so the general covariance "
             "is structurally unidentified (kept as a negative control)",
             spec});
    }

    entries.push_back({"m251",
                       "ridership on precipitation, wind, and gusts with a random "
                       "pair intercept",
                       pair_intercept_weather({Term::intercept(), Term::column("total_precip"),
                                               Term::column("max_wind"),
                                               Term::column("max_gust")})});
    entries.push_back(
        {"m251_boroughs",
         "gust and month effects adjusted for origin/destination borough "
         "(baseline Brooklyn), random pair intercept",
         pair_intercept_weather({Term::intercept(), Term::column("max_gust"),
                                 Term::column("month"), Term::indicator_intercept("Bx"),
                                 Term::indicator_intercept("M"), Term::indicator_intercept("Q"),
                                 Term::indicator_intercept("dest_Bx"),
                                 Term::indicator_intercept("dest_M"),
                                 Term::indicator_intercept("dest_Q")})});

    entries.push_back({"m252",
                       "gust and month effects with nested random intercepts "
                       "(origin borough, then pair)",
                       nested_intercepts({Term::intercept(), Term::column("max_gust"),
                                          Term::column("month")})});

    entries.push_back({"m253_M",
                       "gust effect within Manhattan-origin pairs only", stratum_gust(Borough::M)});
    entries.push_back({"m253_Q",
                       "gust effect within Queens-origin pairs only", stratum_gust(Borough::Q)});
    entries.push_back({"m253_Bx",
                       "gust effect within Bronx-origin pairs only", stratum_gust(Borough::Bx)});
    entries.push_back({"m253_Bk",
                       "gust effect within Brooklyn-origin pairs only",
                       stratum_gust(Borough::Bk)});

    entries.push_back(
        {"m254",
         "gust effect interacted with Manhattan origin, adjusting for "
         "precipitation, random pair intercept",
         pair_intercept_weather({Term::intercept(), Term::column("total_precip"),
                                 Term::column("max_gust"), Term::column("manhattan_origin"),
                                 Term::interaction("max_gust", "manhattan_origin")})});

    entries.push_back({"m255_monthfactor",
                       "month as an unordered factor (baseline January) with nested "
                       "random intercepts",
                       nested_intercepts({Term::intercept(), Term::factor("month", 1.0)})});
    entries.push_back({"m255_december",
                       "December indicator alongside gusts with nested random "
                       "intercepts (drop the gust term to see the indicator absorb "
                       "the storm signal)",
                       nested_intercepts({Term::intercept(), Term::column("december"),
                                          Term::column("max_gust")})});

    {
        ModelSpec spec = two_line_growth(DStructure::general);
        spec.fixed.push_back(Term::interaction("month", "PC1"));
        spec.fixed.push_back(Term::interaction("month", "PC2"));
        spec.fixed.push_back(Term::interaction("month", "PC3"));
        spec.needs_scores = 3;
        entries.push_back({"m256",
                           "m221 plus month-by-weather-component interactions "
                           "(first three principal components of the monthly weather)",
                           spec});
    }

    entries.push_back({"m258",
                       "month and gust effects with nested random intercepts "
                       "(origin borough, then pair)",
                       nested_intercepts({Term::intercept(), Term::column("month"),
                                          Term::column("max_gust")})});
    entries.push_back({"m258_interact",
                       "m258 plus a month-by-gust interaction",
                       nested_intercepts({Term::intercept(), Term::column("month"),
                                          Term::column("max_gust"),
                                          Term::interaction("month", "max_gust")})});

    entries.push_back({"aux_gusts",
                       "average and maximum gusts together, random pair intercept",
                       pair_intercept_weather({Term::intercept(), Term::column("max_gust"),
                                               Term::column("avg_gust")})});
    {
        ModelSpec spec = pair_intercept_weather(
            {Term::intercept(), Term::column("max_dew_point")});
        spec.stratum = Borough::Bk;
        entries.push_back({"aux_bk_dew",
                           "dew point effect within Brooklyn-origin pairs only", spec});
    }

    return entries;
}

}  // namespace

const std::vector<RegistryEntry>& model_registry() {
    static const std::vector<RegistryEntry> registry = build_registry();
    return registry;
}

const RegistryEntry& find_model(const std::string& id) {
    for (const auto& entry : model_registry()) {
        if (entry.id == id) return entry;
    }
    std::ostringstream msg;
    msg << "unknown model '" << id << "'; valid ids:";
    for (const auto& entry : model_registry()) msg << ' ' << entry.id;
    fail(ErrorCode::UnknownModel, msg.str());
}

std::vector<std::string> model_ids() {
    std::vector<std::string> ids;
    ids.reserve(model_registry().size());
    for (const auto& entry : model_registry()) ids.push_back(entry.id);
    return ids;
}

}  // namespace longmix
