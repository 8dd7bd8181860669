#pragma once

#include <string>
#include <vector>

#include "longmix/lmm.hpp"

namespace longmix {

// Text rendering used by the CLI: fixed-effect table with 2-decimal
// estimates/SE/t and 3-decimal p, variance components, fit statistics.
std::string render_fit_text(const FitResult& fit);

// One-line-per-model AIC ranking table.
std::string render_comparison_text(const Comparison& cmp);

// Machine-readable envelopes.
std::string fit_to_json(const FitResult& fit);
std::string comparison_to_json(const Comparison& cmp);

// Fixed-point number formatting shared by report tables.
std::string format_fixed(double x, int decimals);

}  // namespace longmix
