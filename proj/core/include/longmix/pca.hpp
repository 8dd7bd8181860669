#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "longmix/panel.hpp"

namespace longmix {

// Principal components of the monthly weather summary (12 months x 11
// variables), computed on the correlation matrix: columns standardized with
// the n-1 denominator, eigendecomposition of (1/(n-1)) X_s' X_s.
struct PcaResult {
    std::vector<std::string> variables;   // column order of the input
    Eigen::VectorXd mean;                 // per-variable mean
    Eigen::VectorXd sd;                   // per-variable sd (n-1)
    Eigen::VectorXd eigenvalues;          // descending
    Eigen::MatrixXd loadings;             // 11 x 11, unit-norm columns
    Eigen::MatrixXd scores;               // 12 x 11, standardized data * loadings

    // Cumulative proportion of variance for the first k components.
    double variance_explained(int k) const;
    std::string to_json() const;
};

// Throws ConstantColumn if any variable has zero variance, EmptyInput on
// fewer than 2 rows. Sign convention: each loading column is flipped, if
// needed, so its largest-magnitude entry is positive (ties: first such
// entry). Eigenvalues below 1e-12 are clamped to 0.
PcaResult pca_fit(const Eigen::MatrixXd& data, const std::vector<std::string>& variables);

// PCA of the panel's monthly weather summary.
PcaResult pca_weather(const Panel& panel);

// Returns a copy of the panel with PC1..PCk month-level score columns
// attached (k in [1, 11], else KOutOfRange).
Panel with_scores(const Panel& panel, int k);

// scores table as CSV text: month,PC1..PCk rows in month order.
std::string scores_csv(const PcaResult& pca, int k);

// loadings table as CSV text: variable,PC1..PCk.
std::string loadings_csv(const PcaResult& pca, int k);

}  // namespace longmix
