#include "longmix/pca.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "json.hpp"
#include "longmix/error.hpp"
#include "longmix/ingest.hpp"

namespace longmix {

using nlohmann::json;

namespace {

std::string format_value(double x) {
    std::ostringstream os;
    os.precision(10);
    os << x;
    return os.str();
}

void check_k(int k, Eigen::Index available) {
    if (k < 1 || k > available) {
        fail(ErrorCode::KOutOfRange,
             "k must be in [1, " + std::to_string(available) + "], got " + std::to_string(k));
    }
}

}  // namespace

double PcaResult::variance_explained(int k) const {
    check_k(k, eigenvalues.size());
    const double total = eigenvalues.sum();
    return eigenvalues.head(k).sum() / total;
}

std::string PcaResult::to_json() const {
    json j;
    j["variables"] = variables;
    j["mean"] = std::vector<double>(mean.data(), mean.data() + mean.size());
    j["sd"] = std::vector<double>(sd.data(), sd.data() + sd.size());
    j["eigenvalues"] =
        std::vector<double>(eigenvalues.data(), eigenvalues.data() + eigenvalues.size());
    auto matrix_json = [](const Eigen::MatrixXd& m) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index jx = 0; jx < m.cols(); ++jx) row.push_back(m(i, jx));
            rows.push_back(std::move(row));
        }
        return rows;
    };
    j["loadings"] = matrix_json(loadings);
    j["scores"] = matrix_json(scores);
    json cum = json::array();
    for (int k = 1; k <= static_cast<int>(eigenvalues.size()); ++k) {
        cum.push_back(variance_explained(k));
    }
    j["cumulative_variance"] = std::move(cum);
    return j.dump(2);
}

PcaResult pca_fit(const Eigen::MatrixXd& data, const std::vector<std::string>& variables) {
    const Eigen::Index n = data.rows();
    const Eigen::Index p = data.cols();
    if (static_cast<Eigen::Index>(variables.size()) != p) {
        fail(ErrorCode::DimensionMismatch, "variable names do not match the data width");
    }
    if (n < 2) fail(ErrorCode::EmptyInput, "need at least 2 rows for a correlation PCA");

    PcaResult out;
    out.variables = variables;
    out.mean = data.colwise().mean();
    Eigen::MatrixXd centered = data.rowwise() - out.mean.transpose();
    out.sd.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double var = centered.col(j).squaredNorm() / static_cast<double>(n - 1);
        out.sd[j] = std::sqrt(var);
        if (!(out.sd[j] > 0.0)) {
            fail(ErrorCode::ConstantColumn,
                 "variable " + variables[static_cast<std::size_t>(j)] + " has zero variance");
        }
        centered.col(j) /= out.sd[j];
    }

    const Eigen::MatrixXd corr =
        centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
    if (eig.info() != Eigen::Success) {
        fail(ErrorCode::NumericalBreakdown, "eigendecomposition failed");
    }

    // Ascending from the solver -> reverse to descending.
    out.eigenvalues.resize(p);
    out.loadings.resize(p, p);
    for (Eigen::Index k = 0; k < p; ++k) {
        double value = eig.eigenvalues()[p - 1 - k];
        if (value < 1e-12) value = 0.0;
        out.eigenvalues[k] = value;
        out.loadings.col(k) = eig.eigenvectors().col(p - 1 - k);
    }

    // Sign convention: the largest-magnitude entry of each loading column is
    // positive (first such entry on ties).
    for (Eigen::Index k = 0; k < p; ++k) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < p; ++i) {
            const double mag = std::fabs(out.loadings(i, k));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (out.loadings(arg, k) < 0.0) out.loadings.col(k) = -out.loadings.col(k);
    }

    out.scores = centered * out.loadings;
    return out;
}

PcaResult pca_weather(const Panel& panel) {
    const Eigen::MatrixXd summary = monthly_weather_summary(panel);
    std::vector<std::string> variables(kWeatherColumns.begin(), kWeatherColumns.end());
    return pca_fit(summary, variables);
}

Panel with_scores(const Panel& panel, int k) {
    check_k(k, 11);
    const PcaResult pca = pca_weather(panel);
    Panel out = panel;
    const auto n = static_cast<Eigen::Index>(panel.size());
    for (int c = 0; c < k; ++c) {
        Eigen::VectorXd column(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int month = panel.rows()[static_cast<std::size_t>(i)].month;
            column[i] = pca.scores(month - 1, c);
        }
        out.set_score_column("PC" + std::to_string(c + 1), column);
    }
    return out;
}

std::string scores_csv(const PcaResult& pca, int k) {
    check_k(k, pca.scores.cols());
    std::ostringstream os;
    os << "month";
    for (int c = 1; c <= k; ++c) os << ",PC" << c;
    os << "\n";
    for (Eigen::Index m = 0; m < pca.scores.rows(); ++m) {
        os << (m + 1);
        for (int c = 0; c < k; ++c) os << ',' << format_value(pca.scores(m, c));
        os << "\n";
    }
    return os.str();
}

std::string loadings_csv(const PcaResult& pca, int k) {
    check_k(k, pca.loadings.cols());
    std::ostringstream os;
    os << "variable";
    for (int c = 1; c <= k; ++c) os << ",PC" << c;
    os << "\n";
    for (Eigen::Index i = 0; i < pca.loadings.rows(); ++i) {
        os << pca.variables[static_cast<std::size_t>(i)];
        for (int c = 0; c < k; ++c) os << ',' << format_value(pca.loadings(i, c));
        os << "\n";
    }
    return os.str();
}

}  // namespace longmix
