#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "longmix/design.hpp"
#include "longmix/optim.hpp"

namespace longmix {

// ---- variance parameters ---------------------------------------------

// Random-effects covariance per grouping level (outermost first), residual
// scale, and the compound-symmetry correlation when the residual blocks are
// correlated. The marginal covariance of one residual block of size m is
//   V = Z D Z' + sigma2 * ((1-rho) I + rho J)     (rho absent -> sigma2 I).
struct VarianceParams {
    std::vector<Eigen::MatrixXd> d;
    double sigma2 = 1.0;
    std::optional<double> rho;
};

// Layout of the unconstrained parameter vector theta:
//   per level: log-Cholesky of D (row-major lower triangle, log diagonals,
//              free off-diagonals; diagonal structure -> log diagonals only),
//   then log(sigma2),
//   then, for compound symmetry, a scaled logit of rho onto
//   (-1/(m_max-1)+eps, 1-eps) with eps = 1e-6.
struct ThetaLayout {
    std::vector<int> q;
    std::vector<DStructure> structure;
    bool has_rho = false;
    int max_block = 2;

    static ThetaLayout from_bundle(const DesignBundle& bundle);
    int dim() const;
};

Eigen::VectorXd encode_theta(const VarianceParams& vp, const ThetaLayout& layout);
// Throws DecodeFailure on length mismatch or non-finite entries.
VarianceParams decode_theta(const Eigen::VectorXd& theta, const ThetaLayout& layout);

// Valid open interval for the CS correlation at block size m.
std::pair<double, double> rho_bounds(int m);

// sigma2 * ((1-rho) I_m + rho J_m); validates sigma2 > 0 and rho in bounds.
Eigen::MatrixXd cs_block(double sigma2, double rho, int m);

// Marginal covariance of one group under vp (assembles the residual from the
// group's cs_sizes; nested grouping expands D across the group's pairs).
Eigen::MatrixXd marginal_cov(const GroupBlock& g, const DesignBundle& bundle,
                             const VarianceParams& vp);

// ---- likelihood and GLS ----------------------------------------------

struct GlsSolve {
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov_beta;   // (sum X' V^-1 X)^-1
    double logdet_v = 0.0;      // sum over groups
    double logdet_info = 0.0;   // log det sum X' V^-1 X
    double quad = 0.0;          // r' V^-1 r at the GLS solution
};

// Profiled GLS estimate via per-group Cholesky solves (no explicit inverses).
GlsSolve gls_beta(const DesignBundle& bundle, const VarianceParams& vp);

// REML: -1/2 [ (N-p) log 2pi + sum log|V_i| + log|sum X_i'V_i^-1 X_i|
//              + r'V^-1 r ].   ML: -1/2 [ N log 2pi + sum log|V_i| + r'V^-1 r ].
// The (N-p)/2 log 2pi constant is included so values are comparable across
// implementations.
double reml_loglik(const DesignBundle& bundle, const VarianceParams& vp);
double ml_loglik(const DesignBundle& bundle, const VarianceParams& vp);
double loglik(const DesignBundle& bundle, const VarianceParams& vp);  // by method

// ---- fitting -----------------------------------------------------------

struct ConvergenceReport {
    bool converged = false;
    int evals = 0;
    int restarts = 0;
    int agreeing_restarts = 0;   // restarts within 1e-6*(1+|best|) of best
    double best_objective = 0.0; // -2 loglik scale (internal objective)
    double grad_norm = 0.0;      // FD gradient of loglik on the full theta
    double grad_tol = 0.0;       // 1e-4 * (1 + |loglik|)
    std::string message;
};

struct TRow {
    std::string name;
    double estimate = 0.0;
    double se = 0.0;
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
};

struct BlupEntry {
    std::string level;  // "pair_id" or "origin_borough"
    std::string key;
    Eigen::VectorXd b;
};

struct FitResult {
    std::string model_id;  // filled by registry/CLI callers
    ModelSpec spec;
    std::vector<std::string> x_names;
    Eigen::VectorXd beta;
    Eigen::MatrixXd cov_beta;
    VarianceParams variance;
    Eigen::VectorXd theta;  // full parameterization at the optimum
    double loglik_value = 0.0;
    int n_obs = 0;
    int n_pairs = 0;
    int k_params = 0;  // fixed effects + free variance parameters
    double aic_value = 0.0;
    double bic_value = 0.0;
    ConvergenceReport convergence;
    std::vector<TRow> t_rows;
    std::vector<BlupEntry> blups;
    std::vector<std::string> z_names;

    std::string to_json() const;
    std::string to_table() const;  // 2-decimal human-readable report
};

struct FitOptions {
    int restarts = 5;                 // jittered restarts after the first
    std::uint64_t jitter_seed = 0x5eed2026ULL;
    double jitter_scale = 0.3;
    optim::Options nm;                // Nelder-Mead controls
    bool polish = true;               // quasi-Newton polish after each start
    bool compute_blups = true;
};

// Fit via REML/ML with the residual scale profiled out: the optimizer works
// on (D/sigma2, rho), initialized at D/sigma2 = I/q per level and rho = 0
// (sigma2 recovered in closed form each evaluation); Nelder-Mead with
// jittered restarts, then a quasi-Newton polish. Non-convergence is reported
// in the result, never thrown.
FitResult fit_bundle(const DesignBundle& bundle, const ModelSpec& spec,
                     const FitOptions& opts = {});

// Convenience entry: applies the spec's stratum filter and PC-score merge
// before building the design.
FitResult fit(const Panel& panel, const ModelSpec& spec, const FitOptions& opts = {});

// ---- post-fit quantities ----------------------------------------------

// b_i = D Z_i' V_i^-1 (y_i - X_i beta), sliced per grouping level.
std::vector<BlupEntry> blup(const DesignBundle& bundle, const VarianceParams& vp,
                            const Eigen::VectorXd& beta);

// L_i^-1 (y_i - X_i beta - Z_i b_i) with L_i the residual-block Cholesky.
Eigen::VectorXd normalized_residuals(const DesignBundle& bundle,
                                     const VarianceParams& vp,
                                     const Eigen::VectorXd& beta,
                                     const std::vector<BlupEntry>& blups);

// Containment-style degrees of freedom: coefficients on columns that vary
// within some pair get df = N - #pairs - p_within; pair-constant columns get
// df = #pairs - p_between.
std::vector<TRow> t_table(const DesignBundle& bundle, const Eigen::VectorXd& beta,
                          const Eigen::MatrixXd& cov_beta);

int count_variance_params(const DesignBundle& bundle);
double aic(double loglik_value, int k);
double bic(double loglik_value, int k, int n_obs);

// Correlation matrix of the fixed-effect estimates.
Eigen::MatrixXd cor_beta(const Eigen::MatrixXd& cov_beta);

struct ComparisonRow {
    std::string id;
    double aic_value = 0.0;
    double bic_value = 0.0;
    double loglik_value = 0.0;
    int k = 0;
};

struct Comparison {
    std::vector<ComparisonRow> rows;  // sorted by AIC ascending, ties stable
    bool comparable = true;           // same response, method, fixed design
    std::string warning;
};

// Rank fits by AIC. REML fits with different fixed designs are flagged as
// not comparable (warning set, ranking still produced).
Comparison compare(const std::vector<const FitResult*>& fits);

}  // namespace longmix
