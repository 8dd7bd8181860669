#include "longmix/lmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <utility>

#include <Eigen/Cholesky>

#include "json.hpp"
#include "longmix/error.hpp"
#include "longmix/ingest.hpp"
#include "longmix/pca.hpp"
#include "longmix/report.hpp"
#include "longmix/stats.hpp"

namespace longmix {

using nlohmann::json;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kRhoEps = 1e-6;
constexpr double kInf = std::numeric_limits<double>::infinity();

// ---- theta packing helpers ----------------------------------------------

void encode_d(const Eigen::MatrixXd& d, DStructure s, std::vector<double>& out) {
    const Eigen::Index q = d.rows();
    if (s == DStructure::diagonal) {
        for (Eigen::Index i = 0; i < q; ++i) {
            const double v = d(i, i);
            if (!(v > 0.0)) {
                fail(ErrorCode::NumericalBreakdown,
                     "diagonal D has a non-positive variance");
            }
            out.push_back(0.5 * std::log(v));
        }
        return;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(d);
    if (llt.info() != Eigen::Success) {
        fail(ErrorCode::NumericalBreakdown, "D is not positive definite");
    }
    const Eigen::MatrixXd l = llt.matrixL();
    for (Eigen::Index i = 0; i < q; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            out.push_back(i == j ? std::log(l(i, i)) : l(i, j));
        }
    }
}

Eigen::MatrixXd decode_d(const double* th, int q, DStructure s, int* consumed) {
    if (s == DStructure::diagonal) {
        Eigen::MatrixXd d = Eigen::MatrixXd::Zero(q, q);
        for (int i = 0; i < q; ++i) d(i, i) = std::exp(2.0 * th[i]);
        *consumed = q;
        return d;
    }
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(q, q);
    int idx = 0;
    for (int i = 0; i < q; ++i) {
        for (int j = 0; j <= i; ++j, ++idx) {
            l(i, j) = i == j ? std::exp(th[idx]) : th[idx];
        }
    }
    *consumed = idx;
    return l * l.transpose();
}

std::pair<double, double> shrunk_rho_bounds(int m) {
    const auto [lo, hi] = rho_bounds(m);
    return {lo + kRhoEps, hi - kRhoEps};
}

double encode_rho(double rho, int m) {
    const auto [lo, hi] = shrunk_rho_bounds(m);
    if (!(rho > lo && rho < hi)) {
        std::ostringstream msg;
        msg << "rho " << rho << " not encodable inside (" << lo << ", " << hi << ")";
        fail(ErrorCode::RhoOutOfRange, msg.str());
    }
    return std::log((rho - lo) / (hi - rho));
}

double decode_rho(double t, int m) {
    const auto [lo, hi] = shrunk_rho_bounds(m);
    const double s = 1.0 / (1.0 + std::exp(-t));  // saturates safely at 0 / 1
    return lo + (hi - lo) * s;
}

int d_param_count(int q, DStructure s) {
    return s == DStructure::diagonal ? q : q * (q + 1) / 2;
}

// ---- per-group covariance machinery --------------------------------------

int levels_of(const DesignBundle& bundle) { return bundle.q_inner > 0 ? 2 : 1; }

// Random-effects covariance expanded to the group's Z width: flat groups use
// D directly; nested groups get blkdiag(D_outer, I_pairs (x) D_inner).
Eigen::MatrixXd expanded_d(const GroupBlock& g, const DesignBundle& bundle,
                           const std::vector<Eigen::MatrixXd>& d) {
    const int levels = levels_of(bundle);
    if (static_cast<int>(d.size()) != levels) {
        fail(ErrorCode::DimensionMismatch,
             "expected " + std::to_string(levels) + " D matrices, got " +
                 std::to_string(d.size()));
    }
    if (d[0].rows() != bundle.q_outer || d[0].cols() != bundle.q_outer) {
        fail(ErrorCode::DimensionMismatch, "outer D has the wrong dimension");
    }
    if (levels == 1) return d[0];
    if (d[1].rows() != bundle.q_inner || d[1].cols() != bundle.q_inner) {
        fail(ErrorCode::DimensionMismatch, "inner D has the wrong dimension");
    }
    const auto k = static_cast<Eigen::Index>(g.pair_z_offsets.size());
    const Eigen::Index nz = bundle.q_outer + k * bundle.q_inner;
    if (nz != g.Z.cols()) {
        fail(ErrorCode::DimensionMismatch, "group Z width does not match the grouping");
    }
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(nz, nz);
    full.topLeftCorner(bundle.q_outer, bundle.q_outer) = d[0];
    for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index at = bundle.q_outer + i * bundle.q_inner;
        full.block(at, at, bundle.q_inner, bundle.q_inner) = d[1];
    }
    return full;
}

// Groups sharing (Z, cs_sizes) have identical marginal covariance, so one
// Cholesky per class serves every group in it.
std::string group_signature(const GroupBlock& g) {
    std::string key;
    const Eigen::Index rows = g.Z.rows();
    const Eigen::Index cols = g.Z.cols();
    key.append(reinterpret_cast<const char*>(&rows), sizeof(rows));
    key.append(reinterpret_cast<const char*>(&cols), sizeof(cols));
    key.append(reinterpret_cast<const char*>(g.Z.data()),
               sizeof(double) * static_cast<std::size_t>(rows * cols));
    for (const int s : g.cs_sizes) {
        key.append(reinterpret_cast<const char*>(&s), sizeof(s));
    }
    return key;
}

struct PassResult {
    double logdet_v = 0.0;
    Eigen::MatrixXd a;  // sum X' V^-1 X
    Eigen::VectorXd c;  // sum X' V^-1 y
    double s = 0.0;     // sum y' V^-1 y
};

PassResult v_pass(const DesignBundle& bundle, const VarianceParams& vp) {
    const int p = bundle.p();
    PassResult out;
    out.a = Eigen::MatrixXd::Zero(p, p);
    out.c = Eigen::VectorXd::Zero(p);

    std::map<std::string, std::pair<Eigen::LLT<Eigen::MatrixXd>, double>> cache;
    for (const auto& g : bundle.groups) {
        auto [it, inserted] = cache.try_emplace(group_signature(g));
        if (inserted) {
            const Eigen::MatrixXd v = marginal_cov(g, bundle, vp);
            it->second.first.compute(v);
            if (it->second.first.info() != Eigen::Success) {
                fail(ErrorCode::NumericalBreakdown,
                     "marginal covariance is not positive definite");
            }
            it->second.second =
                2.0 * it->second.first.matrixLLT().diagonal().array().log().sum();
        }
        const auto& llt = it->second.first;
        out.logdet_v += it->second.second;
        Eigen::MatrixXd xw = g.X;
        llt.matrixL().solveInPlace(xw);
        Eigen::VectorXd yw = g.y;
        llt.matrixL().solveInPlace(yw);
        out.a.noalias() += xw.transpose() * xw;
        out.c.noalias() += xw.transpose() * yw;
        out.s += yw.squaredNorm();
    }
    return out;
}

// ---- profiled objective ---------------------------------------------------

// -2 log-likelihood with sigma2 at its closed-form optimum, evaluated on the
// unit-residual scale W = Z (D/sigma2) Z' + ((1-rho) I + rho J).
struct ReducedEval {
    double objective = kInf;
    double sigma2_hat = 0.0;
};

ReducedEval reduced_eval(const DesignBundle& bundle,
                         const std::vector<Eigen::MatrixXd>& d_tilde,
                         const std::optional<double>& rho) {
    VarianceParams unit;
    unit.d = d_tilde;
    unit.sigma2 = 1.0;
    unit.rho = rho;
    const PassResult pass = v_pass(bundle, unit);

    Eigen::LLT<Eigen::MatrixXd> llt_a(pass.a);
    if (llt_a.info() != Eigen::Success) {
        fail(ErrorCode::SingularInformation, "X' W^-1 X is singular");
    }
    const Eigen::VectorXd beta = llt_a.solve(pass.c);
    const double quad = pass.s - pass.c.dot(beta);
    if (!(quad > 0.0) || !std::isfinite(quad)) {
        fail(ErrorCode::NumericalBreakdown, "degenerate profiled residual sum");
    }

    const int n = bundle.n_obs;
    const int p = bundle.p();
    ReducedEval out;
    if (bundle.method == FitMethod::reml) {
        const double denom = n - p;
        out.sigma2_hat = quad / denom;
        const double logdet_a =
            2.0 * llt_a.matrixLLT().diagonal().array().log().sum();
        out.objective = denom * (kLog2Pi + std::log(out.sigma2_hat) + 1.0) +
                        pass.logdet_v + logdet_a;
    } else {
        out.sigma2_hat = quad / n;
        out.objective =
            n * (kLog2Pi + std::log(out.sigma2_hat) + 1.0) + pass.logdet_v;
    }
    return out;
}

// Reduced parameter vector: D/sigma2 per level (log-Cholesky), then logit-rho.
Eigen::VectorXd encode_reduced(const std::vector<Eigen::MatrixXd>& d_tilde,
                               const std::optional<double>& rho,
                               const ThetaLayout& layout) {
    std::vector<double> th;
    for (std::size_t l = 0; l < layout.q.size(); ++l) {
        encode_d(d_tilde[l], layout.structure[l], th);
    }
    if (layout.has_rho) th.push_back(encode_rho(*rho, layout.max_block));
    return Eigen::Map<Eigen::VectorXd>(th.data(), static_cast<Eigen::Index>(th.size()));
}

std::pair<std::vector<Eigen::MatrixXd>, std::optional<double>> decode_reduced(
    const Eigen::VectorXd& th, const ThetaLayout& layout) {
    if (th.size() != layout.dim() - 1) {
        fail(ErrorCode::DecodeFailure, "reduced theta has the wrong length");
    }
    std::vector<Eigen::MatrixXd> d_tilde;
    int at = 0;
    for (std::size_t l = 0; l < layout.q.size(); ++l) {
        int consumed = 0;
        d_tilde.push_back(decode_d(th.data() + at, layout.q[l], layout.structure[l], &consumed));
        at += consumed;
    }
    std::optional<double> rho;
    if (layout.has_rho) rho = decode_rho(th[at], layout.max_block);
    return {std::move(d_tilde), rho};
}

// Deterministic standard normals for the jittered restarts (Box-Muller on the
// raw mt19937_64 stream; library normal_distribution output is
// implementation-defined).
class GaussianDraws {
public:
    explicit GaussianDraws(std::uint64_t seed) : rng_(seed) {}

    double operator()() {
        if (have_) {
            have_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = unit();
        } while (u1 <= 0.0);
        const double u2 = unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_ = true;
        return r * std::cos(a);
    }

private:
    double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

    std::mt19937_64 rng_;
    bool have_ = false;
    double spare_ = 0.0;
};

std::string format_sci(double x) {
    std::ostringstream os;
    os.precision(2);
    os << std::scientific << x;
    return os.str();
}

}  // namespace

// ---- layout ---------------------------------------------------------------

ThetaLayout ThetaLayout::from_bundle(const DesignBundle& bundle) {
    ThetaLayout layout;
    layout.q = {bundle.q_outer};
    layout.structure = {bundle.d_structure};
    if (bundle.q_inner > 0) {
        layout.q.push_back(bundle.q_inner);
        layout.structure.push_back(bundle.d_structure);
    }
    layout.has_rho = bundle.residual == ResidualKind::compound_symmetry;
    layout.max_block = bundle.max_block();
    return layout;
}

int ThetaLayout::dim() const {
    int d = 0;
    for (std::size_t l = 0; l < q.size(); ++l) d += d_param_count(q[l], structure[l]);
    d += 1;  // log sigma2
    if (has_rho) d += 1;
    return d;
}

Eigen::VectorXd encode_theta(const VarianceParams& vp, const ThetaLayout& layout) {
    if (vp.d.size() != layout.q.size()) {
        fail(ErrorCode::DimensionMismatch, "wrong number of D matrices for the layout");
    }
    std::vector<double> th;
    for (std::size_t l = 0; l < layout.q.size(); ++l) {
        if (vp.d[l].rows() != layout.q[l] || vp.d[l].cols() != layout.q[l]) {
            fail(ErrorCode::DimensionMismatch, "D dimension does not match the layout");
        }
        encode_d(vp.d[l], layout.structure[l], th);
    }
    if (!(vp.sigma2 > 0.0)) {
        fail(ErrorCode::NonPositiveSigma, "sigma2 must be positive");
    }
    th.push_back(std::log(vp.sigma2));
    if (layout.has_rho) {
        if (!vp.rho) {
            fail(ErrorCode::DimensionMismatch, "layout expects a compound-symmetry rho");
        }
        th.push_back(encode_rho(*vp.rho, layout.max_block));
    }
    return Eigen::Map<Eigen::VectorXd>(th.data(), static_cast<Eigen::Index>(th.size()));
}

VarianceParams decode_theta(const Eigen::VectorXd& theta, const ThetaLayout& layout) {
    if (theta.size() != layout.dim()) {
        fail(ErrorCode::DecodeFailure,
             "theta has length " + std::to_string(theta.size()) + ", layout needs " +
                 std::to_string(layout.dim()));
    }
    if (!theta.allFinite()) {
        fail(ErrorCode::DecodeFailure, "theta has non-finite entries");
    }
    VarianceParams vp;
    int at = 0;
    for (std::size_t l = 0; l < layout.q.size(); ++l) {
        int consumed = 0;
        vp.d.push_back(decode_d(theta.data() + at, layout.q[l], layout.structure[l], &consumed));
        at += consumed;
    }
    vp.sigma2 = std::exp(theta[at]);
    ++at;
    if (layout.has_rho) vp.rho = decode_rho(theta[at], layout.max_block);
    return vp;
}

std::pair<double, double> rho_bounds(int m) {
    if (m < 2) {
        fail(ErrorCode::OutOfRange, "compound symmetry needs blocks of size >= 2");
    }
    return {-1.0 / (m - 1), 1.0};
}

Eigen::MatrixXd cs_block(double sigma2, double rho, int m) {
    if (!(sigma2 > 0.0)) fail(ErrorCode::NonPositiveSigma, "sigma2 must be positive");
    if (m < 1) fail(ErrorCode::OutOfRange, "block size must be >= 1");
    if (m >= 2) {
        const auto [lo, hi] = rho_bounds(m);
        if (!(rho > lo && rho < hi)) {
            std::ostringstream msg;
            msg << "rho " << rho << " outside (" << lo << ", " << hi << ") for block size "
                << m;
            fail(ErrorCode::RhoOutOfRange, msg.str());
        }
    }
    Eigen::MatrixXd r = Eigen::MatrixXd::Constant(m, m, sigma2 * rho);
    r.diagonal().setConstant(sigma2);
    return r;
}

Eigen::MatrixXd marginal_cov(const GroupBlock& g, const DesignBundle& bundle,
                             const VarianceParams& vp) {
    const Eigen::MatrixXd d_full = expanded_d(g, bundle, vp.d);
    Eigen::MatrixXd v = g.Z * d_full * g.Z.transpose();
    const auto rows = g.Z.rows();
    if (bundle.residual == ResidualKind::compound_symmetry) {
        if (!vp.rho) {
            fail(ErrorCode::DimensionMismatch,
                 "compound-symmetry residual requires rho");
        }
        Eigen::Index at = 0;
        for (const int m : g.cs_sizes) {
            v.block(at, at, m, m) += cs_block(vp.sigma2, *vp.rho, m);
            at += m;
        }
        if (at != rows) {
            fail(ErrorCode::DimensionMismatch, "cs_sizes do not cover the group rows");
        }
    } else {
        if (!(vp.sigma2 > 0.0)) {
            fail(ErrorCode::NonPositiveSigma, "sigma2 must be positive");
        }
        v.diagonal().array() += vp.sigma2;
    }
    return v;
}

// ---- GLS and likelihoods ----------------------------------------------

GlsSolve gls_beta(const DesignBundle& bundle, const VarianceParams& vp) {
    const PassResult pass = v_pass(bundle, vp);
    Eigen::LLT<Eigen::MatrixXd> llt_a(pass.a);
    if (llt_a.info() != Eigen::Success) {
        fail(ErrorCode::SingularInformation, "X' V^-1 X is singular");
    }
    GlsSolve out;
    out.beta = llt_a.solve(pass.c);
    out.cov_beta = llt_a.solve(Eigen::MatrixXd::Identity(bundle.p(), bundle.p()));
    out.logdet_v = pass.logdet_v;
    out.logdet_info = 2.0 * llt_a.matrixLLT().diagonal().array().log().sum();
    out.quad = pass.s - pass.c.dot(out.beta);
    return out;
}

double reml_loglik(const DesignBundle& bundle, const VarianceParams& vp) {
    const GlsSolve g = gls_beta(bundle, vp);
    const double n_minus_p = bundle.n_obs - bundle.p();
    return -0.5 * (n_minus_p * kLog2Pi + g.logdet_v + g.logdet_info + g.quad);
}

double ml_loglik(const DesignBundle& bundle, const VarianceParams& vp) {
    const GlsSolve g = gls_beta(bundle, vp);
    return -0.5 * (bundle.n_obs * kLog2Pi + g.logdet_v + g.quad);
}

double loglik(const DesignBundle& bundle, const VarianceParams& vp) {
    return bundle.method == FitMethod::reml ? reml_loglik(bundle, vp)
                                            : ml_loglik(bundle, vp);
}

// ---- post-fit quantities ----------------------------------------------

std::vector<BlupEntry> blup(const DesignBundle& bundle, const VarianceParams& vp,
                            const Eigen::VectorXd& beta) {
    std::vector<BlupEntry> out;
    const int levels = levels_of(bundle);
    for (const auto& g : bundle.groups) {
        const Eigen::MatrixXd v = marginal_cov(g, bundle, vp);
        Eigen::LLT<Eigen::MatrixXd> llt(v);
        if (llt.info() != Eigen::Success) {
            fail(ErrorCode::NumericalBreakdown,
                 "marginal covariance is not positive definite");
        }
        const Eigen::VectorXd r = g.y - g.X * beta;
        const Eigen::VectorXd u = llt.solve(r);
        const Eigen::MatrixXd d_full = expanded_d(g, bundle, vp.d);
        const Eigen::VectorXd b = d_full * (g.Z.transpose() * u);
        if (levels == 1) {
            out.push_back({"pair_id", g.key, b});
        } else {
            out.push_back({"origin_borough", g.key, b.head(bundle.q_outer)});
            for (const auto& [pid, offset] : g.pair_z_offsets) {
                out.push_back({"pair_id", pid, b.segment(offset, bundle.q_inner)});
            }
        }
    }
    return out;
}

Eigen::VectorXd normalized_residuals(const DesignBundle& bundle,
                                     const VarianceParams& vp,
                                     const Eigen::VectorXd& beta,
                                     const std::vector<BlupEntry>& blups) {
    std::map<std::pair<std::string, std::string>, const Eigen::VectorXd*> by_key;
    for (const auto& e : blups) by_key[{e.level, e.key}] = &e.b;
    auto lookup = [&by_key](const std::string& level,
                            const std::string& key) -> const Eigen::VectorXd& {
        const auto it = by_key.find({level, key});
        if (it == by_key.end()) {
            fail(ErrorCode::DimensionMismatch, "missing BLUP for " + level + " " + key);
        }
        return *it->second;
    };

    const int levels = levels_of(bundle);
    Eigen::VectorXd out(bundle.n_obs);
    for (const auto& g : bundle.groups) {
        Eigen::VectorXd b(g.Z.cols());
        if (levels == 1) {
            b = lookup("pair_id", g.key);
        } else {
            b.head(bundle.q_outer) = lookup("origin_borough", g.key);
            for (const auto& [pid, offset] : g.pair_z_offsets) {
                b.segment(offset, bundle.q_inner) = lookup("pair_id", pid);
            }
        }
        Eigen::VectorXd r = g.y - g.X * beta - g.Z * b;
        Eigen::Index at = 0;
        for (const int m : g.cs_sizes) {
            if (vp.rho) {
                const Eigen::MatrixXd rb = cs_block(vp.sigma2, *vp.rho, m);
                Eigen::LLT<Eigen::MatrixXd> llt(rb);
                Eigen::VectorXd seg = r.segment(at, m);
                llt.matrixL().solveInPlace(seg);
                r.segment(at, m) = seg;
            } else {
                r.segment(at, m) /= std::sqrt(vp.sigma2);
            }
            at += m;
        }
        for (std::size_t i = 0; i < g.row_index.size(); ++i) {
            out[g.row_index[i]] = r[static_cast<Eigen::Index>(i)];
        }
    }
    return out;
}

std::vector<TRow> t_table(const DesignBundle& bundle, const Eigen::VectorXd& beta,
                          const Eigen::MatrixXd& cov_beta) {
    const int p = bundle.p();
    if (beta.size() != p || cov_beta.rows() != p || cov_beta.cols() != p) {
        fail(ErrorCode::DimensionMismatch, "beta/cov_beta do not match the design");
    }
    // A column is "within" if it varies inside any pair block; otherwise it is
    // constant per pair and is informed only by pair-level contrasts.
    std::vector<bool> within(static_cast<std::size_t>(p), false);
    for (const auto& g : bundle.groups) {
        Eigen::Index at = 0;
        for (const int m : g.cs_sizes) {
            for (int j = 0; j < p; ++j) {
                const double hi = g.X.col(j).segment(at, m).maxCoeff();
                const double lo = g.X.col(j).segment(at, m).minCoeff();
                if (hi - lo > 1e-9 * (1.0 + std::max(std::fabs(hi), std::fabs(lo)))) {
                    within[static_cast<std::size_t>(j)] = true;
                }
            }
            at += m;
        }
    }
    const int p_within =
        static_cast<int>(std::count(within.begin(), within.end(), true));
    const int p_between = p - p_within;
    const double df_within = bundle.n_obs - bundle.n_pairs - p_within;
    const double df_between = bundle.n_pairs - p_between;

    std::vector<TRow> rows;
    rows.reserve(static_cast<std::size_t>(p));
    for (int j = 0; j < p; ++j) {
        TRow row;
        row.name = bundle.x_names[static_cast<std::size_t>(j)];
        row.estimate = beta[j];
        row.se = std::sqrt(cov_beta(j, j));
        row.t = row.se > 0.0 ? row.estimate / row.se : 0.0;
        row.df = within[static_cast<std::size_t>(j)] ? df_within : df_between;
        row.p = row.df > 0.0 ? stats::t_two_sided_p(row.t, row.df) : 1.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

int count_variance_params(const DesignBundle& bundle) {
    return ThetaLayout::from_bundle(bundle).dim();
}

double aic(double loglik_value, int k) { return -2.0 * loglik_value + 2.0 * k; }

double bic(double loglik_value, int k, int n_obs) {
    return -2.0 * loglik_value + std::log(static_cast<double>(n_obs)) * k;
}

Eigen::MatrixXd cor_beta(const Eigen::MatrixXd& cov_beta) {
    const Eigen::Index p = cov_beta.rows();
    Eigen::VectorXd sd = cov_beta.diagonal().cwiseSqrt();
    for (Eigen::Index i = 0; i < p; ++i) {
        if (!(sd[i] > 0.0)) {
            fail(ErrorCode::NumericalBreakdown, "cov_beta has a non-positive diagonal");
        }
    }
    Eigen::MatrixXd cor = cov_beta.array() / (sd * sd.transpose()).array();
    cor.diagonal().setOnes();
    return cor;
}

// ---- fitting -----------------------------------------------------------

FitResult fit_bundle(const DesignBundle& bundle, const ModelSpec& spec,
                     const FitOptions& opts) {
    const ThetaLayout layout = ThetaLayout::from_bundle(bundle);
    const int n = bundle.n_obs;
    const int p = bundle.p();
    if (bundle.method == FitMethod::reml && n - p <= 0) {
        fail(ErrorCode::DimensionMismatch, "REML needs more observations than fixed effects");
    }

    // Start: D/sigma2 = I/q per level, rho = 0.
    std::vector<Eigen::MatrixXd> d0;
    for (const int q : layout.q) {
        d0.push_back(Eigen::MatrixXd::Identity(q, q) / static_cast<double>(q));
    }
    const std::optional<double> rho0 = layout.has_rho ? std::optional<double>(0.0)
                                                      : std::nullopt;
    const Eigen::VectorXd t0 = encode_reduced(d0, rho0, layout);

    const optim::Objective objective = [&](const Eigen::VectorXd& th) -> double {
        try {
            const auto [d_tilde, rho] = decode_reduced(th, layout);
            return reduced_eval(bundle, d_tilde, rho).objective;
        } catch (const Error&) {
            return kInf;
        }
    };

    struct Start {
        Eigen::VectorXd x;
        double f = kInf;
        bool converged = false;
    };
    std::vector<Start> runs;
    int total_evals = 0;
    GaussianDraws gauss(opts.jitter_seed);
    for (int s = 0; s <= std::max(0, opts.restarts); ++s) {
        Eigen::VectorXd start = t0;
        if (s > 0) {
            for (Eigen::Index i = 0; i < start.size(); ++i) {
                start[i] += opts.jitter_scale * gauss();
            }
        }
        const optim::Result nm = optim::nelder_mead(objective, start, opts.nm);
        total_evals += nm.evals;
        Start run{nm.x, nm.f, nm.converged};
        if (opts.polish && std::isfinite(nm.f)) {
            const optim::Result pol = optim::bfgs_polish(objective, nm.x, opts.nm);
            total_evals += pol.evals;
            if (pol.f <= nm.f) {
                run.x = pol.x;
                run.f = pol.f;
                run.converged = nm.converged || pol.converged;
            }
        }
        runs.push_back(std::move(run));
    }

    const auto best_it = std::min_element(
        runs.begin(), runs.end(), [](const Start& a, const Start& b) { return a.f < b.f; });
    if (!std::isfinite(best_it->f)) {
        fail(ErrorCode::NumericalBreakdown,
             "likelihood could not be evaluated at any optimizer start");
    }
    int agreeing = 0;
    for (const auto& run : runs) {
        if (std::fabs(run.f - best_it->f) <= 1e-6 * (1.0 + std::fabs(best_it->f))) {
            ++agreeing;
        }
    }

    // Recover the full variance parameters at the optimum.
    const auto [d_tilde, rho] = decode_reduced(best_it->x, layout);
    const double sigma2_hat = reduced_eval(bundle, d_tilde, rho).sigma2_hat;
    VarianceParams vp;
    for (const auto& dt : d_tilde) vp.d.push_back(sigma2_hat * dt);
    vp.sigma2 = sigma2_hat;
    vp.rho = rho;

    // Full theta straight from the reduced theta: D = sigma2 * Dt means the
    // Cholesky factor scales by sigma, so log-diagonals shift by log(sigma)
    // and raw off-diagonals scale by sigma. (Re-encoding via a fresh Cholesky
    // could fail at a legitimate near-singular optimum.)
    Eigen::VectorXd theta_full(layout.dim());
    {
        const double sigma = std::sqrt(sigma2_hat);
        const double log_sigma = std::log(sigma);
        int at = 0;
        for (std::size_t l = 0; l < layout.q.size(); ++l) {
            if (layout.structure[l] == DStructure::diagonal) {
                for (int i = 0; i < layout.q[l]; ++i, ++at) {
                    theta_full[at] = best_it->x[at] + log_sigma;
                }
            } else {
                for (int i = 0; i < layout.q[l]; ++i) {
                    for (int j = 0; j <= i; ++j, ++at) {
                        theta_full[at] = i == j ? best_it->x[at] + log_sigma
                                                : sigma * best_it->x[at];
                    }
                }
            }
        }
        theta_full[at] = std::log(sigma2_hat);
        ++at;
        if (layout.has_rho) theta_full[at] = best_it->x[at - 1];
    }

    const GlsSolve gls = gls_beta(bundle, vp);
    const double ll = bundle.method == FitMethod::reml
                          ? -0.5 * ((n - p) * kLog2Pi + gls.logdet_v + gls.logdet_info +
                                    gls.quad)
                          : -0.5 * (n * kLog2Pi + gls.logdet_v + gls.quad);

    FitResult fit;
    fit.spec = spec;
    fit.x_names = bundle.x_names;
    fit.beta = gls.beta;
    fit.cov_beta = gls.cov_beta;
    fit.variance = vp;
    fit.theta = theta_full;
    fit.loglik_value = ll;
    fit.n_obs = n;
    fit.n_pairs = bundle.n_pairs;
    fit.k_params = p + layout.dim();
    fit.aic_value = aic(ll, fit.k_params);
    fit.bic_value = bic(ll, fit.k_params, n);
    fit.z_names = bundle.z_names;
    fit.t_rows = t_table(bundle, gls.beta, gls.cov_beta);
    if (opts.compute_blups) fit.blups = blup(bundle, vp, gls.beta);

    const optim::Objective full_loglik = [&](const Eigen::VectorXd& th) -> double {
        try {
            return loglik(bundle, decode_theta(th, layout));
        } catch (const Error&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    const Eigen::VectorXd grad = optim::fd_gradient(full_loglik, fit.theta);

    ConvergenceReport report;
    report.converged = best_it->converged;
    report.evals = total_evals;
    report.restarts = std::max(0, opts.restarts);
    report.agreeing_restarts = agreeing;
    report.best_objective = best_it->f;
    report.grad_norm = grad.norm();
    report.grad_tol = 1e-4 * (1.0 + std::fabs(ll));
    if (report.converged) {
        std::ostringstream msg;
        msg << "converged (" << total_evals << " evals across " << runs.size()
            << " starts, " << agreeing << " agreeing)";
        report.message = msg.str();
    } else {
        report.message = "not converged: tolerances unmet within the evaluation budget";
    }
    fit.convergence = std::move(report);
    return fit;
}

FitResult fit(const Panel& panel, const ModelSpec& spec, const FitOptions& opts) {
    Panel working = spec.stratum ? stratify(panel, *spec.stratum) : panel;
    if (spec.needs_scores > 0) working = with_scores(working, spec.needs_scores);
    const DesignBundle bundle = build_design(working, spec);
    return fit_bundle(bundle, spec, opts);
}

// ---- comparison ----------------------------------------------------------

Comparison compare(const std::vector<const FitResult*>& fits) {
    if (fits.empty()) fail(ErrorCode::EmptyInput, "no fits to compare");
    Comparison cmp;
    const FitResult* first = fits.front();
    for (const FitResult* f : fits) {
        cmp.rows.push_back(
            {f->model_id, f->aic_value, f->bic_value, f->loglik_value, f->k_params});
        if (f->spec.method != first->spec.method) {
            cmp.comparable = false;
            cmp.warning = "fits mix REML and ML criteria";
        } else if (f->spec.response != first->spec.response) {
            cmp.comparable = false;
            cmp.warning = "fits model different responses";
        } else if (f->spec.method == FitMethod::reml && f->x_names != first->x_names) {
            cmp.comparable = false;
            cmp.warning =
                "REML criteria are not comparable across different fixed-effect designs";
        }
    }
    std::stable_sort(cmp.rows.begin(), cmp.rows.end(),
                     [](const ComparisonRow& a, const ComparisonRow& b) {
                         return a.aic_value < b.aic_value;
                     });
    return cmp;
}

// ---- rendering ------------------------------------------------------------

namespace {

json variance_to_json(const FitResult& fit) {
    json levels = json::array();
    const int q_outer = fit.variance.d.empty() ? 0 : static_cast<int>(fit.variance.d[0].rows());
    std::vector<std::string> outer_names(fit.z_names.begin(),
                                         fit.z_names.begin() + q_outer);
    const bool nested = fit.variance.d.size() == 2;
    json outer;
    outer["level"] = nested ? "origin_borough" : "pair_id";
    outer["names"] = outer_names;
    json cov = json::array();
    for (Eigen::Index i = 0; i < fit.variance.d[0].rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < fit.variance.d[0].cols(); ++j) {
            row.push_back(fit.variance.d[0](i, j));
        }
        cov.push_back(std::move(row));
    }
    outer["cov"] = std::move(cov);
    levels.push_back(std::move(outer));
    if (nested) {
        json inner;
        inner["level"] = "pair_id";
        inner["names"] = std::vector<std::string>(fit.z_names.begin() + q_outer,
                                                  fit.z_names.end());
        json icov = json::array();
        for (Eigen::Index i = 0; i < fit.variance.d[1].rows(); ++i) {
            json row = json::array();
            for (Eigen::Index j = 0; j < fit.variance.d[1].cols(); ++j) {
                row.push_back(fit.variance.d[1](i, j));
            }
            icov.push_back(std::move(row));
        }
        inner["cov"] = std::move(icov);
        levels.push_back(std::move(inner));
    }
    json out;
    out["levels"] = std::move(levels);
    out["sigma2"] = fit.variance.sigma2;
    if (fit.variance.rho) {
        out["rho"] = *fit.variance.rho;
    } else {
        out["rho"] = nullptr;
    }
    return out;
}

}  // namespace

std::string FitResult::to_json() const {
    json j;
    j["model"] = model_id;
    j["method"] = spec.method == FitMethod::reml ? "reml" : "ml";
    j["n_obs"] = n_obs;
    j["n_pairs"] = n_pairs;
    j["k"] = k_params;
    j["loglik"] = loglik_value;
    j["aic"] = aic_value;
    j["bic"] = bic_value;
    j["fixed"] = json::array();
    for (const auto& row : t_rows) {
        json r;
        r["name"] = row.name;
        r["estimate"] = row.estimate;
        r["se"] = row.se;
        r["t"] = row.t;
        r["df"] = row.df;
        r["p"] = row.p;
        j["fixed"].push_back(std::move(r));
    }
    j["variance"] = variance_to_json(*this);
    json conv;
    conv["converged"] = convergence.converged;
    conv["evals"] = convergence.evals;
    conv["restarts"] = convergence.restarts;
    conv["agreeing_restarts"] = convergence.agreeing_restarts;
    conv["objective"] = convergence.best_objective;
    conv["grad_norm"] = convergence.grad_norm;
    conv["grad_tol"] = convergence.grad_tol;
    conv["message"] = convergence.message;
    j["convergence"] = std::move(conv);
    j["blups"] = json::array();
    for (const auto& e : blups) {
        json b;
        b["level"] = e.level;
        b["key"] = e.key;
        b["b"] = std::vector<double>(e.b.data(), e.b.data() + e.b.size());
        j["blups"].push_back(std::move(b));
    }
    j["spec"] = json::parse(spec.to_json());
    return j.dump(2);
}

std::string FitResult::to_table() const {
    std::ostringstream os;
    const std::string method = spec.method == FitMethod::reml ? "reml" : "ml";
    os << "model" << (model_id.empty() ? "" : " " + model_id) << " (" << method << "), "
       << n_obs << " obs, " << n_pairs << " pairs\n";

    std::size_t name_w = 12;
    for (const auto& row : t_rows) name_w = std::max(name_w, row.name.size());
    os << "fixed effects:\n";
    os << "  " << std::string(name_w, ' ') << "  estimate        se         t      df       p\n";
    for (const auto& row : t_rows) {
        os << "  " << row.name << std::string(name_w - row.name.size(), ' ');
        auto cell = [&os](const std::string& text, int width) {
            os << std::string(width > static_cast<int>(text.size())
                                  ? static_cast<std::size_t>(width) - text.size()
                                  : 1,
                              ' ')
               << text;
        };
        cell(format_fixed(row.estimate, 2), 10);
        cell(format_fixed(row.se, 2), 10);
        cell(format_fixed(row.t, 2), 10);
        cell(format_fixed(row.df, 0), 8);
        cell(row.p < 0.0005 ? "<0.001" : format_fixed(row.p, 3), 8);
        os << "\n";
    }

    os << "random effects:\n";
    const bool nested = variance.d.size() == 2;
    const int q_outer = static_cast<int>(variance.d[0].rows());
    auto print_level = [&](const std::string& label, const Eigen::MatrixXd& d,
                           const std::vector<std::string>& names) {
        os << "  " << label << " covariance (";
        for (std::size_t i = 0; i < names.size(); ++i) {
            os << (i ? ", " : "") << names[i];
        }
        os << "):\n";
        for (Eigen::Index i = 0; i < d.rows(); ++i) {
            os << "    [";
            for (Eigen::Index j = 0; j <= i; ++j) {
                os << (j ? "  " : " ") << format_fixed(d(i, j), 3);
            }
            os << " ]\n";
        }
    };
    const std::vector<std::string> outer_names(z_names.begin(), z_names.begin() + q_outer);
    print_level(nested ? "origin_borough" : "pair_id", variance.d[0], outer_names);
    if (nested) {
        print_level("pair_id", variance.d[1],
                    std::vector<std::string>(z_names.begin() + q_outer, z_names.end()));
    }
    os << "residual: sigma2 = " << format_fixed(variance.sigma2, 3);
    if (variance.rho) {
        os << ", rho = " << format_fixed(*variance.rho, 3) << " (compound symmetry)\n";
    } else {
        os << " (independent)\n";
    }

    os << "fit: loglik = " << format_fixed(loglik_value, 3) << ", k = " << k_params
       << ", aic = " << format_fixed(aic_value, 3) << ", bic = " << format_fixed(bic_value, 3)
       << "\n";
    os << "convergence: " << (convergence.converged ? "converged" : "NOT CONVERGED") << " ("
       << "evals " << convergence.evals << ", starts " << convergence.restarts + 1
       << ", agreeing " << convergence.agreeing_restarts << ", grad "
       << format_sci(convergence.grad_norm) << " vs tol " << format_sci(convergence.grad_tol)
       << ")\n";
    return os.str();
}

}  // namespace longmix
