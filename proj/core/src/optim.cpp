#include "longmix/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace longmix::optim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double guarded(const Objective& f, const Eigen::VectorXd& x) {
    const double v = f(x);
    return std::isfinite(v) ? v : kInf;
}

int default_budget(const Options& opts, Eigen::Index dim) {
    return opts.max_evals > 0 ? opts.max_evals : 500 * static_cast<int>(dim) + 200;
}

}  // namespace

Result nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const Options& opts) {
    const Eigen::Index n = x0.size();
    const int budget = default_budget(opts, n);

    Result out;
    if (n == 0) {
        out.x = x0;
        out.f = guarded(f, x0);
        out.evals = 1;
        out.converged = true;
        return out;
    }

    std::vector<Eigen::VectorXd> xs;
    std::vector<double> fs;
    xs.reserve(static_cast<std::size_t>(n) + 1);
    xs.push_back(x0);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd v = x0;
        v[i] += opts.init_step;
        xs.push_back(std::move(v));
    }
    int evals = 0;
    for (const auto& v : xs) {
        fs.push_back(guarded(f, v));
        ++evals;
    }

    std::vector<std::size_t> order(xs.size());
    auto sort_order = [&] {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&fs](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
    };

    int iterations = 0;
    double rel_spread = kInf;
    double diameter = kInf;
    bool converged = false;
    while (evals < budget) {
        sort_order();
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second_worst = order[order.size() - 2];

        rel_spread = (fs[worst] - fs[best]) / (1.0 + std::fabs(fs[best]));
        diameter = 0.0;
        for (const auto& v : xs) {
            diameter = std::max(diameter, (v - xs[best]).lpNorm<Eigen::Infinity>());
        }
        if (rel_spread < opts.rel_f_tol && diameter < opts.step_tol) {
            converged = true;
            break;
        }
        ++iterations;

        Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
        for (std::size_t k = 0; k + 1 < order.size(); ++k) centroid += xs[order[k]];
        centroid /= static_cast<double>(n);

        const Eigen::VectorXd reflected = centroid + (centroid - xs[worst]);
        const double f_r = guarded(f, reflected);
        ++evals;

        if (f_r < fs[best]) {
            const Eigen::VectorXd expanded = centroid + 2.0 * (centroid - xs[worst]);
            const double f_e = guarded(f, expanded);
            ++evals;
            if (f_e < f_r) {
                xs[worst] = expanded;
                fs[worst] = f_e;
            } else {
                xs[worst] = reflected;
                fs[worst] = f_r;
            }
            continue;
        }
        if (f_r < fs[second_worst]) {
            xs[worst] = reflected;
            fs[worst] = f_r;
            continue;
        }
        // Contract toward the better of (worst, reflected).
        if (f_r < fs[worst]) {
            const Eigen::VectorXd outside = centroid + 0.5 * (reflected - centroid);
            const double f_c = guarded(f, outside);
            ++evals;
            if (f_c <= f_r) {
                xs[worst] = outside;
                fs[worst] = f_c;
                continue;
            }
        } else {
            const Eigen::VectorXd inside = centroid + 0.5 * (xs[worst] - centroid);
            const double f_c = guarded(f, inside);
            ++evals;
            if (f_c < fs[worst]) {
                xs[worst] = inside;
                fs[worst] = f_c;
                continue;
            }
        }
        // Shrink toward the best vertex.
        for (std::size_t k = 1; k < order.size() && evals < budget; ++k) {
            const std::size_t v = order[k];
            xs[v] = xs[best] + 0.5 * (xs[v] - xs[best]);
            fs[v] = guarded(f, xs[v]);
            ++evals;
        }
    }

    sort_order();
    out.x = xs[order.front()];
    out.f = fs[order.front()];
    out.evals = evals;
    out.iterations = iterations;
    out.converged = converged;
    out.last_rel_improvement = rel_spread;
    out.last_step = diameter;
    return out;
}

Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd probe = x;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = 1e-5 * (1.0 + std::fabs(x[k]));
        probe[k] = x[k] + h;
        const double up = f(probe);
        probe[k] = x[k] - h;
        const double down = f(probe);
        probe[k] = x[k];
        g[k] = (up - down) / (2.0 * h);
    }
    return g;
}

Result bfgs_polish(const Objective& f, const Eigen::VectorXd& x0, const Options& opts) {
    const Eigen::Index n = x0.size();
    const int budget = default_budget(opts, n);

    Result out;
    out.x = x0;
    out.f = guarded(f, x0);
    int evals = 1;
    if (!std::isfinite(out.f) || n == 0) {
        out.evals = evals;
        out.converged = n == 0;
        return out;
    }

    auto gradient = [&](const Eigen::VectorXd& x) {
        evals += 2 * static_cast<int>(n);
        return fd_gradient([&](const Eigen::VectorXd& v) { return guarded(f, v); }, x);
    };

    Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd x = x0;
    double fx = out.f;
    Eigen::VectorXd g = gradient(x);

    int iterations = 0;
    bool converged = false;
    double last_rel = kInf;
    double last_step = kInf;
    while (evals < budget) {
        if (!g.allFinite()) break;
        if (g.lpNorm<Eigen::Infinity>() < 1e-12 * (1.0 + std::fabs(fx))) {
            converged = true;  // already stationary at entry
            break;
        }
        ++iterations;

        Eigen::VectorXd direction = -(h_inv * g);
        double slope = g.dot(direction);
        if (!(slope < 0.0)) {  // reset a corrupted curvature model
            h_inv.setIdentity();
            direction = -g;
            slope = g.dot(direction);
        }

        double step = 1.0;
        double f_new = kInf;
        Eigen::VectorXd x_new;
        bool accepted = false;
        while (step > 1e-14 && evals < budget) {
            x_new = x + step * direction;
            f_new = guarded(f, x_new);
            ++evals;
            if (f_new <= fx + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        const Eigen::VectorXd s = x_new - x;
        last_rel = (fx - f_new) / (1.0 + std::fabs(f_new));
        last_step = s.lpNorm<Eigen::Infinity>();

        Eigen::VectorXd g_new = gradient(x_new);
        const Eigen::VectorXd yv = g_new - g;
        const double sy = s.dot(yv);
        if (sy > 1e-12 * s.norm() * yv.norm() && yv.allFinite()) {
            const Eigen::VectorXd hy = h_inv * yv;
            const double yhy = yv.dot(hy);
            // BFGS inverse update.
            h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
                     (hy * s.transpose() + s * hy.transpose()) / sy;
        }
        x = x_new;
        fx = f_new;
        g = g_new;

        if (last_rel < opts.rel_f_tol && last_step < opts.step_tol) {
            converged = true;
            break;
        }
    }

    out.x = x;
    out.f = fx;
    out.evals = evals;
    out.iterations = iterations;
    out.converged = converged;
    out.last_rel_improvement = last_rel;
    out.last_step = last_step;
    return out;
}

}  // namespace longmix::optim
