#include "longmix/stats.hpp"

#include <cmath>

#include "longmix/error.hpp"

namespace longmix::stats {

namespace {

// Continued-fraction body of I_x(a, b), modified Lentz iteration.
double incbeta_cf(double a, double b, double x) {
    const double tiny = 1e-30;
    double f = 1.0;
    double c = 1.0;
    double d = 0.0;
    for (int i = 0; i <= 300; ++i) {
        const int m = i / 2;
        double numerator;
        if (i == 0) {
            numerator = 1.0;
        } else if (i % 2 == 0) {
            numerator = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        } else {
            numerator = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        }
        d = 1.0 + numerator * d;
        if (std::fabs(d) < tiny) d = tiny;
        d = 1.0 / d;
        c = 1.0 + numerator / c;
        if (std::fabs(c) < tiny) c = tiny;
        f *= c * d;
        if (std::fabs(1.0 - c * d) < 1e-15) break;
    }
    return f - 1.0;
}

}  // namespace

double incbeta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) {
        fail(ErrorCode::OutOfRange, "incbeta requires a > 0 and b > 0");
    }
    if (!(x >= 0.0 && x <= 1.0)) {
        fail(ErrorCode::OutOfRange, "incbeta requires x in [0, 1]");
    }
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    // Swap tails where the continued fraction converges fastest.
    if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incbeta(b, a, 1.0 - x);
    const double lbeta = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    const double front =
        std::exp(a * std::log(x) + b * std::log1p(-x) - lbeta) / a;
    return front * incbeta_cf(a, b, x);
}

double t_two_sided_p(double t, double df) {
    if (!(df > 0.0)) fail(ErrorCode::OutOfRange, "t_two_sided_p requires df > 0");
    if (!std::isfinite(t)) return 0.0;
    // P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2).
    const double x = df / (df + t * t);
    return incbeta(0.5 * df, 0.5, x);
}

}  // namespace longmix::stats
