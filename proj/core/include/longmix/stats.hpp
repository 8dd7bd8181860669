#pragma once

namespace longmix::stats {

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incbeta(double a, double b, double x);

// Two-sided p-value of a Student-t statistic with df degrees of freedom.
double t_two_sided_p(double t, double df);

}  // namespace longmix::stats
