#pragma once

#include <cstddef>

namespace crumb {

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double betainc(double a, double b, double x);

// Regularized lower incomplete gamma P(a, x).
double gammainc_lower(double a, double x);

// Two-sided p-value of Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

// Survival function of the chi-squared distribution.
double chi2_sf(double x, double df);

}  // namespace crumb
