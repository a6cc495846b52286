#include "crumb/stats.hpp"

#include <cmath>
#include <limits>

#include "crumb/common.hpp"

namespace crumb {

namespace {

// Lentz's algorithm for the incomplete beta continued fraction
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-14;
    constexpr double kTiny = 1e-300;

    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw NumericError("betainc: continued fraction failed to converge");
}

}  // namespace

double betainc(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double lnfront = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                     a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(lnfront);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double gammainc_lower(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw NumericError("gammainc: invalid arguments");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) {
        // series expansion
        double ap = a, sum = 1.0 / a, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * 1e-15)
                return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
        }
        throw NumericError("gammainc: series failed to converge");
    }
    // continued fraction for Q(a, x)
    constexpr double kTiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / kTiny, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) {
            double q = std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
            return 1.0 - q;
        }
    }
    throw NumericError("gammainc: continued fraction failed to converge");
}

double student_t_two_sided_p(double t, double df) {
    if (df <= 0.0) throw NumericError("t-test: non-positive degrees of freedom");
    double x = df / (df + t * t);
    return betainc(df / 2.0, 0.5, x);
}

double chi2_sf(double x, double df) {
    if (x <= 0.0) return 1.0;
    return 1.0 - gammainc_lower(df / 2.0, x / 2.0);
}

}  // namespace crumb
