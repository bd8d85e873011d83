#include "mpt/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mpt/core.hpp"

namespace mpt::stats {

double mean(std::span<const double> values) {
    if (values.empty()) throw Error(ErrorCode::TooFewSamples, "mean of no values");
    // Shifted by the first value so identical inputs return that value exactly.
    const double origin = values.front();
    double sum = 0.0;
    for (double v : values) sum += v - origin;
    return origin + sum / static_cast<double>(values.size());
}

double sample_sd(std::span<const double> values) {
    if (values.size() < 2) throw Error(ErrorCode::TooFewSamples, "need at least two values");
    const double m = mean(values);
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

namespace {

constexpr double kEqualityTolerance = 1e-12;

// Continued fraction for I_x(a, b), modified Lentz.
double beta_fraction(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < eps) break;
    }
    return h;
}

// x and y = 1 - x are passed separately so callers can keep precision near 1.
double incomplete_beta_xy(double a, double b, double x, double y) {
    if (x <= 0.0) return 0.0;
    if (y <= 0.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log(y);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
    return 1.0 - front * beta_fraction(b, a, y) / b;
}

// Two-sided tail P(|T| > |t|).
double two_sided_tail(double t, double df) {
    const double t2 = t * t;
    const double x = df / (df + t2);
    const double y = t2 / (df + t2);
    return incomplete_beta_xy(df / 2.0, 0.5, x, y);
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0) || x < 0.0 || x > 1.0) {
        throw Error(ErrorCode::InvalidArgument, "incomplete_beta needs a, b > 0 and x in [0, 1]");
    }
    return incomplete_beta_xy(a, b, x, 1.0 - x);
}

double student_t_cdf(double t, double df) {
    if (!(df > 0.0)) throw Error(ErrorCode::InvalidArgument, "degrees of freedom must be positive");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double half_tail = 0.5 * two_sided_tail(t, df);
    return t > 0 ? 1.0 - half_tail : half_tail;
}

double student_t_quantile(double p, double df) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::InvalidArgument, "quantile probability must be in (0, 1)");
    if (p == 0.5) return 0.0;
    if (p < 0.5) return -student_t_quantile(1.0 - p, df);
    // Upper tail mass q = 1 - p; solve two_sided_tail(t) = 2q on t > 0, where the tail is decreasing.
    const double target = 2.0 * (1.0 - p);
    double lo = 0.0, hi = 1.0;
    while (two_sided_tail(hi, df) > target) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300) return std::numeric_limits<double>::infinity();
    }
    for (int i = 0; i < 2000 && hi - lo > 1e-15 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (two_sided_tail(mid, df) > target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

Interval confidence_interval(std::span<const double> values, double level) {
    if (values.size() < 2) {
        throw Error(ErrorCode::TooFewSamples,
                    "confidence interval needs at least two values, got " + std::to_string(values.size()));
    }
    if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "level must be in (0, 1)");
    const double n = static_cast<double>(values.size());
    const double s = sample_sd(values);
    const double crit = student_t_quantile((1.0 + level) / 2.0, n - 1.0);
    return {mean(values), crit * s / std::sqrt(n)};
}

TTestResult paired_t_test(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) {
        throw Error(ErrorCode::LengthMismatch,
                    "paired samples differ in length: " + std::to_string(xs.size()) + " vs " + std::to_string(ys.size()));
    }
    if (xs.size() < 2) throw Error(ErrorCode::TooFewSamples, "paired t-test needs at least two pairs");
    std::vector<double> diff(xs.size());
    double scale = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        diff[i] = xs[i] - ys[i];
        scale = std::max({scale, std::fabs(xs[i]), std::fabs(ys[i])});
    }
    const double n = static_cast<double>(diff.size());
    const double s = sample_sd(diff);
    // Differences equal up to subtraction rounding (0.8 - 0.7 vs 0.82 - 0.72) count as equal.
    if (s <= kEqualityTolerance * std::max(scale, 1.0)) {
        throw Error(ErrorCode::DegenerateVariance, "all paired differences are equal");
    }
    TTestResult r;
    r.df = static_cast<int>(diff.size()) - 1;
    r.t = mean(diff) / (s / std::sqrt(n));
    r.p = two_sided_tail(r.t, r.df);
    return r;
}

}  // namespace mpt::stats
