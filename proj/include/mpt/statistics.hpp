#pragma once

#include <span>

namespace mpt::stats {

double mean(std::span<const double> values);
/// Sample standard deviation (n - 1 denominator).
double sample_sd(std::span<const double> values);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
double student_t_quantile(double p, double df);

struct Interval {
    double mean = 0.0;
    double halfwidth = 0.0;
};

/// mean ± t_{(1+level)/2, n-1} · s / √n. Throws Error{TooFewSamples} below two values.
Interval confidence_interval(std::span<const double> values, double level = 0.95);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;  // two-sided
    int df = 0;
};

/// Two-sided paired t-test on xs - ys.
/// Throws Error{LengthMismatch}, Error{TooFewSamples} or Error{DegenerateVariance}.
TTestResult paired_t_test(std::span<const double> xs, std::span<const double> ys);

}  // namespace mpt::stats
