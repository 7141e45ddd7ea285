#pragma once

// Small statistics toolbox: moments, jackknife errors, Kolmogorov-Smirnov
// and chi-square tests, and weighted least-squares line fits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace ktlab {

// Streaming mean and spread. The update rule avoids the catastrophic
// cancellation of the naive sum-of-squares estimator and commutes bitwise
// with scaling the data by a power of two.
struct Welford {
    std::uint64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x) {
        ++n;
        const double delta = x - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (x - mean);
    }
    double variance() const {
        return n < 2 ? 0.0 : std::max(m2, 0.0) / (static_cast<double>(n) - 1.0);
    }
    double std_error() const {
        if (n < 2) return 0.0;
        const auto dn = static_cast<double>(n);
        return std::sqrt(std::max(m2, 0.0) / (dn - 1.0) / dn);
    }
};

inline double mean(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean of empty sample");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Unbiased sample variance (n-1 denominator).
inline double variance(const std::vector<double>& v) {
    if (v.size() < 2) throw std::invalid_argument("variance needs n >= 2");
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

inline double std_error(const std::vector<double>& v) {
    return std::sqrt(variance(v) / static_cast<double>(v.size()));
}

// Jackknife standard error of an arbitrary statistic of the sample.
// Recomputes the statistic on each leave-one-out subsample.
inline double jackknife_se(const std::vector<double>& v,
                           const std::function<double(const std::vector<double>&)>& stat) {
    const std::size_t n = v.size();
    if (n < 2) throw std::invalid_argument("jackknife needs n >= 2");
    // loo starts as v without element 0; writing v[i-1] into slot i-1 then
    // walks the hole one position to the right each iteration.
    std::vector<double> loo(v.begin() + 1, v.end());
    std::vector<double> thetas(n);
    thetas[0] = stat(loo);
    for (std::size_t i = 1; i < n; ++i) {
        loo[i - 1] = v[i - 1];
        thetas[i] = stat(loo);
    }
    double tbar = 0.0;
    for (double t : thetas) tbar += t;
    tbar /= static_cast<double>(n);
    double s = 0.0;
    for (double t : thetas) s += (t - tbar) * (t - tbar);
    return std::sqrt(s * static_cast<double>(n - 1) / static_cast<double>(n));
}

// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^{k-1} e^{-2 k^2 lambda^2}.
inline double kolmogorov_q(double lambda) {
    if (lambda <= 0.0) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += sign * term;
        sign = -sign;
        if (term < 1e-16) break;
    }
    return std::min(1.0, std::max(0.0, 2.0 * sum));
}

// One-sample KS test against a continuous CDF. Small-sample correction from
// Stephens: lambda = (sqrt(n) + 0.12 + 0.11/sqrt(n)) D.
inline double ks_test_pvalue(std::vector<double> sample,
                             const std::function<double(double)>& cdf) {
    std::sort(sample.begin(), sample.end());
    const std::size_t n = sample.size();
    if (n == 0) throw std::invalid_argument("ks test on empty sample");
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = cdf(sample[i]);
        const double lo = static_cast<double>(i) / static_cast<double>(n);
        const double hi = static_cast<double>(i + 1) / static_cast<double>(n);
        d = std::max(d, std::max(f - lo, hi - f));
    }
    const double sn = std::sqrt(static_cast<double>(n));
    return kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
}

// Two-sample KS test; effective size n1 n2 / (n1 + n2).
inline double ks_2sample_pvalue(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.empty() || b.empty()) throw std::invalid_argument("ks test on empty sample");
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j]) ++i; else ++j;
        const double fa = static_cast<double>(i) / static_cast<double>(a.size());
        const double fb = static_cast<double>(j) / static_cast<double>(b.size());
        d = std::max(d, std::fabs(fa - fb));
    }
    const double ne = static_cast<double>(a.size()) * static_cast<double>(b.size()) /
                      static_cast<double>(a.size() + b.size());
    const double sn = std::sqrt(ne);
    return kolmogorov_q((sn + 0.12 + 0.11 / sn) * d);
}

namespace detail {

// Regularized lower incomplete gamma P(a,x) by series expansion (x < a+1).
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a,x) by continued fraction (x >= a+1).
inline double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-15) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace detail

// Regularized upper incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q domain");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_cf(a, x);
}

// Survival function of the chi-square distribution with k degrees of freedom.
inline double chi2_sf(double x, double k) { return gamma_q(0.5 * k, 0.5 * x); }

// Pearson chi-square goodness-of-fit p-value for observed counts against
// expected counts (same total).
inline double chi2_test_pvalue(const std::vector<double>& observed,
                               const std::vector<double>& expected) {
    if (observed.size() != expected.size() || observed.empty())
        throw std::invalid_argument("chi2 test size mismatch");
    double stat = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        if (expected[i] <= 0.0) throw std::invalid_argument("chi2 expected count <= 0");
        const double d = observed[i] - expected[i];
        stat += d * d / expected[i];
    }
    return chi2_sf(stat, static_cast<double>(observed.size() - 1));
}

struct LineFit {
    double intercept = 0.0;
    double slope = 0.0;
    double se_slope = 0.0;
};

// Weighted least squares y = a + b x. With weights 1/sigma_i^2 the slope
// error is the standard propagated one; with unit weights it falls back to
// the residual-based estimate.
inline LineFit wls_fit(const std::vector<double>& x, const std::vector<double>& y,
                       const std::vector<double>& w, bool residual_se = false) {
    const std::size_t n = x.size();
    if (y.size() != n || w.size() != n || n < 2)
        throw std::invalid_argument("wls_fit needs matching sizes, n >= 2");
    double sw = 0, swx = 0, swy = 0;
    for (std::size_t i = 0; i < n; ++i) { sw += w[i]; swx += w[i] * x[i]; swy += w[i] * y[i]; }
    const double xbar = swx / sw, ybar = swy / sw;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += w[i] * (x[i] - xbar) * (x[i] - xbar);
        sxy += w[i] * (x[i] - xbar) * (y[i] - ybar);
    }
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = ybar - fit.slope * xbar;
    if (residual_se && n > 2) {
        double chi2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - fit.intercept - fit.slope * x[i];
            chi2 += w[i] * r * r;
        }
        fit.se_slope = std::sqrt(chi2 / (static_cast<double>(n - 2) * sxx));
    } else {
        fit.se_slope = std::sqrt(1.0 / sxx);
    }
    return fit;
}

}  // namespace ktlab
