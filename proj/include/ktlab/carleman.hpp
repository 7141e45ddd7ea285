#pragma once

// Scattering geometry around a fixed pivot velocity. The classical Carleman
// parametrization maps an incoming velocity and impact direction to the pair
// of post-collision velocities, whose legs from the pivot are orthogonal.
// On top of the map sit three Monte-Carlo probes used to characterize how
// the collision kernel b = |(v* - pivot) . nu*| weights small regions:
//
//   - pushforward_check: the kernel-weighted integral over (v*, nu*) equals
//     the integral over the orthogonal-pair parametrization (area element
//     for one leg, arclength on the perpendicular line through the pivot for
//     the other, doubled because +nu* and -nu* produce the same pair);
//   - preimage_scaling: the kernel mass of {|v_i - v_j| <= delta} for both
//     choices of v_i among the scattered pair, with a log-log fit of the
//     delta exponent;
//   - singular_moment: the kernel integral of 1 / |v_i - v_j| for the
//     deflected leg, with the line integral done in closed form so the
//     estimator has finite variance near the singularity.
//
// All integrals restrict the incoming velocity to a ball of the given
// radius; test functions are expected to vanish outside it.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ktlab/rng.hpp"
#include "ktlab/stats.hpp"
#include "ktlab/torus.hpp"

namespace ktlab {

// Post-collision velocities around a pivot: v_prime is the pivot plus the
// normal component of the incoming velocity, v_prime_star keeps the rest.
// (v_prime - pivot) and (v_prime_star - pivot) are orthogonal.
struct CarlemanPair {
    Vec2 v_prime;
    Vec2 v_prime_star;
    Vec2 pivot;
};

inline CarlemanPair carleman_map(const Vec2& v_star, const Vec2& nu_star, const Vec2& pivot) {
    if (std::fabs(norm(nu_star) - 1.0) > 1e-9)
        throw std::invalid_argument("carleman_map: nu_star is not a unit vector");
    const double proj = dot(v_star - pivot, nu_star);
    return {pivot + nu_star * proj, v_star - nu_star * proj, pivot};
}

namespace detail {

// Uniform point in the disk of the given radius (two draws, no rejection).
inline Vec2 uniform_disk(Philox& rng, double radius) {
    const double r = radius * std::sqrt(rng.uniform());
    const double th = 2.0 * std::acos(-1.0) * rng.uniform();
    return {r * std::cos(th), r * std::sin(th)};
}

// Intersection of {s : |anchor + s * dir| <= radius} (dir unit) with [lo, hi];
// the callers guarantee the anchor itself is inside the ball, so the
// intersection is never empty.
inline void clip_to_ball(const Vec2& anchor, const Vec2& dir, double radius, double& lo,
                         double& hi) {
    const double b = dot(anchor, dir);
    const double disc = b * b - (norm2(anchor) - radius * radius);
    const double root = std::sqrt(std::max(disc, 0.0));
    lo = std::max(lo, -b - root);
    hi = std::min(hi, -b + root);
}

}  // namespace detail

using PairFn = std::function<double(const Vec2&, const Vec2&)>;

struct PushforwardCheck {
    double lhs = 0.0;
    double lhs_se = 0.0;
    double rhs = 0.0;
    double rhs_se = 0.0;
    double se = 0.0;  // combined
    std::uint64_t samples = 0;
};

// Dual Monte-Carlo evaluation of the same kernel-weighted integral.
// lhs: f(V', V'_*) b(nu*, v*) over uniform nu* x uniform v* in the ball.
// rhs: f over the pair parametrization, V' uniform in the ball and V'_* at
// uniform signed arclength on the perpendicular line through the pivot,
// doubled for the two impact directions per pair and restricted to pairs
// whose incoming velocity v* = V' + V'_* - pivot stays inside the ball.
// f must vanish when either argument leaves the ball, and |pivot| plus the
// support radius of f must stay below the ball radius so the arclength range
// covers the support.
inline PushforwardCheck pushforward_check(const Vec2& pivot, const PairFn& f,
                                          std::uint64_t samples, std::uint64_t seed,
                                          double radius = 4.0) {
    if (samples < 2) throw std::invalid_argument("pushforward_check needs at least two samples");
    if (!(radius > 0.0)) throw std::invalid_argument("pushforward_check needs a positive radius");
    const double pi = std::acos(-1.0);
    Philox rng(seed);

    Welford forward;
    const double vol_forward = pi * radius * radius * 2.0 * pi;
    for (std::uint64_t k = 0; k < samples; ++k) {
        const Vec2 v_star = detail::uniform_disk(rng, radius);
        const Vec2 nu_star = rng.unit_vector();
        const double proj = dot(v_star - pivot, nu_star);
        const CarlemanPair pair{pivot + nu_star * proj, v_star - nu_star * proj, pivot};
        forward.add(f(pair.v_prime, pair.v_prime_star) * std::fabs(proj));
    }

    Welford direct;
    const double vol_direct = 2.0 * pi * radius * radius * 2.0 * radius;
    for (std::uint64_t k = 0; k < samples; ++k) {
        const Vec2 v_prime = detail::uniform_disk(rng, radius);
        const double s = rng.uniform(-radius, radius);
        const Vec2 leg = v_prime - pivot;
        const double len = norm(leg);
        if (len < 1e-12) {  // degenerate direction, measure zero
            direct.add(0.0);
            continue;
        }
        const Vec2 tangent{-leg.y / len, leg.x / len};
        const Vec2 v_prime_star = pivot + tangent * s;
        const Vec2 v_star = v_prime + tangent * s;  // = V' + V'_* - pivot
        const double inside = (norm(v_star) <= radius) ? 1.0 : 0.0;
        direct.add(f(v_prime, v_prime_star) * inside);
    }

    PushforwardCheck out;
    out.samples = samples;
    out.lhs = forward.mean * vol_forward;
    out.lhs_se = forward.std_error() * vol_forward;
    out.rhs = direct.mean * vol_direct;
    out.rhs_se = direct.std_error() * vol_direct;
    out.se = std::sqrt(out.lhs_se * out.lhs_se + out.rhs_se * out.rhs_se);
    return out;
}

struct PreimagePoint {
    double delta = 0.0;
    double star = 0.0;       // v_i = V'_* (deflected leg)
    double star_se = 0.0;
    double prime = 0.0;      // v_i = V' (pivot leg)
    double prime_se = 0.0;
    double total = 0.0;
    double total_se = 0.0;
};

struct PreimageScan {
    std::vector<PreimagePoint> points;
    double exponent = std::numeric_limits<double>::quiet_NaN();
    double exponent_se = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t samples = 0;
};

// Kernel mass of {|v_i - v_j| <= delta} for both choices of v_i among the
// scattered pair, over uniform nu* x uniform v* in the ball, shared samples
// across the delta list. The exponent is the weighted log-log slope of the
// branch total against delta; points with no hits are left out of the fit,
// and fewer than two usable points leave it NaN.
inline PreimageScan preimage_scaling(const Vec2& pivot, const Vec2& v_j,
                                     const std::vector<double>& delta_list,
                                     std::uint64_t samples, std::uint64_t seed,
                                     double radius = 4.0) {
    if (delta_list.empty()) throw std::invalid_argument("preimage_scaling needs deltas");
    for (double d : delta_list)
        if (!(d > 0.0) || !(d < 1.0))
            throw std::invalid_argument("preimage_scaling deltas must lie in (0, 1)");
    if (samples < 2) throw std::invalid_argument("preimage_scaling needs at least two samples");
    if (!(radius > 0.0)) throw std::invalid_argument("preimage_scaling needs a positive radius");
    const double pi = std::acos(-1.0);
    const double volume = pi * radius * radius * 2.0 * pi;
    Philox rng(seed);

    std::vector<Welford> star(delta_list.size()), prime(delta_list.size()),
        total(delta_list.size());
    for (std::uint64_t k = 0; k < samples; ++k) {
        const Vec2 v_star = detail::uniform_disk(rng, radius);
        const Vec2 nu_star = rng.unit_vector();
        const double proj = dot(v_star - pivot, nu_star);
        const double b = std::fabs(proj);
        const Vec2 leg_prime = pivot + nu_star * proj;
        const Vec2 leg_star = v_star - nu_star * proj;
        const double dist_star = norm(leg_star - v_j);
        const double dist_prime = norm(leg_prime - v_j);
        for (std::size_t i = 0; i < delta_list.size(); ++i) {
            const double hit_star = (dist_star <= delta_list[i]) ? b : 0.0;
            const double hit_prime = (dist_prime <= delta_list[i]) ? b : 0.0;
            star[i].add(hit_star);
            prime[i].add(hit_prime);
            total[i].add(hit_star + hit_prime);
        }
    }

    PreimageScan scan;
    scan.samples = samples;
    std::vector<double> lx, ly, lw;
    for (std::size_t i = 0; i < delta_list.size(); ++i) {
        PreimagePoint pt;
        pt.delta = delta_list[i];
        pt.star = star[i].mean * volume;
        pt.star_se = star[i].std_error() * volume;
        pt.prime = prime[i].mean * volume;
        pt.prime_se = prime[i].std_error() * volume;
        pt.total = total[i].mean * volume;
        pt.total_se = total[i].std_error() * volume;
        if (pt.total > 0.0 && pt.total_se > 0.0) {
            const double rel = pt.total_se / pt.total;
            lx.push_back(std::log(pt.delta));
            ly.push_back(std::log(pt.total));
            lw.push_back(1.0 / (rel * rel));
        }
        scan.points.push_back(pt);
    }
    if (lx.size() >= 2) {
        const LineFit fit = wls_fit(lx, ly, lw);
        scan.exponent = fit.slope;
        scan.exponent_se = fit.se_slope;
    }
    return scan;
}

struct SingularMoment {
    double value = 0.0;
    double se = 0.0;
    std::uint64_t samples = 0;
};

// Kernel integral of 1 / |V'_* - v_j| over the ball, using the pair
// parametrization with the arclength integral in closed form:
// the distance from v_j to the line through the pivot is split into the
// normal offset h and the along-line coordinate, and the integral of
// ds / sqrt((s - s0)^2 + h^2) over the clipped range is a difference of
// asinh terms. Only the pair leg and the incoming velocity are clipped to
// the ball; the estimator has finite variance because the integrand is
// logarithmic in h.
inline SingularMoment singular_moment(const Vec2& pivot, const Vec2& v_j, std::uint64_t samples,
                                      std::uint64_t seed, double radius = 4.0) {
    if (samples < 2) throw std::invalid_argument("singular_moment needs at least two samples");
    if (!(radius > 0.0)) throw std::invalid_argument("singular_moment needs a positive radius");
    if (norm(pivot) >= radius)
        throw std::invalid_argument("singular_moment needs the pivot inside the ball");
    const double pi = std::acos(-1.0);
    Philox rng(seed);
    Welford acc;
    const double volume = 2.0 * pi * radius * radius;
    for (std::uint64_t k = 0; k < samples; ++k) {
        const Vec2 v_prime = detail::uniform_disk(rng, radius);
        const Vec2 leg = v_prime - pivot;
        const double len = norm(leg);
        if (len < 1e-12) {
            acc.add(0.0);
            continue;
        }
        const Vec2 normal{leg.x / len, leg.y / len};
        const Vec2 tangent{-normal.y, normal.x};
        const Vec2 off = v_j - pivot;
        const double s0 = dot(off, tangent);
        const double h = std::fabs(dot(off, normal));
        if (h < 1e-300) {  // v_j exactly on the line, measure zero
            acc.add(0.0);
            continue;
        }
        // V'_* = pivot + s tangent must stay in the ball, and so must the
        // incoming velocity v* = V' + s tangent.
        double lo = -radius, hi = radius;
        detail::clip_to_ball(pivot, tangent, radius, lo, hi);
        detail::clip_to_ball(v_prime, tangent, radius, lo, hi);
        if (hi <= lo) {
            acc.add(0.0);
            continue;
        }
        acc.add(std::asinh((hi - s0) / h) - std::asinh((lo - s0) / h));
    }
    SingularMoment out;
    out.samples = samples;
    out.value = acc.mean * volume;
    out.se = acc.std_error() * volume;
    return out;
}

}  // namespace ktlab
