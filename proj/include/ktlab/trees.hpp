#pragma once

// Backward branching trajectories for the collision-series representation of
// a tagged particle's density perturbation. A collision tree prescribes who
// branches off whom; branching parameters supply the times, impact directions
// and incoming velocities. The trajectory can be run in two dynamics:
//
//   - finite diameter ("bbgky"): segments between branchings follow the
//     hard-disk flow backward in time, children are created at distance eps
//     from their parent, and unplanned contacts (recollisions) are logged
//     together with the lattice image they wind through.
//   - zero diameter ("boltzmann"): segments are free flight, children sit on
//     top of their parent, and recollisions cannot occur.
//
// On top of the trajectory runner sit three consumers: a scenario classifier
// for the first recollision of a finite-size trajectory, a Monte-Carlo scan
// of the recollision probability across diameters, and an importance-sampled
// evaluator of the iterated collision series (duhamel_mc) that works in both
// dynamics and supports the pruning and velocity-cutoff counters used when
// comparing the two.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ktlab/hard_disk.hpp"
#include "ktlab/rng.hpp"
#include "ktlab/stats.hpp"
#include "ktlab/torus.hpp"

namespace ktlab {

enum class TreeMode { bbgky, boltzmann };

// Rooted tree on particles 0..s-1 in creation order. Particle 0 is the tagged
// one, particle i >= 1 branches off parent[i] in {0, ..., i-1}. parent[0] is
// fixed at -1. There are (s-1)! distinct trees of size s.
struct CollisionTree {
    int s = 1;
    std::vector<int> parent{-1};
};

inline CollisionTree make_collision_tree(std::vector<int> parent) {
    if (parent.empty())
        throw std::invalid_argument("make_collision_tree: empty parent list");
    if (parent[0] != -1)
        throw std::invalid_argument("make_collision_tree: root parent must be -1");
    for (int i = 1; i < static_cast<int>(parent.size()); ++i)
        if (parent[i] < 0 || parent[i] >= i)
            throw std::invalid_argument(
                "make_collision_tree: parent[" + std::to_string(i) +
                "] must lie in {0, ..., " + std::to_string(i - 1) + "}");
    CollisionTree t;
    t.s = static_cast<int>(parent.size());
    t.parent = std::move(parent);
    return t;
}

inline CollisionTree sample_tree(int s, Philox& rng) {
    if (s < 1) throw std::invalid_argument("sample_tree: s must be >= 1");
    std::vector<int> parent(static_cast<std::size_t>(s));
    parent[0] = -1;
    for (int i = 1; i < s; ++i)
        parent[i] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i)));
    CollisionTree t;
    t.s = s;
    t.parent = std::move(parent);
    return t;
}

// Times are strictly ordered backward from the observation time, one triple
// (time, angle, velocity) per created particle, indexed by creation order
// (entry k describes particle k+1).
struct BranchingParams {
    std::vector<double> times;
    std::vector<Vec2> angles;
    std::vector<Vec2> velocities;
};

inline BranchingParams sample_branching(int s, double t, double beta, Philox& rng) {
    if (s < 1) throw std::invalid_argument("sample_branching: s must be >= 1");
    if (t < 0.0) throw std::invalid_argument("sample_branching: negative time");
    if (beta <= 0.0) throw std::invalid_argument("sample_branching: beta must be positive");
    BranchingParams p;
    p.times.resize(static_cast<std::size_t>(s - 1));
    for (double& ti : p.times) ti = t * rng.uniform();
    std::sort(p.times.begin(), p.times.end(), std::greater<double>());
    p.angles.reserve(p.times.size());
    p.velocities.reserve(p.times.size());
    for (int k = 1; k < s; ++k) {
        p.angles.push_back(rng.unit_vector());
        p.velocities.push_back(rng.maxwellian(beta));
    }
    return p;
}

struct Creation {
    int particle = 0;
    int parent = 0;
    double time = 0.0;
    Vec2 nu;
    // Signed flux factor (v_new - v_parent) . nu evaluated just above the
    // creation time. Positive means the pair is post-collisional and gets
    // scattered; the absolute value is the sampling weight of the branching.
    double cross = 0.0;
    bool scattered = false;
};

struct Recollision {
    int i = 0;
    int j = 0;
    double time = 0.0;
    // Integer lattice vector the pair separation wound through between their
    // last planned contact and this one: zero for a direct re-encounter,
    // nonzero when the contact closes around the torus.
    std::array<int, 2> image{0, 0};
};

struct PseudoTrajectory {
    TreeMode mode = TreeMode::boltzmann;
    double eps = 0.0;
    // False when a creation would have placed a disk overlapping a particle
    // other than its parent; construction stops there and the final state is
    // left empty. This is an ordinary outcome, not an error.
    bool valid = true;
    std::vector<Creation> creations;
    std::vector<Recollision> recollisions;
    std::vector<Vec2> x0;
    std::vector<Vec2> v0;
};

// Runs the branching construction backward from (x1, v1) at time t down to
// time 0. The finite-size mode uses the event-driven disk engine on every
// segment with two or more particles; shocks reported by the engine are
// replayed on unwrapped coordinates to recover the lattice image of each
// recollision. eps is ignored in zero-diameter mode.
inline PseudoTrajectory run_pseudo_trajectory(const Vec2& x1, const Vec2& v1, double t,
                                              const CollisionTree& tree,
                                              const BranchingParams& params, double eps,
                                              TreeMode mode) {
    if (t < 0.0) throw std::invalid_argument("run_pseudo_trajectory: negative time");
    const int s = tree.s;
    if (s < 1 || static_cast<int>(tree.parent.size()) != s || tree.parent[0] != -1)
        throw std::invalid_argument("run_pseudo_trajectory: malformed tree");
    for (int i = 1; i < s; ++i)
        if (tree.parent[i] < 0 || tree.parent[i] >= i)
            throw std::invalid_argument("run_pseudo_trajectory: malformed tree");
    const std::size_t m = static_cast<std::size_t>(s - 1);
    if (params.times.size() != m || params.angles.size() != m || params.velocities.size() != m)
        throw std::invalid_argument("run_pseudo_trajectory: params size mismatch");
    double prev = t;
    for (double ti : params.times) {
        if (!(ti >= 0.0 && ti <= prev))
            throw std::invalid_argument(
                "run_pseudo_trajectory: branching times must be non-increasing in [0, t]");
        prev = ti;
    }
    for (const Vec2& nu : params.angles)
        if (std::fabs(norm(nu) - 1.0) > 1e-9)
            throw std::invalid_argument("run_pseudo_trajectory: branching angle not unit");
    if (mode == TreeMode::bbgky && eps < 0.0)
        throw std::invalid_argument("run_pseudo_trajectory: negative diameter");

    const double e = (mode == TreeMode::bbgky) ? eps : 0.0;
    PseudoTrajectory out;
    out.mode = mode;
    out.eps = e;
    out.creations.reserve(m);

    std::vector<Vec2> xw{wrap01(x1)};  // wrapped, authoritative
    std::vector<Vec2> xu{xw[0]};       // unwrapped, for winding numbers
    std::vector<Vec2> v{v1};
    double now = t;

    // Advance every particle backward from `now` to `until`.
    auto segment = [&](double until) {
        const double dur = now - until;
        if (dur == 0.0) { now = until; return; }
        const int n = static_cast<int>(xw.size());
        if (e > 0.0 && n >= 2) {
            ParticleConfig cfg;
            cfg.positions = xw;
            cfg.velocities = v;
            cfg.eps = e;
            cfg.time = now;
            EvolveResult res = evolve(cfg, dur, Direction::backward);
            // Events arrive in decreasing time. Replaying the shocks on the
            // physical velocities reproduces the engine's arithmetic exactly
            // (specular reflection commutes with the velocity flip it uses
            // internally), so the unwrapped positions stay consistent with
            // the wrapped ones it returns.
            double tprev = now;
            for (const CollisionEvent& ev : res.events) {
                const double step = tprev - ev.time;
                for (int i = 0; i < n; ++i) xu[i] -= v[i] * step;
                const Vec2 d = xu[ev.i] - xu[ev.j] - ev.nu * e;
                Recollision rec;
                rec.i = ev.i;
                rec.j = ev.j;
                rec.time = ev.time;
                rec.image = {static_cast<int>(std::lround(d.x)),
                             static_cast<int>(std::lround(d.y))};
                out.recollisions.push_back(rec);
                auto [vi, vj] = apply_scattering(v[ev.i], v[ev.j], ev.nu);
                v[ev.i] = vi;
                v[ev.j] = vj;
                tprev = ev.time;
            }
            const double tail = tprev - until;
            for (int i = 0; i < n; ++i) xu[i] -= v[i] * tail;
            xw = res.config.positions;
            v = res.config.velocities;
        } else {
            for (int i = 0; i < n; ++i) {
                xu[i] -= v[i] * dur;
                xw[i] = wrap01(xw[i] - v[i] * dur);
            }
        }
        now = until;
    };

    for (int i = 1; i < s; ++i) {
        const std::size_t k = static_cast<std::size_t>(i - 1);
        segment(params.times[k]);
        const int par = tree.parent[i];
        const Vec2 nu = params.angles[k];
        const Vec2 vnew = params.velocities[k];

        Creation c;
        c.particle = i;
        c.parent = par;
        c.time = params.times[k];
        c.nu = nu;
        c.cross = dot(vnew - v[par], nu);
        c.scattered = c.cross > 0.0;
        out.creations.push_back(c);

        const Vec2 xnew = wrap01(xw[par] + nu * e);
        if (e > 0.0) {
            for (int j = 0; j < static_cast<int>(xw.size()); ++j) {
                if (j == par) continue;
                if (torus_dist(xnew, xw[j]) <= e) {
                    out.valid = false;
                    return out;
                }
            }
        }
        Vec2 vi = vnew;
        if (c.scattered) {
            auto [a, b] = apply_scattering(vnew, v[par], nu);
            vi = a;
            v[par] = b;
        }
        xw.push_back(xnew);
        xu.push_back(xu[par] + nu * e);
        v.push_back(vi);
    }
    segment(0.0);

    out.x0 = std::move(xw);
    out.v0 = std::move(v);
    if (mode == TreeMode::boltzmann && !out.recollisions.empty())
        throw std::logic_error("run_pseudo_trajectory: zero-diameter flow logged a recollision");
    return out;
}

// Tags the first recollision of a finite-size trajectory by how the pair got
// correlated, scanning the branchings that happened before it (that is, at
// larger times) and involve either colliding particle:
//
//   "p0"  the latest such branching created one of the pair off the other
//         and the contact winds around the torus (nonzero image), or the
//         pair has no second shared branching at all, which leaves the
//         periodic channel as the only geometric possibility;
//   "p2"  the second-latest branching created the particle the latest one
//         branched off, so the correlation travels down a parent chain;
//   "p1"  any other arrangement (typically siblings of one deflection).
//
// Later recollisions of the same trajectory are tagged "multiple".
inline std::vector<std::string> classify_recollision(const PseudoTrajectory& traj) {
    if (traj.mode != TreeMode::bbgky)
        throw std::invalid_argument("classify_recollision: finite-size trajectory required");
    if (traj.recollisions.empty())
        throw std::invalid_argument("classify_recollision: no recollision to classify");
    const Recollision& rec = traj.recollisions.front();
    std::vector<const Creation*> involved;
    for (const Creation& c : traj.creations)
        if (c.time > rec.time && (c.particle == rec.i || c.particle == rec.j ||
                                  c.parent == rec.i || c.parent == rec.j))
            involved.push_back(&c);
    // The later of the colliding particles was created before the contact,
    // so the list is nonempty except in the degenerate contact-at-creation
    // case, which gets the no-second-parent treatment. Creation order means
    // decreasing time, so the most recent branching sits at the back.
    std::string tag;
    if (involved.empty()) {
        tag = "p0";
    } else {
        const Creation* one = involved.back();
        const bool pair_branching = one->particle == rec.j && one->parent == rec.i;
        const bool wound = rec.image[0] != 0 || rec.image[1] != 0;
        if (pair_branching && wound)
            tag = "p0";
        else if (involved.size() < 2)
            tag = "p0";
        else
            tag = (involved[involved.size() - 2]->particle == one->parent) ? "p2" : "p1";
    }

    std::vector<std::string> tags(traj.recollisions.size(), "multiple");
    tags[0] = tag;
    return tags;
}

struct RecollisionPoint {
    double eps = 0.0;
    double probability = 0.0;
    double std_error = 0.0;
    std::uint64_t hits = 0;
    // No recolliding sample was seen at this diameter; the probability is
    // reported as zero and the point is excluded from the slope fit.
    bool censored = false;
};

struct RecollisionScan {
    std::vector<RecollisionPoint> points;
    double slope = std::numeric_limits<double>::quiet_NaN();
    double slope_se = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t samples = 0;
};

// Estimates the probability that a size-s branching trajectory of diameter
// eps recollides, for each eps in the list, reusing one stream of trees and
// branching parameters across all diameters so the points are comparable.
// Samples are weighted by the product of |cross| factors (the natural
// branching measure); trajectories killed by a creation overlap count as
// weight zero. The scan ends with a weighted log-log fit of probability
// against diameter over the uncensored points.
inline RecollisionScan recollision_probability(const Vec2& x1, const Vec2& v1, double t, int s,
                                               const std::vector<double>& eps_list,
                                               std::uint64_t samples, double beta,
                                               std::uint64_t seed) {
    if (s < 1) throw std::invalid_argument("recollision_probability: s must be >= 1");
    if (t <= 0.0) throw std::invalid_argument("recollision_probability: time must be positive");
    if (samples < 2) throw std::invalid_argument("recollision_probability: need at least 2 samples");
    if (eps_list.empty())
        throw std::invalid_argument("recollision_probability: empty diameter list");
    for (double e : eps_list)
        if (e <= 0.0 || e >= 0.1)
            throw std::invalid_argument("recollision_probability: diameters must lie in (0, 0.1)");

    struct Accum {
        double sa = 0.0, sb = 0.0;        // sums of w*indicator and w
        double saa = 0.0, sbb = 0.0, sab = 0.0;
        std::uint64_t hits = 0;
    };
    std::vector<Accum> acc(eps_list.size());

    Philox rng(seed);
    for (std::uint64_t k = 0; k < samples; ++k) {
        const CollisionTree tree = sample_tree(s, rng);
        const BranchingParams params = sample_branching(s, t, beta, rng);
        for (std::size_t ei = 0; ei < eps_list.size(); ++ei) {
            const PseudoTrajectory traj =
                run_pseudo_trajectory(x1, v1, t, tree, params, eps_list[ei], TreeMode::bbgky);
            double w = 0.0;
            double ind = 0.0;
            if (traj.valid) {
                w = 1.0;
                for (const Creation& c : traj.creations) w *= std::fabs(c.cross);
                ind = traj.recollisions.empty() ? 0.0 : 1.0;
                if (ind > 0.0) ++acc[ei].hits;
            }
            const double a = w * ind;
            acc[ei].sa += a;
            acc[ei].sb += w;
            acc[ei].saa += a * a;
            acc[ei].sbb += w * w;
            acc[ei].sab += a * w;
        }
    }

    RecollisionScan scan;
    scan.samples = samples;
    const double n = static_cast<double>(samples);
    std::vector<double> lx, ly, lw;
    for (std::size_t ei = 0; ei < eps_list.size(); ++ei) {
        RecollisionPoint pt;
        pt.eps = eps_list[ei];
        pt.hits = acc[ei].hits;
        if (acc[ei].hits == 0 || acc[ei].sb <= 0.0) {
            pt.censored = true;
        } else {
            const double abar = acc[ei].sa / n;
            const double bbar = acc[ei].sb / n;
            const double p = abar / bbar;
            // Delta-method error of the ratio estimator.
            const double va = acc[ei].saa / n - abar * abar;
            const double vb = acc[ei].sbb / n - bbar * bbar;
            const double cab = acc[ei].sab / n - abar * bbar;
            const double spread = va - 2.0 * p * cab + p * p * vb;
            pt.probability = p;
            pt.std_error = std::sqrt(std::max(spread, 0.0) / n) / bbar;
            if (pt.probability > 0.0 && pt.std_error > 0.0) {
                lx.push_back(std::log(pt.eps));
                ly.push_back(std::log(pt.probability));
                const double rel = pt.std_error / pt.probability;
                lw.push_back(1.0 / (rel * rel));
            }
        }
        scan.points.push_back(pt);
    }
    // Fewer than two usable points (everything censored) leaves the slope NaN.
    if (lx.size() >= 2) {
        const LineFit fit = wls_fit(lx, ly, lw);
        scan.slope = fit.slope;
        scan.slope_se = fit.se_slope;
    }
    return scan;
}

struct DuhamelControls {
    // Hard cap on tree size; deeper proposals are counted and dropped.
    int s_max = 14;
    std::uint64_t samples = 100000;
    // Branching caps 2^k * prune_n0 per backward slice of width prune_slice
    // (slice 0 starts at the observation time). Zero prune_n0 disables
    // pruning; zero prune_slice means one slice spanning [0, t].
    double prune_n0 = 0.0;
    double prune_slice = 0.0;
    // Sampled velocities above c0 * |log eps| are dropped in finite-size
    // mode. Zero disables the cutoff; it never applies at eps = 0.
    double velocity_cutoff_c0 = 4.0;
    // Disk diameter for finite-size mode; must be positive there.
    double eps = 0.0;
};

struct DuhamelEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::uint64_t samples = 0;
    std::uint64_t rejected_depth = 0;
    std::uint64_t rejected_prune = 0;
    std::uint64_t rejected_cutoff = 0;
    std::uint64_t rejected_overlap = 0;
    // Largest relative gap between the finite-size collision prefactor
    // prod_k (N - k) eps and the limiting alpha^(s-1) seen in any sample.
    double prefactor_gap = 0.0;
    DuhamelControls controls;
};

// Monte-Carlo evaluation of the iterated collision series at observation
// point (x1, v1, t) for initial perturbation g0 against the reference
// Maxwellian of inverse temperature beta. Tree sizes are proposed from an
// untruncated geometric law with ratio min(alpha * t, 0.7); rejected samples
// (too deep, pruned, cut off, or overlap-invalid) contribute weight zero and
// stay in the sample count, so the estimate is unbiased for the truncated
// series. Requires alpha * t <= 2, the radius of comfortable convergence.
inline DuhamelEstimate duhamel_mc(const Vec2& x1, const Vec2& v1, double t, double alpha,
                                  double beta,
                                  const std::function<double(const Vec2&, const Vec2&)>& g0,
                                  const DuhamelControls& controls, TreeMode mode,
                                  std::uint64_t seed, std::ostream* trace = nullptr) {
    if (t < 0.0) throw std::invalid_argument("duhamel_mc: negative time");
    if (alpha < 0.0) throw std::invalid_argument("duhamel_mc: negative collision rate");
    if (alpha * t > 2.0)
        throw std::invalid_argument("duhamel_mc: alpha * t must stay within 2");
    if (beta <= 0.0) throw std::invalid_argument("duhamel_mc: beta must be positive");
    if (!g0) throw std::invalid_argument("duhamel_mc: missing initial datum");
    if (controls.s_max < 1) throw std::invalid_argument("duhamel_mc: s_max must be >= 1");
    if (controls.samples < 1) throw std::invalid_argument("duhamel_mc: need samples");
    long long big_n = 0;
    if (mode == TreeMode::bbgky) {
        if (controls.eps <= 0.0)
            throw std::invalid_argument("duhamel_mc: finite-size mode needs a positive diameter");
        big_n = std::llround(alpha / controls.eps);
        if (big_n < controls.s_max)
            throw std::invalid_argument(
                "duhamel_mc: fewer particles than the deepest tree; shrink eps or s_max");
    }

    DuhamelEstimate est;
    est.controls = controls;
    est.samples = controls.samples;

    if (t == 0.0) {
        // The series collapses to the bare datum; nothing to sample.
        est.value = g0(wrap01(x1), v1);
        est.std_error = 0.0;
        return est;
    }
    // With alpha = 0 the proposal ratio vanishes, every sample is the
    // single-particle free flight, and the loop below reproduces pure
    // transport of the datum.
    const double r = std::min(alpha * t, 0.7);

    const double cutoff = (mode == TreeMode::bbgky && controls.velocity_cutoff_c0 > 0.0)
                              ? controls.velocity_cutoff_c0 * std::fabs(std::log(controls.eps))
                              : std::numeric_limits<double>::infinity();
    const double eps_run = (mode == TreeMode::bbgky) ? controls.eps : 0.0;

    Philox rng(seed);
    // Streaming accumulation: immune to the cancellation that breaks the
    // sum-of-squares formula when the weights are (nearly) constant.
    Welford acc;
    auto accumulate = [&](double w) { acc.add(w); };

    auto emit = [&](int s, const CollisionTree* tree, const PseudoTrajectory* traj, double w,
                    const char* rejected) {
        if (!trace) return;
        nlohmann::json line;
        line["s"] = s;
        if (tree) line["tree"] = tree->parent;
        line["weight"] = w;
        if (rejected) line["rejected"] = rejected;
        if (traj) {
            nlohmann::json recs = nlohmann::json::array();
            for (const Recollision& rec : traj->recollisions)
                recs.push_back({{"i", rec.i},
                                {"j", rec.j},
                                {"time", rec.time},
                                {"image", {rec.image[0], rec.image[1]}}});
            line["recollisions"] = std::move(recs);
        }
        *trace << line.dump() << "\n";
    };

    for (std::uint64_t k = 0; k < controls.samples; ++k) {
        int s = 1;
        while (rng.uniform() < r) ++s;
        if (s > controls.s_max) {
            ++est.rejected_depth;
            accumulate(0.0);
            emit(s, nullptr, nullptr, 0.0, "depth");
            continue;
        }
        const CollisionTree tree = sample_tree(s, rng);
        const BranchingParams params = sample_branching(s, t, beta, rng);

        bool drop = false;
        for (const Vec2& vi : params.velocities)
            if (norm(vi) > cutoff) { drop = true; break; }
        if (drop) {
            ++est.rejected_cutoff;
            accumulate(0.0);
            emit(s, &tree, nullptr, 0.0, "cutoff");
            continue;
        }

        if (controls.prune_n0 > 0.0 && s > 1) {
            const double h = controls.prune_slice > 0.0 ? controls.prune_slice : t;
            std::vector<int> count;
            for (double ti : params.times) {
                const int slice = static_cast<int>((t - ti) / h);
                if (slice >= static_cast<int>(count.size())) count.resize(slice + 1, 0);
                const double cap = controls.prune_n0 * std::ldexp(1.0, slice);
                if (++count[slice] >= cap) { drop = true; break; }
            }
            if (drop) {
                ++est.rejected_prune;
                accumulate(0.0);
                emit(s, &tree, nullptr, 0.0, "prune");
                continue;
            }
        }

        const PseudoTrajectory traj =
            run_pseudo_trajectory(x1, v1, t, tree, params, eps_run, mode);
        if (!traj.valid) {
            ++est.rejected_overlap;
            accumulate(0.0);
            emit(s, &tree, nullptr, 0.0, "overlap");
            continue;
        }

        // Importance weight: signed flux product, collision prefactor, the
        // simplex volume left over by the sorted uniform times, and the
        // inverse proposal probability of the tree size.
        double w = 1.0;
        for (const Creation& c : traj.creations) w *= c.cross;
        double pref = 1.0;
        for (int q = 1; q < s; ++q) {
            const double factor = (mode == TreeMode::bbgky)
                                      ? static_cast<double>(big_n - q) * controls.eps
                                      : alpha;
            pref *= factor * t * 2.0 * kPi;
        }
        if (mode == TreeMode::bbgky && s > 1) {
            double limit = 1.0;
            for (int q = 1; q < s; ++q) limit *= alpha;
            double finite = 1.0;
            for (int q = 1; q < s; ++q) finite *= static_cast<double>(big_n - q) * controls.eps;
            est.prefactor_gap = std::max(est.prefactor_gap, std::fabs(finite / limit - 1.0));
        }
        const double proposal = std::pow(r, s - 1) * (1.0 - r);
        double datum = 0.0;
        for (std::size_t i = 0; i < traj.x0.size(); ++i) datum += g0(traj.x0[i], traj.v0[i]);
        w *= pref / proposal * datum;

        accumulate(w);
        emit(s, &tree, &traj, w, nullptr);
    }

    est.value = acc.mean;
    est.std_error = acc.std_error();
    return est;
}

}  // namespace ktlab
