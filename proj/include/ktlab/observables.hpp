#pragma once

// Estimators built on equilibrium ensembles: the normalized fluctuation
// field, its time covariance along hard-disk trajectories (one fresh
// Gibbs-initialized trajectory per replica, jackknife errors), and weighted
// one-particle marginal histograms for signed initial data.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ktlab/ensemble.hpp"
#include "ktlab/io.hpp"
#include "ktlab/parallel.hpp"
#include "ktlab/stats.hpp"

namespace ktlab {

// N^{-1/2} sum of h over the configuration.
inline double fluctuation_field(const ParticleConfig& c, const TestFunction& h) {
    if (c.n() == 0) return 0.0;
    return perturbation_weight(c, h) / std::sqrt(static_cast<double>(c.n()));
}

struct CovarianceSeries {
    std::vector<double> times;
    std::vector<double> values;
    std::vector<double> std_errors;
    // provenance
    int n = 0;
    double alpha = 0.0;
    double beta = 0.0;
    int replicas = 0;
    std::uint64_t seed = 0;
};

// E[ zeta(h, Z(0)) zeta(h_tilde, Z(t)) ] over Gibbs-initialized trajectories.
// Replica r uses RNG stream r of spec.seed; each replica is one trajectory
// evaluated at every requested time, so the series shares trajectories across
// t (no time-averaging along a single path).
inline CovarianceSeries covariance(const EnsembleSpec& spec, const TestFunction& h,
                                   const TestFunction& h_tilde,
                                   const std::vector<double>& times, int replicas) {
    if (!h.mean_zero || !h_tilde.mean_zero)
        throw std::invalid_argument("covariance: test functions must be mean-zero");
    if (replicas < 2) throw std::invalid_argument("covariance: need at least 2 replicas");
    if (times.empty()) throw std::invalid_argument("covariance: empty time grid");
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] < 0.0) throw std::invalid_argument("covariance: negative time");
        if (i > 0 && times[i] <= times[i - 1])
            throw std::invalid_argument("covariance: times must be strictly increasing");
    }

    std::vector<std::vector<double>> prod(replicas, std::vector<double>(times.size(), 0.0));
    parallel_for(replicas, [&](std::size_t r) {
        ParticleConfig c = sample_gibbs(spec, r);
        const double z0 = fluctuation_field(c, h);
        double now = 0.0;
        for (std::size_t ti = 0; ti < times.size(); ++ti) {
            const double dt = times[ti] - now;
            if (dt > 0.0) {
                c = evolve(c, dt).config;
                now = times[ti];
            }
            prod[r][ti] = z0 * fluctuation_field(c, h_tilde);
        }
    });

    CovarianceSeries s;
    s.times = times;
    s.n = spec.n;
    s.alpha = spec.alpha;
    s.beta = spec.beta;
    s.replicas = replicas;
    s.seed = spec.seed;
    s.values.resize(times.size());
    s.std_errors.resize(times.size());
    std::vector<double> col(replicas);
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
        for (int r = 0; r < replicas; ++r) col[r] = prod[r][ti];
        s.values[ti] = mean(col);
        s.std_errors[ti] = jackknife_se(col, [](const std::vector<double>& v) { return mean(v); });
    }
    return s;
}

inline void write_covariance(const std::string& csv_path, const std::string& meta_path,
                             const CovarianceSeries& s, std::uint64_t config_hash) {
    CsvWriter w({"t", "cov", "se"});
    w.add_comment("config_hash=" + hex64(config_hash));
    for (std::size_t i = 0; i < s.times.size(); ++i)
        w.add_row({s.times[i], s.values[i], s.std_errors[i]});
    w.write(csv_path);

    nlohmann::json meta;
    meta["N"] = s.n;
    meta["alpha"] = s.alpha;
    meta["beta"] = s.beta;
    meta["replicas"] = s.replicas;
    meta["seed"] = s.seed;
    meta["config_hash"] = hex64(config_hash);
    write_json(meta_path, meta);
}

// --------------------------------------------------------------------------
// Weighted one-particle marginal on a torus x velocity-box grid.

struct MarginalGrid {
    int nx = 8;           // bins per spatial axis
    int nv = 16;          // bins per velocity axis
    double vmax = 5.0;    // velocity box is [-vmax, vmax]^2

    std::size_t bins() const {
        return static_cast<std::size_t>(nx) * nx * nv * nv;
    }
    double dx() const { return 1.0 / nx; }
    double dv() const { return 2.0 * vmax / nv; }
    double bin_volume() const { return dx() * dx() * dv() * dv(); }

    // flat index or -1 when the velocity falls outside the box
    long locate(const Vec2& x, const Vec2& v) const {
        const auto xbin = [this](double u) {
            int k = static_cast<int>(wrap01(u) * nx);
            return k >= nx ? nx - 1 : k;
        };
        const auto vbin = [this](double u) -> int {
            if (u < -vmax || u >= vmax) return -1;
            return static_cast<int>((u + vmax) / dv());
        };
        const int i1 = xbin(x.x);
        const int i2 = xbin(x.y);
        const int j1 = vbin(v.x);
        const int j2 = vbin(v.y);
        if (j1 < 0 || j2 < 0 || j1 >= nv || j2 >= nv) return -1;
        return ((static_cast<long>(i1) * nx + i2) * nv + j1) * nv + j2;
    }

    Vec2 x_center(int i1, int i2) const { return {(i1 + 0.5) * dx(), (i2 + 0.5) * dx()}; }
    Vec2 v_center(int j1, int j2) const {
        return {-vmax + (j1 + 0.5) * dv(), -vmax + (j2 + 0.5) * dv()};
    }
};

inline MarginalGrid make_marginal_grid(double beta, int nx = 8, int nv = 16) {
    if (!(beta > 0.0)) throw std::invalid_argument("marginal grid: beta must be > 0");
    if (nx < 1 || nv < 1) throw std::invalid_argument("marginal grid: bins must be >= 1");
    MarginalGrid g;
    g.nx = nx;
    g.nv = nv;
    g.vmax = 5.0 / std::sqrt(beta);
    return g;
}

struct MarginalHistogram {
    MarginalGrid grid;
    long replicas = 0;
    std::vector<double> density;  // sum over replicas of weight * count, / (replicas * vol)

    double at(int i1, int i2, int j1, int j2) const {
        return density[((static_cast<std::size_t>(i1) * grid.nx + i2) * grid.nv + j1) *
                           grid.nv +
                       j2];
    }

    // quadrature of density * h over the grid (h at bin centers)
    double contract(const TestFunction& h) const {
        double acc = 0.0;
        std::size_t b = 0;
        for (int i1 = 0; i1 < grid.nx; ++i1)
            for (int i2 = 0; i2 < grid.nx; ++i2)
                for (int j1 = 0; j1 < grid.nv; ++j1)
                    for (int j2 = 0; j2 < grid.nv; ++j2, ++b)
                        acc += density[b] * h(grid.x_center(i1, i2), grid.v_center(j1, j2));
        return acc * grid.bin_volume();
    }

    // marginal density in x1: integrate out x2 and v
    std::vector<double> project_x1() const {
        std::vector<double> p(grid.nx, 0.0);
        std::size_t b = 0;
        const double slab = grid.bin_volume() / grid.dx();
        for (int i1 = 0; i1 < grid.nx; ++i1)
            for (int i2 = 0; i2 < grid.nx; ++i2)
                for (int j1 = 0; j1 < grid.nv; ++j1)
                    for (int j2 = 0; j2 < grid.nv; ++j2, ++b) p[i1] += density[b] * slab;
        return p;
    }
};

// Histogram of sum_i weight * delta_{z_i} over the samples, divided by
// replica count and bin volume. Velocities outside the box are dropped
// (the box holds all but ~1e-5 of Maxwellian mass at the default vmax).
inline MarginalHistogram weighted_marginal(const std::vector<WeightedSample>& samples,
                                           const MarginalGrid& grid) {
    if (samples.empty()) throw std::invalid_argument("weighted_marginal: no samples");
    MarginalHistogram h;
    h.grid = grid;
    h.replicas = static_cast<long>(samples.size());
    h.density.assign(grid.bins(), 0.0);
    for (const WeightedSample& ws : samples) {
        const ParticleConfig& c = ws.config;
        for (int i = 0; i < c.n(); ++i) {
            const long b = grid.locate(c.positions[i], c.velocities[i]);
            if (b >= 0) h.density[static_cast<std::size_t>(b)] += ws.weight;
        }
    }
    const double norm = static_cast<double>(h.replicas) * grid.bin_volume();
    for (double& d : h.density) d /= norm;
    return h;
}

}  // namespace ktlab
