#pragma once

// Closed-form reference solutions for the two fluid limits on the unit
// torus: the acoustic system (sound waves in density, bulk velocity and
// temperature) and the incompressible Stokes system with heat diffusion.
// Both are linear with constant coefficients, so every Fourier mode evolves
// independently by an exact exponential. Keeping the reference side free of
// time-stepping error matters because these fields are what the kinetic and
// particle runs get compared against.

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ktlab/io.hpp"

namespace ktlab {

// Fourier coefficients of (rho, u, theta) on the mode square |k_i| <= k_max,
// stored densely in row-major order over (k1 + k_max, k2 + k_max). beta sets
// the sound speed sqrt(2/beta); mu and kappa are only read by the diffusive
// evolution.
struct HydroFields {
    int k_max = 0;
    double beta = 1.0;
    double mu = 0.0;
    double kappa = 0.0;
    std::vector<std::complex<double>> rho;
    std::vector<std::complex<double>> u1;
    std::vector<std::complex<double>> u2;
    std::vector<std::complex<double>> theta;

    int side() const { return 2 * k_max + 1; }

    std::size_t idx(int k1, int k2) const {
        if (k1 < -k_max || k1 > k_max || k2 < -k_max || k2 > k_max)
            throw std::out_of_range("hydro mode (" + std::to_string(k1) + "," +
                                    std::to_string(k2) + ") outside |k| <= " +
                                    std::to_string(k_max));
        return static_cast<std::size_t>(k1 + k_max) * static_cast<std::size_t>(side()) +
               static_cast<std::size_t>(k2 + k_max);
    }
};

inline HydroFields make_hydro_fields(int k_max, double beta) {
    if (k_max < 1) throw std::invalid_argument("hydro fields: k_max must be >= 1");
    if (!(beta > 0.0)) throw std::invalid_argument("hydro fields: beta must be positive");
    HydroFields f;
    f.k_max = k_max;
    f.beta = beta;
    const std::size_t n = static_cast<std::size_t>(f.side()) * f.side();
    f.rho.assign(n, {});
    f.u1.assign(n, {});
    f.u2.assign(n, {});
    f.theta.assign(n, {});
    return f;
}

// Real physical fields have conjugate-symmetric coefficients. Complex data is
// legal for diagnostics, so this is a separate gate rather than a structural
// requirement.
inline void check_hermitian(const HydroFields& f, double tol = 1e-12) {
    for (int k1 = -f.k_max; k1 <= f.k_max; ++k1)
        for (int k2 = -f.k_max; k2 <= f.k_max; ++k2) {
            const std::size_t a = f.idx(k1, k2);
            const std::size_t b = f.idx(-k1, -k2);
            const double d = std::abs(f.rho[a] - std::conj(f.rho[b])) +
                             std::abs(f.u1[a] - std::conj(f.u1[b])) +
                             std::abs(f.u2[a] - std::conj(f.u2[b])) +
                             std::abs(f.theta[a] - std::conj(f.theta[b]));
            if (d > tol)
                throw std::invalid_argument("hydro fields: conjugate symmetry violated at mode (" +
                                            std::to_string(k1) + "," + std::to_string(k2) + ")");
        }
}

// Largest |k . u_hat(k)| over all modes; zero for divergence-free velocity.
inline double max_divergence(const HydroFields& f) {
    double worst = 0.0;
    for (int k1 = -f.k_max; k1 <= f.k_max; ++k1)
        for (int k2 = -f.k_max; k2 <= f.k_max; ++k2) {
            const std::size_t a = f.idx(k1, k2);
            worst = std::max(worst, std::abs(static_cast<double>(k1) * f.u1[a] +
                                             static_cast<double>(k2) * f.u2[a]));
        }
    return worst;
}

// u_hat(k) <- u_hat(k) - k (k . u_hat) / |k|^2 for k != 0: drops the gradient
// part of the velocity, leaves rho and theta alone.
inline HydroFields leray_project(const HydroFields& f) {
    HydroFields g = f;
    for (int k1 = -f.k_max; k1 <= f.k_max; ++k1)
        for (int k2 = -f.k_max; k2 <= f.k_max; ++k2) {
            if (k1 == 0 && k2 == 0) continue;
            const std::size_t a = f.idx(k1, k2);
            const double kk = static_cast<double>(k1) * k1 + static_cast<double>(k2) * k2;
            const std::complex<double> div =
                (static_cast<double>(k1) * f.u1[a] + static_cast<double>(k2) * f.u2[a]) / kk;
            g.u1[a] = f.u1[a] - static_cast<double>(k1) * div;
            g.u2[a] = f.u2[a] - static_cast<double>(k2) * div;
        }
    return g;
}

// Sound waves: d/dt rho = -(1/sqrt(beta)) div u, d/dt u = -(1/sqrt(beta))
// grad (rho + theta), d/dt theta = -(1/sqrt(beta)) div u. Per mode the
// transverse velocity and rho - theta are frozen while rho + theta and the
// longitudinal velocity trade places at angular frequency 2 pi |k|
// sqrt(2/beta). Negative t runs the waves backward.
inline HydroFields acoustic_evolve(const HydroFields& f, double t) {
    HydroFields g = f;
    const double c = 2.0 * M_PI / std::sqrt(f.beta);
    for (int k1 = -f.k_max; k1 <= f.k_max; ++k1)
        for (int k2 = -f.k_max; k2 <= f.k_max; ++k2) {
            if (k1 == 0 && k2 == 0) continue;
            const std::size_t a = f.idx(k1, k2);
            const double kn = std::sqrt(static_cast<double>(k1) * k1 +
                                        static_cast<double>(k2) * k2);
            const double e1 = k1 / kn;
            const double e2 = k2 / kn;
            const std::complex<double> w = e1 * f.u1[a] + e2 * f.u2[a];
            const std::complex<double> s = f.rho[a] + f.theta[a];
            const std::complex<double> d = f.rho[a] - f.theta[a];
            const double omega = std::sqrt(2.0) * c * kn;
            const double co = std::cos(omega * t);
            const double si = std::sin(omega * t);
            const std::complex<double> i_unit(0.0, 1.0);
            const std::complex<double> st = s * co - i_unit * std::sqrt(2.0) * w * si;
            const std::complex<double> wt = w * co - i_unit / std::sqrt(2.0) * s * si;
            g.rho[a] = 0.5 * (st + d);
            g.theta[a] = 0.5 * (st - d);
            g.u1[a] = f.u1[a] + e1 * (wt - w);
            g.u2[a] = f.u2[a] + e2 * (wt - w);
        }
    return g;
}

// rho_hat - theta_hat per mode, indexed like the coefficient arrays. The
// acoustic system moves rho and theta with the same divergence term, so this
// combination never changes.
inline std::vector<std::complex<double>> conserved_acoustic_quantity(const HydroFields& f) {
    std::vector<std::complex<double>> out(f.rho.size());
    for (std::size_t a = 0; a < out.size(); ++a) out[a] = f.rho[a] - f.theta[a];
    return out;
}

namespace detail {

// The bare per-mode multipliers, without the validity gate. stokes_evolve is
// the public entry point; this exists so the commutation with the projection
// can be stated for arbitrary velocity data.
inline HydroFields stokes_decay(const HydroFields& f, double t) {
    HydroFields g = f;
    const double root_beta = std::sqrt(f.beta);
    for (int k1 = -f.k_max; k1 <= f.k_max; ++k1)
        for (int k2 = -f.k_max; k2 <= f.k_max; ++k2) {
            if (k1 == 0 && k2 == 0) continue;
            const std::size_t a = f.idx(k1, k2);
            const double lap = 4.0 * M_PI * M_PI *
                               (static_cast<double>(k1) * k1 + static_cast<double>(k2) * k2);
            const double mu_mult = std::exp(-f.mu * lap * t / root_beta);
            const double ka_mult = std::exp(-f.kappa * lap * t / root_beta);
            g.u1[a] = f.u1[a] * mu_mult;
            g.u2[a] = f.u2[a] * mu_mult;
            g.theta[a] = f.theta[a] * ka_mult;
        }
    return g;
}

}  // namespace detail

// Incompressible velocity diffuses with mu, temperature with kappa, rho is a
// spectator. Input must actually be incompressible (and mean-free in rho):
// the equations only make sense on that subspace, so violations are rejected
// rather than silently projected away.
inline HydroFields stokes_evolve(const HydroFields& f, double t) {
    if (f.mu < 0.0 || f.kappa < 0.0)
        throw std::invalid_argument("stokes evolve: negative transport coefficient");
    if (max_divergence(f) > 1e-10)
        throw std::invalid_argument("stokes evolve: velocity field is not divergence-free");
    if (std::abs(f.rho[f.idx(0, 0)]) > 1e-10)
        throw std::invalid_argument("stokes evolve: rho must have zero mean");
    return detail::stokes_decay(f, t);
}

// --------------------------------------------------------------------------
// Serialization: one row per mode, real and imaginary parts of each field.

inline void write_hydro_csv(const std::string& path, const HydroFields& f,
                            std::uint64_t config_hash) {
    CsvWriter w({"k1", "k2", "rho_re", "rho_im", "u1_re", "u1_im", "u2_re", "u2_im",
                 "theta_re", "theta_im"});
    w.add_comment("config_hash=" + hex64(config_hash));
    w.add_comment("k_max=" + std::to_string(f.k_max));
    w.add_comment("beta=" + format_double(f.beta));
    w.add_comment("mu=" + format_double(f.mu));
    w.add_comment("kappa=" + format_double(f.kappa));
    for (int k1 = -f.k_max; k1 <= f.k_max; ++k1)
        for (int k2 = -f.k_max; k2 <= f.k_max; ++k2) {
            const std::size_t a = f.idx(k1, k2);
            w.add_row({static_cast<double>(k1), static_cast<double>(k2), f.rho[a].real(),
                       f.rho[a].imag(), f.u1[a].real(), f.u1[a].imag(), f.u2[a].real(),
                       f.u2[a].imag(), f.theta[a].real(), f.theta[a].imag()});
        }
    w.write(path);
}

inline HydroFields read_hydro_csv(const std::string& path) {
    const CsvTable t = read_csv(path);
    int k_max = -1;
    double beta = 0.0, mu = 0.0, kappa = 0.0;
    for (const auto& com : t.comments) {
        const std::size_t eq = com.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = com.substr(0, eq);
        const std::string val = com.substr(eq + 1);
        if (key == "k_max") k_max = static_cast<int>(parse_int(val, "hydro csv k_max"));
        if (key == "beta") beta = parse_double(val, "hydro csv beta");
        if (key == "mu") mu = parse_double(val, "hydro csv mu");
        if (key == "kappa") kappa = parse_double(val, "hydro csv kappa");
    }
    if (k_max < 1 || !(beta > 0.0))
        throw std::runtime_error("hydro csv: missing k_max or beta header comment");
    HydroFields f = make_hydro_fields(k_max, beta);
    f.mu = mu;
    f.kappa = kappa;
    const std::size_t ik1 = t.column("k1");
    const std::size_t ik2 = t.column("k2");
    const std::size_t irr = t.column("rho_re");
    const std::size_t iri = t.column("rho_im");
    const std::size_t iu1r = t.column("u1_re");
    const std::size_t iu1i = t.column("u1_im");
    const std::size_t iu2r = t.column("u2_re");
    const std::size_t iu2i = t.column("u2_im");
    const std::size_t itr = t.column("theta_re");
    const std::size_t iti = t.column("theta_im");
    std::vector<char> seen(f.rho.size(), 0);
    for (const auto& r : t.rows) {
        const int k1 = static_cast<int>(r[ik1]);
        const int k2 = static_cast<int>(r[ik2]);
        const std::size_t a = f.idx(k1, k2);  // throws on out-of-range modes
        if (seen[a]) throw std::runtime_error("hydro csv: duplicate mode row");
        seen[a] = 1;
        f.rho[a] = {r[irr], r[iri]};
        f.u1[a] = {r[iu1r], r[iu1i]};
        f.u2[a] = {r[iu2r], r[iu2i]};
        f.theta[a] = {r[itr], r[iti]};
    }
    for (const char s : seen)
        if (!s) throw std::runtime_error("hydro csv: missing mode rows");
    return f;
}

}  // namespace ktlab
