#include <catch2/catch_amalgamated.hpp>

#include "ktlab/kinetic.hpp"
#include "ktlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <vector>

using namespace ktlab;

namespace {

// Operators are expensive to assemble, so share one instance per resolution
// across test cases.
const CollisionOperator& op16() {
    static CollisionOperator op(make_velocity_grid(1.0, 16));
    return op;
}
const CollisionOperator& op24() {
    static CollisionOperator op(make_velocity_grid(1.0, 24));
    return op;
}
const CollisionOperator& op32() {
    static CollisionOperator op(make_velocity_grid(1.0, 32));
    return op;
}

std::vector<double> random_profile(const VelocityGrid& g, std::uint64_t seed) {
    Philox rng(seed);
    std::vector<double> f(g.dim());
    for (double& x : f) x = rng.uniform(-1.0, 1.0);
    return f;
}

double bracket(const CollisionOperator& L, const std::vector<double>& f) {
    return L.grid().inner(f, L.apply(f));
}

// smallest Rayleigh quotient orthogonal to the conserved moments, by
// projected inverse iteration
double gap_estimate(const CollisionOperator& L, std::uint64_t seed) {
    const VelocityGrid& g = L.grid();
    const auto basis = make_hydro_basis(g);
    std::vector<double> x = random_profile(g, seed);
    project_out_hydro(g, basis, x);
    for (int round = 0; round < 6; ++round) {
        ProjectedSolve s = solve_projected(L, x, 1e-5, 6000);
        const double nx = g.norm(s.x);
        REQUIRE(nx > 0.0);
        for (int i = 0; i < g.dim(); ++i) x[i] = s.x[i] / nx;
    }
    return bracket(L, x) / g.inner(x, x);
}

}  // namespace

TEST_CASE("velocity grid construction and validation") {
    const VelocityGrid g = make_velocity_grid(1.0, 24);
    CHECK(g.v_max == Catch::Approx(5.2).epsilon(1e-14));
    CHECK(g.dim() == 576);

    // nodes symmetric about the origin, spacing h
    for (int i = 0; i < g.n_v; ++i) {
        CHECK(std::fabs(g.node[i] + g.node[g.n_v - 1 - i]) < 1e-13);
    }
    CHECK(g.node[1] - g.node[0] == Catch::Approx(g.h()).epsilon(1e-13));

    // Maxwellian mass captured by the box: inside [1-1e-6, 1]
    const double mass = g.mass();
    CHECK(mass >= 1.0 - 1e-6);
    CHECK(mass <= 1.0 + 1e-12);

    // beta rescaling keeps the invariant through the default box
    const VelocityGrid g2 = make_velocity_grid(4.0, 24);
    CHECK(g2.v_max == Catch::Approx(2.6).epsilon(1e-14));
    CHECK(g2.mass() >= 1.0 - 1e-6);

    CHECK_THROWS_AS(make_velocity_grid(1.0, 15), std::invalid_argument);
    CHECK_THROWS_AS(make_velocity_grid(1.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_velocity_grid(-1.0, 16), std::invalid_argument);
    CHECK_THROWS_AS(make_velocity_grid(1.0, 16, 2), std::invalid_argument);
    // a 5 sigma box misses just over 1e-6 of the mass and must be rejected
    CHECK_THROWS_AS(make_velocity_grid(1.0, 32, 64, 5.0), std::invalid_argument);
}

TEST_CASE("collision frequency against closed-form anchors") {
    // at v = 0 the integral reduces to twice the mean speed, sqrt(2 pi/beta)
    CHECK(collision_frequency(0.0, 1.0) ==
          Catch::Approx(std::sqrt(2.0 * kPi)).margin(1e-7));
    CHECK(collision_frequency(0.0, 2.0) == Catch::Approx(std::sqrt(kPi)).margin(1e-7));

    // fixed quadrature references at beta = 1
    CHECK(collision_frequency(0.7, 1.0) == Catch::Approx(2.8046564).margin(1e-5));
    CHECK(collision_frequency(2.0, 1.0) == Catch::Approx(4.5447673).margin(1e-5));

    // large speeds: a(v) approaches 2|v|
    const double ratio = collision_frequency(20.0, 1.0) / 40.0;
    CHECK(ratio >= 1.0);
    CHECK(ratio <= 1.01);

    // monotone in |v|
    CHECK(collision_frequency(0.0, 1.0) < collision_frequency(1.0, 1.0));
    CHECK(collision_frequency(1.0, 1.0) < collision_frequency(2.0, 1.0));

    CHECK(collision_frequency(Vec2{0.0, 2.0}, 1.0) ==
          Catch::Approx(collision_frequency(2.0, 1.0)).epsilon(1e-13));
}

TEST_CASE("collision operator is self-adjoint and positive") {
    const CollisionOperator& L = op16();
    const VelocityGrid& g = L.grid();
    const double amax = L.max_frequency();
    CHECK(amax > 2.0 * std::sqrt(2.0) * 4.0);  // at least 2|corner| with margin

    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto f = random_profile(g, 900 + s);
        const auto h = random_profile(g, 1900 + s);
        const double lhs = g.inner(f, L.apply(h));
        const double rhs = g.inner(L.apply(f), h);
        CHECK(std::fabs(lhs - rhs) <= 1e-6 * g.norm(f) * g.norm(h));
    }
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto f = random_profile(g, 2900 + s);
        const double q = bracket(L, f);
        CHECK(q >= -1e-12 * amax * g.inner(f, f));
    }
}

TEST_CASE("conserved moments annihilate the operator") {
    for (const CollisionOperator* Lp : {&op16(), &op24()}) {
        const VelocityGrid& g = Lp->grid();
        std::vector<double> one(g.dim(), 1.0), vx(g.dim()), vy(g.dim());
        for (int i = 0; i < g.dim(); ++i) {
            vx[i] = g.vel(i).x;
            vy[i] = g.vel(i).y;
        }
        CHECK(g.norm(Lp->apply(one)) <= 1e-8);
        CHECK(g.norm(Lp->apply(vx)) <= 1e-8);
        CHECK(g.norm(Lp->apply(vy)) <= 1e-8);
    }
}

TEST_CASE("energy residual shrinks at second order") {
    // |v|^2 is conserved by the collision map but not reproduced exactly by
    // the bilinear stencil, so its residual is a clean probe of the
    // interpolation order.
    auto energy_residual = [](const CollisionOperator& L) {
        const VelocityGrid& g = L.grid();
        std::vector<double> e(g.dim());
        for (int i = 0; i < g.dim(); ++i) e[i] = norm2(g.vel(i));
        return g.norm(L.apply(e)) / g.norm(e);
    };
    const double e16 = energy_residual(op16());
    const double e24 = energy_residual(op24());
    CHECK(e16 > 0.0);
    CHECK(e24 < e16);
    // (24/16)^2 = 2.25; leave slack for the non-asymptotic coarse grid
    CHECK(e16 / e24 >= 1.5);
}

TEST_CASE("dissipation brackets approach their continuum values") {
    const double ref_visc = 2.0 * std::sqrt(kPi);        // <v1 v2, L v1 v2>
    const double ref_heat = std::sqrt(kPi) / 2.0;        // heat flux bracket

    const double b24 = bracket(op24(), viscosity_flux_offdiag(op24().grid()));
    const double b32 = bracket(op32(), viscosity_flux_offdiag(op32().grid()));
    CAPTURE(b24, b32);
    CHECK(std::fabs(b32 - ref_visc) < 0.12);
    CHECK(std::fabs(b32 - ref_visc) <= 0.85 * std::fabs(b24 - ref_visc) + 5e-3);

    const double h24 = bracket(op24(), heat_flux_component(op24().grid()));
    const double h32 = bracket(op32(), heat_flux_component(op32().grid()));
    CAPTURE(h24, h32);
    CHECK(std::fabs(h32 - ref_heat) < 0.04);
    CHECK(std::fabs(h32 - ref_heat) <= 0.85 * std::fabs(h24 - ref_heat) + 2e-3);

    // flux normalizations on the grid
    const VelocityGrid& g = op32().grid();
    CHECK(g.inner(viscosity_flux_offdiag(g), viscosity_flux_offdiag(g)) ==
          Catch::Approx(1.0).margin(2e-3));
    CHECK(g.inner(heat_flux_component(g), heat_flux_component(g)) ==
          Catch::Approx(0.5).margin(3e-3));
}

TEST_CASE("spectral gap is positive and stable under refinement") {
    const double g24 = gap_estimate(op24(), 77);
    const double g32 = gap_estimate(op32(), 78);
    CAPTURE(g24, g32);
    CHECK(g24 > 0.05);
    CHECK(g32 > 0.05);
    CHECK(std::fabs(g32 - g24) <= 0.2 * g32);
}

TEST_CASE("transport coefficients from projected conjugate gradients") {
    const CollisionOperator& L = op32();
    const VelocityGrid& g = L.grid();
    const TransportCoefficients tc = transport_coefficients(L);
    CAPTURE(tc.mu, tc.kappa, tc.mu_iterations, tc.kappa_iterations);

    CHECK(tc.mu > 0.0);
    CHECK(tc.kappa > 0.0);
    CHECK(tc.mu_residual <= 1e-6);
    CHECK(tc.kappa_residual <= 1e-6);

    // exact variational lower bounds on the grid: <f, L^{-1} f> >=
    // <f,f>^2 / <f, L f> by Cauchy-Schwarz in the L-inner product
    const auto phi = viscosity_flux_offdiag(g);
    const auto psi = heat_flux_component(g);
    const double lb_mu = std::pow(g.inner(phi, phi), 2) / bracket(L, phi);
    const double lb_kappa = 0.5 * std::pow(g.inner(psi, psi), 2) / bracket(L, psi);
    CHECK(tc.mu >= lb_mu * (1.0 - 1e-8));
    CHECK(tc.kappa >= lb_kappa * (1.0 - 1e-8));
    // the single-mode bound is known to be tight for this kernel; being far
    // above it would mean the solve leaked outside the flux sector
    CHECK(tc.mu <= 1.25 * lb_mu);
    CHECK(tc.kappa <= 1.25 * lb_kappa);

    // isotropy: the diagonal stress component must give the same viscosity
    const auto phi_d = viscosity_flux_diag(g);
    const ProjectedSolve sd = solve_projected(L, phi_d);
    const double mu_diag = g.inner(phi_d, sd.x);
    CHECK(mu_diag == Catch::Approx(tc.mu).epsilon(0.05));

    CHECK_THROWS_AS(transport_coefficients(op16()), std::invalid_argument);
}

TEST_CASE("spatially uniform conserved datum is stationary") {
    const CollisionOperator& L = op16();
    const VelocityGrid& g = L.grid();
    std::vector<double> vx(g.dim());
    for (int i = 0; i < g.dim(); ++i) vx[i] = g.vel(i).x;
    const KineticField f0 = make_cosine_field(g, 0, 0, vx);
    const KineticTrajectory traj = evolve_kinetic(f0, g, L, 1.0, 0.5, 0);
    for (int i = 0; i < g.dim(); ++i)
        CHECK(std::abs(traj.field.coef[0][i] - f0.coef[0][i]) < 1e-10);
    CHECK(traj.norms.back() == Catch::Approx(traj.norms.front()).epsilon(1e-10));
}

TEST_CASE("monitored norm decays for a non-equilibrium datum") {
    const CollisionOperator& L = op16();
    const VelocityGrid& g = L.grid();
    const KineticField f0 = make_cosine_field(g, 1, 0, random_profile(g, 4242));
    const KineticTrajectory traj = evolve_kinetic(f0, g, L, 2.0, 0.4, 0);
    REQUIRE(traj.norms.size() == traj.times.size());
    for (std::size_t i = 1; i < traj.norms.size(); ++i)
        CHECK(traj.norms[i] <= traj.norms[i - 1] * (1.0 + 1e-8));
    CHECK(traj.norms.back() < 0.98 * traj.norms.front());
    CHECK_NOTHROW(check_hermitian(traj.field, 1e-10));
}

TEST_CASE("the two time scalings agree after rescaling") {
    // with transport alpha^q and collisions alpha^(1+q), q=1 over T equals
    // q=0 over alpha T
    const CollisionOperator& L = op16();
    const VelocityGrid& g = L.grid();
    const KineticField f0 = make_cosine_field(g, 1, 0, random_profile(g, 555));
    const double alpha = 2.0;
    const KineticTrajectory a = evolve_kinetic(f0, g, L, alpha, 0.25, 1);
    const KineticTrajectory b = evolve_kinetic(f0, g, L, alpha, 0.5, 0);
    double maxdiff = 0.0;
    for (std::size_t m = 0; m < a.field.modes.size(); ++m)
        for (int i = 0; i < g.dim(); ++i)
            maxdiff = std::max(maxdiff,
                               std::abs(a.field.coef[m][i] - b.field.coef[m][i]));
    CAPTURE(maxdiff);
    CHECK(maxdiff < 2e-3);
}

TEST_CASE("hydrodynamic moments of the uniform mode are conserved") {
    auto moment_drift = [](const CollisionOperator& L) {
        const VelocityGrid& g = L.grid();
        const KineticField f0 = make_cosine_field(g, 0, 0, random_profile(g, 31));
        const KineticTrajectory traj = evolve_kinetic(f0, g, L, 1.5, 0.5, 0);
        std::array<double, 4> d{};
        for (int i = 0; i < g.dim(); ++i) {
            const Vec2 v = g.vel(i);
            const std::complex<double> dc = traj.field.coef[0][i] - f0.coef[0][i];
            d[0] += (g.weight[i] * dc).real();
            d[1] += (g.weight[i] * v.x * dc).real();
            d[2] += (g.weight[i] * v.y * dc).real();
            d[3] += (g.weight[i] * norm2(v) * dc).real();
        }
        return d;
    };
    const auto d16 = moment_drift(op16());
    CHECK(std::fabs(d16[0]) <= 1e-8);
    CHECK(std::fabs(d16[1]) <= 1e-8);
    CHECK(std::fabs(d16[2]) <= 1e-8);

    // energy is only conserved up to the interpolation error, which must
    // shrink at second order
    const auto d24 = moment_drift(op24());
    CAPTURE(d16[3], d24[3]);
    CHECK(std::fabs(d24[0]) <= 1e-8);
    CHECK(std::fabs(d24[3]) < std::fabs(d16[3]));
    CHECK(std::fabs(d16[3]) / std::fabs(d24[3]) >= 1.5);
}

TEST_CASE("free transport reproduces the Gaussian characteristic function") {
    const CollisionOperator& L = op16();
    const VelocityGrid& g = L.grid();
    KineticField h;
    h.modes.push_back({1, 0});
    h.coef.assign(1, std::vector<std::complex<double>>(g.dim(), 1.0));
    const double c = semigroup_covariance(h, h, g, L, 0.0, 0.3);
    CHECK(c == Catch::Approx(0.16922454248244997).margin(1e-5));

    // t = 0 reduces to the plain inner product
    const double c0 = semigroup_covariance(h, h, g, L, 0.0, 0.0);
    CHECK(c0 == Catch::Approx(1.0).margin(2e-6));
}

TEST_CASE("semigroup covariance of a real datum") {
    const CollisionOperator& L = op16();
    const VelocityGrid& g = L.grid();
    std::vector<double> p(g.dim());
    for (int i = 0; i < g.dim(); ++i) p[i] = g.vel(i).x;  // sqrt(beta) v1 at beta=1
    const KineticField h = make_cosine_field(g, 1, 0, p);
    CHECK(semigroup_covariance(h, h, g, L, 1.0, 0.0) ==
          Catch::Approx(0.5).margin(1e-4));

    // covariance decays once transport and collisions mix the mode away
    const double ct = semigroup_covariance(h, h, g, L, 1.0, 0.6);
    CHECK(std::fabs(ct) < 0.35);

    // a datum with nonzero equilibrium mean is rejected
    KineticField bad = make_cosine_field(g, 0, 0, std::vector<double>(g.dim(), 1.0));
    CHECK_THROWS_AS(semigroup_covariance(bad, bad, g, L, 1.0, 0.1),
                    std::invalid_argument);
}

TEST_CASE("field io round trip and validation") {
    const VelocityGrid g = make_velocity_grid(1.0, 12, 16);
    const KineticField f = make_cosine_field(g, 2, -1, random_profile(g, 808));
    CHECK_NOTHROW(check_hermitian(f));

    const std::string bin = "kinetic_field_test.bin";
    const std::string meta = "kinetic_field_test.json";
    write_kinetic_field(bin, meta, g, f, 0xabcdef12345678ULL);
    VelocityGrid g2;
    const KineticField r = read_kinetic_field(bin, meta, &g2);
    CHECK(g2.n_v == g.n_v);
    CHECK(g2.v_max == g.v_max);
    REQUIRE(r.modes == f.modes);
    for (std::size_t m = 0; m < f.coef.size(); ++m)
        for (int i = 0; i < g.dim(); ++i) CHECK(r.coef[m][i] == f.coef[m][i]);

    const nlohmann::json header = read_json(meta);
    CHECK(header["config_hash"] == hex64(0xabcdef12345678ULL));
    std::remove(bin.c_str());
    std::remove(meta.c_str());

    // a lone mode without its conjugate partner is not a real field
    KineticField lone;
    lone.modes.push_back({1, 0});
    lone.coef.assign(1, std::vector<std::complex<double>>(g.dim(), 1.0));
    CHECK_THROWS_AS(check_hermitian(lone), std::invalid_argument);

    KineticField skew = f;
    skew.coef[0][3] += std::complex<double>(0.0, 1e-6);
    CHECK_THROWS_AS(check_hermitian(skew), std::invalid_argument);
}

TEST_CASE("trajectory csv records the monitored norm") {
    const CollisionOperator& L = op16();
    const VelocityGrid& g = L.grid();
    const KineticField f0 = make_cosine_field(g, 1, 0, random_profile(g, 99));
    const KineticTrajectory traj = evolve_kinetic(f0, g, L, 1.0, 0.2, 0);
    const std::string path = "kinetic_traj_test.csv";
    write_trajectory_csv(path, traj, 7);
    const CsvTable t = read_csv(path);
    CHECK(t.columns == std::vector<std::string>{"t", "l2_norm"});
    CHECK(t.rows.size() == traj.times.size());
    CHECK(t.rows[0][t.column("l2_norm")] == Catch::Approx(traj.norms[0]).epsilon(1e-15));
    std::remove(path.c_str());
}

TEST_CASE("evolve rejects malformed arguments") {
    const CollisionOperator& L = op16();
    const VelocityGrid& g = L.grid();
    const KineticField f = make_cosine_field(g, 1, 0, random_profile(g, 1));
    CHECK_THROWS_AS(evolve_kinetic(f, g, L, 1.0, -0.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(evolve_kinetic(f, g, L, 1.0, 0.5, 2), std::invalid_argument);
    CHECK_THROWS_AS(evolve_kinetic(f, g, L, -1.0, 0.5, 0), std::invalid_argument);
}
