#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ktlab/ensemble.hpp"
#include "ktlab/stats.hpp"

using namespace ktlab;

TEST_CASE("ensemble spec: scaling identity and validation") {
    EnsembleSpec s;
    s.n = 1000;
    s.alpha = 1.0;
    s.beta = 1.0;
    s.seed = 7;
    CHECK(std::fabs(s.n * s.eps() - s.alpha) <= 1e-14 * s.alpha);
    CHECK(s.eps() == Catch::Approx(1e-3));
    CHECK_NOTHROW(s.validate());

    EnsembleSpec bad = s;
    bad.n = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = s;
    bad.beta = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = s;
    bad.alpha = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = s;
    bad.n = 100;
    bad.alpha = 6.2;  // area fraction pi*6.2^2/400 = 0.3019
    CHECK(bad.area_fraction() >= 0.3);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("maxwellian moments at beta 1 and the beta scaling") {
    Philox rng(31, 0);
    const int n = 1000000;
    std::vector<double> comps;
    comps.reserve(2 * n);
    double speed_sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const Vec2 v = sample_maxwellian(1.0, rng);
        comps.push_back(v.x);
        comps.push_back(v.y);
        speed_sum += norm(v);
    }
    CHECK(variance(comps) == Catch::Approx(1.0).margin(0.01));
    CHECK(speed_sum / n == Catch::Approx(std::sqrt(kPi / 2.0)).margin(0.01));

    Philox rng4(31, 1);
    std::vector<double> comps4;
    comps4.reserve(2 * 200000);
    for (int i = 0; i < 200000; ++i) {
        const Vec2 v = sample_maxwellian(4.0, rng4);
        comps4.push_back(v.x);
        comps4.push_back(v.y);
    }
    const double ratio = std::sqrt(variance(comps4)) / std::sqrt(variance(comps));
    CHECK(ratio == Catch::Approx(0.5).margin(0.01));

    CHECK_THROWS_AS(sample_maxwellian(0.0, rng), std::invalid_argument);
}

TEST_CASE("single disk: no rejection, uniform position") {
    EnsembleSpec s;
    s.n = 1;
    s.alpha = 0.01;
    s.beta = 1.0;
    s.seed = 37;
    std::vector<double> xs;
    for (int k = 0; k < 1500; ++k) {
        GibbsDiagnostics d;
        const ParticleConfig c = sample_gibbs(s, k, &d);
        CHECK(d.attempts == 1);
        xs.push_back(c.positions[0].x);
    }
    const double p = ks_test_pvalue(xs, [](double u) { return u; });
    CHECK(p >= 0.01);
}

TEST_CASE("gibbs samples respect exclusion and are reproducible") {
    EnsembleSpec s;
    s.n = 100;
    s.alpha = 2.0;
    s.beta = 1.0;
    s.seed = 41;
    double minsep = 1e9;
    for (int k = 0; k < 50; ++k) {
        const ParticleConfig c = sample_gibbs(s, k);
        REQUIRE(c.n() == 100);
        CHECK(c.eps == Catch::Approx(0.02));
        for (int i = 0; i < c.n(); ++i)
            for (int j = i + 1; j < c.n(); ++j)
                minsep = std::min(minsep, torus_dist(c.positions[i], c.positions[j]));
    }
    CHECK(minsep >= s.eps());

    const ParticleConfig a = sample_gibbs(s, 5);
    const ParticleConfig b = sample_gibbs(s, 5);
    const ParticleConfig c = sample_gibbs(s, 6);
    for (int i = 0; i < a.n(); ++i) {
        CHECK(a.positions[i] == b.positions[i]);
        CHECK(a.velocities[i] == b.velocities[i]);
    }
    bool differs = false;
    for (int i = 0; i < a.n(); ++i)
        if (!(a.positions[i] == c.positions[i])) differs = true;
    CHECK(differs);
}

TEST_CASE("gibbs velocity marginal has the right variance") {
    EnsembleSpec s;
    s.n = 200;
    s.alpha = 1.0;
    s.beta = 2.0;
    s.seed = 43;
    std::vector<double> comps;
    for (int k = 0; k < 100; ++k) {
        const ParticleConfig c = sample_gibbs(s, k);
        for (const Vec2& v : c.velocities) {
            comps.push_back(v.x);
            comps.push_back(v.y);
        }
    }
    CHECK(variance(comps) == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("whole-configuration acceptance tracks the dilute-gas estimate") {
    EnsembleSpec s;
    s.n = 1000;
    s.alpha = 1.0;
    s.beta = 1.0;
    s.seed = 47;
    std::uint64_t attempts = 0;
    const int samples = 300;
    for (int k = 0; k < samples; ++k) {
        GibbsDiagnostics d;
        sample_gibbs(s, k, &d);
        attempts += d.attempts;
    }
    const double acc = static_cast<double>(samples) / static_cast<double>(attempts);
    // pair-exclusion estimate exp(-N(N-1) pi eps^2 / 2) = 0.20817 at these
    // parameters; band is ~4.7 binomial sigma wide
    CHECK(acc > 0.16);
    CHECK(acc < 0.26);
    // and the partition-function envelope: acceptance >= exp(-C alpha^2)
    // already with C = 2
    CHECK(acc >= std::exp(-2.0 * s.alpha * s.alpha));
}

TEST_CASE("acceptance floor triggers the density-too-high error") {
    EnsembleSpec s;
    s.n = 3000;
    s.alpha = 4.5;  // area fraction 0.0053, but acceptance ~ e^-32
    s.beta = 1.0;
    s.seed = 53;
    CHECK(s.area_fraction() < 0.3);
    CHECK_THROWS_AS(sample_gibbs(s, 0), std::runtime_error);
}

TEST_CASE("test function registry: parsing, evaluation, mean-zero gate") {
    const TestFunction f = make_test_function("cos:1,0:vx", 1.0);
    CHECK(f.name == "cos:1,0:vx");
    CHECK(f.mean_zero);
    CHECK(f({0.0, 0.3}, {2.0, -1.0}) == Catch::Approx(2.0));
    CHECK(f({0.5, 0.3}, {2.0, -1.0}) == Catch::Approx(-2.0));
    CHECK(f({0.25, 0.0}, {2.0, -1.0}) == Catch::Approx(0.0).margin(1e-12));

    const TestFunction e = make_test_function("cos:0,0:e", 1.0);
    CHECK(e({0.1, 0.2}, {2.0, 0.0}) == Catch::Approx(1.0));
    CHECK(e({0.1, 0.2}, {1.0, 1.0}) == Catch::Approx(0.0).margin(1e-12));

    const TestFunction g = make_test_function("sin:0,2:1", 1.0);
    CHECK(g({0.3, 0.125}, {0.0, 0.0}) == Catch::Approx(1.0));  // sin(pi/2)

    // beta enters through the velocity normalization
    const TestFunction f4 = make_test_function("cos:0,0:vx", 4.0);
    CHECK(f4({0.0, 0.0}, {0.5, 0.0}) == Catch::Approx(1.0));

    CHECK_THROWS_AS(make_test_function("cos:0,0:1", 1.0), std::invalid_argument);  // mean 1
    CHECK_THROWS_AS(make_test_function("tan:1,0:vx", 1.0), std::invalid_argument);
    CHECK_THROWS_AS(make_test_function("cos:1:vx", 1.0), std::invalid_argument);
    CHECK_THROWS_AS(make_test_function("cos:1,0:vz", 1.0), std::invalid_argument);
    CHECK_THROWS_AS(make_test_function("cos:99,0:vx", 1.0), std::invalid_argument);
    CHECK_THROWS_AS(make_test_function("garbage", 1.0), std::invalid_argument);
}

TEST_CASE("equilibrium quadrature reproduces exact Gaussian moments") {
    const double one =
        detail::equilibrium_mean([](const Vec2&, const Vec2&) { return 1.0; }, 1.0);
    CHECK(one == Catch::Approx(1.0).margin(1e-10));
    const double ke =
        detail::equilibrium_mean([](const Vec2&, const Vec2& v) { return norm2(v); }, 2.0);
    CHECK(ke == Catch::Approx(1.0).margin(1e-10));  // 2/beta at beta=2
    const double cosmode = detail::equilibrium_mean(
        [](const Vec2& x, const Vec2&) { return std::cos(2.0 * kPi * x.x); }, 1.0);
    CHECK(cosmode == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("perturbation weights: zero function, symmetry, Gaussian sum") {
    EnsembleSpec s;
    s.n = 100;
    s.alpha = 1.0;
    s.beta = 1.0;
    s.seed = 59;

    // sin(0 . x) vanishes identically
    const TestFunction zero = make_test_function("sin:0,0:1", 1.0);
    const ParticleConfig c = sample_gibbs(s, 0);
    CHECK(perturbation_weight(c, zero) == 0.0);

    const TestFunction cosx = make_test_function("cos:1,0:1", 1.0);
    const TestFunction gv = make_test_function("cos:0,0:vx", 1.0);
    std::vector<double> wcos, wv;
    for (int k = 0; k < 400; ++k) {
        const ParticleConfig cfg = sample_gibbs(s, k);
        wcos.push_back(perturbation_weight(cfg, cosx));
        wv.push_back(perturbation_weight(cfg, gv));
    }
    // spatial mode: mean zero by translation symmetry of the Gibbs measure
    CHECK(std::fabs(mean(wcos)) <= 3.0 * std_error(wcos));
    // velocity mode: sqrt(beta) sum of v1 is Gaussian with variance N
    CHECK(std::fabs(mean(wv)) <= 1.6);           // 3.2 sigma of the mean at N=100
    CHECK(variance(wv) > 0.79 * s.n);
    CHECK(variance(wv) < 1.21 * s.n);
}

TEST_CASE("weights attach to initial data and survive evolution bitwise") {
    EnsembleSpec s;
    s.n = 50;
    s.alpha = 1.0;
    s.beta = 1.0;
    s.seed = 61;
    const TestFunction g0 = make_test_function("cos:1,0:1", 1.0);
    WeightedSample ws = make_weighted_sample(s, g0, 3);
    const double w0 = ws.weight;
    CHECK(w0 != 0.0);

    const auto out = evolve(ws.config, 0.5);
    ws.config = out.config;
    CHECK(ws.weight == w0);  // nothing in the dynamics touches the weight
    // recomputing on the transported configuration is a different number,
    // which is the point: the weight is a tag of the initial datum
    CHECK(perturbation_weight(ws.config, g0) != w0);
}

TEST_CASE("insertion probability: trivial cases and the dilute oracle") {
    EnsembleSpec empty;
    empty.n = 0;
    empty.alpha = 1.0;
    empty.beta = 1.0;
    empty.seed = 1;
    const std::vector<ParticleConfig> blanks(120);
    CHECK(insertion_probability(empty, blanks) == 1.0);

    CHECK_THROWS_AS(insertion_probability(empty, std::vector<ParticleConfig>(50)),
                    std::invalid_argument);

    EnsembleSpec s;
    s.n = 1000;
    s.alpha = 1.0;
    s.beta = 1.0;
    s.seed = 67;
    std::vector<ParticleConfig> samples;
    for (int k = 0; k < 200; ++k) samples.push_back(sample_gibbs(s, k));
    const double p = insertion_probability(s, samples);
    // low-density expansion: 1 - N pi eps^2 = 0.9968584073464102
    CHECK(p == Catch::Approx(0.9968584073464102).margin(1.5e-3));
}

TEST_CASE("insertion probability decreases with alpha at fixed N") {
    double prev = 1.1;
    for (const double alpha : {0.5, 1.0, 2.0}) {
        EnsembleSpec s;
        s.n = 200;
        s.alpha = alpha;
        s.beta = 1.0;
        s.seed = 71;
        std::vector<ParticleConfig> samples;
        for (int k = 0; k < 100; ++k) samples.push_back(sample_gibbs(s, k));
        const double p = insertion_probability(s, samples);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("speed marginal is invariant under the dynamics") {
    EnsembleSpec s;
    s.n = 200;
    s.alpha = 1.0;
    s.beta = 1.0;
    s.seed = 73;
    std::vector<double> before, after;
    std::uint64_t collisions = 0;
    for (int rep = 0; rep < 10; ++rep) {
        const ParticleConfig c0 = sample_gibbs(s, rep);
        for (const Vec2& v : c0.velocities) before.push_back(norm(v));
        const auto out = evolve(c0, 5.0 / s.alpha);
        collisions += out.diagnostics.collisions;
        for (const Vec2& v : out.config.velocities) after.push_back(norm(v));
    }
    CHECK(collisions > 100);
    const double p = ks_2sample_pvalue(before, after);
    CHECK(p >= 0.01);
}
