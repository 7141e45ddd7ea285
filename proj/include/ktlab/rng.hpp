#pragma once

// Counter-based random number generator (Philox4x32-10) plus the few
// distributions the simulations need. Keeping the generator in-repo makes
// every stream reproducible bit-for-bit across platforms and worker counts,
// which the deterministic-output contract of the CLI depends on; the
// distributions in <random> do not guarantee that across library versions.

#include <cstdint>
#include <cmath>

#include "torus.hpp"

namespace ktlab {

class Philox {
  public:
    // Independent streams come from distinct (seed, stream) pairs; replica i
    // of an experiment typically uses stream = i.
    explicit Philox(std::uint64_t seed, std::uint64_t stream = 0)
        : key0_(static_cast<std::uint32_t>(seed)),
          key1_(static_cast<std::uint32_t>(seed >> 32)),
          s0_(static_cast<std::uint32_t>(stream)),
          s1_(static_cast<std::uint32_t>(stream >> 32)) {}

    std::uint64_t next_u64() {
        if (have_half_) {
            have_half_ = false;
            return half_;
        }
        std::uint32_t c0 = static_cast<std::uint32_t>(ctr_);
        std::uint32_t c1 = static_cast<std::uint32_t>(ctr_ >> 32);
        ++ctr_;
        std::uint32_t x0 = c0, x1 = c1, x2 = s0_, x3 = s1_;
        std::uint32_t k0 = key0_, k1 = key1_;
        for (int round = 0; round < 10; ++round) {
            std::uint32_t hi0, lo0, hi1, lo1;
            mulhilo(0xD2511F53u, x0, hi0, lo0);
            mulhilo(0xCD9E8D57u, x2, hi1, lo1);
            std::uint32_t y0 = hi1 ^ x1 ^ k0;
            std::uint32_t y1 = lo1;
            std::uint32_t y2 = hi0 ^ x3 ^ k1;
            std::uint32_t y3 = lo0;
            x0 = y0; x1 = y1; x2 = y2; x3 = y3;
            k0 += 0x9E3779B9u;  // golden ratio based Weyl keys
            k1 += 0xBB67AE85u;
        }
        half_ = (static_cast<std::uint64_t>(x2) << 32) | x3;
        have_half_ = true;
        return (static_cast<std::uint64_t>(x0) << 32) | x1;
    }

    // Uniform in [0,1) with full 53-bit mantissa resolution.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Uniform integer in [0, n). Multiply-shift; the O(n / 2^64) bias is far
    // below anything the statistical tests can resolve.
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Two independent standard normals (Marsaglia polar method). Both values
    // are returned so nothing is cached across calls; that keeps the stream
    // position a pure function of the call sequence.
    Vec2 gauss2() {
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        return {u * f, v * f};
    }

    double gauss() { return gauss2().x; }

    // Velocity sample with law (beta/2pi) exp(-beta |v|^2 / 2).
    Vec2 maxwellian(double beta) {
        return gauss2() / std::sqrt(beta);
    }

    Vec2 uniform_point() { return {uniform(), uniform()}; }

    // Unit vector uniform on the circle.
    Vec2 unit_vector() {
        const double th = 2.0 * std::acos(-1.0) * uniform();
        return {std::cos(th), std::sin(th)};
    }

  private:
    static void mulhilo(std::uint32_t a, std::uint32_t b,
                        std::uint32_t& hi, std::uint32_t& lo) {
        const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
        hi = static_cast<std::uint32_t>(p >> 32);
        lo = static_cast<std::uint32_t>(p);
    }

    std::uint32_t key0_, key1_;
    std::uint32_t s0_, s1_;
    std::uint64_t ctr_ = 0;
    std::uint64_t half_ = 0;
    bool have_half_ = false;
};

}  // namespace ktlab
