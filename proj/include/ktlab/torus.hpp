#pragma once

// Minimal-image arithmetic on the unit torus [0,1)^2 and enumeration of
// periodic images that can matter within a finite time horizon.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace ktlab {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2 operator/(double s) const { return {x / s, y / s}; }
    Vec2 operator-() const { return {-x, -y}; }
    Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
    Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
    bool operator==(const Vec2& o) const { return x == o.x && y == o.y; }
};

inline Vec2 operator*(double s, const Vec2& v) { return v * s; }
inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double norm2(const Vec2& v) { return v.x * v.x + v.y * v.y; }
inline double norm(const Vec2& v) { return std::sqrt(norm2(v)); }

// Fold a coordinate into [0,1).
inline double wrap01(double u) {
    double r = u - std::floor(u);
    if (r >= 1.0) r -= 1.0;  // guards u = -1e-17 style edge cases
    return r;
}

inline Vec2 wrap01(const Vec2& p) { return {wrap01(p.x), wrap01(p.y)}; }

// Fold into [-1/2, 1/2); exact half-period separations resolve to -1/2 so the
// representative is unique.
inline double wrap_half(double u) {
    double r = u - std::floor(u + 0.5);
    if (r < -0.5) r += 1.0;
    if (r >= 0.5) r -= 1.0;
    return r;
}

// Displacement r with r = a - b (mod 1), components in [-1/2, 1/2).
// |r| is the torus distance between a and b.
inline Vec2 min_image_disp(const Vec2& a, const Vec2& b) {
    return {wrap_half(a.x - b.x), wrap_half(a.y - b.y)};
}

inline double torus_dist(const Vec2& a, const Vec2& b) {
    return norm(min_image_disp(a, b));
}

// Integer lattice offsets q such that |rel_pos + q| <= rel_speed*horizon + eps + 1/2.
// The extra 1/2 covers the worst-case wrap of rel_pos, so no image reachable
// within the horizon is ever missed (deliberate over-approximation).
inline std::vector<std::array<int, 2>> candidate_images(const Vec2& rel_pos,
                                                        double rel_speed,
                                                        double horizon,
                                                        double eps) {
    const double radius = rel_speed * horizon + eps + 0.5;
    const double r2 = radius * radius;
    const int qmax = static_cast<int>(std::ceil(radius + 0.75));
    std::vector<std::array<int, 2>> out;
    out.reserve(static_cast<std::size_t>(4.0 * r2) + 8);
    for (int qx = -qmax; qx <= qmax; ++qx) {
        for (int qy = -qmax; qy <= qmax; ++qy) {
            const double dx = rel_pos.x + qx;
            const double dy = rel_pos.y + qy;
            if (dx * dx + dy * dy <= r2) out.push_back({qx, qy});
        }
    }
    return out;
}

}  // namespace ktlab
