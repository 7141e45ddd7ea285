#pragma once

// Event-driven hard-disk dynamics on the unit torus: N disks of diameter eps,
// free flight plus specular reflection, forward or backward in time.
//
// Two prediction backends share one event loop:
//   - brute: all-pairs prediction with periodic-image enumeration, re-done
//     every `horizon` time units. Right choice for few particles or large
//     disks, and the only mode that handles eps-independent image sweeps.
//   - cells: classic cell lists with boundary-crossing events and
//     nearest-image prediction. Contact at distance eps < cell side implies
//     the pair was predicted when their cells last became adjacent, so no
//     event is ever missed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <utility>
#include <vector>

#include "torus.hpp"

namespace ktlab {

struct ParticleConfig {
    std::vector<Vec2> positions;
    std::vector<Vec2> velocities;
    double eps = 0.0;
    double time = 0.0;
    // Inverse temperature of the ensemble the sample came from, carried along
    // for snapshot metadata only; the dynamics never reads it.
    double beta_tag = 0.0;

    int n() const { return static_cast<int>(positions.size()); }
};

struct CollisionEvent {
    double time = 0.0;
    int i = -1;
    int j = -1;
    Vec2 nu;  // (x_i - x_j)/eps at contact, normalized, with i < j
};

enum class Direction { forward, backward };

struct RunDiagnostics {
    std::uint64_t collisions = 0;
    std::uint64_t crossings = 0;
    std::uint64_t grazing_skips = 0;
    std::uint64_t rebuilds = 0;
};

// Specular reflection exchanging the normal velocity components.
inline std::pair<Vec2, Vec2> apply_scattering(const Vec2& vi, const Vec2& vj, const Vec2& nu) {
    if (std::fabs(norm(nu) - 1.0) > 1e-9)
        throw std::invalid_argument("apply_scattering: nu is not a unit vector");
    const double proj = dot(vi - vj, nu);
    return {vi - nu * proj, vj + nu * proj};
}

inline double kinetic_energy(const ParticleConfig& c) {
    double e = 0.0;
    for (const Vec2& v : c.velocities) e += 0.5 * norm2(v);
    return e;
}

inline Vec2 total_momentum(const ParticleConfig& c) {
    Vec2 p;
    for (const Vec2& v : c.velocities) p += v;
    return p;
}

namespace detail {

// Earliest root of |p + w t| = eps for one fixed image displacement p.
// Requires an approaching pair (p.w < 0) and applies the grazing guard:
// contacts with normal relative speed below 1e-12 are ignored, as they belong
// to the measure-zero set where the flow is ill-defined.
inline std::optional<double> contact_root(const Vec2& p, const Vec2& w, double eps,
                                          std::uint64_t* grazing = nullptr) {
    const double b = 2.0 * dot(p, w);
    if (b >= 0.0) return std::nullopt;  // receding or tangential drift
    const double a = norm2(w);
    const double c = norm2(p) - eps * eps;
    if (c < 0.0) return std::nullopt;  // already inside this image's disk
    const double disc = b * b - 4.0 * a * c;
    if (disc <= 0.0) {
        // disc == 0 is an exactly tangential approach; record it like the
        // near-tangential ones below.
        if (disc == 0.0 && grazing) ++*grazing;
        return std::nullopt;
    }
    const double sq = std::sqrt(disc);
    if (sq / (2.0 * eps) < 1e-12) {
        if (grazing) ++*grazing;
        return std::nullopt;
    }
    const double t = (2.0 * c) / (-b + sq);  // stable form of the smaller root
    if (t <= 0.0) return std::nullopt;
    return t;
}

}  // namespace detail

struct PairPrediction {
    double t = 0.0;  // relative to the states passed in
    Vec2 nu;
};

// First contact of two disks within `horizon`, scanning every periodic image
// the pair can reach. States are instantaneous (positions at a common time).
inline std::optional<PairPrediction> predict_pair_collision(const Vec2& xi, const Vec2& vi,
                                                            const Vec2& xj, const Vec2& vj,
                                                            double eps, double horizon,
                                                            std::uint64_t* grazing = nullptr) {
    const Vec2 w = vi - vj;
    const Vec2 rel = min_image_disp(xi, xj);
    double best = std::numeric_limits<double>::infinity();
    Vec2 best_contact;
    for (const auto& q : candidate_images(rel, norm(w), horizon, eps)) {
        const Vec2 p{rel.x + q[0], rel.y + q[1]};
        const auto t = detail::contact_root(p, w, eps, grazing);
        if (t && *t <= horizon && *t < best) {
            best = *t;
            best_contact = p + w * (*t);
        }
    }
    if (!std::isfinite(best)) return std::nullopt;
    return PairPrediction{best, best_contact / norm(best_contact)};
}

struct EvolveOptions {
    double horizon = 1.0;                    // brute-mode rebuild period
    std::uint64_t max_events = 100000000ULL;  // collision budget before aborting
    bool force_brute = false;
    int cells_override = 0;         // > 0 pins the cell grid size (testing)
    double tol_overlap_rel = 1e-9;  // allowed initial overlap, relative to eps
};

class DiskEngine {
  public:
    explicit DiskEngine(ParticleConfig cfg, EvolveOptions opt = {})
        : opt_(opt), eps_(cfg.eps), time0_(cfg.time), beta_tag_(cfg.beta_tag) {
        if (cfg.positions.size() != cfg.velocities.size())
            throw std::invalid_argument("config: positions/velocities size mismatch");
        if (!(eps_ > 0.0)) throw std::invalid_argument("config: eps must be positive");
        const int n = cfg.n();
        pos_ = std::move(cfg.positions);
        vel_ = std::move(cfg.velocities);
        // Positions are stored unwrapped (exact ballistic lines); wrapping
        // happens in displacement arithmetic and snapshots only. This keeps
        // cell bookkeeping free of seam cases at the torus boundary.
        for (Vec2& p : pos_) p = wrap01(p);
        last_.assign(n, 0.0);
        cnt_.assign(n, 0);
        ncross_.assign(n, std::numeric_limits<double>::infinity());

        int nc = opt_.cells_override > 0
                     ? opt_.cells_override
                     : static_cast<int>(std::floor(std::sqrt(static_cast<double>(n))));
        nc = std::min(nc, static_cast<int>(std::floor(1.0 / eps_)));
        use_cells_ = !opt_.force_brute && (opt_.cells_override > 0 ? nc >= 2 : nc >= 8);
        if (use_cells_) {
            ncells_ = nc;
            side_ = 1.0 / ncells_;
            ix_.assign(n, 0);
            iy_.assign(n, 0);
            head_.assign(static_cast<std::size_t>(ncells_) * ncells_, -1);
            next_.assign(n, -1);
            for (int i = 0; i < n; ++i) {
                ix_[i] = std::min(static_cast<int>(pos_[i].x * ncells_), ncells_ - 1);
                iy_[i] = std::min(static_cast<int>(pos_[i].y * ncells_), ncells_ - 1);
                insert_cell(i);
            }
        }
        check_initial_overlaps();
        build_schedule();
    }

    // Advance the relative clock by dt >= 0, appending collision events in
    // processing order (absolute times) to log when given.
    void run(double dt, std::vector<CollisionEvent>* log = nullptr) {
        if (dt < 0.0) throw std::invalid_argument("run: negative duration");
        const double end = clock_ + dt;
        while (!pq_.empty() && pq_.top().t <= end) {
            const Ev ev = pq_.top();
            pq_.pop();
            if (ev.kind == Ev::kPair) {
                process_pair(ev, log);
            } else if (ev.kind == Ev::kCross) {
                process_crossing(ev);
            } else {
                process_rebuild(ev);
            }
        }
        clock_ = end;
    }

    ParticleConfig snapshot() const {
        ParticleConfig c;
        c.eps = eps_;
        c.time = time0_ + clock_;
        c.beta_tag = beta_tag_;
        c.positions.resize(pos_.size());
        c.velocities = vel_;
        for (std::size_t i = 0; i < pos_.size(); ++i)
            c.positions[i] = wrap01(pos_at(static_cast<int>(i), clock_));
        return c;
    }

    const RunDiagnostics& diagnostics() const { return diag_; }
    double clock() const { return clock_; }

  private:
    struct Ev {
        enum Kind : std::uint8_t { kPair = 0, kCross = 1, kRebuild = 2 };
        double t;
        std::uint8_t kind;
        int a;
        int b;  // pair partner, or crossing code axis*2+positive
        std::uint32_t ca;
        std::uint32_t cb;
        bool operator>(const Ev& o) const {
            if (t != o.t) return t > o.t;
            if (kind != o.kind) return kind > o.kind;
            if (a != o.a) return a > o.a;
            return b > o.b;
        }
    };

    EvolveOptions opt_;
    double eps_;
    double time0_;
    double beta_tag_;
    std::vector<Vec2> pos_, vel_;
    std::vector<double> last_;
    std::vector<std::uint32_t> cnt_;
    std::vector<double> ncross_;
    std::priority_queue<Ev, std::vector<Ev>, std::greater<Ev>> pq_;
    double clock_ = 0.0;
    double next_rebuild_ = 0.0;
    RunDiagnostics diag_;

    bool use_cells_ = false;
    int ncells_ = 0;
    double side_ = 0.0;
    // Unbounded integer cell coordinates per particle; the bucket index wraps.
    std::vector<int> ix_, iy_, head_, next_;

    int bucket(int ix, int iy) const {
        const int bx = ((ix % ncells_) + ncells_) % ncells_;
        const int by = ((iy % ncells_) + ncells_) % ncells_;
        return by * ncells_ + bx;
    }

    void insert_cell(int i) {
        const int cell = bucket(ix_[i], iy_[i]);
        next_[i] = head_[cell];
        head_[cell] = i;
    }

    void remove_cell(int i) {
        int* link = &head_[bucket(ix_[i], iy_[i])];
        while (*link != i) link = &next_[*link];
        *link = next_[i];
    }

    Vec2 pos_at(int i, double t) const {
        return pos_[i] + vel_[i] * (t - last_[i]);
    }

    void advance(int i, double t) {
        pos_[i] = pos_at(i, t);
        last_[i] = t;
    }

    void check_initial_overlaps() const {
        const double min_d = eps_ * (1.0 - opt_.tol_overlap_rel);
        const int n = static_cast<int>(pos_.size());
        if (use_cells_) {
            for (int i = 0; i < n; ++i)
                for_neighbors(i, [&](int j) {
                    if (j > i && torus_dist(pos_[i], pos_[j]) < min_d)
                        throw std::invalid_argument("config: overlapping disks");
                });
        } else {
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j)
                    if (torus_dist(pos_[i], pos_[j]) < min_d)
                        throw std::invalid_argument("config: overlapping disks");
        }
    }

    template <class F>
    void for_neighbors(int i, F&& f) const {
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
                for (int j = head_[bucket(ix_[i] + dx, iy_[i] + dy)]; j != -1; j = next_[j])
                    if (j != i) f(j);
    }

    void build_schedule() {
        pq_ = {};
        const int n = static_cast<int>(pos_.size());
        if (use_cells_) {
            for (int i = 0; i < n; ++i) schedule_crossing(i);
            for (int i = 0; i < n; ++i)
                for_neighbors(i, [&](int j) {
                    if (j > i) schedule_pair(i, j, clock_);
                });
        } else {
            next_rebuild_ = clock_ + opt_.horizon;
            for (int i = 0; i < n; ++i) advance(i, clock_);
            for (int i = 0; i < n; ++i)
                for (int j = i + 1; j < n; ++j) schedule_pair_brute(i, j, clock_);
            pq_.push(Ev{next_rebuild_, Ev::kRebuild, -1, -1, 0, 0});
        }
    }

    // ---- cell mode scheduling ----

    void schedule_crossing(int i) {
        const Vec2 x = pos_[i];
        const Vec2 v = vel_[i];
        double best = std::numeric_limits<double>::infinity();
        int code = -1;
        if (v.x > 0.0) {
            const double dt = ((ix_[i] + 1) * side_ - x.x) / v.x;
            if (dt < best) { best = dt; code = 1; }
        } else if (v.x < 0.0) {
            const double dt = (ix_[i] * side_ - x.x) / v.x;
            if (dt < best) { best = dt; code = 0; }
        }
        if (v.y > 0.0) {
            const double dt = ((iy_[i] + 1) * side_ - x.y) / v.y;
            if (dt < best) { best = dt; code = 3; }
        } else if (v.y < 0.0) {
            const double dt = (iy_[i] * side_ - x.y) / v.y;
            if (dt < best) { best = dt; code = 2; }
        }
        if (code < 0) {  // immobile particle never crosses
            ncross_[i] = std::numeric_limits<double>::infinity();
            return;
        }
        const double t = last_[i] + std::max(best, 0.0);
        ncross_[i] = t;
        pq_.push(Ev{t, Ev::kCross, i, code, cnt_[i], 0});
    }

    // Predict i against j from states at common time teval; keep only if the
    // contact lands before either particle's next cell crossing, since every
    // crossing re-predicts its 3x3 neighborhood anyway.
    void schedule_pair(int i, int j, double teval) {
        const Vec2 pi = pos_at(i, teval), pj = pos_at(j, teval);
        const Vec2 p = min_image_disp(pi, pj);
        const auto t = detail::contact_root(p, vel_[i] - vel_[j], eps_, &diag_.grazing_skips);
        if (!t) return;
        const double tc = teval + *t;
        if (tc > std::min(ncross_[i], ncross_[j])) return;
        const int a = std::min(i, j), b = std::max(i, j);
        pq_.push(Ev{tc, Ev::kPair, a, b, cnt_[a], cnt_[b]});
    }

    void process_crossing(const Ev& ev) {
        const int i = ev.a;
        if (ev.ca != cnt_[i]) return;  // velocity changed since scheduling
        ++diag_.crossings;
        advance(i, ev.t);
        remove_cell(i);
        switch (ev.b) {
            case 0: --ix_[i]; break;
            case 1: ++ix_[i]; break;
            case 2: --iy_[i]; break;
            case 3: ++iy_[i]; break;
        }
        insert_cell(i);
        schedule_crossing(i);
        for_neighbors(i, [&](int j) { schedule_pair(i, j, ev.t); });
    }

    // ---- brute mode scheduling ----

    void schedule_pair_brute(int i, int j, double teval) {
        const double window = next_rebuild_ - teval;
        if (window <= 0.0) return;
        const auto pred = predict_pair_collision(pos_at(i, teval), vel_[i], pos_at(j, teval),
                                                 vel_[j], eps_, window, &diag_.grazing_skips);
        if (!pred) return;
        const int a = std::min(i, j), b = std::max(i, j);
        pq_.push(Ev{teval + pred->t, Ev::kPair, a, b, cnt_[a], cnt_[b]});
    }

    void process_rebuild(const Ev& ev) {
        ++diag_.rebuilds;
        clock_ = ev.t;
        build_schedule();
    }

    // ---- shared collision processing ----

    void process_pair(const Ev& ev, std::vector<CollisionEvent>* log) {
        const int i = ev.a, j = ev.b;
        if (ev.ca != cnt_[i] || ev.cb != cnt_[j]) return;  // stale
        advance(i, ev.t);
        advance(j, ev.t);
        Vec2 p = min_image_disp(pos_[i], pos_[j]);
        const double d = norm(p);
        const Vec2 nu = p / d;
        const Vec2 w = vel_[i] - vel_[j];
        if (dot(w, nu) >= 0.0) return;  // numerically tangential; ignore
        const auto [vi2, vj2] = apply_scattering(vel_[i], vel_[j], nu);
        vel_[i] = vi2;
        vel_[j] = vj2;
        ++cnt_[i];
        ++cnt_[j];
        if (++diag_.collisions > opt_.max_events)
            throw std::runtime_error("hard-disk run aborted: max_events exceeded");
        if (log) log->push_back(CollisionEvent{time0_ + ev.t, i, j, nu});
        if (use_cells_) {
            schedule_crossing(i);
            schedule_crossing(j);
            for_neighbors(i, [&](int k) { schedule_pair(i, k, ev.t); });
            for_neighbors(j, [&](int k) { schedule_pair(j, k, ev.t); });
        } else {
            const int n = static_cast<int>(pos_.size());
            for (int k = 0; k < n; ++k) {
                if (k != i) schedule_pair_brute(std::min(i, k), std::max(i, k), ev.t);
                if (k != j && k != i) schedule_pair_brute(std::min(j, k), std::max(j, k), ev.t);
            }
        }
    }
};

struct EvolveResult {
    ParticleConfig config;
    std::vector<CollisionEvent> events;
    RunDiagnostics diagnostics;
};

// Evolve by duration T (T >= 0 in both directions). Backward evolution flips
// velocities, runs forward, and flips back; event times then count down from
// config.time and nu keeps its geometric meaning (x_i - x_j at contact).
inline EvolveResult evolve(const ParticleConfig& config, double T,
                           Direction dir = Direction::forward,
                           const EvolveOptions& opt = {}) {
    if (T < 0.0) throw std::invalid_argument("evolve: negative duration");
    ParticleConfig start = config;
    if (dir == Direction::backward)
        for (Vec2& v : start.velocities) v = -v;
    DiskEngine engine(std::move(start), opt);
    EvolveResult out;
    engine.run(T, &out.events);
    out.config = engine.snapshot();
    out.diagnostics = engine.diagnostics();
    if (dir == Direction::backward) {
        for (Vec2& v : out.config.velocities) v = -v;
        out.config.time = config.time - T;
        for (CollisionEvent& e : out.events) e.time = config.time - (e.time - config.time);
    }
    return out;
}

// Throws unless the configuration is internally consistent and overlap-free.
inline void validate_config(const ParticleConfig& config) {
    DiskEngine probe(config);  // constructor performs all checks
    (void)probe;
}

}  // namespace ktlab
