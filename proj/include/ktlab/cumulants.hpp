#pragma once

// Cluster decomposition of symmetric tensors over a finite product state
// space. An order-N symmetric tensor f stores measure values: the reference
// single-slot weights are already folded into its entries, so integrating
// slots out is a plain sum. The decomposition splits the density f / (product
// of weights) into components g^1..g^N where g^m carries the genuinely m-fold
// correlated part: each slot of g^m averages to zero against the weights, the
// components reconstruct the density through sums over slot subsets, and the
// weighted norm of the density splits across components with binomial
// multiplicities. These are exact identities up to rounding, which is what
// verify_identities measures.
//
// Everything here is dense and exhaustive by design; the d^N <= 2^20 cap
// keeps full enumeration cheap enough to check the identities directly.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "ktlab/parallel.hpp"
#include "ktlab/rng.hpp"

namespace ktlab {

inline constexpr std::size_t kTensorCap = std::size_t{1} << 20;
inline constexpr int kMaxParticles = 20;

// d^order, guarded against the dense-storage cap.
inline std::size_t tensor_size(int d, int order) {
    if (d < 1 || order < 0) throw std::invalid_argument("tensor_size: need d >= 1, order >= 0");
    std::size_t n = 1;
    for (int k = 0; k < order; ++k) {
        if (n > kTensorCap / static_cast<std::size_t>(d))
            throw std::invalid_argument("tensor_size: d^order exceeds the dense cap");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

// Single-slot states {0..d-1} with positive weights summing to one, shared by
// N exchangeable slots.
struct DiscreteModel {
    int d = 0;
    std::vector<double> M;
    int N = 0;
};

inline DiscreteModel make_discrete_model(std::vector<double> weights, int particles) {
    if (weights.empty()) throw std::invalid_argument("model needs at least one state");
    if (particles < 1) throw std::invalid_argument("model needs at least one slot");
    if (particles > kMaxParticles)
        throw std::invalid_argument("subset enumeration needs at most 20 slots");
    long double sum = 0.0L;
    for (double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w))
            throw std::invalid_argument("state weights must be positive and finite");
        sum += w;
    }
    if (std::fabs(static_cast<double>(sum) - 1.0) > 1e-14)
        throw std::invalid_argument("state weights must sum to one (1e-14)");
    const int d = static_cast<int>(weights.size());
    tensor_size(d, particles);
    return DiscreteModel{d, std::move(weights), particles};
}

// Dense order-m tensor on {0..d-1}^m, flat row-major with the first slot most
// significant. Instances built through make_symmetric_tensor are exactly
// (bitwise) invariant under slot permutations; the operations below preserve
// that property.
struct SymmetricTensor {
    int d = 0;
    int order = 0;
    std::vector<double> values;
};

namespace detail {

inline void tensor_digits(std::size_t flat, int d, int order, int* out) {
    const auto base = static_cast<std::size_t>(d);
    for (int k = order - 1; k >= 0; --k) {
        out[k] = static_cast<int>(flat % base);
        flat /= base;
    }
}

inline std::size_t tensor_flat(const int* digits, int d, int order) {
    std::size_t f = 0;
    for (int k = 0; k < order; ++k) f = f * static_cast<std::size_t>(d) + digits[k];
    return f;
}

// Flat index of the sorted permutation of flat's digits. Sorting ascending
// gives the lexicographically smallest permutation, so the canonical index
// never exceeds flat.
inline std::size_t canonical_flat(std::size_t flat, int d, int order, int* scratch) {
    tensor_digits(flat, d, order, scratch);
    std::sort(scratch, scratch + order);
    return tensor_flat(scratch, d, order);
}

// Product of weights over the digits of flat, multiplied in sorted order so
// that permuted indices receive the exact same double.
inline double weight_product(const std::vector<double>& M, std::size_t flat, int d, int order,
                             int* scratch) {
    tensor_digits(flat, d, order, scratch);
    std::sort(scratch, scratch + order);
    double p = 1.0;
    for (int k = 0; k < order; ++k) p *= M[scratch[k]];
    return p;
}

}  // namespace detail

inline SymmetricTensor make_symmetric_tensor(int d, int order, std::vector<double> values) {
    if (order < 1) throw std::invalid_argument("tensor order must be at least one");
    if (order > kMaxParticles) throw std::invalid_argument("tensor order capped at 20 slots");
    const std::size_t n = tensor_size(d, order);
    if (values.size() != n) throw std::invalid_argument("tensor value count must equal d^order");
    std::array<int, kMaxParticles> dig{};
    for (std::size_t idx = 0; idx < n; ++idx) {
        const std::size_t canon = detail::canonical_flat(idx, d, order, dig.data());
        // Exact comparison: symmetry must hold bitwise (this also rejects NaN).
        if (!(values[idx] == values[canon]))
            throw std::invalid_argument("tensor is not exactly symmetric under slot permutations");
    }
    return SymmetricTensor{d, order, std::move(values)};
}

// Integrates out the last order-s slots. The tensor stores measure values, so
// each slot is removed by a plain sum over its states; removing one slot at a
// time makes nested marginals agree bitwise with direct ones.
inline SymmetricTensor marginal(const SymmetricTensor& f, int s) {
    if (s < 1 || s > f.order) throw std::invalid_argument("marginal order out of range");
    std::vector<double> cur = f.values;
    const auto d = static_cast<std::size_t>(f.d);
    for (int q = f.order; q > s; --q) {
        const std::size_t out_n = cur.size() / d;
        std::vector<double> out(out_n);
        for (std::size_t J = 0; J < out_n; ++J) {
            double acc = 0.0;
            const std::size_t base = J * d;
            for (std::size_t j = 0; j < d; ++j) acc += cur[base + j];
            out[J] = acc;
        }
        cur.swap(out);
    }
    return SymmetricTensor{f.d, s, std::move(cur)};
}

// Density of f relative to the product of single-slot weights.
inline SymmetricTensor relative_density(const DiscreteModel& model, const SymmetricTensor& f) {
    if (f.d != model.d) throw std::invalid_argument("tensor and model state counts differ");
    std::array<int, kMaxParticles> dig{};
    std::vector<double> out(f.values.size());
    for (std::size_t idx = 0; idx < out.size(); ++idx)
        out[idx] = f.values[idx] / detail::weight_product(model.M, idx, f.d, f.order, dig.data());
    return SymmetricTensor{f.d, f.order, std::move(out)};
}

// Squared norm with the product weights as the measure.
inline double weighted_norm_sq(const DiscreteModel& model, const SymmetricTensor& g) {
    if (g.d != model.d) throw std::invalid_argument("tensor and model state counts differ");
    std::array<int, kMaxParticles> dig{};
    long double acc = 0.0L;
    for (std::size_t idx = 0; idx < g.values.size(); ++idx) {
        const double w = detail::weight_product(model.M, idx, g.d, g.order, dig.data());
        acc += static_cast<long double>(w) * g.values[idx] * g.values[idx];
    }
    return static_cast<double>(acc);
}

inline std::uint64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    if (k > n - k) k = n - k;
    std::uint64_t r = 1;
    for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / i;
    return r;
}

namespace detail {

// Total integral of f (plain sum; the weights live inside the values).
// Accumulated in extended precision so the mean-zero gate stays meaningful
// on tensors near the size cap.
inline long double tensor_total(const std::vector<double>& v) {
    long double s = 0.0L;
    for (double x : v) s += x;
    return s;
}

inline void require_mean_zero(const std::vector<double>& v, long double total) {
    long double abs_sum = 0.0L;
    for (double x : v) abs_sum += std::fabs(x);
    const double scale = std::max(1.0, static_cast<double>(abs_sum));
    if (std::fabs(static_cast<double>(total)) > 1e-10 * scale)
        throw std::invalid_argument("tensor must integrate to zero");
}

}  // namespace detail

// Order-m correlation component of a mean-zero order-N tensor: the
// alternating sum, over nonempty slot subsets of {1..m}, of the density of
// the matching marginal. Computed by removing the weighted slot average from
// the order-m marginal density one slot at a time, which expands to exactly
// that alternating sum (the empty subset, equal to the total integral, is
// subtracted off explicitly). Every slot of the result averages to zero
// against the weights, up to rounding.
inline SymmetricTensor cumulant(const DiscreteModel& model, const SymmetricTensor& fN, int m) {
    if (fN.d != model.d) throw std::invalid_argument("tensor and model state counts differ");
    if (fN.order != model.N) throw std::invalid_argument("cumulant input must have order N");
    if (m < 1 || m > model.N) throw std::invalid_argument("cumulant order out of range");
    const long double total = detail::tensor_total(fN.values);
    detail::require_mean_zero(fN.values, total);

    const auto d = static_cast<std::size_t>(model.d);
    std::array<int, kMaxParticles> dig{};
    std::vector<double> v = marginal(fN, m).values;
    for (std::size_t idx = 0; idx < v.size(); ++idx)
        v[idx] /= detail::weight_product(model.M, idx, model.d, m, dig.data());

    // Remove the weighted average over each slot in turn (broadcast over the
    // other slots). The slot average is accumulated in extended precision so
    // large state counts do not erode the orthogonality property.
    std::size_t stride = v.size() / d;  // last slot varies fastest
    for (int slot = m - 1; slot >= 0; --slot) {
        const std::size_t blocks = v.size() / (d * stride);
        for (std::size_t b = 0; b < blocks; ++b) {
            const std::size_t base = b * d * stride;
            for (std::size_t lo = 0; lo < stride; ++lo) {
                long double acc = 0.0L;
                for (std::size_t j = 0; j < d; ++j)
                    acc += static_cast<long double>(model.M[j]) * v[base + j * stride + lo];
                const double avg = static_cast<double>(acc);
                for (std::size_t j = 0; j < d; ++j) v[base + j * stride + lo] -= avg;
            }
        }
        stride /= d;
    }

    // The slot-average expansion includes the empty subset (the total
    // integral, with sign (-1)^m); the decomposition omits it.
    const double c0 = static_cast<double>(total);
    const double empty_term = (m % 2 == 0) ? c0 : -c0;
    for (double& x : v) x -= empty_term;

    // Copy each entry from its sorted index so the output is exactly
    // symmetric; the per-slot passes above agree across permutations only up
    // to rounding.
    std::vector<double> out(v.size());
    for (std::size_t idx = 0; idx < v.size(); ++idx)
        out[idx] = v[detail::canonical_flat(idx, model.d, m, dig.data())];
    return SymmetricTensor{model.d, m, std::move(out)};
}

struct CumulantReport {
    double reconstruction_err = 0.0;
    double orthogonality_err = 0.0;
    double parseval_err = 0.0;
};

// Measures how well the components g^1..g^N satisfy their three defining
// identities on a mean-zero input:
//   (a) summing g^|sigma| over all nonempty slot subsets sigma of {1..N}
//       rebuilds the density f / (product weights), entry by entry;
//   (b) each slot of each g^m averages to zero against the weights;
//   (c) sum over m of C(N,m) * ||g^m||^2 equals the squared weighted norm of
//       the density.
// The reconstruction check enumerates all 2^N - 1 subsets per entry (cost
// d^N * 2^N * N), deliberately independent of how the components were built.
inline CumulantReport verify_identities(const DiscreteModel& model, const SymmetricTensor& fN) {
    std::vector<SymmetricTensor> g;
    g.reserve(static_cast<std::size_t>(model.N));
    for (int m = 1; m <= model.N; ++m) g.push_back(cumulant(model, fN, m));
    const SymmetricTensor h = relative_density(model, fN);

    CumulantReport report;

    // (a) reconstruction, parallel over blocks of entries; each block only
    // writes its own maximum so the result is independent of worker count.
    {
        const std::size_t n = h.values.size();
        const std::size_t block = 4096;
        const std::size_t blocks = (n + block - 1) / block;
        std::vector<double> block_max(blocks, 0.0);
        const int N = model.N;
        const auto d = static_cast<std::size_t>(model.d);
        parallel_for(blocks, [&](std::size_t b) {
            std::array<int, kMaxParticles> dig{};
            double worst = 0.0;
            const std::size_t end = std::min(n, (b + 1) * block);
            for (std::size_t idx = b * block; idx < end; ++idx) {
                detail::tensor_digits(idx, model.d, N, dig.data());
                double recon = 0.0;
                const std::uint32_t masks = std::uint32_t{1} << N;
                for (std::uint32_t mask = 1; mask < masks; ++mask) {
                    std::size_t sub = 0;
                    int order = 0;
                    for (int bit = 0; bit < N; ++bit) {
                        if (mask & (std::uint32_t{1} << bit)) {
                            sub = sub * d + static_cast<std::size_t>(dig[bit]);
                            ++order;
                        }
                    }
                    recon += g[static_cast<std::size_t>(order - 1)].values[sub];
                }
                worst = std::max(worst, std::fabs(h.values[idx] - recon));
            }
            block_max[b] = worst;
        });
        for (double w : block_max) report.reconstruction_err = std::max(report.reconstruction_err, w);
    }

    // (b) slot-wise weighted averages of each component.
    for (int m = 1; m <= model.N; ++m) {
        const auto d = static_cast<std::size_t>(model.d);
        const std::vector<double>& v = g[static_cast<std::size_t>(m - 1)].values;
        std::size_t stride = v.size() / d;
        for (int slot = m - 1; slot >= 0; --slot) {
            const std::size_t blocks = v.size() / (d * stride);
            for (std::size_t b = 0; b < blocks; ++b) {
                const std::size_t base = b * d * stride;
                for (std::size_t lo = 0; lo < stride; ++lo) {
                    long double acc = 0.0L;
                    for (std::size_t j = 0; j < d; ++j)
                        acc += static_cast<long double>(model.M[j]) * v[base + j * stride + lo];
                    report.orthogonality_err =
                        std::max(report.orthogonality_err, std::fabs(static_cast<double>(acc)));
                }
            }
            stride /= d;
        }
    }

    // (c) norm split across components with binomial multiplicities.
    long double lhs = 0.0L;
    for (int m = 1; m <= model.N; ++m)
        lhs += static_cast<long double>(binomial(model.N, m)) *
               weighted_norm_sq(model, g[static_cast<std::size_t>(m - 1)]);
    const long double rhs = weighted_norm_sq(model, h);
    report.parseval_err = std::fabs(static_cast<double>(lhs - rhs));
    return report;
}

// Draws a symmetric mean-zero tensor whose density is uniform on [-1, 1] per
// index multiset, scaled by the product weights: the well-conditioned input
// family for exercising the identities.
inline SymmetricTensor sample_mean_zero_tensor(const DiscreteModel& model, Philox& rng) {
    const std::size_t n = tensor_size(model.d, model.N);
    std::array<int, kMaxParticles> dig{};
    std::vector<double> raw(n);
    for (std::size_t idx = 0; idx < n; ++idx) {
        const std::size_t canon = detail::canonical_flat(idx, model.d, model.N, dig.data());
        // Canonical (sorted) indices come first in flat order, so each class
        // draws exactly once and the draw order is independent of d and N.
        raw[idx] = (canon == idx) ? 2.0 * rng.uniform() - 1.0 : raw[canon];
    }
    std::vector<double> values(n);
    for (std::size_t idx = 0; idx < n; ++idx)
        values[idx] = detail::weight_product(model.M, idx, model.d, model.N, dig.data()) * raw[idx];
    const double center = static_cast<double>(detail::tensor_total(values));
    for (std::size_t idx = 0; idx < n; ++idx)
        values[idx] -= center * detail::weight_product(model.M, idx, model.d, model.N, dig.data());
    return make_symmetric_tensor(model.d, model.N, std::move(values));
}

}  // namespace ktlab
