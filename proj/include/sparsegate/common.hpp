// Shared aliases, error types and deterministic reduction primitives.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sparsegate {

// All tensors are dense row-major doubles; vectors are plain column vectors.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Container / manifest I/O failures: missing files, malformed JSON, size mismatches.
struct IoError : Error {
    using Error::Error;
};

/// Shape or value validation failures on in-memory data.
struct DataError : Error {
    using Error::Error;
};

/// A mathematical invariant that must hold for correct inputs was observed broken.
struct PropertyViolation : Error {
    using Error::Error;
};

static_assert(std::endian::native == std::endian::little,
              "on-disk tensor format is little-endian; big-endian hosts are unsupported");

// ---------------------------------------------------------------------------
// Deterministic reductions.
//
// Sums are evaluated in ascending index order as a sequence of fixed-size
// blocks; each block is reduced by a balanced binary tree and block results
// accumulate left to right. The shape of the reduction depends only on the
// term count, so repeated calls on identical inputs are bit-identical, and
// the per-node rounding is monotone in every term.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kReduceBlock = 64;

namespace detail {

inline double tree_sum(const double* v, std::size_t n) {
    if (n == 0) {
        return 0.0;
    }
    if (n == 1) {
        return v[0];
    }
    const std::size_t half = n / 2;
    return tree_sum(v, half) + tree_sum(v + half, n - half);
}

}  // namespace detail

/// Blocked pairwise sum of v[0..n).
inline double det_sum(const double* v, std::size_t n) {
    double total = 0.0;
    for (std::size_t base = 0; base < n; base += kReduceBlock) {
        total += detail::tree_sum(v + base, std::min(kReduceBlock, n - base));
    }
    return total;
}

/// Blocked pairwise dot product of a[0..n) and b[0..n).
inline double det_dot(const double* a, const double* b, std::size_t n) {
    double buf[kReduceBlock];
    double total = 0.0;
    for (std::size_t base = 0; base < n; base += kReduceBlock) {
        const std::size_t m = std::min(kReduceBlock, n - base);
        for (std::size_t j = 0; j < m; ++j) {
            buf[j] = a[base + j] * b[base + j];
        }
        total += detail::tree_sum(buf, m);
    }
    return total;
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }
inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline double relu(double v) { return v > 0.0 ? v : 0.0; }

}  // namespace sparsegate
