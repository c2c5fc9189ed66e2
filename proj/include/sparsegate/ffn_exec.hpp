// Reference dense and sparse gated-FFN executors with deterministic
// reductions and exact multiply accounting.
//
// Determinism contract: every reduction runs in ascending neuron index with
// blocked pairwise summation (see common.hpp), so repeated calls are
// bit-identical. Both sparse pipelines reduce the down projection over the
// same index list (the predicted-active set); a neuron that is masked out or
// fails gate revalidation contributes an exact +0.0 slot. Gated activations
// canonicalize to +0.0 whenever the gate is non-positive. Together these make
// the parallel and sequential outputs bit-identical for the same mask, and
// the all-active sparse output bit-identical to the dense one.
//
// Multiply counts follow the analytic model and exclude element-wise
// products and activation evaluations: dense 3dD; parallel r(d+D) + 3d·a;
// sequential r(d+D) + d·p + 2d·v with p predicted-active and v revalidated.
#pragma once

#include "sparsegate/types.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace sparsegate {

/// Binary activity mask over the D intermediate neurons.
struct Mask {
    std::vector<std::uint8_t> active;
    Index predicted_active_count = 0;
};

enum class Pipeline { Dense, Parallel, Sequential };

inline std::string to_string(Pipeline p) {
    switch (p) {
        case Pipeline::Dense: return "dense";
        case Pipeline::Parallel: return "parallel";
        default: return "sequential";
    }
}

struct ExecStats {
    double predicted_sparsity = 0.0;
    double realized_sparsity = 0.0;
    std::int64_t multiplies = 0;
    Pipeline pipeline = Pipeline::Dense;
};

struct FfnResult {
    Vec y;
    ExecStats stats;
};

namespace detail {

inline void check_input(const FfnWeights& w, const Vec& x) {
    validate(w);
    if (x.size() != w.hidden_size()) {
        throw DataError("ffn input length " + std::to_string(x.size()) +
                        " does not match hidden size " + std::to_string(w.hidden_size()));
    }
    if (!all_finite(x)) {
        throw DataError("ffn input has non-finite entries");
    }
}

/// Gated activation with canonical +0.0 for suppressed neurons.
inline double gated_value(double gate_pre, double up_pre, Activation act) {
    if (gate_pre <= 0.0) {
        return 0.0;
    }
    if (act == Activation::DReLU && up_pre <= 0.0) {
        return 0.0;
    }
    return gate_pre * up_pre;
}

/// y_j = sum over the index list of z_k * down(j, idx_k), ascending, blocked
/// pairwise; exact-zero activations occupy +0.0 slots without a multiply.
inline void down_project(const Mat& down, const std::vector<Index>& idx,
                         const std::vector<double>& z, Vec& y) {
    const Index d = down.rows();
    const Index D = down.cols();
    const std::size_t n = idx.size();
    std::vector<double> terms(n);
    y.resize(d);
    for (Index j = 0; j < d; ++j) {
        const double* row = down.data() + j * D;
        for (std::size_t k = 0; k < n; ++k) {
            terms[k] = z[k] == 0.0 ? 0.0 : z[k] * row[idx[k]];
        }
        y(j) = det_sum(terms.data(), n);
    }
}

inline double row_dot(const Mat& m, Index row, const Vec& x) {
    return det_dot(m.data() + row * m.cols(), x.data(), static_cast<std::size_t>(m.cols()));
}

}  // namespace detail

/// Exact gated FFN: y = down · (act(gate·x) ⊙ up_factor(up·x)).
inline FfnResult dense_ffn(const FfnWeights& w, const Vec& x) {
    detail::check_input(w, x);
    const Index D = w.inter_size();
    const Index d = w.hidden_size();

    std::vector<Index> idx(static_cast<std::size_t>(D));
    std::vector<double> z(static_cast<std::size_t>(D));
    for (Index i = 0; i < D; ++i) {
        idx[static_cast<std::size_t>(i)] = i;
        const double g = detail::row_dot(w.gate, i, x);
        const double u = detail::row_dot(w.up, i, x);
        z[static_cast<std::size_t>(i)] = detail::gated_value(g, u, w.activation);
    }

    FfnResult result;
    detail::down_project(w.down, idx, z, result.y);
    result.stats.pipeline = Pipeline::Dense;
    result.stats.multiplies = std::int64_t{3} * d * D;
    return result;
}

/// Mask from the affine predictor: active_i ⇔ (A (B x))_i + b_i > 0, strict.
inline Mask predict_mask(const Predictor& pred, const Vec& x) {
    validate(pred);
    if (x.size() != pred.hidden_size()) {
        throw DataError("predictor input length does not match hidden size");
    }
    const Index r = pred.rank;
    const Index D = pred.inter_size();

    Vec t(r);
    for (Index j = 0; j < r; ++j) {
        t(j) = detail::row_dot(pred.B, j, x);
    }
    Mask mask;
    mask.active.resize(static_cast<std::size_t>(D));
    for (Index i = 0; i < D; ++i) {
        const double pre = detail::row_dot(pred.A, i, t) + pred.bias(i);
        const bool on = pre > 0.0;
        mask.active[static_cast<std::size_t>(i)] = on ? 1 : 0;
        mask.predicted_active_count += on ? 1 : 0;
    }
    return mask;
}

/// Gate and up projections computed together over the predicted-active set.
inline FfnResult sparse_ffn_parallel(const FfnWeights& w, const Predictor& pred, const Vec& x) {
    detail::check_input(w, x);
    const Mask mask = predict_mask(pred, x);
    const Index D = w.inter_size();
    const Index d = w.hidden_size();

    std::vector<Index> idx;
    idx.reserve(static_cast<std::size_t>(mask.predicted_active_count));
    for (Index i = 0; i < D; ++i) {
        if (mask.active[static_cast<std::size_t>(i)]) {
            idx.push_back(i);
        }
    }
    std::vector<double> z(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const double g = detail::row_dot(w.gate, idx[k], x);
        const double u = detail::row_dot(w.up, idx[k], x);
        z[k] = detail::gated_value(g, u, w.activation);
    }

    FfnResult result;
    detail::down_project(w.down, idx, z, result.y);
    result.stats.pipeline = Pipeline::Parallel;
    const auto active = static_cast<std::int64_t>(idx.size());
    result.stats.multiplies =
        static_cast<std::int64_t>(pred.rank) * (d + D) + std::int64_t{3} * d * active;
    result.stats.predicted_sparsity = 1.0 - static_cast<double>(active) / static_cast<double>(D);
    result.stats.realized_sparsity = result.stats.predicted_sparsity;
    return result;
}

/// Gate projection first; neurons whose gate pre-activation is non-positive
/// are dropped before the up and down stages (gate-based revalidation for
/// both activation variants).
inline FfnResult sparse_ffn_sequential(const FfnWeights& w, const Predictor& pred, const Vec& x) {
    detail::check_input(w, x);
    const Mask mask = predict_mask(pred, x);
    const Index D = w.inter_size();
    const Index d = w.hidden_size();

    std::vector<Index> idx;
    idx.reserve(static_cast<std::size_t>(mask.predicted_active_count));
    for (Index i = 0; i < D; ++i) {
        if (mask.active[static_cast<std::size_t>(i)]) {
            idx.push_back(i);
        }
    }
    std::vector<double> z(idx.size(), 0.0);
    std::int64_t revalidated = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const double g = detail::row_dot(w.gate, idx[k], x);
        if (g > 0.0) {
            ++revalidated;
            const double u = detail::row_dot(w.up, idx[k], x);
            z[k] = detail::gated_value(g, u, w.activation);
        }
    }

    FfnResult result;
    detail::down_project(w.down, idx, z, result.y);
    result.stats.pipeline = Pipeline::Sequential;
    const auto predicted = static_cast<std::int64_t>(idx.size());
    result.stats.multiplies = static_cast<std::int64_t>(pred.rank) * (d + D) + d * predicted +
                              std::int64_t{2} * d * revalidated;
    result.stats.predicted_sparsity =
        1.0 - static_cast<double>(predicted) / static_cast<double>(D);
    result.stats.realized_sparsity =
        1.0 - static_cast<double>(revalidated) / static_cast<double>(D);
    return result;
}

struct OpCounts {
    std::int64_t dense = 0;
    double sparse = 0.0;
    double ratio = 0.0;
};

/// Analytic multiply-count model: dense = 3dD,
/// sparse = r(d+D) + d(1−s)D + 2d(1−s')D for predicted sparsity s and
/// realized sparsity s'.
inline OpCounts op_count_model(std::int64_t d, std::int64_t D, std::int64_t r, double s,
                               double s_prime) {
    if (d < 1 || D < 1 || r < 0) {
        throw DataError("op count model: dimensions must be positive and rank nonnegative");
    }
    if (!(0.0 <= s && s <= s_prime && s_prime <= 1.0)) {
        throw DataError("op count model: need 0 <= s <= s' <= 1");
    }
    OpCounts counts;
    counts.dense = 3 * d * D;
    counts.sparse = static_cast<double>(r) * static_cast<double>(d + D) +
                    static_cast<double>(d) * (1.0 - s) * static_cast<double>(D) +
                    2.0 * static_cast<double>(d) * (1.0 - s_prime) * static_cast<double>(D);
    counts.ratio = static_cast<double>(counts.dense) / counts.sparse;
    return counts;
}

struct GatingError {
    double error_norm = 0.0;  // ‖ReLU(gate·x) masked out by the predictor‖₂
    double relative = 0.0;    // error_norm / ‖x‖₂
};

/// Exact dropped-mass formula over the gate projection:
///   error² = Σ_i ReLU(gate_i·x)² · 1[(A B x + b)_i ≤ 0],
/// evaluated over all D slots in ascending order, which makes the result
/// monotone in the bias. The closed form is cross-checked in place against
/// the direct dense-vs-masked difference.
inline GatingError gating_error(const FfnWeights& w, const Predictor& pred, const Vec& x) {
    detail::check_input(w, x);
    const Mask mask = predict_mask(pred, x);
    const Index D = w.inter_size();

    std::vector<double> formula_terms(static_cast<std::size_t>(D));
    std::vector<double> direct_terms(static_cast<std::size_t>(D));
    for (Index i = 0; i < D; ++i) {
        const double a = relu(detail::row_dot(w.gate, i, x));
        const bool on = mask.active[static_cast<std::size_t>(i)] != 0;
        formula_terms[static_cast<std::size_t>(i)] = on ? 0.0 : a * a;
        const double diff = a - (on ? a : 0.0);
        direct_terms[static_cast<std::size_t>(i)] = diff * diff;
    }
    const double formula = std::sqrt(det_sum(formula_terms.data(), formula_terms.size()));
    const double direct = std::sqrt(det_sum(direct_terms.data(), direct_terms.size()));
    if (std::abs(formula - direct) > 1e-12 * std::max(1.0, std::abs(direct))) {
        throw PropertyViolation("gating error: closed form disagrees with direct difference");
    }

    const double x_norm = std::sqrt(det_dot(x.data(), x.data(), static_cast<std::size_t>(x.size())));
    if (x_norm == 0.0) {
        throw DataError("gating error: zero input has no relative form");
    }
    GatingError err;
    err.error_norm = formula;
    err.relative = formula / x_norm;
    return err;
}

}  // namespace sparsegate
