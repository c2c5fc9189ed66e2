// Deterministic bound evaluation, classification metrics and layer-level
// quality measurement.
#pragma once

#include "sparsegate/factorization.hpp"
#include "sparsegate/ffn_exec.hpp"
#include "sparsegate/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace sparsegate {

struct BoundChain {
    double lhs = 0.0;  // true gating error ‖ReLU(Wx) masked out‖₂
    double mid = 0.0;  // ‖(ΔWx − b)₊‖₂
    double rhs = 0.0;  // ‖ΔWx − b‖₂
};

/// Evaluates the residual-based chain lhs ≤ mid ≤ rhs for one input, with
/// ΔW = W − A·B derived from the predictor.
inline BoundChain shifted_residual_bound(const Mat& w, const Predictor& pred, const Vec& x) {
    if (pred.A.rows() != w.rows() || pred.B.cols() != w.cols() || x.size() != w.cols()) {
        throw DataError("residual bound: shapes disagree");
    }
    const Mask mask = predict_mask(pred, x);
    const Vec gate_pre = w * x;

    BoundChain chain;
    double err2 = 0.0;
    for (Index i = 0; i < w.rows(); ++i) {
        if (!mask.active[static_cast<std::size_t>(i)]) {
            const double a = relu(gate_pre(i));
            err2 += a * a;
        }
    }
    chain.lhs = std::sqrt(err2);

    const Vec v = (w - pred.A * pred.B) * x - pred.bias;
    chain.mid = v.cwiseMax(0.0).norm();
    chain.rhs = v.norm();
    return chain;
}

enum class BoundBranch {
    UniformBiasNonneg,
    UniformBiasNeg,
    GeneralBiasNonneg,
    GeneralBiasNeg,
    MixedUnsupported,
};

inline std::string to_string(BoundBranch b) {
    switch (b) {
        case BoundBranch::UniformBiasNonneg: return "uniform_bias_nonneg";
        case BoundBranch::UniformBiasNeg: return "uniform_bias_neg";
        case BoundBranch::GeneralBiasNonneg: return "general_bias_nonneg";
        case BoundBranch::GeneralBiasNeg: return "general_bias_neg";
        default: return "mixed_unsupported";
    }
}

struct BoundReport {
    BoundBranch branch = BoundBranch::MixedUnsupported;
    double R = 0.0;
    double bound_value = std::numeric_limits<double>::quiet_NaN();
    double observed = std::numeric_limits<double>::quiet_NaN();
    std::optional<double> tight_witness_gap;
};

namespace detail {

inline BoundBranch classify_bias(const Vec& b) {
    const bool uniform = (b.array() == b(0)).all();
    if ((b.array() >= 0.0).all()) {
        return uniform ? BoundBranch::UniformBiasNonneg : BoundBranch::GeneralBiasNonneg;
    }
    if ((b.array() < 0.0).all()) {
        return uniform ? BoundBranch::UniformBiasNeg : BoundBranch::GeneralBiasNeg;
    }
    return BoundBranch::MixedUnsupported;
}

inline double pos_part_norm(const Vec& v) { return v.cwiseMax(0.0).norm(); }

}  // namespace detail

/// Worst case of ‖(e − b)₊‖₂ over ‖e‖₂ ≤ R, per bias regime, together with
/// the residual vector e attaining it. `observed` is the witness value and
/// `tight_witness_gap` = bound − observed. Mixed-sign biases are outside the
/// supported regimes and yield no bound.
inline BoundReport worst_case_bound(const Vec& b, double R) {
    if (R < 0.0) {
        throw DataError("worst case bound: R must be nonnegative");
    }
    if (b.size() < 1) {
        throw DataError("worst case bound: empty bias");
    }
    const Index m = b.size();

    BoundReport report;
    report.R = R;
    report.branch = detail::classify_bias(b);

    Vec witness = Vec::Zero(m);
    switch (report.branch) {
        case BoundBranch::UniformBiasNonneg: {
            const double beta = b(0);
            report.bound_value = relu(R - beta);
            if (report.bound_value > 0.0) {
                witness(0) = R;
            }
            break;
        }
        case BoundBranch::UniformBiasNeg: {
            const double beta = b(0);
            report.bound_value = R - beta * std::sqrt(static_cast<double>(m));
            witness.setConstant(R / std::sqrt(static_cast<double>(m)));
            break;
        }
        case BoundBranch::GeneralBiasNonneg: {
            Index best = 0;
            b.minCoeff(&best);
            report.bound_value = relu(R - b(best));
            if (report.bound_value > 0.0) {
                witness(best) = R;
            }
            break;
        }
        case BoundBranch::GeneralBiasNeg: {
            report.bound_value = R + b.norm();
            witness = (R / b.norm()) * (-b);
            break;
        }
        case BoundBranch::MixedUnsupported:
            return report;
    }

    report.observed = detail::pos_part_norm(witness - b);
    report.tight_witness_gap = report.bound_value - report.observed;
    return report;
}

/// Per-sample check of the truncated-SVD gating-error bound: observed
/// relative error E_b(x) against the branch bound built from the residual
/// spectral norm. Throws PropertyViolation on any observed violation;
/// mixed-sign biases produce unasserted rows.
inline std::vector<BoundReport> svd_bound_check(const FfnWeights& w, const Predictor& pred,
                                                const ActivationBatch& samples) {
    validate(w);
    validate(pred);
    validate(samples);
    if (samples.hidden_size() != w.hidden_size()) {
        throw DataError("bound check: sample hidden size does not match weights");
    }
    const double sigma = residual_spectral_norm(w.gate, pred);
    const BoundBranch branch = detail::classify_bias(pred.bias);

    std::vector<BoundReport> reports;
    reports.reserve(static_cast<std::size_t>(samples.tokens()));
    for (Index t = 0; t < samples.tokens(); ++t) {
        const Vec x = samples.x_cols.col(t);
        const double x_norm = x.norm();
        if (x_norm == 0.0) {
            throw DataError("bound check: zero sample has no relative error");
        }

        BoundReport report;
        report.branch = branch;
        report.R = sigma * x_norm;
        report.observed = gating_error(w, pred, x).relative;
        if (branch == BoundBranch::MixedUnsupported) {
            reports.push_back(report);
            continue;
        }
        if (branch == BoundBranch::GeneralBiasNonneg || branch == BoundBranch::UniformBiasNonneg) {
            report.bound_value = relu(sigma - pred.bias.minCoeff() / x_norm);
        } else {
            report.bound_value = sigma + pred.bias.norm() / x_norm;
        }
        if (report.observed > report.bound_value + 1e-9 * std::max(1.0, report.bound_value)) {
            throw PropertyViolation(
                "truncated-SVD bound violated: observed " + std::to_string(report.observed) +
                " > bound " + std::to_string(report.bound_value) + " on sample " +
                std::to_string(t));
        }
        reports.push_back(report);
    }
    return reports;
}

/// Probability that a uniformly random positive outranks a uniformly random
/// negative, ties counted 1/2 (the rank-sum statistic).
inline double roc_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size()) {
        throw DataError("roc auc: score and label counts differ");
    }
    const std::size_t n = scores.size();
    std::size_t positives = 0;
    for (std::uint8_t l : labels) {
        positives += l ? 1 : 0;
    }
    const std::size_t negatives = n - positives;
    if (positives == 0 || negatives == 0) {
        throw DataError("roc auc: need at least one positive and one negative label");
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Midranks: equal scores share the average of their 1-based rank range,
    // which is always an exact half-integer.
    double positive_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]]) {
                positive_rank_sum += midrank;
            }
        }
        i = j;
    }

    const double p = static_cast<double>(positives);
    const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * static_cast<double>(negatives));
}

struct MetricRow {
    Index layer = 0;
    double recall = 0.0;
    double predicted_sparsity = 0.0;
    double realized_sparsity = 0.0;
    double roc_auc = 0.0;
    double mean_rel_output_error = 0.0;
};

/// Aggregated predictor quality on an evaluation batch. "Truly active" means
/// a strictly positive gate pre-activation, for both activation variants.
/// Recall averages over tokens that have at least one truly active neuron;
/// the AUC pools (predictor value, label) pairs over all neurons and tokens
/// and is vacuously 1 when only one class occurs.
inline MetricRow layer_metrics(const FfnWeights& w, const Predictor& pred,
                               const ActivationBatch& eval_batch, Index layer = 0) {
    validate(w);
    validate(pred);
    validate(eval_batch);
    if (eval_batch.hidden_size() != w.hidden_size() ||
        pred.inter_size() != w.inter_size() || pred.hidden_size() != w.hidden_size()) {
        throw DataError("layer metrics: shapes disagree");
    }

    const Index D = w.inter_size();
    const Index T = eval_batch.tokens();

    MetricRow row;
    row.layer = layer;

    std::vector<double> pooled_scores;
    std::vector<std::uint8_t> pooled_labels;
    pooled_scores.reserve(static_cast<std::size_t>(D * T));
    pooled_labels.reserve(static_cast<std::size_t>(D * T));

    double recall_sum = 0.0;
    Index recall_tokens = 0;
    double err_sum = 0.0;
    Index err_tokens = 0;

    for (Index t = 0; t < T; ++t) {
        const Vec x = eval_batch.x_cols.col(t);
        const Vec gate_pre = w.gate * x;
        const Vec pred_pre = pred.A * (pred.B * x) + pred.bias;
        const Mask mask = predict_mask(pred, x);

        Index truly_active = 0;
        Index hit = 0;
        for (Index i = 0; i < D; ++i) {
            const bool active = gate_pre(i) > 0.0;
            pooled_scores.push_back(pred_pre(i));
            pooled_labels.push_back(active ? 1 : 0);
            if (active) {
                ++truly_active;
                hit += mask.active[static_cast<std::size_t>(i)] ? 1 : 0;
            }
        }
        if (truly_active > 0) {
            recall_sum += static_cast<double>(hit) / static_cast<double>(truly_active);
            ++recall_tokens;
        }

        const FfnResult dense = dense_ffn(w, x);
        const FfnResult sparse = sparse_ffn_sequential(w, pred, x);
        row.predicted_sparsity += sparse.stats.predicted_sparsity;
        row.realized_sparsity += sparse.stats.realized_sparsity;
        const double dense_norm = dense.y.norm();
        if (dense_norm > 0.0) {
            err_sum += (dense.y - sparse.y).norm() / dense_norm;
            ++err_tokens;
        }
    }

    row.recall = recall_tokens > 0 ? recall_sum / static_cast<double>(recall_tokens) : 1.0;
    row.predicted_sparsity /= static_cast<double>(T);
    row.realized_sparsity /= static_cast<double>(T);
    row.mean_rel_output_error = err_tokens > 0 ? err_sum / static_cast<double>(err_tokens) : 0.0;

    bool has_pos = false;
    bool has_neg = false;
    for (std::uint8_t l : pooled_labels) {
        (l ? has_pos : has_neg) = true;
    }
    row.roc_auc = (has_pos && has_neg) ? roc_auc(pooled_scores, pooled_labels) : 1.0;
    return row;
}

}  // namespace sparsegate
