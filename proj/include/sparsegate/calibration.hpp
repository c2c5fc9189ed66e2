// Damage-weighted greedy threshold calibration, the exact DP knapsack oracle
// used to certify it, and the Kendall-tau ordering diagnostic.
#pragma once

#include "sparsegate/types.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>
#include <tuple>
#include <vector>

namespace sparsegate {

/// Per-neuron, per-token damage weight: the squared norm of the rank-one
/// output contribution removed when neuron i is dropped on token t,
///   w_i(t) = |act(gate_i·x) · up_factor_i(t)|² · ‖down_col_i‖²,
/// where the up factor is up_i·x for ReGLU and ReLU(up_i·x) for dReLU.
inline Mat damage_weights(const FfnWeights& w, const ActivationBatch& data) {
    validate(w);
    validate(data);
    if (data.hidden_size() != w.hidden_size()) {
        throw DataError("damage weights: batch hidden size " +
                        std::to_string(data.hidden_size()) + " does not match weights " +
                        std::to_string(w.hidden_size()));
    }
    const Mat gate_pre = w.gate * data.x_cols;
    const Mat up_pre = w.up * data.x_cols;
    const Mat inner =
        w.activation == Activation::DReLU
            ? gate_pre.cwiseMax(0.0).cwiseProduct(up_pre.cwiseMax(0.0)).eval()
            : gate_pre.cwiseMax(0.0).cwiseProduct(up_pre).eval();
    const Eigen::ArrayXd down_norm2 = w.down.colwise().squaredNorm().transpose();
    return (inner.array().square().colwise() * down_norm2).matrix();
}

/// Predictor outputs without bias: s_i(t) = (A (B x_t))_i.
inline Mat proxy_scores(const Predictor& pred, const ActivationBatch& data) {
    validate(pred);
    validate(data);
    if (data.hidden_size() != pred.hidden_size()) {
        throw DataError("proxy scores: batch hidden size does not match predictor");
    }
    return pred.A * (pred.B * data.x_cols);
}

/// Per-neuron prefix structure: scores sorted nondecreasing (ties broken by
/// original sample index), damage weights carried along, and cumulative
/// costs C_i(0..T) with C_i(0) = 0.
struct CalibInstance {
    Mat sorted_scores;   // D x T
    Mat sorted_weights;  // D x T
    Mat cum_costs;       // D x (T+1)
    int eta = 8;

    Index neuron_count() const { return sorted_scores.rows(); }
    Index sample_count() const { return sorted_scores.cols(); }
};

inline CalibInstance build_instance(const Mat& scores, const Mat& weights, int eta) {
    if (scores.rows() != weights.rows() || scores.cols() != weights.cols()) {
        throw DataError("calibration instance: score and weight shapes differ");
    }
    if (scores.rows() < 1 || scores.cols() < 1) {
        throw DataError("calibration instance: need at least one neuron and one sample");
    }
    if (eta < 1) {
        throw DataError("calibration instance: eta must be >= 1");
    }
    if ((weights.array() < 0.0).any()) {
        throw DataError("calibration instance: negative damage weight");
    }

    const Index D = scores.rows();
    const Index T = scores.cols();
    CalibInstance inst;
    inst.eta = eta;
    inst.sorted_scores.resize(D, T);
    inst.sorted_weights.resize(D, T);
    inst.cum_costs.resize(D, T + 1);

    std::vector<Index> order(static_cast<std::size_t>(T));
    for (Index i = 0; i < D; ++i) {
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](Index a, Index b) { return scores(i, a) < scores(i, b); });
        inst.cum_costs(i, 0) = 0.0;
        for (Index k = 0; k < T; ++k) {
            inst.sorted_scores(i, k) = scores(i, order[static_cast<std::size_t>(k)]);
            inst.sorted_weights(i, k) = weights(i, order[static_cast<std::size_t>(k)]);
            inst.cum_costs(i, k + 1) = inst.cum_costs(i, k) + inst.sorted_weights(i, k);
        }
    }
    return inst;
}

/// Calibration output. `drop_counts` are the greedy pointers k_i;
/// `achieved_sparsity` counts realized drops under the s ≤ τ predicate
/// (ties drop together, so it can exceed the pointer fraction).
struct CalibResult {
    Vec bias;
    std::vector<Index> drop_counts;
    double achieved_sparsity = 0.0;
    double total_damage = 0.0;
};

namespace detail {

inline Index realized_drops(const CalibInstance& inst, Index neuron, double tau) {
    const double* row = inst.sorted_scores.data() + neuron * inst.sample_count();
    return std::upper_bound(row, row + inst.sample_count(), tau) - row;
}

inline double threshold_at(const CalibInstance& inst, Index neuron, Index k) {
    return k == 0 ? -std::numeric_limits<double>::infinity()
                  : inst.sorted_scores(neuron, k - 1);
}

}  // namespace detail

/// Greedy budgeted calibration. Zero-damage prefix samples are dropped for
/// free up front; afterwards each step advances the pointer of the neuron
/// with the smallest cost increment over the next eta samples (clamped at T,
/// exhausted neurons count as infinite), lowest index winning ties. The loop
/// exits the first time the realized drop fraction reaches the target. The
/// returned bias is b = -tau.
inline CalibResult greedy_calibrate(const CalibInstance& inst, double target_sparsity) {
    if (!(target_sparsity > 0.0 && target_sparsity <= 1.0)) {
        throw DataError("target sparsity must lie in (0, 1]");
    }
    const Index D = inst.neuron_count();
    const Index T = inst.sample_count();
    const Index eta = inst.eta;
    const double total = static_cast<double>(D) * static_cast<double>(T);

    std::vector<Index> k(static_cast<std::size_t>(D), 0);
    std::vector<Index> realized(static_cast<std::size_t>(D), 0);
    Index realized_total = 0;

    for (Index i = 0; i < D; ++i) {
        Index free = 0;
        while (free < T && inst.sorted_weights(i, free) == 0.0) {
            ++free;
        }
        k[static_cast<std::size_t>(i)] = free;
        realized[static_cast<std::size_t>(i)] =
            detail::realized_drops(inst, i, detail::threshold_at(inst, i, free));
        realized_total += realized[static_cast<std::size_t>(i)];
    }

    const auto increment = [&](Index i) {
        const Index cur = k[static_cast<std::size_t>(i)];
        const Index next = std::min(cur + eta, T);
        return inst.cum_costs(i, next) - inst.cum_costs(i, cur);
    };

    // Lazy min-heap of (increment, neuron, pointer snapshot); stale entries
    // are discarded on pop. Ordering by (increment, neuron) makes the lowest
    // index win ties.
    using HeapEntry = std::tuple<double, Index, Index>;
    std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<>> heap;
    for (Index i = 0; i < D; ++i) {
        if (k[static_cast<std::size_t>(i)] < T) {
            heap.emplace(increment(i), i, k[static_cast<std::size_t>(i)]);
        }
    }

    while (static_cast<double>(realized_total) / total < target_sparsity) {
        Index chosen = -1;
        while (!heap.empty()) {
            const auto [inc, i, snapshot] = heap.top();
            if (snapshot != k[static_cast<std::size_t>(i)]) {
                heap.pop();
                continue;
            }
            chosen = i;
            heap.pop();
            break;
        }
        if (chosen < 0) {
            throw PropertyViolation("greedy calibration ran out of samples before the target; "
                                    "this state should be unreachable");
        }
        auto& ptr = k[static_cast<std::size_t>(chosen)];
        ptr = std::min(ptr + eta, T);
        const Index new_realized =
            detail::realized_drops(inst, chosen, detail::threshold_at(inst, chosen, ptr));
        realized_total += new_realized - realized[static_cast<std::size_t>(chosen)];
        realized[static_cast<std::size_t>(chosen)] = new_realized;
        if (ptr < T) {
            heap.emplace(increment(chosen), chosen, ptr);
        }
    }

    CalibResult result;
    result.bias.resize(D);
    result.drop_counts = k;
    for (Index i = 0; i < D; ++i) {
        result.bias(i) = -detail::threshold_at(inst, i, k[static_cast<std::size_t>(i)]);
        result.total_damage += inst.cum_costs(i, k[static_cast<std::size_t>(i)]);
    }
    result.achieved_sparsity = static_cast<double>(realized_total) / total;
    return result;
}

struct KnapsackSolution {
    double damage = 0.0;
    std::vector<Index> drops;
};

/// Exact minimum of Σ_i C_i(k_i) subject to Σ k_i = K, 0 ≤ k_i ≤ T, by
/// dynamic programming over neurons × budget. O(D·T·K) time; intended for
/// small instances.
inline KnapsackSolution dp_knapsack_oracle(const CalibInstance& inst, Index budget) {
    const Index D = inst.neuron_count();
    const Index T = inst.sample_count();
    if (budget < 0 || budget > D * T) {
        throw DataError("knapsack budget " + std::to_string(budget) + " out of [0, " +
                        std::to_string(D * T) + "]");
    }

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> best(static_cast<std::size_t>(budget) + 1, kInf);
    best[0] = 0.0;
    std::vector<std::vector<Index>> choice(
        static_cast<std::size_t>(D),
        std::vector<Index>(static_cast<std::size_t>(budget) + 1, -1));

    std::vector<double> next(static_cast<std::size_t>(budget) + 1);
    for (Index i = 0; i < D; ++i) {
        std::fill(next.begin(), next.end(), kInf);
        for (Index used = 0; used <= budget; ++used) {
            for (Index c = 0; c <= std::min(T, used); ++c) {
                const double prev = best[static_cast<std::size_t>(used - c)];
                if (prev == kInf) {
                    continue;
                }
                const double candidate = prev + inst.cum_costs(i, c);
                if (candidate < next[static_cast<std::size_t>(used)]) {
                    next[static_cast<std::size_t>(used)] = candidate;
                    choice[static_cast<std::size_t>(i)][static_cast<std::size_t>(used)] = c;
                }
            }
        }
        best.swap(next);
    }

    KnapsackSolution solution;
    solution.damage = best[static_cast<std::size_t>(budget)];
    solution.drops.assign(static_cast<std::size_t>(D), 0);
    Index used = budget;
    for (Index i = D - 1; i >= 0; --i) {
        const Index c = choice[static_cast<std::size_t>(i)][static_cast<std::size_t>(used)];
        solution.drops[static_cast<std::size_t>(i)] = c;
        used -= c;
    }
    return solution;
}

/// Normalized Kendall tau between eta-group damage sums and their positions,
/// per neuron: τ_i = 1 − K_d / (M(M−1)) with M = ⌊T/η⌋ groups and K_d the
/// number of strictly discordant pairs. 1.0 means the sorted-by-score damage
/// is (weakly) increasing across groups.
inline Vec kendall_tau_diagnostic(const CalibInstance& inst) {
    const Index T = inst.sample_count();
    const Index eta = inst.eta;
    const Index groups = T / eta;
    if (groups < 2) {
        throw DataError("kendall diagnostic needs at least two eta-groups, got " +
                        std::to_string(groups));
    }

    const Index D = inst.neuron_count();
    Vec tau(D);
    std::vector<double> sums(static_cast<std::size_t>(groups));
    for (Index i = 0; i < D; ++i) {
        for (Index m = 0; m < groups; ++m) {
            double s = 0.0;
            for (Index j = m * eta; j < (m + 1) * eta; ++j) {
                s += inst.sorted_weights(i, j);
            }
            sums[static_cast<std::size_t>(m)] = s;
        }
        Index discordant = 0;
        for (Index a = 0; a < groups; ++a) {
            for (Index b = a + 1; b < groups; ++b) {
                if (sums[static_cast<std::size_t>(a)] > sums[static_cast<std::size_t>(b)]) {
                    ++discordant;
                }
            }
        }
        tau(i) = 1.0 - static_cast<double>(discordant) /
                           (static_cast<double>(groups) * static_cast<double>(groups - 1));
    }
    return tau;
}

}  // namespace sparsegate
