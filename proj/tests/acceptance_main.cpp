// Acceptance suite: runs every release criterion at its stated tolerance and
// prints one pass/fail line per criterion. Exits nonzero if any fail.

#include "sparsegate/analysis.hpp"
#include "sparsegate/calibration.hpp"
#include "sparsegate/factorization.hpp"
#include "sparsegate/ffn_exec.hpp"
#include "sparsegate/synthetic.hpp"
#include "sparsegate/tensor_io.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace sparsegate;

namespace {

struct Criterion {
    std::string name;
    double budget_seconds;
    std::function<bool(std::string&)> body;
};

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3e", v);
    return buf;
}

FfnWeights random_ffn(std::mt19937_64& rng, Index d, Index D,
                      Activation act = Activation::ReGLU) {
    FfnWeights w;
    w.gate = random_gaussian(rng, D, d, 0.0, 1.0);
    w.up = random_gaussian(rng, D, d, 0.0, 1.0);
    w.down = random_gaussian(rng, d, D, 0.0, 1.0);
    w.activation = act;
    return w;
}

Predictor exact_predictor(const FfnWeights& w) {
    Predictor p;
    p.A = w.gate;
    p.B = Mat::Identity(w.hidden_size(), w.hidden_size());
    p.bias = Vec::Zero(w.inter_size());
    p.rank = w.hidden_size();
    return p;
}

std::pair<FfnWeights, Predictor> naive_instance(std::mt19937_64& rng, Index d, Index D,
                                                Index r) {
    FfnWeights w = random_ffn(rng, d, D);
    ActivationBatch identity;
    identity.x_cols = Mat::Identity(d, d);
    BuildResult built = build_predictor(w.gate, identity, r, WhiteningMode::Naive);
    return {std::move(w), std::move(built.predictor)};
}

bool criterion_op_count(std::string& detail) {
    const OpCounts counts = op_count_model(4096, 11008, 256, 0.5, 0.9);
    std::ostringstream note;
    note << "ratio=" << counts.ratio;
    detail = note.str();
    return counts.ratio >= 3.80 && counts.ratio <= 3.84;
}

bool criterion_perfect_recall(std::string& detail) {
    std::mt19937_64 rng(1001);
    double worst = 0.0;
    for (int instance = 0; instance < 50; ++instance) {
        const FfnWeights w = random_ffn(rng, 64, 256);
        const Predictor pred = exact_predictor(w);
        for (int t = 0; t < 4; ++t) {
            const Vec x = random_gaussian(rng, 64, 1, 0.0, 1.0).col(0);
            const FfnResult dense = dense_ffn(w, x);
            const FfnResult parallel = sparse_ffn_parallel(w, pred, x);
            const FfnResult sequential = sparse_ffn_sequential(w, pred, x);
            const double scale = std::max(dense.y.norm(), 1e-300);
            worst = std::max(worst, (parallel.y - dense.y).norm() / scale);
            worst = std::max(worst, (sequential.y - dense.y).norm() / scale);
        }
    }
    detail = "max relative error " + sci(worst);
    return worst <= 1e-12;
}

bool criterion_exact_error_identity(std::string& detail) {
    std::mt19937_64 rng(1002);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        auto [w, pred] = naive_instance(rng, 8, 16, 4);
        pred.bias = random_gaussian(rng, 16, 1, 0.0, 1.0).col(0);
        const Vec x = random_gaussian(rng, 8, 1, 0.0, 1.0).col(0);

        const double formula = gating_error(w, pred, x).error_norm;
        const Mask mask = predict_mask(pred, x);
        const Vec acts = (w.gate * x).cwiseMax(0.0);
        Vec masked = acts;
        for (Index i = 0; i < 16; ++i) {
            masked(i) = mask.active[static_cast<std::size_t>(i)] ? acts(i) : 0.0;
        }
        const double direct = (acts - masked).norm();
        worst = std::max(worst, std::abs(formula - direct) / std::max(1.0, direct));
    }
    detail = "max relative gap " + sci(worst);
    return worst <= 1e-12;
}

bool criterion_bias_monotonicity(std::string& detail) {
    std::mt19937_64 rng(1003);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int violations = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto [w, pred] = naive_instance(rng, 8, 16, 4);
        pred.bias = random_gaussian(rng, 16, 1, 0.0, 1.0).col(0);
        Predictor lower = pred;
        for (Index i = 0; i < 16; ++i) {
            lower.bias(i) -= unit(rng);
        }
        const Vec x = random_gaussian(rng, 8, 1, 0.0, 1.0).col(0);
        if (gating_error(w, lower, x).error_norm < gating_error(w, pred, x).error_norm) {
            ++violations;
        }
    }
    detail = std::to_string(violations) + " violations";
    return violations == 0;
}

bool criterion_bound_chain_and_tightness(std::string& detail) {
    std::mt19937_64 rng(1004);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int chain_failures = 0;
    double worst_gap = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        auto [w, pred] = naive_instance(rng, 8, 16, 4);
        pred.bias = random_gaussian(rng, 16, 1, 0.0, 1.0).col(0);
        const Vec x = random_gaussian(rng, 8, 1, 0.0, 1.0).col(0);
        const BoundChain chain = shifted_residual_bound(w.gate, pred, x);
        const double slack = 1e-12 * std::max(1.0, chain.rhs);
        if (!(chain.lhs <= chain.mid + slack && chain.mid <= chain.rhs + slack)) {
            ++chain_failures;
        }

        const Index m = 1 + static_cast<Index>(rng() % 8);
        Vec b(m);
        switch (trial % 4) {
            case 0: b.setConstant(unit(rng)); break;
            case 1: b.setConstant(-unit(rng) - 1e-3); break;
            case 2:
                for (Index i = 0; i < m; ++i) b(i) = unit(rng);
                break;
            default:
                for (Index i = 0; i < m; ++i) b(i) = -unit(rng) - 1e-3;
                break;
        }
        const BoundReport report = worst_case_bound(b, 2.0 * unit(rng));
        worst_gap = std::max(worst_gap, std::abs(report.tight_witness_gap.value()));
    }
    detail = std::to_string(chain_failures) + " chain failures, max witness gap " + sci(worst_gap);
    return chain_failures == 0 && worst_gap <= 1e-9;
}

bool criterion_eckart_young(std::string& detail) {
    std::mt19937_64 rng(1005);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const Index D = 2 + static_cast<Index>(rng() % 63);
        const Index d = 2 + static_cast<Index>(rng() % 63);
        const Index limit = std::min(D, d);
        const Index r = 1 + static_cast<Index>(rng() % static_cast<std::uint64_t>(limit - 1));
        const Mat w = random_gaussian(rng, D, d, 0.0, 1.0);
        ActivationBatch identity;
        identity.x_cols = Mat::Identity(d, d);
        const BuildResult built = build_predictor(w, identity, r, WhiteningMode::Naive);
        const double residual = residual_spectral_norm(w, built.predictor);
        const double sigma = built.spectral.sigma_r_plus_1;
        worst = std::max(worst, std::abs(residual - sigma) / sigma);
    }
    detail = "max relative gap " + sci(worst);
    return worst <= 1e-8;
}

bool criterion_whitening_optimality(std::string& detail) {
    std::mt19937_64 rng(1006);
    int violations = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const Index D = 4 + static_cast<Index>(rng() % 13);
        const Index d = 4 + static_cast<Index>(rng() % 9);
        const Index r =
            1 + static_cast<Index>(rng() % static_cast<std::uint64_t>(std::min(D, d)));
        const Mat w = random_gaussian(rng, D, d, 0.0, 1.0);
        const ActivationBatch batch = random_correlated_batch(rng, d, 4 * d);

        const BuildResult whitened = build_predictor(w, batch, r, WhiteningMode::Whitened);
        const BuildResult naive = build_predictor(w, batch, r, WhiteningMode::Naive);
        const double err_whitened =
            (w * batch.x_cols - whitened.predictor.A * whitened.predictor.B * batch.x_cols)
                .norm();
        const double err_naive =
            (w * batch.x_cols - naive.predictor.A * naive.predictor.B * batch.x_cols).norm();
        if (err_whitened > err_naive + 1e-10) {
            ++violations;
        }
    }
    detail = std::to_string(violations) + " violations";
    return violations == 0;
}

bool criterion_greedy_optimality(std::string& detail) {
    std::mt19937_64 rng(1007);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> dyadic(0, 16);
    int mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Index D = 2 + static_cast<Index>(rng() % 7);
        const Index T = 2 + static_cast<Index>(rng() % 11);
        Mat scores(D, T);
        Mat weights(D, T);
        for (Index i = 0; i < D; ++i) {
            for (Index t = 0; t < T; ++t) {
                scores(i, t) = unit(rng);
                weights(i, t) = static_cast<double>(dyadic(rng)) / 8.0;
            }
            std::sort(scores.row(i).data(), scores.row(i).data() + T);
            std::sort(weights.row(i).data(), weights.row(i).data() + T);
        }
        const CalibInstance inst = build_instance(scores, weights, 1);
        const CalibResult greedy = greedy_calibrate(inst, 0.05 + 0.9 * unit(rng));
        Index budget = 0;
        for (Index k : greedy.drop_counts) {
            budget += k;
        }
        if (greedy.total_damage != dp_knapsack_oracle(inst, budget).damage) {
            ++mismatches;
        }
    }
    detail = std::to_string(mismatches) + " mismatches";
    return mismatches == 0;
}

bool criterion_calibration_budget(std::string& detail) {
    SyntheticConfig config;
    config.hidden = 32;
    config.inter = 128;
    config.calib_tokens = 128;
    config.eval_tokens = 32;
    config.seed = 9;
    const SyntheticFixture fixture = make_synthetic_fixture(config);

    const BuildResult built = build_predictor(fixture.weights.gate, fixture.calib, 3);
    const Mat scores = proxy_scores(built.predictor, fixture.calib);
    const Mat weights = damage_weights(fixture.weights, fixture.calib);
    const CalibInstance inst = build_instance(scores, weights, 8);

    std::ostringstream note;
    for (double target : {0.4, 0.5, 0.6, 0.7}) {
        const CalibResult result = greedy_calibrate(inst, target);
        if (result.achieved_sparsity < target) {
            detail = "achieved below target " + std::to_string(target);
            return false;
        }
        Predictor pred = built.predictor;
        pred.bias = result.bias;
        for (Index t = 0; t < fixture.eval.tokens(); ++t) {
            const FfnResult run =
                sparse_ffn_sequential(fixture.weights, pred, fixture.eval.x_cols.col(t));
            if (run.stats.realized_sparsity < run.stats.predicted_sparsity) {
                detail = "realized below predicted at target " + std::to_string(target);
                return false;
            }
        }
        note << " s=" << target << "->" << result.achieved_sparsity;
    }
    detail = "achieved" + note.str();
    return true;
}

bool criterion_truncated_svd_bound(std::string& detail) {
    std::mt19937_64 rng(1008);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int violations = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto [w, pred] = naive_instance(rng, 8, 16, 4);
        const bool negative = trial % 2 == 0;
        for (Index i = 0; i < 16; ++i) {
            pred.bias(i) = negative ? -unit(rng) - 1e-3 : unit(rng);
        }
        ActivationBatch samples;
        samples.x_cols = random_gaussian(rng, 8, 2, 0.0, 1.0);
        try {
            svd_bound_check(w, pred, samples);
        } catch (const PropertyViolation&) {
            ++violations;
        }
    }
    detail = std::to_string(violations) + " violations";
    return violations == 0;
}

bool criterion_roc_auc_oracle(std::string& detail) {
    std::mt19937_64 rng(1009);
    std::uniform_int_distribution<int> size(2, 200);
    std::uniform_int_distribution<int> level(0, 9);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    int mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = size(rng);
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            scores[static_cast<std::size_t>(i)] = static_cast<double>(level(rng)) / 3.0;
            labels[static_cast<std::size_t>(i)] = unit(rng) < 0.5 ? 1 : 0;
        }
        labels[0] = 1;
        if (n > 1) {
            labels[1] = 0;
        }

        double wins = 0.0;
        std::size_t pairs = 0;
        for (int i = 0; i < n; ++i) {
            if (!labels[static_cast<std::size_t>(i)]) {
                continue;
            }
            for (int j = 0; j < n; ++j) {
                if (labels[static_cast<std::size_t>(j)]) {
                    continue;
                }
                ++pairs;
                const double a = scores[static_cast<std::size_t>(i)];
                const double z = scores[static_cast<std::size_t>(j)];
                wins += a > z ? 1.0 : (a == z ? 0.5 : 0.0);
            }
        }
        const double brute = wins / static_cast<double>(pairs);
        if (roc_auc(scores, labels) != brute) {
            ++mismatches;
        }
    }
    detail = std::to_string(mismatches) + " mismatches";
    return mismatches == 0;
}

bool criterion_run_determinism(std::string& detail) {
    const std::filesystem::path dir =
        std::filesystem::temp_directory_path() /
        ("sparsegate-acceptance-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    const std::string cli = SPARSEGATE_CLI_PATH;
    const auto shell = [&](const std::string& args) {
        const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return status != -1 && WEXITSTATUS(status) == 0;
    };
    const auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };

    bool ok = shell("gen --out " + (dir / "fx").string() +
                    " --d 32 --inter 64 --tokens-calib 64 --tokens-eval 16 --seed 5");
    const std::string fixture = " --weights " + (dir / "fx" / "weights").string() + " --eval " +
                                (dir / "fx" / "eval").string();
    ok = ok && shell("build --weights " + (dir / "fx" / "weights").string() + " --calib " +
                     (dir / "fx" / "calib").string() + " --rank 2 --out " +
                     (dir / "pred").string());
    ok = ok && shell("run" + fixture + " --predictor " + (dir / "pred").string() +
                     " --mode sequential --out " + (dir / "a.jsonl").string());
    ok = ok && shell("run" + fixture + " --predictor " + (dir / "pred").string() +
                     " --mode sequential --out " + (dir / "b.jsonl").string());
    if (!ok) {
        detail = "pipeline command failed";
        std::filesystem::remove_all(dir);
        return false;
    }
    const std::string a = slurp(dir / "a.jsonl");
    const std::string b = slurp(dir / "b.jsonl");
    std::filesystem::remove_all(dir);
    detail = a == b ? "byte-identical streams" : "streams differ";
    return !a.empty() && a == b;
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"op-count-model", 0.001, criterion_op_count},
        {"perfect-recall-equivalence", 5.0, criterion_perfect_recall},
        {"exact-error-identity", 5.0, criterion_exact_error_identity},
        {"bias-monotonicity", 5.0, criterion_bias_monotonicity},
        {"bound-chain-and-tightness", 5.0, criterion_bound_chain_and_tightness},
        {"eckart-young", 10.0, criterion_eckart_young},
        {"whitening-optimality", 10.0, criterion_whitening_optimality},
        {"greedy-optimality", 10.0, criterion_greedy_optimality},
        {"calibration-budget", 30.0, criterion_calibration_budget},
        {"truncated-svd-bound", 10.0, criterion_truncated_svd_bound},
        {"roc-auc-oracle", 5.0, criterion_roc_auc_oracle},
        {"run-determinism", 10.0, criterion_run_determinism},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        std::string detail;
        bool ok = false;
        const auto start = std::chrono::steady_clock::now();
        try {
            ok = criterion.body(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (elapsed > criterion.budget_seconds) {
            ok = false;
            detail += " [over budget " + std::to_string(criterion.budget_seconds) + "s]";
        }
        failures += ok ? 0 : 1;
        std::printf("[%s] %s (%.3fs) %s\n", ok ? "PASS" : "FAIL", criterion.name.c_str(),
                    elapsed, detail.c_str());
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
                criteria.size());
    return failures == 0 ? 0 : 1;
}
