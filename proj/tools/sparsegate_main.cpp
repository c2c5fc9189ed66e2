// Command-line surface: fixture generation, predictor build + calibration,
// sparse execution with per-token stats, metric reports, and the randomized
// property suites.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 property violation.

#include "sparsegate/analysis.hpp"
#include "sparsegate/calibration.hpp"
#include "sparsegate/factorization.hpp"
#include "sparsegate/ffn_exec.hpp"
#include "sparsegate/parallel.hpp"
#include "sparsegate/synthetic.hpp"
#include "sparsegate/tensor_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

namespace {

using json = nlohmann::json;
using namespace sparsegate;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string weights_path;
    std::string calib_path;
    std::string eval_path;
    std::string predictor_path;
    std::string out_path;
    std::string rank = "auto";
    double sparsity = 0.5;
    int eta = 8;
    std::string mode = "sequential";
    std::string whitening = "whitened";
    std::string activation = "reglu";
    std::uint64_t seed = 0;

    // fixture generation
    std::int64_t hidden = 64;
    std::int64_t inter = 256;
    std::int64_t calib_tokens = 512;
    std::int64_t eval_tokens = 128;
    double natural_sparsity = 0.9;

    // property suites
    std::int64_t trials = 100;
    std::int64_t dim_hidden = 8;
    std::int64_t dim_inter = 16;
    std::int64_t dim_rank = 4;
    std::int64_t dim_tokens = 8;
    std::int64_t max_neurons = 8;
    std::int64_t max_tokens = 12;
};

Activation parse_activation(const std::string& s) {
    return s == "drelu" ? Activation::DReLU : Activation::ReGLU;
}

std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
    return buf;
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot create " + path.string());
    }
    out << text;
}

FfnWeights load_weights(const RunConfig& config) {
    if (config.weights_path.empty()) {
        throw UsageError("--weights is required");
    }
    return load_ffn_weights(load_manifest(config.weights_path),
                            parse_activation(config.activation));
}

ActivationBatch load_batch(const std::string& path, const char* flag) {
    if (path.empty()) {
        throw UsageError(std::string(flag) + " is required");
    }
    return load_activation_batch(load_manifest(path));
}

Index resolve_rank(const std::string& rank, Index D, Index d) {
    if (rank == "auto") {
        const auto suggested = static_cast<Index>(std::lround(0.02 * static_cast<double>(D)));
        return std::clamp<Index>(suggested, 1, std::min(D, d));
    }
    try {
        return static_cast<Index>(std::stoll(rank));
    } catch (const std::exception&) {
        throw UsageError("--rank must be a positive integer or \"auto\"");
    }
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

int cmd_gen(const RunConfig& config) {
    if (config.out_path.empty()) {
        throw UsageError("--out is required");
    }
    SyntheticConfig sc;
    sc.hidden = config.hidden;
    sc.inter = config.inter;
    sc.calib_tokens = config.calib_tokens;
    sc.eval_tokens = config.eval_tokens;
    sc.activation = parse_activation(config.activation);
    sc.natural_sparsity = config.natural_sparsity;
    sc.seed = config.seed;
    const SyntheticFixture fixture = make_synthetic_fixture(sc);

    const std::filesystem::path root(config.out_path);
    save_ffn_weights(fixture.weights, root / "weights");
    save_activation_batch(fixture.calib, root / "calib");
    save_activation_batch(fixture.eval, root / "eval");
    std::cout << "wrote fixture to " << root.string() << " (d=" << sc.hidden
              << ", D=" << sc.inter << ", calib=" << sc.calib_tokens
              << ", eval=" << sc.eval_tokens << ", activation=" << config.activation << ")\n";
    return 0;
}

int cmd_build(const RunConfig& config) {
    if (config.out_path.empty()) {
        throw UsageError("--out is required");
    }
    const FfnWeights weights = load_weights(config);
    const ActivationBatch calib = load_batch(config.calib_path, "--calib");
    const Index rank = resolve_rank(config.rank, weights.inter_size(), weights.hidden_size());
    const WhiteningMode mode =
        config.whitening == "naive" ? WhiteningMode::Naive : WhiteningMode::Whitened;

    const BuildResult built = build_predictor(weights.gate, calib, rank, mode);
    save_predictor(built.predictor, config.out_path);

    json info;
    info["rank"] = rank;
    info["whitening"] = config.whitening;
    info["lambda"] = built.lambda;
    info["sigma_r_plus_1"] = built.spectral.sigma_r_plus_1;
    info["singular_values"] = std::vector<double>(
        built.spectral.singular_values.data(),
        built.spectral.singular_values.data() + built.spectral.singular_values.size());
    write_text(std::filesystem::path(config.out_path) / "build_info.json", info.dump(2) + "\n");

    std::cout << "built " << config.whitening << " predictor rank " << rank << " (lambda="
              << built.lambda << ", sigma_r+1=" << built.spectral.sigma_r_plus_1 << ") -> "
              << config.out_path << "\n";
    return 0;
}

int cmd_calibrate(const RunConfig& config) {
    if (config.predictor_path.empty()) {
        throw UsageError("--predictor is required");
    }
    if (config.out_path.empty()) {
        throw UsageError("--out is required");
    }
    const FfnWeights weights = load_weights(config);
    const ActivationBatch calib = load_batch(config.calib_path, "--calib");
    Predictor pred = load_predictor(config.predictor_path);

    const Mat scores = proxy_scores(pred, calib);
    const Mat weights_dt = damage_weights(weights, calib);
    const CalibInstance inst = build_instance(scores, weights_dt, config.eta);
    const CalibResult result = greedy_calibrate(inst, config.sparsity);

    pred.bias = result.bias;
    save_predictor(pred, config.out_path);

    json report;
    report["requested_sparsity"] = config.sparsity;
    report["achieved_sparsity"] = result.achieved_sparsity;
    report["total_damage"] = result.total_damage;
    report["eta"] = config.eta;
    report["drop_counts"] = result.drop_counts;
    write_text(std::filesystem::path(config.out_path) / "calibration.json",
               report.dump(2) + "\n");

    std::cout << "calibrated bias: requested " << config.sparsity << ", achieved "
              << result.achieved_sparsity << ", total damage " << result.total_damage << " -> "
              << config.out_path << "\n";
    return 0;
}

int cmd_run(const RunConfig& config) {
    if (config.out_path.empty()) {
        throw UsageError("--out is required");
    }
    const FfnWeights weights = load_weights(config);
    const ActivationBatch eval = load_batch(config.eval_path, "--eval");
    Predictor pred;
    const bool dense = config.mode == "dense";
    if (!dense) {
        if (config.predictor_path.empty()) {
            throw UsageError("--predictor is required for mode " + config.mode);
        }
        pred = load_predictor(config.predictor_path);
    }

    const auto tokens = static_cast<std::size_t>(eval.tokens());
    std::vector<std::string> lines(tokens);
    parallel_for(tokens, [&](std::size_t t) {
        const Vec x = eval.x_cols.col(static_cast<Index>(t));
        FfnResult result;
        if (dense) {
            result = dense_ffn(weights, x);
        } else if (config.mode == "parallel") {
            result = sparse_ffn_parallel(weights, pred, x);
        } else {
            result = sparse_ffn_sequential(weights, pred, x);
        }
        json record;
        record["token_index"] = t;
        record["predicted_sparsity"] = result.stats.predicted_sparsity;
        record["realized_sparsity"] = result.stats.realized_sparsity;
        record["multiplies"] = result.stats.multiplies;
        record["output_hash"] = hex64(
            fnv1a64(result.y.data(), sizeof(double) * static_cast<std::size_t>(result.y.size())));
        lines[t] = record.dump();
    });

    std::string stream;
    for (const auto& line : lines) {
        stream += line;
        stream += '\n';
    }
    write_text(config.out_path, stream);
    std::cout << "ran " << config.mode << " pipeline on " << tokens << " tokens -> "
              << config.out_path << "\n";
    return 0;
}

int cmd_eval(const RunConfig& config) {
    if (config.out_path.empty()) {
        throw UsageError("--out is required");
    }
    if (config.predictor_path.empty()) {
        throw UsageError("--predictor is required");
    }
    const FfnWeights weights = load_weights(config);
    const ActivationBatch eval = load_batch(config.eval_path, "--eval");
    const Predictor pred = load_predictor(config.predictor_path);

    const MetricRow row = layer_metrics(weights, pred, eval, 0);
    const OpCounts counts =
        op_count_model(weights.hidden_size(), weights.inter_size(), pred.rank,
                       row.predicted_sparsity, row.realized_sparsity);

    json doc;
    doc["rows"] = json::array();
    json jrow;
    jrow["layer"] = row.layer;
    jrow["recall"] = row.recall;
    jrow["predicted_sparsity"] = row.predicted_sparsity;
    jrow["realized_sparsity"] = row.realized_sparsity;
    jrow["roc_auc"] = row.roc_auc;
    jrow["mean_rel_output_error"] = row.mean_rel_output_error;
    doc["rows"].push_back(jrow);
    doc["op_count"] = {
        {"d", weights.hidden_size()},
        {"D", weights.inter_size()},
        {"r", pred.rank},
        {"predicted_sparsity", row.predicted_sparsity},
        {"realized_sparsity", row.realized_sparsity},
        {"dense", counts.dense},
        {"sparse", counts.sparse},
        {"ratio", counts.ratio},
    };
    write_text(config.out_path + ".json", doc.dump(2) + "\n");

    std::string csv =
        "layer,recall,predicted_sparsity,realized_sparsity,roc_auc,mean_rel_output_error\n";
    csv += std::to_string(row.layer) + "," + format_double(row.recall) + "," +
           format_double(row.predicted_sparsity) + "," + format_double(row.realized_sparsity) +
           "," + format_double(row.roc_auc) + "," + format_double(row.mean_rel_output_error) +
           "\n";
    write_text(config.out_path + ".csv", csv);

    char ratio_buf[32];
    std::snprintf(ratio_buf, sizeof(ratio_buf), "%.2f", counts.ratio);
    std::cout << "recall=" << row.recall << " predicted=" << row.predicted_sparsity
              << " realized=" << row.realized_sparsity << " auc=" << row.roc_auc
              << " rel_err=" << row.mean_rel_output_error << " op_ratio=" << ratio_buf << "x\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Randomized property suites.
// ---------------------------------------------------------------------------

struct PropertyResult {
    std::string name;
    std::int64_t trials = 0;
    std::int64_t passes = 0;
    std::int64_t failures = 0;
    std::int64_t skipped = 0;
    double stat = 0.0;
    std::string stat_name;
};

int finish_suite(const std::vector<PropertyResult>& results, const RunConfig& config,
                 const std::string& suite) {
    bool ok = true;
    json doc;
    doc["suite"] = suite;
    doc["seed"] = config.seed;
    doc["properties"] = json::array();
    for (const auto& r : results) {
        ok = ok && r.failures == 0;
        std::cout << (r.failures == 0 ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.passes
                  << "/" << r.trials << " pass";
        if (r.skipped > 0) {
            std::cout << ", " << r.skipped << " skipped";
        }
        if (!r.stat_name.empty()) {
            std::cout << ", " << r.stat_name << "=" << r.stat;
        }
        std::cout << "\n";
        json jr;
        jr["name"] = r.name;
        jr["trials"] = r.trials;
        jr["passes"] = r.passes;
        jr["failures"] = r.failures;
        jr["skipped"] = r.skipped;
        if (!r.stat_name.empty()) {
            jr[r.stat_name] = r.stat;
        }
        doc["properties"].push_back(jr);
    }
    doc["ok"] = ok;
    if (!config.out_path.empty()) {
        write_text(config.out_path, doc.dump(2) + "\n");
    }
    if (config.trials == 0) {
        std::cout << "warning: 0 trials requested, all properties pass vacuously\n";
    }
    return ok ? 0 : 3;
}

int cmd_verify_bounds(const RunConfig& config) {
    std::mt19937_64 rng(config.seed);
    const Index d = config.dim_hidden;
    const Index D = config.dim_inter;
    const Index r = std::min<Index>(config.dim_rank, std::min(d, D));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const auto random_instance = [&](bool sign_uniform) {
        FfnWeights w;
        w.gate = random_gaussian(rng, D, d, 0.0, 1.0);
        w.up = random_gaussian(rng, D, d, 0.0, 1.0);
        w.down = random_gaussian(rng, d, D, 0.0, 1.0);
        ActivationBatch calib = random_correlated_batch(rng, d, 4 * d);
        BuildResult built = build_predictor(w.gate, calib, r, WhiteningMode::Naive);
        Vec bias(D);
        if (sign_uniform) {
            const bool negative = unit(rng) < 0.5;
            for (Index i = 0; i < D; ++i) {
                bias(i) = negative ? -unit(rng) - 1e-3 : unit(rng);
            }
        } else {
            for (Index i = 0; i < D; ++i) {
                bias(i) = gauss(rng);
            }
        }
        built.predictor.bias = bias;
        return std::make_pair(w, built.predictor);
    };

    std::vector<PropertyResult> results;

    {
        PropertyResult pr;
        pr.name = "residual-bound-chain";
        pr.trials = config.trials;
        for (std::int64_t t = 0; t < config.trials; ++t) {
            auto [w, pred] = random_instance(false);
            const Vec x = random_gaussian(rng, d, 1, 0.0, 1.0).col(0);
            const BoundChain chain = shifted_residual_bound(w.gate, pred, x);
            const double slack = 1e-12 * std::max(1.0, chain.rhs);
            const bool ok = chain.lhs <= chain.mid + slack && chain.mid <= chain.rhs + slack;
            (ok ? pr.passes : pr.failures) += 1;
        }
        results.push_back(pr);
    }

    {
        PropertyResult pr;
        pr.name = "worst-case-tightness";
        pr.trials = config.trials;
        pr.stat_name = "max_witness_gap";
        for (std::int64_t t = 0; t < config.trials; ++t) {
            const Index m = 1 + static_cast<Index>(unit(rng) * 8);
            Vec b(m);
            switch (t % 4) {
                case 0: b.setConstant(unit(rng)); break;
                case 1: b.setConstant(-unit(rng) - 1e-3); break;
                case 2:
                    for (Index i = 0; i < m; ++i) b(i) = unit(rng);
                    break;
                default:
                    for (Index i = 0; i < m; ++i) b(i) = -unit(rng) - 1e-3;
                    break;
            }
            const double R = 2.0 * unit(rng);
            const BoundReport report = worst_case_bound(b, R);
            const double gap = std::abs(report.tight_witness_gap.value());
            pr.stat = std::max(pr.stat, gap);
            (gap <= 1e-9 ? pr.passes : pr.failures) += 1;
        }
        results.push_back(pr);
    }

    {
        PropertyResult pr;
        pr.name = "worst-case-domination";
        pr.trials = config.trials;
        for (std::int64_t t = 0; t < config.trials; ++t) {
            const Index m = 1 + static_cast<Index>(unit(rng) * 8);
            Vec b(m);
            const bool negative = t % 2 == 0;
            for (Index i = 0; i < m; ++i) {
                b(i) = negative ? -unit(rng) - 1e-3 : unit(rng);
            }
            const double R = 2.0 * unit(rng);
            Vec e = random_gaussian(rng, m, 1, 0.0, 1.0).col(0);
            if (e.norm() > 0.0) {
                e *= unit(rng) * R / e.norm();
            }
            const BoundReport report = worst_case_bound(b, R);
            const double observed = (e - b).cwiseMax(0.0).norm();
            (observed <= report.bound_value + 1e-9 ? pr.passes : pr.failures) += 1;
        }
        results.push_back(pr);
    }

    {
        PropertyResult pr;
        pr.name = "gating-error-identity";
        pr.trials = config.trials;
        for (std::int64_t t = 0; t < config.trials; ++t) {
            auto [w, pred] = random_instance(false);
            const Vec x = random_gaussian(rng, d, 1, 0.0, 1.0).col(0);
            const GatingError err = gating_error(w, pred, x);
            const Mask mask = predict_mask(pred, x);
            const Vec acts = (w.gate * x).cwiseMax(0.0);
            Vec masked = acts;
            for (Index i = 0; i < D; ++i) {
                masked(i) = mask.active[static_cast<std::size_t>(i)] ? acts(i) : 0.0;
            }
            const double direct = (acts - masked).norm();
            const bool ok =
                std::abs(err.error_norm - direct) <= 1e-12 * std::max(1.0, direct);
            (ok ? pr.passes : pr.failures) += 1;
        }
        results.push_back(pr);
    }

    {
        PropertyResult pr;
        pr.name = "bias-monotonicity";
        pr.trials = config.trials;
        for (std::int64_t t = 0; t < config.trials; ++t) {
            auto [w, pred] = random_instance(false);
            const Vec x = random_gaussian(rng, d, 1, 0.0, 1.0).col(0);
            Predictor lower = pred;
            for (Index i = 0; i < D; ++i) {
                lower.bias(i) = pred.bias(i) - unit(rng);
            }
            const double err_high = gating_error(w, pred, x).error_norm;
            const double err_low = gating_error(w, lower, x).error_norm;
            (err_low >= err_high ? pr.passes : pr.failures) += 1;
        }
        results.push_back(pr);
    }

    {
        PropertyResult pr;
        pr.name = "truncated-svd-bound";
        pr.trials = config.trials;
        for (std::int64_t t = 0; t < config.trials; ++t) {
            auto [w, pred] = random_instance(true);
            ActivationBatch samples;
            samples.x_cols = random_gaussian(rng, d, 4, 0.0, 1.0);
            try {
                svd_bound_check(w, pred, samples);
                pr.passes += 1;
            } catch (const PropertyViolation&) {
                pr.failures += 1;
            }
        }
        results.push_back(pr);
    }

    return finish_suite(results, config, "verify-bounds");
}

int cmd_oracle_check(const RunConfig& config) {
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> dyadic(0, 16);

    const auto random_sizes = [&](Index& D, Index& T) {
        D = 2 + static_cast<Index>(unit(rng) * static_cast<double>(config.max_neurons - 1));
        T = 2 + static_cast<Index>(unit(rng) * static_cast<double>(config.max_tokens - 1));
        D = std::min<Index>(D, config.max_neurons);
        T = std::min<Index>(T, config.max_tokens);
    };

    // Damage weights are dyadic rationals (k/8) so greedy and DP totals are
    // exact sums and equality is well-defined.
    const auto random_weights = [&](Index D, Index T, bool monotone_rows) {
        Mat w(D, T);
        for (Index i = 0; i < D; ++i) {
            for (Index t = 0; t < T; ++t) {
                w(i, t) = static_cast<double>(dyadic(rng)) / 8.0;
            }
            if (monotone_rows) {
                std::sort(w.row(i).data(), w.row(i).data() + T);
            }
        }
        return w;
    };
    const auto random_scores = [&](Index D, Index T) {
        Mat s(D, T);
        for (Index i = 0; i < D; ++i) {
            for (Index t = 0; t < T; ++t) {
                s(i, t) = unit(rng);
            }
            std::sort(s.row(i).data(), s.row(i).data() + T);
        }
        return s;
    };
    const auto is_monotone = [](const CalibInstance& inst) {
        for (Index i = 0; i < inst.neuron_count(); ++i) {
            for (Index k = 1; k < inst.sample_count(); ++k) {
                if (inst.sorted_weights(i, k) < inst.sorted_weights(i, k - 1)) {
                    return false;
                }
            }
        }
        return true;
    };

    std::vector<PropertyResult> results;

    {
        PropertyResult pr;
        pr.name = "greedy-vs-dp";
        pr.trials = config.trials;
        pr.stat_name = "max_gap";
        for (std::int64_t trial = 0; trial < config.trials; ++trial) {
            Index D = 0;
            Index T = 0;
            random_sizes(D, T);
            const bool force_monotone = trial % 2 == 0;
            const CalibInstance inst =
                build_instance(random_scores(D, T), random_weights(D, T, force_monotone), 1);
            const double s = 0.05 + 0.9 * unit(rng);
            const CalibResult greedy = greedy_calibrate(inst, s);
            Index budget = 0;
            for (Index k : greedy.drop_counts) {
                budget += k;
            }
            const KnapsackSolution dp = dp_knapsack_oracle(inst, budget);
            if (is_monotone(inst)) {
                (greedy.total_damage == dp.damage ? pr.passes : pr.failures) += 1;
            } else {
                const double gap = greedy.total_damage - dp.damage;
                pr.stat = std::max(pr.stat, gap);
                pr.skipped += 1;
                if (gap < 0.0) {
                    pr.failures += 1;
                }
            }
        }
        results.push_back(pr);
    }

    {
        PropertyResult pr;
        pr.name = "budget-feasibility";
        pr.trials = config.trials;
        for (std::int64_t trial = 0; trial < config.trials; ++trial) {
            Index D = 0;
            Index T = 0;
            random_sizes(D, T);
            const CalibInstance inst =
                build_instance(random_scores(D, T), random_weights(D, T, false), 2);
            const double s = 0.05 + 0.95 * unit(rng);
            const CalibResult result = greedy_calibrate(inst, s);
            (result.achieved_sparsity >= s ? pr.passes : pr.failures) += 1;
        }
        results.push_back(pr);
    }

    {
        PropertyResult pr;
        pr.name = "monotone-damage-in-target";
        pr.trials = config.trials;
        for (std::int64_t trial = 0; trial < config.trials; ++trial) {
            Index D = 0;
            Index T = 0;
            random_sizes(D, T);
            const CalibInstance inst =
                build_instance(random_scores(D, T), random_weights(D, T, false), 1);
            double s1 = 0.05 + 0.9 * unit(rng);
            double s2 = 0.05 + 0.9 * unit(rng);
            if (s1 > s2) {
                std::swap(s1, s2);
            }
            const double damage1 = greedy_calibrate(inst, s1).total_damage;
            const double damage2 = greedy_calibrate(inst, s2).total_damage;
            (damage1 <= damage2 ? pr.passes : pr.failures) += 1;
        }
        results.push_back(pr);
    }

    {
        PropertyResult pr;
        pr.name = "threshold-realization";
        pr.trials = config.trials;
        for (std::int64_t trial = 0; trial < config.trials; ++trial) {
            Index D = 0;
            Index T = 0;
            random_sizes(D, T);
            const Mat scores = random_scores(D, T);
            const CalibInstance inst = build_instance(scores, random_weights(D, T, false), 1);
            const double s = 0.05 + 0.9 * unit(rng);
            const CalibResult result = greedy_calibrate(inst, s);
            Index drops = 0;
            for (Index i = 0; i < D; ++i) {
                const double tau = -result.bias(i);
                for (Index t = 0; t < T; ++t) {
                    drops += scores(i, t) <= tau ? 1 : 0;
                }
            }
            const double realized =
                static_cast<double>(drops) / (static_cast<double>(D) * static_cast<double>(T));
            (realized == result.achieved_sparsity ? pr.passes : pr.failures) += 1;
        }
        results.push_back(pr);
    }

    {
        PropertyResult pr;
        pr.name = "kendall-brute-force";
        pr.trials = config.trials;
        for (std::int64_t trial = 0; trial < config.trials; ++trial) {
            Index D = 0;
            Index T = 0;
            random_sizes(D, T);
            const int eta = 1 + static_cast<int>(unit(rng) * 2.0);
            if (T / eta < 2) {
                T = 2 * eta;
            }
            const CalibInstance inst =
                build_instance(random_scores(D, T), random_weights(D, T, false), eta);
            const Vec tau = kendall_tau_diagnostic(inst);
            bool ok = true;
            const Index groups = T / eta;
            for (Index i = 0; i < D && ok; ++i) {
                std::vector<double> sums;
                for (Index m = 0; m < groups; ++m) {
                    double sum = 0.0;
                    for (Index j = m * eta; j < (m + 1) * eta; ++j) {
                        sum += inst.sorted_weights(i, j);
                    }
                    sums.push_back(sum);
                }
                Index discordant = 0;
                for (Index a = 0; a < groups; ++a) {
                    for (Index b = a + 1; b < groups; ++b) {
                        discordant += sums[static_cast<std::size_t>(a)] >
                                              sums[static_cast<std::size_t>(b)]
                                          ? 1
                                          : 0;
                    }
                }
                const double expected =
                    1.0 - static_cast<double>(discordant) /
                              (static_cast<double>(groups) * static_cast<double>(groups - 1));
                ok = tau(i) == expected;
            }
            (ok ? pr.passes : pr.failures) += 1;
        }
        results.push_back(pr);
    }

    return finish_suite(results, config, "oracle-check");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contextual-sparsity toolkit for gated feed-forward blocks"};
    app.require_subcommand(1);
    RunConfig config;

    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--weights", config.weights_path, "weights container directory");
        cmd->add_option("--calib", config.calib_path, "calibration batch container");
        cmd->add_option("--eval", config.eval_path, "evaluation batch container");
        cmd->add_option("--predictor", config.predictor_path, "predictor container");
        cmd->add_option("--rank", config.rank, "predictor rank or \"auto\" (2% of D)");
        cmd->add_option("--sparsity", config.sparsity, "target drop fraction in (0,1]");
        cmd->add_option("--eta", config.eta, "greedy step size")->check(CLI::PositiveNumber);
        cmd->add_option("--mode", config.mode, "execution pipeline")
            ->check(CLI::IsMember({"dense", "parallel", "sequential"}));
        cmd->add_option("--whitening", config.whitening, "factorization mode")
            ->check(CLI::IsMember({"whitened", "naive"}));
        cmd->add_option("--activation", config.activation, "ffn activation variant")
            ->check(CLI::IsMember({"reglu", "drelu"}));
        cmd->add_option("--seed", config.seed, "rng seed");
        cmd->add_option("--out", config.out_path, "output path");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate a seeded synthetic fixture");
    add_common(gen);
    gen->add_option("--d", config.hidden, "hidden size");
    gen->add_option("--inter", config.inter, "intermediate size");
    gen->add_option("--tokens-calib", config.calib_tokens, "calibration token count");
    gen->add_option("--tokens-eval", config.eval_tokens, "evaluation token count");
    gen->add_option("--natural-sparsity", config.natural_sparsity,
                    "target fraction of naturally inactive gate neurons");

    CLI::App* build = app.add_subcommand("build", "build an SVD predictor (zero bias)");
    add_common(build);

    CLI::App* calibrate =
        app.add_subcommand("calibrate", "greedy bias calibration toward a target sparsity");
    add_common(calibrate);

    CLI::App* run = app.add_subcommand("run", "execute a pipeline over an eval batch");
    add_common(run);

    CLI::App* eval = app.add_subcommand("eval", "predictor quality metrics over an eval batch");
    add_common(eval);

    CLI::App* verify = app.add_subcommand("verify-bounds", "randomized bound property suite");
    add_common(verify);
    verify->add_option("--trials", config.trials, "trial count")
        ->check(CLI::NonNegativeNumber);
    verify->add_option("--d", config.dim_hidden, "hidden size of random instances");
    verify->add_option("--inter", config.dim_inter, "intermediate size of random instances");
    verify->add_option("--instance-rank", config.dim_rank, "rank of random predictors");

    CLI::App* oracle =
        app.add_subcommand("oracle-check", "greedy-vs-DP and diagnostic property suite");
    add_common(oracle);
    oracle->add_option("--trials", config.trials, "trial count")
        ->check(CLI::NonNegativeNumber);
    oracle->add_option("--max-neurons", config.max_neurons, "max neurons per random instance");
    oracle->add_option("--max-tokens", config.max_tokens, "max samples per random instance");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen(config);
        }
        if (build->parsed()) {
            return cmd_build(config);
        }
        if (calibrate->parsed()) {
            return cmd_calibrate(config);
        }
        if (run->parsed()) {
            return cmd_run(config);
        }
        if (eval->parsed()) {
            return cmd_eval(config);
        }
        if (verify->parsed()) {
            return cmd_verify_bounds(config);
        }
        return cmd_oracle_check(config);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const PropertyViolation& e) {
        std::cerr << "property violation: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
