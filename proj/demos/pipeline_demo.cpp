// End-to-end walkthrough on a synthetic block: factorize, calibrate, then
// compare the dense and sparse pipelines on a few tokens.

#include "sparsegate/analysis.hpp"
#include "sparsegate/calibration.hpp"
#include "sparsegate/factorization.hpp"
#include "sparsegate/ffn_exec.hpp"
#include "sparsegate/synthetic.hpp"

#include <cstdio>

using namespace sparsegate;

int main() {
    SyntheticConfig config;
    config.hidden = 64;
    config.inter = 256;
    config.calib_tokens = 512;
    config.eval_tokens = 8;
    config.seed = 42;
    const SyntheticFixture fixture = make_synthetic_fixture(config);

    const BuildResult built = build_predictor(fixture.weights.gate, fixture.calib, 5);
    std::printf("predictor rank %d, trailing singular value %.4f\n",
                static_cast<int>(built.predictor.rank), built.spectral.sigma_r_plus_1);

    const Mat scores = proxy_scores(built.predictor, fixture.calib);
    const Mat weights = damage_weights(fixture.weights, fixture.calib);
    const CalibResult calib = greedy_calibrate(build_instance(scores, weights, 8), 0.6);
    std::printf("calibrated to %.3f sparsity (requested 0.6), damage %.6f\n",
                calib.achieved_sparsity, calib.total_damage);

    Predictor pred = built.predictor;
    pred.bias = calib.bias;

    std::printf("%5s %12s %12s %12s %14s\n", "token", "pred.sparse", "real.sparse",
                "multiplies", "rel.error");
    for (Index t = 0; t < fixture.eval.tokens(); ++t) {
        const Vec x = fixture.eval.x_cols.col(t);
        const FfnResult dense = dense_ffn(fixture.weights, x);
        const FfnResult sparse = sparse_ffn_sequential(fixture.weights, pred, x);
        const double rel = dense.y.norm() > 0.0 ? (dense.y - sparse.y).norm() / dense.y.norm()
                                                : 0.0;
        std::printf("%5lld %12.3f %12.3f %12lld %14.3e\n", static_cast<long long>(t),
                    sparse.stats.predicted_sparsity, sparse.stats.realized_sparsity,
                    static_cast<long long>(sparse.stats.multiplies), rel);
    }

    const MetricRow metrics = layer_metrics(fixture.weights, pred, fixture.eval);
    std::printf("recall %.3f, auc %.3f, mean relative output error %.3e\n", metrics.recall,
                metrics.roc_auc, metrics.mean_rel_output_error);
    return 0;
}
