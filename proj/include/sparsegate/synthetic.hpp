// Seeded synthetic fixtures: Gaussian gated-FFN weights with a controllable
// natural gate-activation sparsity, plus random-instance helpers shared by
// the property suites.
#pragma once

#include "sparsegate/types.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace sparsegate {

/// Standard normal quantile via Newton iteration on the CDF.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw DataError("normal quantile: p must lie in (0, 1)");
    }
    double z = 0.0;
    for (int iter = 0; iter < 60; ++iter) {
        const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
        const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
        const double step = (cdf - p) / pdf;
        z -= step;
        if (std::abs(step) < 1e-14) {
            break;
        }
    }
    return z;
}

inline Mat random_gaussian(std::mt19937_64& rng, Index rows, Index cols, double mean,
                           double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    Mat m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            m(i, j) = dist(rng);
        }
    }
    return m;
}

/// Tokens with correlated coordinates: X = L·Z for a random well-conditioned
/// lower-triangular L, so X Xᵀ is SPD almost surely when n ≥ d.
inline ActivationBatch random_correlated_batch(std::mt19937_64& rng, Index d, Index n) {
    std::uniform_real_distribution<double> diag(0.5, 1.5);
    std::normal_distribution<double> off(0.0, 0.3);
    Mat chol = Mat::Zero(d, d);
    for (Index i = 0; i < d; ++i) {
        for (Index j = 0; j < i; ++j) {
            chol(i, j) = off(rng);
        }
        chol(i, i) = diag(rng);
    }
    ActivationBatch batch;
    batch.x_cols = chol * random_gaussian(rng, d, n, 0.0, 1.0);
    return batch;
}

struct SyntheticConfig {
    Index hidden = 64;
    Index inter = 256;
    Index calib_tokens = 512;
    Index eval_tokens = 128;
    Activation activation = Activation::ReGLU;
    double natural_sparsity = 0.9;
    std::uint64_t seed = 0;
};

struct SyntheticFixture {
    FfnWeights weights;
    ActivationBatch calib;
    ActivationBatch eval;
};

/// Gaussian weights whose gate rows have a negative mean shift chosen so
/// that roughly `natural_sparsity` of gate pre-activations are non-positive
/// on tokens drawn as N(1, 1) coordinates.
inline SyntheticFixture make_synthetic_fixture(const SyntheticConfig& config) {
    if (config.hidden < 1 || config.inter < 1 || config.calib_tokens < 1 ||
        config.eval_tokens < 0) {
        throw DataError("synthetic fixture: invalid sizes");
    }
    if (!(config.natural_sparsity > 0.0 && config.natural_sparsity < 1.0)) {
        throw DataError("synthetic fixture: natural sparsity must lie in (0, 1)");
    }

    const auto d = static_cast<double>(config.hidden);
    const double z = normal_quantile(config.natural_sparsity);
    // Gate pre-activations have mean -shift and variance ~= 2 + shift^2/d
    // under this construction; one fixed-point pass on the std estimate.
    double shift = z * std::sqrt(2.0);
    shift = z * std::sqrt(2.0 + shift * shift / d);

    std::mt19937_64 rng(config.seed);
    SyntheticFixture fixture;
    fixture.weights.gate =
        random_gaussian(rng, config.inter, config.hidden, -shift / d, 1.0 / std::sqrt(d));
    fixture.weights.up =
        random_gaussian(rng, config.inter, config.hidden, 0.0, 1.0 / std::sqrt(d));
    fixture.weights.down = random_gaussian(rng, config.hidden, config.inter, 0.0,
                                           1.0 / std::sqrt(static_cast<double>(config.inter)));
    fixture.weights.activation = config.activation;
    fixture.calib.x_cols = random_gaussian(rng, config.hidden, config.calib_tokens, 1.0, 1.0);
    fixture.eval.x_cols = random_gaussian(rng, config.hidden, config.eval_tokens, 1.0, 1.0);
    return fixture;
}

}  // namespace sparsegate
