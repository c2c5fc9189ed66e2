// Data-whitened truncated-SVD predictor construction and the spectral
// quantities consumed by the bound checker.
#pragma once

#include "sparsegate/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <array>
#include <sstream>
#include <utility>

namespace sparsegate {

/// Lower-triangular Cholesky factor S of X Xᵀ + λI together with its inverse
/// (obtained by triangular solves) and the damping λ that was applied.
struct WhiteningResult {
    Mat S;
    Mat S_inv;
    double lambda = 0.0;
};

/// Ridge ladder tried in order until the Gram matrix factors: λ = m·ε·μ with
/// μ = trace(X Xᵀ)/d. The first entry keeps the undamped attempt.
struct DampingPolicy {
    double epsilon = 1e-10;
    std::array<double, 4> multipliers{0.0, 1.0, 10.0, 100.0};
};

inline WhiteningResult cholesky_whitening(const ActivationBatch& X,
                                          const DampingPolicy& policy = {}) {
    validate(X);
    const Index d = X.hidden_size();

    Mat gram = Mat::Zero(d, d);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(X.x_cols);
    gram = gram.selfadjointView<Eigen::Lower>();

    const double mu = gram.trace() / static_cast<double>(d);
    std::ostringstream attempted;
    for (double mult : policy.multipliers) {
        const double lambda = mult * policy.epsilon * mu;
        Mat damped = gram;
        damped.diagonal().array() += lambda;
        Eigen::LLT<Mat> llt(damped);
        if (llt.info() == Eigen::Success) {
            WhiteningResult result;
            result.S = llt.matrixL();
            result.S_inv =
                result.S.triangularView<Eigen::Lower>().solve(Mat::Identity(d, d));
            result.lambda = lambda;
            return result;
        }
        attempted << (attempted.tellp() > 0 ? ", " : "") << lambda;
    }
    throw DataError("cholesky whitening failed for every damping value {" + attempted.str() +
                    "}; calibration data is degenerate");
}

enum class WhiteningMode { Whitened, Naive };

/// Singular values of the matrix that was factored (W·S in whitened mode, W
/// itself in naive mode), plus σ_{r+1}(W) — the spectral norm of the naive
/// rank-r residual, which is what the deterministic bound consumes.
struct SpectralInfo {
    Vec singular_values;
    double sigma_r_plus_1 = 0.0;
};

struct BuildResult {
    Predictor predictor;
    SpectralInfo spectral;
    WhiteningMode mode = WhiteningMode::Whitened;
    double lambda = 0.0;
};

namespace detail {

inline Vec singular_values_of(const Mat& m) {
    Eigen::BDCSVD<Mat> svd(m);
    if (svd.info() != Eigen::Success) {
        throw DataError("SVD did not converge");
    }
    return svd.singularValues();
}

}  // namespace detail

/// Builds the rank-r factors A = U_r Σ_r and B = V_rᵀ S⁻¹ from the SVD of
/// W·S (whitened) or of W directly (naive, S = I). The bias starts at zero;
/// calibration fills it in later. All math runs in f64.
inline BuildResult build_predictor(const Mat& w_gate, const ActivationBatch& X, Index rank,
                                   WhiteningMode mode = WhiteningMode::Whitened,
                                   const DampingPolicy& policy = {}) {
    const Index D = w_gate.rows();
    const Index d = w_gate.cols();
    if (rank < 1 || rank > std::min(D, d)) {
        throw DataError("predictor rank " + std::to_string(rank) + " out of range [1, " +
                        std::to_string(std::min(D, d)) + "]");
    }
    if (!all_finite(w_gate)) {
        throw DataError("gate matrix has non-finite entries");
    }

    BuildResult result;
    result.mode = mode;

    Mat target;
    WhiteningResult whitening;
    if (mode == WhiteningMode::Whitened) {
        if (X.hidden_size() != d) {
            throw DataError("calibration batch hidden size " + std::to_string(X.hidden_size()) +
                            " does not match gate columns " + std::to_string(d));
        }
        whitening = cholesky_whitening(X, policy);
        result.lambda = whitening.lambda;
        target = w_gate * whitening.S;
    } else {
        target = w_gate;
    }

    Eigen::BDCSVD<Mat> svd(target, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) {
        throw DataError("SVD did not converge");
    }

    Predictor pred;
    pred.A = svd.matrixU().leftCols(rank) * svd.singularValues().head(rank).asDiagonal();
    if (mode == WhiteningMode::Whitened) {
        pred.B = svd.matrixV().leftCols(rank).transpose() * whitening.S_inv;
    } else {
        pred.B = svd.matrixV().leftCols(rank).transpose();
    }
    pred.bias = Vec::Zero(D);
    pred.rank = rank;
    result.predictor = std::move(pred);

    result.spectral.singular_values = svd.singularValues();
    const Vec w_values = mode == WhiteningMode::Whitened ? detail::singular_values_of(w_gate)
                                                         : result.spectral.singular_values;
    result.spectral.sigma_r_plus_1 = rank < std::min(D, d) ? w_values(rank) : 0.0;
    return result;
}

/// Largest singular value of W − A·B.
inline double residual_spectral_norm(const Mat& w, const Predictor& pred) {
    if (pred.A.rows() != w.rows() || pred.B.cols() != w.cols()) {
        throw DataError("residual: predictor shape does not match weight matrix");
    }
    const Mat residual = w - pred.A * pred.B;
    const Vec values = detail::singular_values_of(residual);
    return values.size() > 0 ? values(0) : 0.0;
}

}  // namespace sparsegate
