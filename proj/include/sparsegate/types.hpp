// Domain types shared across the library.
#pragma once

#include "sparsegate/common.hpp"

#include <string>

namespace sparsegate {

/// Gated FFN activation variant: ReGLU applies ReLU to the gate branch only,
/// dReLU to both gate and up branches.
enum class Activation { ReGLU, DReLU };

inline std::string to_string(Activation a) {
    return a == Activation::ReGLU ? "reglu" : "drelu";
}

/// Weights of one gated feed-forward block.
/// gate, up: D x d; down: d x D, with d the hidden size and D the
/// intermediate size.
struct FfnWeights {
    Mat gate;
    Mat up;
    Mat down;
    Activation activation = Activation::ReGLU;

    Index hidden_size() const { return gate.cols(); }
    Index inter_size() const { return gate.rows(); }
};

inline void validate(const FfnWeights& w) {
    const Index d = w.gate.cols();
    const Index D = w.gate.rows();
    if (d < 1 || D < 1) {
        throw DataError("ffn weights: gate must be at least 1x1, got " +
                        std::to_string(D) + "x" + std::to_string(d));
    }
    if (w.up.rows() != D || w.up.cols() != d) {
        throw DataError("ffn weights: up is " + std::to_string(w.up.rows()) + "x" +
                        std::to_string(w.up.cols()) + ", expected " + std::to_string(D) + "x" +
                        std::to_string(d));
    }
    if (w.down.rows() != d || w.down.cols() != D) {
        throw DataError("ffn weights: down is " + std::to_string(w.down.rows()) + "x" +
                        std::to_string(w.down.cols()) + ", expected " + std::to_string(d) + "x" +
                        std::to_string(D));
    }
    if (!all_finite(w.gate) || !all_finite(w.up) || !all_finite(w.down)) {
        throw DataError("ffn weights: non-finite entries");
    }
}

/// Hidden states of N tokens, stored as columns of a d x N matrix.
struct ActivationBatch {
    Mat x_cols;

    Index hidden_size() const { return x_cols.rows(); }
    Index tokens() const { return x_cols.cols(); }
};

inline void validate(const ActivationBatch& batch) {
    if (batch.tokens() < 1) {
        throw DataError("activation batch: need at least one token");
    }
    if (!all_finite(batch.x_cols)) {
        throw DataError("activation batch: non-finite entries");
    }
}

/// Low-rank affine mask predictor: neuron i is predicted active iff
/// (A (B x))_i + bias_i > 0.
struct Predictor {
    Mat A;     // D x r
    Mat B;     // r x d
    Vec bias;  // length D
    Index rank = 0;

    Index hidden_size() const { return B.cols(); }
    Index inter_size() const { return A.rows(); }
};

inline void validate(const Predictor& p) {
    if (p.A.cols() != p.B.rows()) {
        throw DataError("predictor: rank mismatch, A is " + std::to_string(p.A.rows()) + "x" +
                        std::to_string(p.A.cols()) + " but B is " + std::to_string(p.B.rows()) +
                        "x" + std::to_string(p.B.cols()));
    }
    if (p.rank != p.A.cols()) {
        throw DataError("predictor: rank field disagrees with factor shapes");
    }
    if (p.bias.size() != p.A.rows()) {
        throw DataError("predictor: bias length " + std::to_string(p.bias.size()) +
                        " does not match intermediate size " + std::to_string(p.A.rows()));
    }
    if (p.rank < 1 || p.rank > std::min(p.A.rows(), p.B.cols())) {
        throw DataError("predictor: rank " + std::to_string(p.rank) + " out of range [1, " +
                        std::to_string(std::min(p.A.rows(), p.B.cols())) + "]");
    }
    // Calibrated biases may legitimately contain +inf (a neuron whose
    // threshold stayed at the "drop nothing" sentinel), so only the factors
    // are required to be finite.
    if (!all_finite(p.A) || !all_finite(p.B)) {
        throw DataError("predictor: non-finite factor entries");
    }
}

}  // namespace sparsegate
