#pragma once

// Windowed scaled dot-product attention. Position t may attend to position
// s only when |t - s| <= window and s is valid; weights outside the window
// and on masked columns are exactly zero, never just small.

#include <cmath>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct AttentionResult {
    Mat context; // T x d
    Mat weights; // T x T; valid rows are stochastic, masked rows all-zero
};

inline AttentionResult local_attention(const Mat& Q, const Mat& K, const Mat& V,
                                       int window,
                                       const std::vector<uint8_t>& mask) {
    const Eigen::Index T = Q.rows();
    const Eigen::Index d = Q.cols();
    if (K.rows() != T || V.rows() != T || K.cols() != d || V.cols() != d) {
        throw DimensionMismatchError("attention operand shapes disagree");
    }
    if (window < 1) throw Error("attention window must be >= 1");
    if (static_cast<Eigen::Index>(mask.size()) != T) {
        throw DimensionMismatchError("attention mask length mismatch");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    AttentionResult out;
    out.context = Mat::Zero(T, V.cols());
    out.weights = Mat::Zero(T, T);
    for (Eigen::Index t = 0; t < T; ++t) {
        if (!mask[static_cast<size_t>(t)]) continue; // masked rows stay zero
        Eigen::Index lo = std::max<Eigen::Index>(0, t - window);
        Eigen::Index hi = std::min<Eigen::Index>(T - 1, t + window);
        double max_score = -std::numeric_limits<double>::infinity();
        for (Eigen::Index s = lo; s <= hi; ++s) {
            if (!mask[static_cast<size_t>(s)]) continue;
            double score = Q.row(t).dot(K.row(s)) * scale;
            out.weights(t, s) = score; // stash raw score, normalized below
            max_score = std::max(max_score, score);
        }
        if (max_score == -std::numeric_limits<double>::infinity()) {
            throw Error("attention row " + std::to_string(t) +
                        " has no valid position in its window");
        }
        double denom = 0.0;
        for (Eigen::Index s = lo; s <= hi; ++s) {
            if (!mask[static_cast<size_t>(s)]) continue;
            double w = std::exp(out.weights(t, s) - max_score);
            out.weights(t, s) = w;
            denom += w;
        }
        for (Eigen::Index s = lo; s <= hi; ++s) {
            if (!mask[static_cast<size_t>(s)]) continue;
            out.weights(t, s) /= denom;
            out.context.row(t) += out.weights(t, s) * V.row(s);
        }
    }
    return out;
}

struct AttentionGrads {
    Mat dQ, dK, dV;
};

// Backward pass given the forward's normalized weights.
inline AttentionGrads local_attention_backward(
    const Mat& Q, const Mat& K, const Mat& V, int window,
    const std::vector<uint8_t>& mask, const Mat& weights, const Mat& dContext) {
    const Eigen::Index T = Q.rows();
    const Eigen::Index d = Q.cols();
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    AttentionGrads g;
    g.dQ = Mat::Zero(T, d);
    g.dK = Mat::Zero(T, d);
    g.dV = Mat::Zero(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        if (!mask[static_cast<size_t>(t)]) continue;
        Eigen::Index lo = std::max<Eigen::Index>(0, t - window);
        Eigen::Index hi = std::min<Eigen::Index>(T - 1, t + window);
        // dW through the weighted sum, then softmax jacobian
        double inner = 0.0; // sum_s w_ts * dW_ts
        std::vector<double> dW(static_cast<size_t>(hi - lo + 1), 0.0);
        for (Eigen::Index s = lo; s <= hi; ++s) {
            if (!mask[static_cast<size_t>(s)]) continue;
            double dw = dContext.row(t).dot(V.row(s));
            dW[static_cast<size_t>(s - lo)] = dw;
            inner += weights(t, s) * dw;
            g.dV.row(s) += weights(t, s) * dContext.row(t);
        }
        for (Eigen::Index s = lo; s <= hi; ++s) {
            if (!mask[static_cast<size_t>(s)]) continue;
            double dS = weights(t, s) * (dW[static_cast<size_t>(s - lo)] - inner);
            g.dQ.row(t) += dS * scale * K.row(s);
            g.dK.row(s) += dS * scale * Q.row(t);
        }
    }
    return g;
}

} // namespace mmfuse
