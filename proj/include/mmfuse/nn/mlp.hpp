#pragma once

#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Classifier head configuration. The nonlinearity is ReLU throughout.
struct MlpConfig {
    std::vector<int> hidden_sizes = {512};
    double dropout = 0.2;
};

// Plain fully connected stack: affine -> ReLU (-> dropout when training)
// repeated, ending in an affine map to the logits. widths = [input,
// hidden..., output]; widths of size 2 give a single affine layer.
//
// forward() caches activations, backward() accumulates parameter gradients
// and returns the gradient with respect to the input batch.
class Mlp {
public:
    Mlp(std::vector<int> widths, uint64_t seed, double dropout = 0.0)
        : widths_(std::move(widths)), dropout_(dropout) {
        if (widths_.size() < 2) throw Error("mlp needs at least input and output widths");
        for (size_t l = 0; l + 1 < widths_.size(); ++l) {
            auto& W = params_.add("layer" + std::to_string(l) + ".W",
                                  widths_[l + 1], widths_[l]);
            params_.add("layer" + std::to_string(l) + ".b", widths_[l + 1], 1);
            init_uniform(W, seed);
        }
    }

    static Mlp from_config(int input, int output, const MlpConfig& cfg, uint64_t seed) {
        std::vector<int> widths;
        widths.push_back(input);
        for (int h : cfg.hidden_sizes) {
            if (h <= 0) throw Error("mlp hidden sizes must be positive");
            widths.push_back(h);
        }
        widths.push_back(output);
        return Mlp(std::move(widths), seed, cfg.dropout);
    }

    int input_width() const { return widths_.front(); }
    int output_width() const { return widths_.back(); }
    const std::vector<int>& widths() const { return widths_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // X: batch_size x input. Returns logits batch_size x output.
    // Dropout fires only when training and an RNG is supplied; evaluation
    // is deterministic.
    Mat forward(const Mat& X, bool training = false,
                DeterministicRng* dropout_rng = nullptr) {
        if (X.cols() != widths_.front()) {
            throw DimensionMismatchError("mlp input width " + std::to_string(X.cols()) +
                                         ", expected " + std::to_string(widths_.front()));
        }
        size_t layers = widths_.size() - 1;
        acts_.assign(1, X);
        pre_.clear();
        masks_.clear();
        Mat A = X;
        for (size_t l = 0; l < layers; ++l) {
            const Mat& W = params_.at("layer" + std::to_string(l) + ".W").value;
            const Mat& b = params_.at("layer" + std::to_string(l) + ".b").value;
            Mat Z = (A * W.transpose()).rowwise() + b.col(0).transpose();
            pre_.push_back(Z);
            if (l + 1 < layers) {
                A = Z.cwiseMax(0.0);
                if (training && dropout_ > 0.0 && dropout_rng != nullptr) {
                    Mat mask(A.rows(), A.cols());
                    double keep = 1.0 - dropout_;
                    for (Eigen::Index i = 0; i < mask.rows(); ++i) {
                        for (Eigen::Index j = 0; j < mask.cols(); ++j) {
                            mask(i, j) = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
                        }
                    }
                    A = A.cwiseProduct(mask);
                    masks_.push_back(std::move(mask));
                } else {
                    masks_.push_back(Mat());
                }
                acts_.push_back(A);
            } else {
                A = Z;
            }
        }
        return A;
    }

    // dLogits matches the last forward()'s output shape.
    Mat backward(const Mat& dLogits) {
        size_t layers = widths_.size() - 1;
        Mat dZ = dLogits;
        for (size_t l = layers; l-- > 0;) {
            auto& W = params_.at("layer" + std::to_string(l) + ".W");
            auto& b = params_.at("layer" + std::to_string(l) + ".b");
            W.grad += dZ.transpose() * acts_[l];
            b.grad.col(0) += dZ.colwise().sum().transpose();
            if (l > 0) {
                Mat dA = dZ * W.value;
                if (masks_[l - 1].size() > 0) dA = dA.cwiseProduct(masks_[l - 1]);
                dZ = dA.cwiseProduct(
                    (pre_[l - 1].array() > 0.0).cast<double>().matrix());
            } else {
                return dZ * W.value;
            }
        }
        return Mat();
    }

private:
    std::vector<int> widths_;
    double dropout_;
    ParamStore params_;
    std::vector<Mat> acts_;  // input to each layer
    std::vector<Mat> pre_;   // pre-activation per layer
    std::vector<Mat> masks_; // dropout masks per hidden layer (empty = off)
};

} // namespace mmfuse
