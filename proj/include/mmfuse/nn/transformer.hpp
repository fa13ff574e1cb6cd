#pragma once

// Temporal encoder over per-frame spatial features: learned input
// projection (identity when the feature width already matches), sinusoidal
// position encoding, a stack of pre-norm transformer blocks with windowed
// multi-head attention, and masked mean pooling. Masked frames are zeroed
// on entry, excluded from every attention softmax and from the pooled
// mean, so their feature values cannot influence the output.

#include <cmath>
#include <string>
#include <vector>

#include "mmfuse/nn/attention.hpp"
#include "mmfuse/nn/mlp.hpp"
#include "mmfuse/tensor.hpp"
#include "mmfuse/video.hpp"

namespace mmfuse {

struct TemporalEncoderConfig {
    int num_layers = 2;
    int num_heads = 8;
    int hidden = 1280;
    int attention_window = 8; // frames on each side
    int ffn_multiplier = 4;
    double dropout = 0.1;

    void validate() const {
        if (num_layers < 1 || num_heads < 1 || hidden < 1 || ffn_multiplier < 1) {
            throw ConfigError("temporal encoder sizes must be positive");
        }
        if (hidden % num_heads != 0) {
            throw ConfigError("hidden must be divisible by num_heads");
        }
        if (attention_window < 1) throw ConfigError("attention window must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    }
};

inline Mat sinusoidal_position_encoding(Eigen::Index T, Eigen::Index hidden) {
    Mat pe(T, hidden);
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index i = 0; i < hidden; i += 2) {
            double freq = std::exp(-std::log(10000.0) *
                                   static_cast<double>(i) / static_cast<double>(hidden));
            pe(t, i) = std::sin(static_cast<double>(t) * freq);
            if (i + 1 < hidden) pe(t, i + 1) = std::cos(static_cast<double>(t) * freq);
        }
    }
    return pe;
}

namespace detail {

struct LayerNormCache {
    Mat x_hat;       // T x H
    Vec inv_std;     // T
};

inline Mat layer_norm_forward(const Mat& X, const Mat& gamma, const Mat& beta,
                              LayerNormCache& cache, double eps = 1e-5) {
    const Eigen::Index T = X.rows(), H = X.cols();
    cache.x_hat.resize(T, H);
    cache.inv_std.resize(T);
    Mat out(T, H);
    for (Eigen::Index t = 0; t < T; ++t) {
        double mu = X.row(t).mean();
        double var = (X.row(t).array() - mu).square().mean();
        double inv = 1.0 / std::sqrt(var + eps);
        cache.inv_std(t) = inv;
        cache.x_hat.row(t) = (X.row(t).array() - mu) * inv;
        out.row(t) = cache.x_hat.row(t).cwiseProduct(gamma.col(0).transpose()) +
                     beta.col(0).transpose();
    }
    return out;
}

inline Mat layer_norm_backward(const Mat& dY, const LayerNormCache& cache,
                               Param& gamma, Param& beta) {
    const Eigen::Index T = dY.rows(), H = dY.cols();
    Mat dX(T, H);
    for (Eigen::Index t = 0; t < T; ++t) {
        gamma.grad.col(0) += dY.row(t).cwiseProduct(cache.x_hat.row(t)).transpose();
        beta.grad.col(0) += dY.row(t).transpose();
        Eigen::RowVectorXd g = dY.row(t).cwiseProduct(gamma.value.col(0).transpose());
        double mean_g = g.mean();
        double mean_gx = g.cwiseProduct(cache.x_hat.row(t)).mean();
        dX.row(t) = (g.array() - mean_g -
                     cache.x_hat.row(t).array() * mean_gx) *
                    cache.inv_std(t);
    }
    return dX;
}

} // namespace detail

class TemporalEncoder {
public:
    TemporalEncoder(int input_dim, TemporalEncoderConfig cfg, uint64_t seed)
        : input_dim_(input_dim), cfg_(cfg) {
        cfg_.validate();
        if (input_dim < 1) throw ConfigError("input feature dim must be positive");
        if (input_dim_ != cfg_.hidden) {
            auto& Wp = params_.add("proj.W", cfg_.hidden, input_dim_);
            params_.add("proj.b", cfg_.hidden, 1);
            init_uniform(Wp, seed);
        }
        int ffn = cfg_.hidden * cfg_.ffn_multiplier;
        for (int l = 0; l < cfg_.num_layers; ++l) {
            std::string p = "layer" + std::to_string(l) + ".";
            params_.add(p + "ln1.gamma", cfg_.hidden, 1).value.setOnes();
            params_.add(p + "ln1.beta", cfg_.hidden, 1);
            for (const char* name : {"Wq", "Wk", "Wv", "Wo"}) {
                auto& W = params_.add(p + name, cfg_.hidden, cfg_.hidden);
                init_uniform(W, seed);
            }
            for (const char* name : {"bq", "bk", "bv", "bo"}) {
                params_.add(p + name, cfg_.hidden, 1);
            }
            params_.add(p + "ln2.gamma", cfg_.hidden, 1).value.setOnes();
            params_.add(p + "ln2.beta", cfg_.hidden, 1);
            auto& W1 = params_.add(p + "ffn.W1", ffn, cfg_.hidden);
            params_.add(p + "ffn.b1", ffn, 1);
            auto& W2 = params_.add(p + "ffn.W2", cfg_.hidden, ffn);
            params_.add(p + "ffn.b2", cfg_.hidden, 1);
            init_uniform(W1, seed);
            init_uniform(W2, seed);
        }
    }

    const TemporalEncoderConfig& config() const { return cfg_; }
    int input_dim() const { return input_dim_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    struct Output {
        Vec pooled;    // hidden
        Mat per_frame; // T x hidden
    };

    // Attention weights from the last forward pass, indexed [layer][head].
    const std::vector<std::vector<Mat>>& last_attention_weights() const {
        return attn_weights_;
    }

    Output forward(const FrameFeatureSequence& seq, bool training = false,
                   DeterministicRng* dropout_rng = nullptr) {
        const Eigen::Index T = seq.frames.rows();
        if (T < 1) throw Error("empty frame sequence");
        if (seq.frames.cols() != input_dim_) {
            throw DimensionMismatchError("frame feature dim " +
                                         std::to_string(seq.frames.cols()) +
                                         ", expected " + std::to_string(input_dim_));
        }
        if (static_cast<Eigen::Index>(seq.frame_mask.size()) != T) {
            throw DimensionMismatchError("frame mask length mismatch");
        }
        mask_ = seq.frame_mask;
        n_valid_ = seq.valid_count();
        if (n_valid_ == 0) throw Error("all frames masked in \"" + seq.utterance_id + "\"");

        input_zeroed_ = seq.frames;
        for (Eigen::Index t = 0; t < T; ++t) {
            if (!mask_[static_cast<size_t>(t)]) input_zeroed_.row(t).setZero();
        }
        Mat X;
        if (params_.contains("proj.W")) {
            X = input_zeroed_ * params_.at("proj.W").value.transpose();
            X.rowwise() += params_.at("proj.b").value.col(0).transpose();
        } else {
            X = input_zeroed_;
        }
        X += sinusoidal_position_encoding(T, cfg_.hidden);

        const int dh = cfg_.hidden / cfg_.num_heads;
        layer_caches_.assign(static_cast<size_t>(cfg_.num_layers), LayerCache{});
        attn_weights_.assign(static_cast<size_t>(cfg_.num_layers), {});
        for (int l = 0; l < cfg_.num_layers; ++l) {
            auto& lc = layer_caches_[static_cast<size_t>(l)];
            std::string p = "layer" + std::to_string(l) + ".";
            lc.block_in = X;
            Mat N1 = detail::layer_norm_forward(X, params_.at(p + "ln1.gamma").value,
                                                params_.at(p + "ln1.beta").value, lc.ln1);
            lc.n1 = N1;
            lc.q = N1 * params_.at(p + "Wq").value.transpose();
            lc.q.rowwise() += params_.at(p + "bq").value.col(0).transpose();
            lc.k = N1 * params_.at(p + "Wk").value.transpose();
            lc.k.rowwise() += params_.at(p + "bk").value.col(0).transpose();
            lc.v = N1 * params_.at(p + "Wv").value.transpose();
            lc.v.rowwise() += params_.at(p + "bv").value.col(0).transpose();

            Mat C(T, cfg_.hidden);
            auto& weights = attn_weights_[static_cast<size_t>(l)];
            weights.reserve(static_cast<size_t>(cfg_.num_heads));
            for (int h = 0; h < cfg_.num_heads; ++h) {
                auto res = local_attention(lc.q.middleCols(h * dh, dh),
                                           lc.k.middleCols(h * dh, dh),
                                           lc.v.middleCols(h * dh, dh),
                                           cfg_.attention_window, mask_);
                C.middleCols(h * dh, dh) = res.context;
                weights.push_back(std::move(res.weights));
            }
            lc.heads_concat = C;
            Mat A = C * params_.at(p + "Wo").value.transpose();
            A.rowwise() += params_.at(p + "bo").value.col(0).transpose();
            lc.attn_drop_mask = make_dropout_mask(A.rows(), A.cols(), training, dropout_rng);
            if (lc.attn_drop_mask.size() > 0) A = A.cwiseProduct(lc.attn_drop_mask);
            X = X + A;

            lc.mid = X;
            Mat N2 = detail::layer_norm_forward(X, params_.at(p + "ln2.gamma").value,
                                                params_.at(p + "ln2.beta").value, lc.ln2);
            lc.n2 = N2;
            lc.z1 = N2 * params_.at(p + "ffn.W1").value.transpose();
            lc.z1.rowwise() += params_.at(p + "ffn.b1").value.col(0).transpose();
            lc.h1 = lc.z1.cwiseMax(0.0);
            Mat F = lc.h1 * params_.at(p + "ffn.W2").value.transpose();
            F.rowwise() += params_.at(p + "ffn.b2").value.col(0).transpose();
            lc.ffn_drop_mask = make_dropout_mask(F.rows(), F.cols(), training, dropout_rng);
            if (lc.ffn_drop_mask.size() > 0) F = F.cwiseProduct(lc.ffn_drop_mask);
            X = X + F;
        }

        per_frame_ = X;
        Output out;
        out.per_frame = X;
        out.pooled = Vec::Zero(cfg_.hidden);
        for (Eigen::Index t = 0; t < T; ++t) {
            if (mask_[static_cast<size_t>(t)]) out.pooled += X.row(t).transpose();
        }
        out.pooled /= static_cast<double>(n_valid_);
        return out;
    }

    // Accumulates parameter gradients from the gradient of a loss with
    // respect to the pooled vector (and optionally per-frame states).
    void backward(const Vec& dPooled, const Mat* dPerFrame = nullptr) {
        const Eigen::Index T = per_frame_.rows();
        const int dh = cfg_.hidden / cfg_.num_heads;
        Mat dX = dPerFrame ? *dPerFrame : Mat::Zero(T, cfg_.hidden);
        for (Eigen::Index t = 0; t < T; ++t) {
            if (mask_[static_cast<size_t>(t)]) {
                dX.row(t) += dPooled.transpose() / static_cast<double>(n_valid_);
            }
        }
        for (int l = cfg_.num_layers; l-- > 0;) {
            auto& lc = layer_caches_[static_cast<size_t>(l)];
            std::string p = "layer" + std::to_string(l) + ".";
            // FFN block: out = mid + drop(FFN(LN2(mid)))
            Mat dF = lc.ffn_drop_mask.size() > 0 ? dX.cwiseProduct(lc.ffn_drop_mask)
                                                 : dX;
            params_.at(p + "ffn.b2").grad.col(0) += dF.colwise().sum().transpose();
            params_.at(p + "ffn.W2").grad += dF.transpose() * lc.h1;
            Mat dH1 = dF * params_.at(p + "ffn.W2").value;
            Mat dZ1 = dH1.cwiseProduct((lc.z1.array() > 0.0).cast<double>().matrix());
            params_.at(p + "ffn.b1").grad.col(0) += dZ1.colwise().sum().transpose();
            params_.at(p + "ffn.W1").grad += dZ1.transpose() * lc.n2;
            Mat dN2 = dZ1 * params_.at(p + "ffn.W1").value;
            dX += detail::layer_norm_backward(dN2, lc.ln2,
                                              params_.at(p + "ln2.gamma"),
                                              params_.at(p + "ln2.beta"));
            // attention block: mid = in + drop(Wo . heads(LN1(in)))
            Mat dA = lc.attn_drop_mask.size() > 0 ? dX.cwiseProduct(lc.attn_drop_mask)
                                                  : dX;
            params_.at(p + "bo").grad.col(0) += dA.colwise().sum().transpose();
            params_.at(p + "Wo").grad += dA.transpose() * lc.heads_concat;
            Mat dC = dA * params_.at(p + "Wo").value;
            Mat dQ = Mat::Zero(T, cfg_.hidden);
            Mat dK = Mat::Zero(T, cfg_.hidden);
            Mat dV = Mat::Zero(T, cfg_.hidden);
            for (int h = 0; h < cfg_.num_heads; ++h) {
                auto g = local_attention_backward(
                    lc.q.middleCols(h * dh, dh), lc.k.middleCols(h * dh, dh),
                    lc.v.middleCols(h * dh, dh), cfg_.attention_window, mask_,
                    attn_weights_[static_cast<size_t>(l)][static_cast<size_t>(h)],
                    dC.middleCols(h * dh, dh));
                dQ.middleCols(h * dh, dh) = g.dQ;
                dK.middleCols(h * dh, dh) = g.dK;
                dV.middleCols(h * dh, dh) = g.dV;
            }
            params_.at(p + "bq").grad.col(0) += dQ.colwise().sum().transpose();
            params_.at(p + "bk").grad.col(0) += dK.colwise().sum().transpose();
            params_.at(p + "bv").grad.col(0) += dV.colwise().sum().transpose();
            params_.at(p + "Wq").grad += dQ.transpose() * lc.n1;
            params_.at(p + "Wk").grad += dK.transpose() * lc.n1;
            params_.at(p + "Wv").grad += dV.transpose() * lc.n1;
            Mat dN1 = dQ * params_.at(p + "Wq").value +
                      dK * params_.at(p + "Wk").value +
                      dV * params_.at(p + "Wv").value;
            dX += detail::layer_norm_backward(dN1, lc.ln1,
                                              params_.at(p + "ln1.gamma"),
                                              params_.at(p + "ln1.beta"));
        }
        if (params_.contains("proj.W")) {
            params_.at("proj.W").grad += dX.transpose() * input_zeroed_;
            params_.at("proj.b").grad.col(0) += dX.colwise().sum().transpose();
        }
    }

private:
    struct LayerCache {
        Mat block_in, n1, q, k, v, heads_concat, mid, n2, z1, h1;
        Mat attn_drop_mask, ffn_drop_mask;
        detail::LayerNormCache ln1, ln2;
    };

    Mat make_dropout_mask(Eigen::Index rows, Eigen::Index cols, bool training,
                          DeterministicRng* rng) {
        if (!training || cfg_.dropout <= 0.0 || rng == nullptr) return Mat();
        double keep = 1.0 - cfg_.dropout;
        Mat mask(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                mask(i, j) = rng->uniform() < keep ? 1.0 / keep : 0.0;
            }
        }
        return mask;
    }

    int input_dim_;
    TemporalEncoderConfig cfg_;
    ParamStore params_;
    // forward caches
    std::vector<uint8_t> mask_;
    int n_valid_ = 0;
    Mat input_zeroed_;
    Mat per_frame_;
    std::vector<LayerCache> layer_caches_;
    std::vector<std::vector<Mat>> attn_weights_;
};

// Temporal encoder plus its classifier head (hidden -> 512 -> labels).
class VideoModel {
public:
    VideoModel(int input_dim, TemporalEncoderConfig cfg, int num_labels,
               uint64_t seed, int head_hidden = 512)
        : encoder_(input_dim, cfg, derive_seed(seed, "video.encoder")),
          head_({cfg.hidden, head_hidden, num_labels},
                derive_seed(seed, "video.head")) {}

    TemporalEncoder& encoder() { return encoder_; }
    Mlp& head() { return head_; }

    Vec forward(const FrameFeatureSequence& seq, bool training = false,
                DeterministicRng* dropout_rng = nullptr) {
        auto enc = encoder_.forward(seq, training, dropout_rng);
        Mat logits = head_.forward(enc.pooled.transpose(), training, dropout_rng);
        return logits.row(0).transpose();
    }

    void backward(const Vec& dLogits) {
        Mat dPooled = head_.backward(dLogits.transpose());
        encoder_.backward(dPooled.row(0).transpose());
    }

    // All trainable tensors in a stable order (encoder first, then head).
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for (auto& p : encoder_.params()) fn(p);
        for (auto& p : head_.params()) fn(p);
    }

private:
    TemporalEncoder encoder_;
    Mlp head_;
};

} // namespace mmfuse
