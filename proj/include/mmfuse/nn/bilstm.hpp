#pragma once

// Bidirectional LSTM over per-frame facial descriptors with additive
// attention pooling: each frame's forward and backward hidden states are
// concatenated, scored through a small tanh projection, and the softmax
// weights blend the states into one context vector.

#include <cmath>
#include <string>
#include <vector>

#include "mmfuse/nn/mlp.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct FacialModelConfig {
    int recurrent_hidden = 256; // per direction
    int attention_dim = 128;
    double dropout = 0.1;

    void validate() const {
        if (recurrent_hidden < 1 || attention_dim < 1) {
            throw ConfigError("recurrent/attention sizes must be positive");
        }
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    }
};

class BiLstmAttentionEncoder {
public:
    BiLstmAttentionEncoder(int input_dim, FacialModelConfig cfg, uint64_t seed)
        : input_dim_(input_dim), cfg_(cfg) {
        cfg_.validate();
        if (input_dim < 1) throw ConfigError("input feature dim must be positive");
        const int H = cfg_.recurrent_hidden;
        for (const char* dir : {"fwd", "bwd"}) {
            std::string p = std::string(dir) + ".";
            init_uniform(params_.add(p + "Wx", 4 * H, input_dim_), seed);
            init_uniform(params_.add(p + "Wh", 4 * H, H), seed);
            params_.add(p + "b", 4 * H, 1);
        }
        init_uniform(params_.add("attn.Wa", cfg_.attention_dim, 2 * H), seed);
        params_.add("attn.ba", cfg_.attention_dim, 1);
        init_uniform(params_.add("attn.v", cfg_.attention_dim, 1), seed);
    }

    int input_dim() const { return input_dim_; }
    int state_dim() const { return 2 * cfg_.recurrent_hidden; }
    const FacialModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    struct Output {
        Vec context;   // 2H
        Vec attention; // K, sums to 1
        Mat states;    // K x 2H
    };

    Output forward(const Mat& frames) {
        const Eigen::Index K = frames.rows();
        if (K < 1) throw Error("empty face track");
        if (frames.cols() != input_dim_) {
            throw DimensionMismatchError("face feature dim " +
                                         std::to_string(frames.cols()) +
                                         ", expected " + std::to_string(input_dim_));
        }
        const int H = cfg_.recurrent_hidden;
        x_ = frames;
        states_.resize(K, 2 * H);
        run_direction(fwd_, "fwd.", /*reverse=*/false);
        run_direction(bwd_, "bwd.", /*reverse=*/true);
        states_.leftCols(H) = fwd_.h;
        states_.rightCols(H) = bwd_.h;

        // additive attention: u_k = tanh(Wa s_k + ba), score_k = v . u_k
        const Mat& Wa = params_.at("attn.Wa").value;
        const Vec ba = params_.at("attn.ba").value.col(0);
        const Vec v = params_.at("attn.v").value.col(0);
        u_.resize(K, cfg_.attention_dim);
        Vec scores(K);
        for (Eigen::Index k = 0; k < K; ++k) {
            Vec a = Wa * states_.row(k).transpose() + ba;
            u_.row(k) = a.array().tanh();
            scores(k) = v.dot(u_.row(k).transpose());
        }
        double mx = scores.maxCoeff();
        Vec ex = (scores.array() - mx).exp();
        attn_ = ex / ex.sum();

        Output out;
        out.states = states_;
        out.attention = attn_;
        out.context = states_.transpose() * attn_;
        return out;
    }

    // Accumulates parameter gradients given the loss gradient with respect
    // to the context vector.
    void backward(const Vec& dContext) {
        const Eigen::Index K = states_.rows();
        const Mat& Wa = params_.at("attn.Wa").value;
        const Vec v = params_.at("attn.v").value.col(0);

        Vec dAlpha = states_ * dContext;                   // K
        Mat dS = attn_ * dContext.transpose();             // K x 2H
        double dot = attn_.dot(dAlpha);
        Vec dScore = attn_.cwiseProduct((dAlpha.array() - dot).matrix()); // softmax Jacobian
        for (Eigen::Index k = 0; k < K; ++k) {
            Vec uk = u_.row(k).transpose();
            params_.at("attn.v").grad.col(0) += dScore(k) * uk;
            Vec da = dScore(k) * v.cwiseProduct((1.0 - uk.array().square()).matrix());
            params_.at("attn.Wa").grad += da * states_.row(k);
            params_.at("attn.ba").grad.col(0) += da;
            dS.row(k) += (Wa.transpose() * da).transpose();
        }

        const int H = cfg_.recurrent_hidden;
        backprop_direction(fwd_, "fwd.", /*reverse=*/false, dS.leftCols(H));
        backprop_direction(bwd_, "bwd.", /*reverse=*/true, dS.rightCols(H));
    }

private:
    struct DirectionCache {
        Mat i, f, g, o, c, tanhc, h; // each K x H, indexed by frame position
    };

    // Gate layout in the stacked 4H pre-activation: [input, forget, cell, output].
    void run_direction(DirectionCache& dc, const std::string& prefix, bool reverse) {
        const Eigen::Index K = x_.rows();
        const int H = cfg_.recurrent_hidden;
        const Mat& Wx = params_.at(prefix + "Wx").value;
        const Mat& Wh = params_.at(prefix + "Wh").value;
        const Vec b = params_.at(prefix + "b").value.col(0);
        dc.i.resize(K, H); dc.f.resize(K, H); dc.g.resize(K, H);
        dc.o.resize(K, H); dc.c.resize(K, H); dc.tanhc.resize(K, H);
        dc.h.resize(K, H);
        Vec h_prev = Vec::Zero(H), c_prev = Vec::Zero(H);
        for (Eigen::Index step = 0; step < K; ++step) {
            Eigen::Index k = reverse ? K - 1 - step : step;
            Vec z = Wx * x_.row(k).transpose() + Wh * h_prev + b;
            Vec i = z.segment(0, H).unaryExpr([](double a) { return 1.0 / (1.0 + std::exp(-a)); });
            Vec f = z.segment(H, H).unaryExpr([](double a) { return 1.0 / (1.0 + std::exp(-a)); });
            Vec g = z.segment(2 * H, H).array().tanh();
            Vec o = z.segment(3 * H, H).unaryExpr([](double a) { return 1.0 / (1.0 + std::exp(-a)); });
            Vec c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
            Vec tc = c.array().tanh();
            Vec h = o.cwiseProduct(tc);
            dc.i.row(k) = i; dc.f.row(k) = f; dc.g.row(k) = g; dc.o.row(k) = o;
            dc.c.row(k) = c; dc.tanhc.row(k) = tc; dc.h.row(k) = h;
            h_prev = h;
            c_prev = c;
        }
    }

    void backprop_direction(const DirectionCache& dc, const std::string& prefix,
                            bool reverse, const Mat& dH) {
        const Eigen::Index K = x_.rows();
        const int H = cfg_.recurrent_hidden;
        const Mat& Wh = params_.at(prefix + "Wh").value;
        Mat& gWx = params_.at(prefix + "Wx").grad;
        Mat& gWh = params_.at(prefix + "Wh").grad;
        Mat& gb = params_.at(prefix + "b").grad;
        Vec dh_carry = Vec::Zero(H), dc_carry = Vec::Zero(H);
        for (Eigen::Index step = K; step-- > 0;) {
            Eigen::Index k = reverse ? K - 1 - step : step;
            Eigen::Index k_prev = reverse ? k + 1 : k - 1;
            bool has_prev = step > 0;
            Vec dh = dH.row(k).transpose() + dh_carry;
            Vec i = dc.i.row(k), f = dc.f.row(k), g = dc.g.row(k), o = dc.o.row(k);
            Vec tc = dc.tanhc.row(k);
            Vec d_o = dh.cwiseProduct(tc);
            Vec dcell = dc_carry +
                        dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix());
            Vec c_prev = has_prev ? Vec(dc.c.row(k_prev).transpose()) : Vec(Vec::Zero(H));
            Vec d_i = dcell.cwiseProduct(g);
            Vec d_f = dcell.cwiseProduct(c_prev);
            Vec d_g = dcell.cwiseProduct(i);
            Vec dz(4 * H);
            dz.segment(0, H) = d_i.cwiseProduct(i).cwiseProduct((1.0 - i.array()).matrix());
            dz.segment(H, H) = d_f.cwiseProduct(f).cwiseProduct((1.0 - f.array()).matrix());
            dz.segment(2 * H, H) = d_g.cwiseProduct((1.0 - g.array().square()).matrix());
            dz.segment(3 * H, H) = d_o.cwiseProduct(o).cwiseProduct((1.0 - o.array()).matrix());
            gWx += dz * x_.row(k);
            if (has_prev) gWh += dz * dc.h.row(k_prev);
            gb.col(0) += dz;
            dh_carry = Wh.transpose() * dz;
            dc_carry = dcell.cwiseProduct(f);
        }
    }

    int input_dim_;
    FacialModelConfig cfg_;
    ParamStore params_;
    // forward caches
    Mat x_, states_, u_;
    Vec attn_;
    DirectionCache fwd_, bwd_;
};

// BiLSTM-attention encoder plus a single affine classifier head over the
// context vector, with inverted dropout on the context during training.
class FacialModel {
public:
    FacialModel(int input_dim, FacialModelConfig cfg, int num_labels, uint64_t seed)
        : encoder_(input_dim, cfg, derive_seed(seed, "facial.encoder")),
          head_({2 * cfg.recurrent_hidden, num_labels},
                derive_seed(seed, "facial.head")) {}

    BiLstmAttentionEncoder& encoder() { return encoder_; }
    Mlp& head() { return head_; }

    Vec forward(const Mat& frames, bool training = false,
                DeterministicRng* dropout_rng = nullptr) {
        auto enc = encoder_.forward(frames);
        context_ = enc.context;
        double p = encoder_.config().dropout;
        drop_mask_.resize(0);
        if (training && p > 0.0 && dropout_rng != nullptr) {
            double keep = 1.0 - p;
            drop_mask_.resize(context_.size());
            for (Eigen::Index j = 0; j < context_.size(); ++j) {
                drop_mask_(j) = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
            }
            context_ = context_.cwiseProduct(drop_mask_);
        }
        Mat logits = head_.forward(context_.transpose(), false, nullptr);
        return logits.row(0).transpose();
    }

    void backward(const Vec& dLogits) {
        Mat dContext = head_.backward(dLogits.transpose());
        Vec dc = dContext.row(0).transpose();
        if (drop_mask_.size() > 0) dc = dc.cwiseProduct(drop_mask_);
        encoder_.backward(dc);
    }

    template <typename Fn>
    void for_each_param(Fn&& fn) {
        for (auto& p : encoder_.params()) fn(p);
        for (auto& p : head_.params()) fn(p);
    }

private:
    BiLstmAttentionEncoder encoder_;
    Mlp head_;
    Vec context_, drop_mask_;
};

} // namespace mmfuse
