#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <vector>

#include "mmfuse/common.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// One named parameter tensor with its gradient accumulator. Vectors are
// stored as n x 1 matrices.
struct Param {
    std::string name;
    Mat value;
    Mat grad;
};

// Insertion-ordered parameter set. The order defines the checkpoint tensor
// order and the optimizer update order, so it must be construction-stable.
class ParamStore {
public:
    Param& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        if (by_name_.count(name)) throw Error("duplicate parameter \"" + name + "\"");
        by_name_[name] = params_.size();
        params_.push_back({name, Mat::Zero(rows, cols), Mat::Zero(rows, cols)});
        return params_.back();
    }

    Param& at(const std::string& name) {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw Error("unknown parameter \"" + name + "\"");
        return params_[it->second];
    }

    const Param& at(const std::string& name) const {
        auto it = by_name_.find(name);
        if (it == by_name_.end()) throw Error("unknown parameter \"" + name + "\"");
        return params_[it->second];
    }

    bool contains(const std::string& name) const { return by_name_.count(name) > 0; }

    void zero_grad() {
        for (auto& p : params_) p.grad.setZero();
    }

    size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    // Deep copy of values only (used for best-checkpoint retention).
    std::vector<Mat> snapshot_values() const {
        std::vector<Mat> out;
        out.reserve(params_.size());
        for (const auto& p : params_) out.push_back(p.value);
        return out;
    }

    void restore_values(const std::vector<Mat>& values) {
        if (values.size() != params_.size()) throw Error("snapshot size mismatch");
        for (size_t i = 0; i < values.size(); ++i) params_[i].value = values[i];
    }

private:
    std::deque<Param> params_; // deque: references from add() stay valid
    std::map<std::string, size_t> by_name_;
};

// Uniform Glorot-style init; every tensor gets its own derived stream so
// adding a parameter never shifts another one's values.
inline void init_uniform(Param& p, uint64_t seed) {
    double fan_in = static_cast<double>(p.value.cols());
    double fan_out = static_cast<double>(p.value.rows());
    double limit = std::sqrt(6.0 / (fan_in + fan_out));
    DeterministicRng rng(derive_seed(seed, "init:" + p.name));
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
            p.value(i, j) = rng.uniform(-limit, limit);
        }
    }
}

} // namespace mmfuse
