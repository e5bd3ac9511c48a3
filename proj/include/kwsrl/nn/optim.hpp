#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kwsrl/nn/tensor.hpp"

namespace kwsrl::nn {

enum class OptimizerKind { sgd, adam };

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// SGD or Adam over an ordered parameter list. Adam moments are created on
// the first step and must keep matching the parameter shapes afterwards.
template <typename T>
class Optimizer {
public:
    static Optimizer sgd(double learning_rate) { return Optimizer(OptimizerKind::sgd, learning_rate, {}); }
    static Optimizer adam(double learning_rate, AdamHyper hyper = {})
    {
        return Optimizer(OptimizerKind::adam, learning_rate, hyper);
    }

    OptimizerKind kind() const noexcept { return kind_; }
    double learning_rate() const noexcept { return lr_; }
    std::uint64_t steps() const noexcept { return step_; }

    void step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>* const> grads)
    {
        if (params.size() != grads.size())
            throw ShapeError("optimizer: " + std::to_string(params.size()) + " parameters but " +
                             std::to_string(grads.size()) + " gradients");
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i]->shape() != grads[i]->shape())
                throw ShapeError("optimizer: parameter " + shape_string(params[i]->shape()) +
                                 " vs gradient " + shape_string(grads[i]->shape()));
        ++step_;
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < params.size(); ++i) {
                auto p = params[i]->data();
                auto g = grads[i]->data();
                for (std::size_t j = 0; j < p.size(); ++j)
                    p[j] = static_cast<T>(p[j] - lr_ * static_cast<double>(g[j]));
            }
            return;
        }

        if (m_.empty()) {
            for (const Tensor<T>* p : params) {
                m_.emplace_back(p->shape());
                v_.emplace_back(p->shape());
            }
        }
        if (m_.size() != params.size()) throw ShapeError("optimizer: parameter list changed between steps");
        const double t = static_cast<double>(step_);
        const double c1 = 1.0 - std::pow(hyper_.beta1, t);
        const double c2 = 1.0 - std::pow(hyper_.beta2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (m_[i].shape() != params[i]->shape())
                throw ShapeError("optimizer: moment " + shape_string(m_[i].shape()) + " vs parameter " +
                                 shape_string(params[i]->shape()));
            auto p = params[i]->data();
            auto g = grads[i]->data();
            auto m = m_[i].data();
            auto v = v_[i].data();
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = g[j];
                const double mj = hyper_.beta1 * m[j] + (1.0 - hyper_.beta1) * gj;
                const double vj = hyper_.beta2 * v[j] + (1.0 - hyper_.beta2) * gj * gj;
                m[j] = static_cast<T>(mj);
                v[j] = static_cast<T>(vj);
                const double m_hat = mj / c1;
                const double v_hat = vj / c2;
                p[j] = static_cast<T>(p[j] - lr_ * m_hat / (std::sqrt(v_hat) + hyper_.epsilon));
            }
        }
    }

    const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
    const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }

private:
    Optimizer(OptimizerKind kind, double lr, AdamHyper hyper) : kind_(kind), lr_(lr), hyper_(hyper) {}

    OptimizerKind kind_;
    double lr_;
    AdamHyper hyper_;
    std::uint64_t step_ = 0;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
};

}  // namespace kwsrl::nn
