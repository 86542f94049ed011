#pragma once

#include <vector>

#include "qsr/tensor.hpp"

namespace qsr {

class SgdMomentum {
public:
    SgdMomentum(std::vector<Tensor> params, double lr, double momentum, double weight_decay)
        : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
        for (auto& p : params_) velocity_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor& p = params_[pi];
            if (!p.has_grad()) continue;
            double* v = velocity_[pi].data();
            double* g = p.grad();
            double* x = p.data();
            for (long i = 0; i < p.numel(); ++i) {
                const double grad = g[i] + weight_decay_ * x[i];
                v[i] = momentum_ * v[i] + grad;
                x[i] -= lr_ * v[i];
            }
        }
    }

private:
    std::vector<Tensor> params_;
    double lr_, momentum_, weight_decay_;
    std::vector<std::vector<double>> velocity_;
};

class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8, double weight_decay = 0.0)
        : params_(std::move(params)),
          lr_(lr),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps),
          weight_decay_(weight_decay) {
        for (auto& p : params_) {
            m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
            v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor& p = params_[pi];
            if (!p.has_grad()) continue;
            double* m = m_[pi].data();
            double* v = v_[pi].data();
            double* g = p.grad();
            double* x = p.data();
            for (long i = 0; i < p.numel(); ++i) {
                const double grad = g[i] + weight_decay_ * x[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad * grad;
                x[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            }
        }
    }

private:
    std::vector<Tensor> params_;
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Cosine annealing from lr0 to 0 over `total` epochs.
inline double cosine_lr(double lr0, int epoch, int total) {
    if (total <= 0) return lr0;
    const double x = static_cast<double>(epoch) / static_cast<double>(total);
    return 0.5 * lr0 * (1.0 + std::cos(3.14159265358979323846 * x));
}

}  // namespace qsr
