#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "nn.hpp"

namespace tcorres {

// Cosine annealing from base_lr down to min_lr over total_steps. The three
// landmark values (start, midpoint, end) are returned exactly.
inline double cosine_lr(int64_t step, int64_t total_steps, double base_lr, double min_lr) {
    if (total_steps < 1) throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
    if (step < 0) throw std::invalid_argument("cosine_lr: negative step");
    if (step > total_steps)
        throw std::invalid_argument("cosine_lr: step " + std::to_string(step) +
                                    " past total_steps " + std::to_string(total_steps));
    if (step == 0) return base_lr;
    if (step == total_steps) return min_lr;
    if (2 * step == total_steps) return 0.5 * (base_lr + min_lr);
    double t = static_cast<double>(step) / static_cast<double>(total_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(3.14159265358979323846 * t));
}

// Bias-corrected Adam over a ParamStore, with global gradient-norm clipping.
// Parameters with no gradient buffer are treated as zero-gradient.
template <class T>
class Adam {
public:
    explicit Adam(ParamStore<T>& params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8, double clip_norm = 1.0)
        : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps), clip_(clip_norm) {}

    void step(double lr) {
        double norm2 = 0;
        for (auto& [name, p] : params_) {
            if (!p.has_grad()) continue;
            for (T g : p.grad()) {
                if (!std::isfinite(static_cast<double>(g)))
                    throw std::runtime_error("non-finite gradient for parameter " + name);
                norm2 += static_cast<double>(g) * static_cast<double>(g);
            }
        }
        const double norm = std::sqrt(norm2);
        const double scale = (clip_ > 0 && norm > clip_) ? clip_ / norm : 1.0;

        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& [name, p] : params_) {
            auto& m = m_[name];
            auto& v = v_[name];
            const size_t n = static_cast<size_t>(p.numel());
            if (m.empty()) m.assign(n, 0.0);
            if (v.empty()) v.assign(n, 0.0);
            auto& value = p.raw_value();
            const bool has_grad = p.has_grad();
            for (size_t i = 0; i < n; ++i) {
                const double g = has_grad ? scale * static_cast<double>(p.grad()[i]) : 0.0;
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                value[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    uint64_t steps_taken() const { return t_; }

    void export_state(TrainState& state) const {
        state.adam_t = t_;
        state.adam_m = m_;
        state.adam_v = v_;
    }

    void import_state(const TrainState& state) {
        t_ = state.adam_t;
        m_ = state.adam_m;
        v_ = state.adam_v;
        for (const auto& [name, blob] : m_) {
            if (!params_.contains(name))
                throw std::invalid_argument("optimizer state for unknown parameter: " + name);
            if (blob.size() != static_cast<size_t>(params_.at(name).numel()))
                throw std::invalid_argument("optimizer state size mismatch for " + name);
        }
    }

private:
    ParamStore<T>& params_;
    double beta1_, beta2_, eps_, clip_;
    uint64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

}  // namespace tcorres
