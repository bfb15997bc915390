#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <vector>

#include "svll/tensor.hpp"

namespace svll {

/// Adam moment buffers, one pair per parameter in registration order.
template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    long step = 0;

    explicit AdamState(const std::vector<Parameter<T>*>& params) {
        for (auto* p : params) {
            m.push_back(Tensor<T>(p->value.shape, T(0)));
            v.push_back(Tensor<T>(p->value.shape, T(0)));
        }
    }
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One Adam update with bias correction. Gradients are read from each
/// parameter's grad slot; non-trainable parameters still decay their
/// moments (zero-gradient semantics) but their values never move.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState<T>& state, const AdamConfig& cfg) {
    if (params.size() != state.m.size()) throw std::invalid_argument("adam_step: state/param count mismatch");
    if (!(cfg.lr > 0)) throw std::invalid_argument("adam_step: lr must be positive");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<T>& p = *params[i];
        if (!p.grad.same_shape(p.value)) throw std::invalid_argument("adam_step: grad shape mismatch for '" + p.name + "'");
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.trainable ? static_cast<double>(p.grad[j]) : 0.0;
            const double m = cfg.beta1 * static_cast<double>(state.m[i][j]) + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * static_cast<double>(state.v[i][j]) + (1.0 - cfg.beta2) * g * g;
            state.m[i][j] = static_cast<T>(m);
            state.v[i][j] = static_cast<T>(v);
            if (p.trainable) {
                const double mhat = m / bc1;
                const double vhat = v / bc2;
                p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
            }
        }
    }
}

/// Half-cosine annealing from `base` at epoch 0 to zero at `total`.
inline double cosine_lr(int epoch, int total_epochs, double base) {
    if (total_epochs <= 0) throw std::invalid_argument("cosine_lr: total_epochs must be positive");
    if (epoch < 0 || epoch > total_epochs) throw std::invalid_argument("cosine_lr: epoch out of range");
    return base * 0.5 * (1.0 + std::cos(3.141592653589793 * static_cast<double>(epoch) / static_cast<double>(total_epochs)));
}

/// Snap to the shortest 12-significant-digit decimal. Decade decays of
/// decimal rates would otherwise drift by an ulp per multiply (the double
/// product 5e-6 * 0.1 is not the double 5e-7).
inline double snap_decimal(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", x);
    return std::strtod(buf, nullptr);
}

/// Linear warmup then step decay. Defaults are the fine-tuning schedule:
/// 5e-7 -> 5e-6 over the first 10 epochs, then x0.1 at epochs 30 and 50.
struct WarmupStepSchedule {
    double start = 5e-7;
    double peak = 5e-6;
    int warmup_epochs = 10;
    std::vector<int> decay_epochs = {30, 50};
    double decay_factor = 0.1;

    double rate(int epoch) const {
        if (epoch < 0) throw std::invalid_argument("warmup_step_lr: negative epoch");
        if (epoch < warmup_epochs) {
            return start + (peak - start) * static_cast<double>(epoch) / static_cast<double>(warmup_epochs);
        }
        double r = peak;
        for (int d : decay_epochs) {
            if (epoch >= d) r = snap_decimal(r * decay_factor);
        }
        return r;
    }
};

inline double warmup_step_lr(int epoch, const WarmupStepSchedule& sched = {}) { return sched.rate(epoch); }

}  // namespace svll
