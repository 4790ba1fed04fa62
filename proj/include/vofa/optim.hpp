#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vofa/tensor.hpp"

namespace vofa {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay, bias-corrected moments. Moment slots are aligned
// with the parameter list handed to step().
template <class R>
struct AdamWState {
    AdamWConfig cfg;
    int64_t step_count = 0;
    std::vector<std::vector<R>> m;
    std::vector<std::vector<R>> v;

    void ensure(size_t n_params) {
        if (m.size() == n_params) return;
        if (!m.empty()) throw TensorError("adamw: parameter count changed mid-run");
        m.resize(n_params);
        v.resize(n_params);
    }
};

template <class R>
void optimizer_step(std::vector<Tensor<R>*>& params, const std::vector<Tensor<R>>& grads, AdamWState<R>& state) {
    if (params.size() != grads.size())
        throw TensorError("adamw: " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(params.size()) + " parameters");
    state.ensure(params.size());
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(state.cfg.beta2, t);

    for (size_t i = 0; i < params.size(); ++i) {
        Tensor<R>& p = *params[i];
        const Tensor<R>& g = grads[i];
        if (g.shape != p.shape)
            throw TensorError("adamw: gradient shape " + shape_str(g.shape) + " does not match parameter " +
                              shape_str(p.shape));
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.empty()) {
            m.assign(static_cast<size_t>(p.numel()), R(0));
            v.assign(static_cast<size_t>(p.numel()), R(0));
        }
        R* pp = p.ptr();
        const R* pg = g.ptr();
        const R b1 = R(state.cfg.beta1), b2 = R(state.cfg.beta2);
        for (size_t j = 0; j < m.size(); ++j) {
            m[j] = b1 * m[j] + (R(1) - b1) * pg[j];
            v[j] = b2 * v[j] + (R(1) - b2) * pg[j] * pg[j];
            const double mhat = static_cast<double>(m[j]) / bc1;
            const double vhat = static_cast<double>(v[j]) / bc2;
            const double update = mhat / (std::sqrt(vhat) + state.cfg.eps) +
                                  state.cfg.weight_decay * static_cast<double>(pp[j]);
            pp[j] = static_cast<R>(static_cast<double>(pp[j]) - state.cfg.lr * update);
        }
    }
}

}  // namespace vofa
