// Adam with bias correction; optional decoupled weight decay (off by default).
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "diffshield/tensor.hpp"

namespace diffshield {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

template <typename S>
struct Adam {
    AdamConfig cfg;
    std::vector<std::vector<S>> m, v;
    std::int64_t t = 0;

    explicit Adam(AdamConfig c = {}) : cfg(c) {}

    // Parameter list order must stay fixed across steps.
    void step(const std::vector<TensorT<S>*>& params) {
        if (m.empty()) {
            m.resize(params.size());
            v.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m[i].assign(params[i]->size(), S(0));
                v[i].assign(params[i]->size(), S(0));
            }
        }
        if (m.size() != params.size()) throw std::invalid_argument("adam: parameter list changed");
        ++t;
        double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            TensorT<S>& p = *params[i];
            if (p.grad.size() != p.data.size()) throw std::invalid_argument("adam: missing grad buffer");
            S* mi = m[i].data();
            S* vi = v[i].data();
            for (std::size_t j = 0; j < p.size(); ++j) {
                double gj = static_cast<double>(p.grad[j]);
                double mj = cfg.beta1 * static_cast<double>(mi[j]) + (1.0 - cfg.beta1) * gj;
                double vj = cfg.beta2 * static_cast<double>(vi[j]) + (1.0 - cfg.beta2) * gj * gj;
                mi[j] = static_cast<S>(mj);
                vi[j] = static_cast<S>(vj);
                double mhat = mj / bc1;
                double vhat = vj / bc2;
                double upd = cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
                if (cfg.weight_decay > 0.0) upd += cfg.lr * cfg.weight_decay * static_cast<double>(p.data[j]);
                p.data[j] = static_cast<S>(static_cast<double>(p.data[j]) - upd);
            }
        }
    }
};

}  // namespace diffshield
