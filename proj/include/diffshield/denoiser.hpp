// Noise-prediction network: sinusoidal timestep embedding through a learned
// affine map, added to the noised hidden states, then one transformer layer.
// Input and output are both [max_len, width].
#pragma once

#include <cmath>
#include <vector>

#include "diffshield/model.hpp"
#include "diffshield/schedule.hpp"

namespace diffshield {

struct DenoiserConfig {
    int width = 64;
    int heads = 4;
    int ffn_mult = 4;
    int max_len = 32;
    double dropout = 0.1;
    double init_std = 0.02;
    double ln_eps = 1e-5;

    void validate() const {
        if (width < 2 || width % 2 != 0) throw std::invalid_argument("denoiser: width must be even");
        if (heads < 1 || width % heads != 0) throw std::invalid_argument("denoiser: width must be divisible by heads");
        if (ffn_mult < 1 || max_len < 1) throw std::invalid_argument("denoiser: bad dimensions");
    }
};

template <typename S>
struct DenFwd {
    TensorT<S> e_sin;  // [1, width], fixed function of t
    TensorT<S> e_t;    // [1, width], learned affine of e_sin
    TensorT<S> x;      // h_t + e_t on valid rows
    LayerCache<S> layer;
    TensorT<S> eps_hat;
};

template <typename S>
struct DiffusionDenoiser {
    DenoiserConfig cfg;
    TensorT<S> time_w, time_b;
    LayerParams<S> layer;

    void init(Rng& rng) {
        cfg.validate();
        time_w = TensorT<S>({cfg.width, cfg.width});
        rng.fill_gaussian(time_w, cfg.init_std);
        time_b = TensorT<S>({cfg.width});
        layer.init(cfg.width, cfg.heads, cfg.ffn_mult, cfg.init_std, rng);
    }

    std::vector<TensorT<S>*> parameters() {
        std::vector<TensorT<S>*> v{&time_w, &time_b};
        for (TensorT<S>* t : layer.params()) v.push_back(t);
        return v;
    }

    std::vector<std::string> parameter_names() const {
        std::vector<std::string> v{"time.w", "time.b"};
        const char* layer_names[] = {"attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
                                     "attn.wo", "attn.bo", "ln1.g",   "ln1.b",   "ffn.w1",  "ffn.b1",
                                     "ffn.w2",  "ffn.b2",  "ln2.g",   "ln2.b"};
        for (const char* n : layer_names) v.push_back(std::string("layer.") + n);
        return v;
    }

    void zero_grads() {
        for (TensorT<S>* p : parameters()) {
            p->ensure_grad();
            p->zero_grad();
        }
    }

    TensorT<S> sinusoidal(int t) const {
        TensorT<S> e({1, cfg.width});
        int half = cfg.width / 2;
        for (int i = 0; i < half; ++i) {
            double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(cfg.width));
            e.data[static_cast<std::size_t>(2 * i)] = static_cast<S>(std::sin(static_cast<double>(t) * w));
            e.data[static_cast<std::size_t>(2 * i + 1)] = static_cast<S>(std::cos(static_cast<double>(t) * w));
        }
        return e;
    }

    // e_t_pre, when given, skips the affine (precomputed per-t table).
    void predict_noise(const TensorT<S>& h_t, int t, const Mask& mask, bool training, Rng* rng,
                       DenFwd<S>& fw, const TensorT<S>* e_t_pre = nullptr) const {
        if (e_t_pre) {
            fw.e_t = *e_t_pre;
        } else {
            fw.e_sin = sinusoidal(t);
            linear_forward(fw.e_sin, time_w, time_b, fw.e_t);
        }
        fw.x = h_t;
        for (int i = 0; i < cfg.max_len; ++i) {
            if (!mask[static_cast<std::size_t>(i)]) continue;
            S* xi = fw.x.row(i);
            for (int j = 0; j < cfg.width; ++j) xi[j] += fw.e_t.data[static_cast<std::size_t>(j)];
        }
        layer_forward(fw.x, layer, mask, static_cast<S>(cfg.ln_eps), training,
                      static_cast<S>(cfg.dropout), rng, fw.layer, fw.eps_hat);
    }

    // deps_hat padding rows must be zero. Accumulates parameter grads.
    void backward(DenFwd<S>& fw, const Mask& mask, const TensorT<S>& deps_hat) {
        TensorT<S> dx;
        layer_backward(deps_hat, layer, fw.layer, mask, static_cast<S>(cfg.ln_eps), dx);
        TensorT<S> de_t({1, cfg.width});
        for (int i = 0; i < cfg.max_len; ++i) {
            if (!mask[static_cast<std::size_t>(i)]) continue;
            const S* dxi = dx.row(i);
            for (int j = 0; j < cfg.width; ++j) de_t.data[static_cast<std::size_t>(j)] += dxi[j];
        }
        TensorT<S> unused({1, cfg.width});
        linear_backward(fw.e_sin, time_w, time_b, de_t, &unused);
    }
};

}  // namespace diffshield
