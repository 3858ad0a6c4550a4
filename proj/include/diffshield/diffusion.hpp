// Forward noising, reverse denoising step, and the ensembled inference-time
// denoising pass over encoder hidden states.
#pragma once

#include <vector>

#include "diffshield/denoiser.hpp"
#include "diffshield/schedule.hpp"

namespace diffshield {

struct InferenceConfig {
    int t_prime = 5;          // reverse steps at inference
    int k = 10;               // ensemble size
    bool zero_final_z = true;  // suppress injected noise on the last reverse step
    bool use_sigma = true;     // injected noise at intermediate steps
    bool noise_with_tprime = false;  // noise with alpha_bar(t') instead of alpha_bar(1)

    void validate(const NoiseSchedule& s) const {
        if (t_prime < 1 || t_prime > s.T)
            throw std::invalid_argument("inference: t_prime outside [1,T]");
        if (k < 1) throw std::invalid_argument("inference: k < 1");
    }
};

// h_t = sqrt(alpha_bar_t) h + sqrt(1 - alpha_bar_t) eps, over all elements.
template <typename S>
TensorT<S> add_noise(const TensorT<S>& h, int t, const TensorT<S>& eps, const NoiseSchedule& sched) {
    check_same_shape(h, eps, "add_noise");
    double ab = sched.alpha_bar_at(t);
    S c1 = static_cast<S>(std::sqrt(ab));
    S c2 = static_cast<S>(std::sqrt(1.0 - ab));
    TensorT<S> out;
    out.shape = h.shape;
    out.data.resize(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) out.data[i] = c1 * h.data[i] + c2 * eps.data[i];
    return out;
}

// h_{t-1} = (h_t - ((1-alpha_t)/sqrt(1-alpha_bar_t)) eps_hat) / sqrt(alpha_t) + sigma_t z.
// Pass an empty z to skip the injected-noise term.
template <typename S>
void reverse_step(const TensorT<S>& h_t, int t, const TensorT<S>& eps_hat, const NoiseSchedule& sched,
                  const TensorT<S>& z, TensorT<S>& out) {
    check_same_shape(h_t, eps_hat, "reverse_step");
    double a = sched.alpha_at(t);
    double ab = sched.alpha_bar_at(t);
    S coef = static_cast<S>((1.0 - a) / std::sqrt(1.0 - ab));
    S inv_sqrt_a = static_cast<S>(1.0 / std::sqrt(a));
    S sig = static_cast<S>(sched.sigma_at(t));
    out.shape = h_t.shape;
    out.data.resize(h_t.size());
    if (z.data.empty()) {
        for (std::size_t i = 0; i < h_t.size(); ++i)
            out.data[i] = (h_t.data[i] - coef * eps_hat.data[i]) * inv_sqrt_a;
    } else {
        check_same_shape(h_t, z, "reverse_step z");
        for (std::size_t i = 0; i < h_t.size(); ++i)
            out.data[i] = (h_t.data[i] - coef * eps_hat.data[i]) * inv_sqrt_a + sig * z.data[i];
    }
}

template <typename S>
struct EnsembleScratch {
    std::vector<TensorT<S>> eps;
    TensorT<S> state, next, z, h_avg;
    DenFwd<S> den_fw;
};

// Runs k reverse chains from independently noised copies of h and averages
// the results. Draw order is fixed: the k initial noises first, then the
// per-step z of each chain in turn. time_table, when given, holds the
// precomputed affine time embedding for t = 1..T.
template <typename S>
const TensorT<S>& denoise_ensemble(const TensorT<S>& h, const Mask& mask, const DiffusionDenoiser<S>& den,
                                   const NoiseSchedule& sched, const InferenceConfig& icfg, Rng& rng,
                                   EnsembleScratch<S>& sc, const std::vector<TensorT<S>>* time_table = nullptr) {
    icfg.validate(sched);
    int noise_t = icfg.noise_with_tprime ? icfg.t_prime : 1;
    sc.eps.resize(static_cast<std::size_t>(icfg.k));
    for (auto& e : sc.eps) {
        e.shape = h.shape;
        e.data.resize(h.size());
        rng.fill_gaussian(e);
    }
    resize_zero(sc.h_avg, h.shape);
    S invk = S(1.0 / static_cast<double>(icfg.k));
    for (int c = 0; c < icfg.k; ++c) {
        sc.state = add_noise(h, noise_t, sc.eps[static_cast<std::size_t>(c)], sched);
        for (int i = 0; i < icfg.t_prime; ++i) {
            int t = icfg.t_prime - i;
            const TensorT<S>* e_t = time_table ? &(*time_table)[static_cast<std::size_t>(t - 1)] : nullptr;
            den.predict_noise(sc.state, t, mask, false, nullptr, sc.den_fw, e_t);
            bool want_z = icfg.use_sigma && !(t == 1 && icfg.zero_final_z);
            if (want_z) {
                sc.z.shape = h.shape;
                sc.z.data.resize(h.size());
                rng.fill_gaussian(sc.z);
            } else {
                sc.z.shape = h.shape;
                sc.z.data.clear();
            }
            reverse_step(sc.state, t, sc.den_fw.eps_hat, sched, sc.z, sc.next);
            sc.state.data.swap(sc.next.data);
            sc.state.shape = sc.next.shape;
        }
        for (std::size_t i = 0; i < h.size(); ++i) sc.h_avg.data[i] += invk * sc.state.data[i];
    }
    return sc.h_avg;
}

template <typename S>
std::vector<TensorT<S>> build_time_table(const DiffusionDenoiser<S>& den, const NoiseSchedule& sched) {
    std::vector<TensorT<S>> table(static_cast<std::size_t>(sched.T));
    for (int t = 1; t <= sched.T; ++t) {
        TensorT<S> e_sin = den.sinusoidal(t);
        linear_forward(e_sin, den.time_w, den.time_b, table[static_cast<std::size_t>(t - 1)]);
    }
    return table;
}

}  // namespace diffshield
