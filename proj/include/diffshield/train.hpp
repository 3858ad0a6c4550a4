// Training loops. All of them are deterministic given the rng seed: example
// order, dropout masks, and noise draws come from the single Rng passed in.
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "diffshield/adam.hpp"
#include "diffshield/dataset.hpp"
#include "diffshield/diffusion.hpp"
#include "diffshield/model.hpp"

namespace diffshield {

struct TrainSettings {
    int epochs = 8;
    int batch = 32;
    double lr = 1e-3;
    double weight_decay = 0.0;
};

struct AdvSettings {
    int inner_steps = 5;
    double step_size = 0.01;
    double norm_bound = 0.3;
};

inline void check_loss_finite(double loss, const char* stage) {
    if (!std::isfinite(loss)) throw std::runtime_error(std::string(stage) + ": loss diverged");
}

inline std::vector<TokenSequence> tokenize_all(const std::vector<Example>& examples, const Vocab& vocab, int max_len) {
    std::vector<TokenSequence> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back(tokenize(ex.text, vocab, max_len));
    return out;
}

template <typename S>
std::vector<double> train_clean(EncoderClassifier<S>& m, const std::vector<TokenSequence>& seqs,
                                const std::vector<int>& labels, const TrainSettings& ts, Rng& rng) {
    Adam<S> opt({.lr = ts.lr, .weight_decay = ts.weight_decay});
    auto params = m.parameters();
    std::vector<std::size_t> order(seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    ModelFwd<S> fw;
    TensorT<S> dlogits;
    std::vector<double> epoch_losses;
    for (int ep = 0; ep < ts.epochs; ++ep) {
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(ts.batch)) {
            std::size_t bend = std::min(order.size(), b + static_cast<std::size_t>(ts.batch));
            int bsz = static_cast<int>(bend - b);
            m.zero_grads();
            for (std::size_t i = b; i < bend; ++i) {
                const TokenSequence& seq = seqs[order[i]];
                forward_logits<S>(m, seq, nullptr, true, &rng, fw);
                S loss = softmax_xent_forward(fw.logits, {labels[order[i]]}, fw.probs);
                total += static_cast<double>(loss);
                resize_zero(dlogits, fw.logits.shape);
                softmax_xent_backward(fw.probs, {labels[order[i]]}, S(1.0 / bsz), dlogits);
                backward_logits(m, fw, dlogits, static_cast<TensorT<S>*>(nullptr));
            }
            opt.step(params);
        }
        double mean = total / static_cast<double>(order.size());
        check_loss_finite(mean, "train_clean");
        epoch_losses.push_back(mean);
    }
    return epoch_losses;
}

// Embedding-space adversarial training: per batch, a per-example perturbation
// delta starts at zero and takes inner_steps normalized ascent steps on the
// loss, projected onto the L2 ball of radius norm_bound after each step.
// Parameter gradients are averaged over all inner steps, then applied once.
template <typename S>
std::vector<double> train_adversarial(EncoderClassifier<S>& m, const std::vector<TokenSequence>& seqs,
                                      const std::vector<int>& labels, const TrainSettings& ts,
                                      const AdvSettings& adv, Rng& rng) {
    Adam<S> opt({.lr = ts.lr, .weight_decay = ts.weight_decay});
    auto params = m.parameters();
    std::vector<std::size_t> order(seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    ModelFwd<S> fw;
    TensorT<S> dlogits, demb;
    std::vector<double> epoch_losses;
    for (int ep = 0; ep < ts.epochs; ++ep) {
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        std::size_t forward_count = 0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(ts.batch)) {
            std::size_t bend = std::min(order.size(), b + static_cast<std::size_t>(ts.batch));
            int bsz = static_cast<int>(bend - b);
            m.zero_grads();
            std::vector<TensorT<S>> deltas(static_cast<std::size_t>(bsz),
                                           TensorT<S>({m.cfg.max_len, m.cfg.width}));
            S gscale = S(1.0 / (static_cast<double>(bsz) * static_cast<double>(adv.inner_steps)));
            for (int step = 0; step < adv.inner_steps; ++step) {
                for (std::size_t i = b; i < bend; ++i) {
                    TensorT<S>& delta = deltas[i - b];
                    const TokenSequence& seq = seqs[order[i]];
                    forward_logits(m, seq, &delta, true, &rng, fw);
                    S loss = softmax_xent_forward(fw.logits, {labels[order[i]]}, fw.probs);
                    total += static_cast<double>(loss);
                    ++forward_count;
                    resize_zero(dlogits, fw.logits.shape);
                    softmax_xent_backward(fw.probs, {labels[order[i]]}, gscale, dlogits);
                    backward_logits(m, fw, dlogits, &demb);
                    // ascent direction: normalized gradient at the embedding output
                    double gn = 0.0;
                    for (S g : demb.data) gn += static_cast<double>(g) * static_cast<double>(g);
                    gn = std::sqrt(gn);
                    if (gn > 0.0) {
                        S c = static_cast<S>(adv.step_size / gn);
                        for (std::size_t e = 0; e < delta.size(); ++e) delta.data[e] += c * demb.data[e];
                    }
                    double dn = 0.0;
                    for (S d : delta.data) dn += static_cast<double>(d) * static_cast<double>(d);
                    dn = std::sqrt(dn);
                    if (dn > adv.norm_bound) {
                        S c = static_cast<S>(adv.norm_bound / dn);
                        for (auto& d : delta.data) d *= c;
                    }
                }
            }
            opt.step(params);
        }
        double mean = total / static_cast<double>(forward_count);
        check_loss_finite(mean, "train_adversarial");
        epoch_losses.push_back(mean);
    }
    return epoch_losses;
}

// Noise-prediction training on precomputed hidden states from the frozen
// encoder. Per example: draw t uniform in [1,T], draw eps, noise, regress.
template <typename S>
std::vector<double> train_denoiser(DiffusionDenoiser<S>& den, const std::vector<TensorT<S>>& hidden,
                                   const std::vector<Mask>& masks, const NoiseSchedule& sched,
                                   const TrainSettings& ts, Rng& rng) {
    if (hidden.size() != masks.size() || hidden.empty())
        throw std::invalid_argument("train_denoiser: empty or mismatched inputs");
    Adam<S> opt({.lr = ts.lr, .weight_decay = ts.weight_decay});
    auto params = den.parameters();
    std::vector<std::size_t> order(hidden.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    DenFwd<S> fw;
    TensorT<S> eps, deps;
    std::vector<double> epoch_losses;
    for (int ep = 0; ep < ts.epochs; ++ep) {
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(ts.batch)) {
            std::size_t bend = std::min(order.size(), b + static_cast<std::size_t>(ts.batch));
            int bsz = static_cast<int>(bend - b);
            den.zero_grads();
            for (std::size_t i = b; i < bend; ++i) {
                const TensorT<S>& h = hidden[order[i]];
                const Mask& mask = masks[order[i]];
                int t = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(sched.T)));
                eps.shape = h.shape;
                eps.data.resize(h.size());
                rng.fill_gaussian(eps);
                TensorT<S> h_t = add_noise(h, t, eps, sched);
                den.predict_noise(h_t, t, mask, true, &rng, fw);
                S loss = mse_masked_forward(fw.eps_hat, eps, mask);
                total += static_cast<double>(loss);
                resize_zero(deps, fw.eps_hat.shape);
                mse_masked_backward(fw.eps_hat, eps, mask, S(1.0 / bsz), deps);
                den.backward(fw, mask, deps);
            }
            opt.step(params);
        }
        double mean = total / static_cast<double>(order.size());
        check_loss_finite(mean, "train_denoiser");
        epoch_losses.push_back(mean);
    }
    return epoch_losses;
}

// Optional second-stage head tuning on denoised ensembled states. Touches
// only head_w/head_b; encoder and denoiser stay frozen.
template <typename S>
std::vector<double> train_head_recalibration(EncoderClassifier<S>& m, const DiffusionDenoiser<S>& den,
                                             const std::vector<TensorT<S>>& hidden, const std::vector<Mask>& masks,
                                             const std::vector<int>& labels, const NoiseSchedule& sched,
                                             const InferenceConfig& icfg, const TrainSettings& ts, Rng& rng) {
    Adam<S> opt({.lr = ts.lr, .weight_decay = ts.weight_decay});
    std::vector<TensorT<S>*> params{&m.head_w, &m.head_b};
    std::vector<std::size_t> order(hidden.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    EnsembleScratch<S> sc;
    auto time_table = build_time_table(den, sched);
    TensorT<S> logits, probs, dlogits, dhbar;
    std::vector<double> epoch_losses;
    for (int ep = 0; ep < ts.epochs; ++ep) {
        rng.shuffle(order.begin(), order.end());
        double total = 0.0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(ts.batch)) {
            std::size_t bend = std::min(order.size(), b + static_cast<std::size_t>(ts.batch));
            int bsz = static_cast<int>(bend - b);
            for (TensorT<S>* p : params) {
                p->ensure_grad();
                p->zero_grad();
            }
            for (std::size_t i = b; i < bend; ++i) {
                const TensorT<S>& h_avg =
                    denoise_ensemble(hidden[order[i]], masks[order[i]], den, sched, icfg, rng, sc, &time_table);
                TensorT<S> hbar = EncoderClassifier<S>::pool(h_avg, masks[order[i]]);
                linear_forward(hbar, m.head_w, m.head_b, logits);
                S loss = softmax_xent_forward(logits, {labels[order[i]]}, probs);
                total += static_cast<double>(loss);
                resize_zero(dlogits, logits.shape);
                softmax_xent_backward(probs, {labels[order[i]]}, S(1.0 / bsz), dlogits);
                resize_zero(dhbar, hbar.shape);
                linear_backward(hbar, m.head_w, m.head_b, dlogits, &dhbar);
            }
            opt.step(params);
        }
        double mean = total / static_cast<double>(order.size());
        check_loss_finite(mean, "train_head_recalibration");
        epoch_losses.push_back(mean);
    }
    return epoch_losses;
}

// Clean accuracy of the plain encoder+head on tokenized examples.
template <typename S>
double accuracy(const EncoderClassifier<S>& m, const std::vector<TokenSequence>& seqs, const std::vector<int>& labels) {
    ModelFwd<S> fw;
    int correct = 0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        forward_logits<S>(m, seqs[i], nullptr, false, nullptr, fw);
        std::vector<double> p(fw.logits.data.size());
        for (std::size_t j = 0; j < p.size(); ++j) p[j] = static_cast<double>(fw.logits.data[j]);
        if (argmax(p) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(seqs.size());
}

}  // namespace diffshield
