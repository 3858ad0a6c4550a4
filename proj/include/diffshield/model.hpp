// Transformer encoder + mean pooling + linear classification head. Post-norm
// layers; padding rows are zeroed at every layer output so they contribute
// nothing anywhere downstream.
#pragma once

#include <string>
#include <vector>

#include "diffshield/ops.hpp"
#include "diffshield/vocab.hpp"

namespace diffshield {

struct ModelConfig {
    int vocab = 0;
    int width = 64;
    int layers = 2;
    int heads = 4;
    int ffn_mult = 4;
    int max_len = 32;
    int classes = 4;
    double dropout = 0.1;
    double init_std = 0.02;
    double ln_eps = 1e-5;

    void validate() const {
        if (vocab < 2) throw std::invalid_argument("model: vocab too small");
        if (width < 1 || heads < 1 || width % heads != 0) throw std::invalid_argument("model: width must be divisible by heads");
        if (layers < 1 || ffn_mult < 1 || max_len < 1 || classes < 2) throw std::invalid_argument("model: bad dimensions");
        if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model: dropout outside [0,1)");
    }
};

template <typename S>
struct LayerParams {
    AttnParams<S> attn;
    TensorT<S> ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;

    void init(int width, int heads, int ffn_mult, double init_std, Rng& rng) {
        attn.init(width, heads, init_std, rng);
        ln1_g = TensorT<S>({width});
        ln1_g.fill(S(1));
        ln1_b = TensorT<S>({width});
        w1 = TensorT<S>({width, width * ffn_mult});
        rng.fill_gaussian(w1, init_std);
        b1 = TensorT<S>({width * ffn_mult});
        w2 = TensorT<S>({width * ffn_mult, width});
        rng.fill_gaussian(w2, init_std);
        b2 = TensorT<S>({width});
        ln2_g = TensorT<S>({width});
        ln2_g.fill(S(1));
        ln2_b = TensorT<S>({width});
    }

    std::vector<TensorT<S>*> params() {
        auto v = attn.params();
        for (TensorT<S>* t : {&ln1_g, &ln1_b, &w1, &b1, &w2, &b2, &ln2_g, &ln2_b}) v.push_back(t);
        return v;
    }
};

template <typename S>
struct LayerCache {
    TensorT<S> x;  // kept only when training (backward needs it)
    AttnCache<S> attn;
    TensorT<S> attn_out, drop1_mask, res1, ln1_out;
    std::vector<S> ln1_mean, ln1_rstd;
    TensorT<S> ffn_pre, ffn_act, ffn_out, drop2_mask, res2;
    std::vector<S> ln2_mean, ln2_rstd;
};

template <typename S>
void add_into(TensorT<S>& dst, const TensorT<S>& a, const TensorT<S>& b) {
    check_same_shape(a, b, "add");
    dst.shape = a.shape;
    dst.data.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) dst.data[i] = a.data[i] + b.data[i];
}

template <typename S>
void zero_pad_rows(TensorT<S>& t, const Mask& mask) {
    int d = t.cols();
    for (int i = 0; i < t.rows(); ++i)
        if (!mask[static_cast<std::size_t>(i)]) std::fill(t.row(i), t.row(i) + d, S(0));
}

template <typename S>
void layer_forward(const TensorT<S>& x, const LayerParams<S>& p, const Mask& mask, S ln_eps,
                   bool training, S dropout, Rng* rng, LayerCache<S>& c, TensorT<S>& y) {
    if (training) c.x = x;
    attention_forward(x, p.attn, mask, c.attn_out, c.attn);
    if (training)
        dropout_forward(c.attn_out, dropout, true, rng, &c.drop1_mask);
    else
        c.drop1_mask.data.clear();
    add_into(c.res1, x, c.attn_out);
    layernorm_forward(c.res1, p.ln1_g, p.ln1_b, ln_eps, c.ln1_out, c.ln1_mean, c.ln1_rstd);
    linear_forward(c.ln1_out, p.w1, p.b1, c.ffn_pre);
    gelu_forward(c.ffn_pre, c.ffn_act);
    linear_forward(c.ffn_act, p.w2, p.b2, c.ffn_out);
    if (training)
        dropout_forward(c.ffn_out, dropout, true, rng, &c.drop2_mask);
    else
        c.drop2_mask.data.clear();
    add_into(c.res2, c.ln1_out, c.ffn_out);
    layernorm_forward(c.res2, p.ln2_g, p.ln2_b, ln_eps, y, c.ln2_mean, c.ln2_rstd);
    zero_pad_rows(y, mask);
}

// dy padding rows must be zero (holds everywhere in this codebase).
template <typename S>
void layer_backward(const TensorT<S>& dy, LayerParams<S>& p, const LayerCache<S>& c,
                    const Mask& mask, S ln_eps, TensorT<S>& dx) {
    (void)ln_eps;
    int L = dy.dim(0), D = dy.dim(1);
    TensorT<S> dres2({L, D});
    layernorm_backward(c.res2, p.ln2_g, p.ln2_b, c.ln2_mean, c.ln2_rstd, dy, &dres2);
    TensorT<S> dffn = dres2;
    dropout_backward(c.drop2_mask, dffn);
    TensorT<S> dact({L, c.ffn_pre.cols()});
    linear_backward(c.ffn_act, p.w2, p.b2, dffn, &dact);
    TensorT<S> dpre({L, c.ffn_pre.cols()});
    gelu_backward(c.ffn_pre, dact, dpre);
    TensorT<S> dln1 = dres2;  // residual branch
    linear_backward(c.ln1_out, p.w1, p.b1, dpre, &dln1);
    TensorT<S> dres1({L, D});
    layernorm_backward(c.res1, p.ln1_g, p.ln1_b, c.ln1_mean, c.ln1_rstd, dln1, &dres1);
    TensorT<S> datt = dres1;
    dropout_backward(c.drop1_mask, datt);
    dx = dres1;  // residual branch
    attention_backward(c.x, p.attn, c.attn, mask, datt, &dx);
}

template <typename S>
struct ModelFwd {
    std::vector<int> ids;
    Mask mask;
    int valid_len = 0;
    TensorT<S> emb0;  // tok+pos (+delta), pre-dropout
    TensorT<S> emb_drop_mask;
    TensorT<S> x0;
    std::vector<LayerCache<S>> layers;
    TensorT<S> ping, pong;  // layer io buffers
    TensorT<S> h;           // final hidden states [max_len, width]
    TensorT<S> hbar;        // [1, width]
    TensorT<S> logits;      // [1, classes]
    TensorT<S> probs;
};

template <typename S>
struct EncoderClassifier {
    ModelConfig cfg;
    TensorT<S> tok_emb, pos_emb;
    std::vector<LayerParams<S>> layers;
    TensorT<S> head_w, head_b;

    void init(Rng& rng) {
        cfg.validate();
        tok_emb = TensorT<S>({cfg.vocab, cfg.width});
        rng.fill_gaussian(tok_emb, cfg.init_std);
        std::fill(tok_emb.row(Vocab::kPad), tok_emb.row(Vocab::kPad) + cfg.width, S(0));
        pos_emb = TensorT<S>({cfg.max_len, cfg.width});
        rng.fill_gaussian(pos_emb, cfg.init_std);
        layers.assign(static_cast<std::size_t>(cfg.layers), LayerParams<S>{});
        for (auto& l : layers) l.init(cfg.width, cfg.heads, cfg.ffn_mult, cfg.init_std, rng);
        head_w = TensorT<S>({cfg.width, cfg.classes});
        rng.fill_gaussian(head_w, cfg.init_std);
        head_b = TensorT<S>({cfg.classes});
    }

    std::vector<TensorT<S>*> parameters() {
        std::vector<TensorT<S>*> v{&tok_emb, &pos_emb};
        for (auto& l : layers)
            for (TensorT<S>* t : l.params()) v.push_back(t);
        v.push_back(&head_w);
        v.push_back(&head_b);
        return v;
    }

    std::vector<std::string> parameter_names() const {
        std::vector<std::string> v{"tok_emb", "pos_emb"};
        const char* layer_names[] = {"attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
                                     "attn.wo", "attn.bo", "ln1.g",   "ln1.b",   "ffn.w1",  "ffn.b1",
                                     "ffn.w2",  "ffn.b2",  "ln2.g",   "ln2.b"};
        for (int li = 0; li < cfg.layers; ++li)
            for (const char* n : layer_names) v.push_back("layers." + std::to_string(li) + "." + n);
        v.push_back("head.w");
        v.push_back("head.b");
        return v;
    }

    void zero_grads() {
        for (TensorT<S>* p : parameters()) {
            p->ensure_grad();
            p->zero_grad();
        }
    }

    TensorT<S> embed(const TokenSequence& seq) const {
        TensorT<S> e({cfg.max_len, cfg.width});
        for (int i = 0; i < cfg.max_len; ++i) {
            if (!seq.mask[static_cast<std::size_t>(i)]) continue;
            const S* te = tok_emb.row(seq.ids[static_cast<std::size_t>(i)]);
            const S* pe = pos_emb.row(i);
            S* ei = e.row(i);
            for (int j = 0; j < cfg.width; ++j) ei[j] = te[j] + pe[j];
        }
        return e;
    }

    static TensorT<S> pool(const TensorT<S>& h, const Mask& mask) {
        int d = h.cols();
        TensorT<S> out({1, d});
        auto valid = valid_rows(mask);
        if (valid.empty()) throw std::invalid_argument("pool: empty mask");
        for (int i : valid) {
            const S* hi = h.row(i);
            for (int j = 0; j < d; ++j) out.data[static_cast<std::size_t>(j)] += hi[j];
        }
        S inv = S(1) / S(static_cast<double>(valid.size()));
        for (int j = 0; j < d; ++j) out.data[static_cast<std::size_t>(j)] *= inv;
        return out;
    }
};

// delta, when given, is added to the embedding output on valid rows before
// dropout (the adversarial-training perturbation point).
template <typename S>
void forward_logits(const EncoderClassifier<S>& m, const TokenSequence& seq, const TensorT<S>* delta,
                    bool training, Rng* rng, ModelFwd<S>& fw) {
    fw.ids = seq.ids;
    fw.mask = seq.mask;
    fw.valid_len = seq.valid_len;
    fw.emb0 = m.embed(seq);
    if (delta) {
        check_same_shape(*delta, fw.emb0, "delta");
        for (int i = 0; i < fw.emb0.rows(); ++i) {
            if (!fw.mask[static_cast<std::size_t>(i)]) continue;
            const S* di = delta->row(i);
            S* ei = fw.emb0.row(i);
            for (int j = 0; j < fw.emb0.cols(); ++j) ei[j] += di[j];
        }
    }
    fw.x0 = fw.emb0;
    dropout_forward(fw.x0, static_cast<S>(m.cfg.dropout), training, rng, &fw.emb_drop_mask);
    fw.layers.resize(static_cast<std::size_t>(m.cfg.layers));
    const TensorT<S>* cur = &fw.x0;
    for (int li = 0; li < m.cfg.layers; ++li) {
        TensorT<S>& out = (li % 2 == 0) ? fw.ping : fw.pong;
        layer_forward(*cur, m.layers[static_cast<std::size_t>(li)], fw.mask, static_cast<S>(m.cfg.ln_eps),
                      training, static_cast<S>(m.cfg.dropout), rng, fw.layers[static_cast<std::size_t>(li)], out);
        cur = &out;
    }
    fw.h = *cur;
    fw.hbar = EncoderClassifier<S>::pool(fw.h, fw.mask);
    linear_forward(fw.hbar, m.head_w, m.head_b, fw.logits);
}

// Accumulates parameter grads; demb0, when given, receives the gradient at
// the embedding output (equal to the delta gradient).
template <typename S>
void backward_logits(EncoderClassifier<S>& m, ModelFwd<S>& fw, const TensorT<S>& dlogits, TensorT<S>* demb0) {
    int L = m.cfg.max_len, D = m.cfg.width;
    TensorT<S> dhbar({1, D});
    linear_backward(fw.hbar, m.head_w, m.head_b, dlogits, &dhbar);
    TensorT<S> dh({L, D});
    auto valid = valid_rows(fw.mask);
    S inv = S(1) / S(static_cast<double>(valid.size()));
    for (int i : valid) {
        S* dhi = dh.row(i);
        for (int j = 0; j < D; ++j) dhi[j] = dhbar.data[static_cast<std::size_t>(j)] * inv;
    }
    for (int li = m.cfg.layers - 1; li >= 0; --li) {
        TensorT<S> dx;
        layer_backward(dh, m.layers[static_cast<std::size_t>(li)], fw.layers[static_cast<std::size_t>(li)],
                       fw.mask, static_cast<S>(m.cfg.ln_eps), dx);
        dh = std::move(dx);
    }
    dropout_backward(fw.emb_drop_mask, dh);
    m.tok_emb.ensure_grad();
    m.pos_emb.ensure_grad();
    for (int i : valid) {
        const S* dhi = dh.row(i);
        S* gt = m.tok_emb.grad.data() + static_cast<std::size_t>(fw.ids[static_cast<std::size_t>(i)]) * static_cast<std::size_t>(D);
        S* gp = m.pos_emb.grad.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(D);
        for (int j = 0; j < D; ++j) {
            gt[j] += dhi[j];
            gp[j] += dhi[j];
        }
    }
    if (demb0) *demb0 = dh;
}

// Inference-path hidden states; fw is scratch.
template <typename S>
const TensorT<S>& encode(const EncoderClassifier<S>& m, const TokenSequence& seq, ModelFwd<S>& fw) {
    forward_logits<S>(m, seq, nullptr, false, nullptr, fw);
    return fw.h;
}

template <typename S>
TensorT<S> encode(const EncoderClassifier<S>& m, const TokenSequence& seq) {
    ModelFwd<S> fw;
    forward_logits<S>(m, seq, nullptr, false, nullptr, fw);
    return fw.h;
}

// Pool + head + softmax on externally produced hidden states.
template <typename S>
std::vector<double> classify_hidden(const EncoderClassifier<S>& m, const TensorT<S>& h, const Mask& mask) {
    TensorT<S> hbar = EncoderClassifier<S>::pool(h, mask);
    TensorT<S> logits, probs;
    linear_forward(hbar, m.head_w, m.head_b, logits);
    softmax_rows(logits, probs);
    std::vector<double> out(probs.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(probs.data[i]);
    return out;
}

inline int argmax(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

}  // namespace diffshield
