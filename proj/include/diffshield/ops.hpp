// Differentiable kernels. Every forward has a hand-written backward; backward
// accumulates into existing grad buffers (callers zero them per step).
// Gradient correctness is pinned by the finite-difference tests.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "diffshield/rng.hpp"
#include "diffshield/tensor.hpp"

namespace diffshield {

using Mask = std::vector<std::uint8_t>;  // 1 = real token row, 0 = padding

inline std::vector<int> valid_rows(const Mask& mask) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(mask.size()); ++i)
        if (mask[static_cast<std::size_t>(i)]) idx.push_back(i);
    return idx;
}

// ---- linear: y = x @ W + b, x [N,in], W [in,out], b [out] ----

template <typename S>
void linear_forward(const TensorT<S>& x, const TensorT<S>& W, const TensorT<S>& b, TensorT<S>& y) {
    int in = W.dim(0), out = W.dim(1);
    if (x.cols() != in) throw std::invalid_argument("linear: x cols " + std::to_string(x.cols()) + " != W rows " + std::to_string(in));
    check_shape(b, {out}, "linear bias");
    int n = x.rows();
    y.shape = x.shape;
    y.shape.back() = out;
    y.data.assign(numel_of(y.shape), S(0));
    for (int i = 0; i < n; ++i) {
        const S* xi = x.row(i);
        S* yi = y.row(i);
        for (int j = 0; j < out; ++j) yi[j] = b.data[static_cast<std::size_t>(j)];
        for (int k = 0; k < in; ++k) {
            S xv = xi[k];
            if (xv == S(0)) continue;
            const S* wk = W.row(k);
            for (int j = 0; j < out; ++j) yi[j] += xv * wk[j];
        }
    }
}

// dx is optional; W.grad / b.grad must be allocated.
template <typename S>
void linear_backward(const TensorT<S>& x, TensorT<S>& W, TensorT<S>& b, const TensorT<S>& dy, TensorT<S>* dx) {
    int in = W.dim(0), out = W.dim(1);
    int n = x.rows();
    W.ensure_grad();
    b.ensure_grad();
    for (int i = 0; i < n; ++i) {
        const S* xi = x.row(i);
        const S* dyi = dy.row(i);
        for (int j = 0; j < out; ++j) b.grad[static_cast<std::size_t>(j)] += dyi[j];
        for (int k = 0; k < in; ++k) {
            S xv = xi[k];
            S* gwk = W.grad.data() + static_cast<std::size_t>(k) * static_cast<std::size_t>(out);
            if (xv != S(0))
                for (int j = 0; j < out; ++j) gwk[j] += xv * dyi[j];
        }
        if (dx) {
            S* dxi = dx->row(i);
            for (int k = 0; k < in; ++k) {
                const S* wk = W.row(k);
                S acc = S(0);
                for (int j = 0; j < out; ++j) acc += wk[j] * dyi[j];
                dxi[k] += acc;
            }
        }
    }
}

// ---- layernorm over the last dimension ----

template <typename S>
void layernorm_forward(const TensorT<S>& x, const TensorT<S>& g, const TensorT<S>& b, S eps,
                       TensorT<S>& y, std::vector<S>& mean, std::vector<S>& rstd) {
    int d = x.cols(), n = x.rows();
    check_shape(g, {d}, "layernorm gain");
    check_shape(b, {d}, "layernorm bias");
    y.shape = x.shape;
    y.data.assign(x.size(), S(0));
    mean.assign(static_cast<std::size_t>(n), S(0));
    rstd.assign(static_cast<std::size_t>(n), S(0));
    for (int i = 0; i < n; ++i) {
        const S* xi = x.row(i);
        S mu = S(0);
        for (int j = 0; j < d; ++j) mu += xi[j];
        mu /= S(d);
        S var = S(0);
        for (int j = 0; j < d; ++j) {
            S c = xi[j] - mu;
            var += c * c;
        }
        var /= S(d);
        S rs = S(1) / std::sqrt(var + eps);
        mean[static_cast<std::size_t>(i)] = mu;
        rstd[static_cast<std::size_t>(i)] = rs;
        S* yi = y.row(i);
        for (int j = 0; j < d; ++j)
            yi[j] = (xi[j] - mu) * rs * g.data[static_cast<std::size_t>(j)] + b.data[static_cast<std::size_t>(j)];
    }
}

template <typename S>
void layernorm_backward(const TensorT<S>& x, TensorT<S>& g, TensorT<S>& b,
                        const std::vector<S>& mean, const std::vector<S>& rstd,
                        const TensorT<S>& dy, TensorT<S>* dx) {
    int d = x.cols(), n = x.rows();
    g.ensure_grad();
    b.ensure_grad();
    for (int i = 0; i < n; ++i) {
        const S* xi = x.row(i);
        const S* dyi = dy.row(i);
        S mu = mean[static_cast<std::size_t>(i)], rs = rstd[static_cast<std::size_t>(i)];
        S sum_gdy = S(0), sum_gdyx = S(0);
        for (int j = 0; j < d; ++j) {
            S xh = (xi[j] - mu) * rs;
            S gd = g.data[static_cast<std::size_t>(j)] * dyi[j];
            sum_gdy += gd;
            sum_gdyx += gd * xh;
            g.grad[static_cast<std::size_t>(j)] += dyi[j] * xh;
            b.grad[static_cast<std::size_t>(j)] += dyi[j];
        }
        if (dx) {
            S* dxi = dx->row(i);
            S inv_d = S(1) / S(d);
            for (int j = 0; j < d; ++j) {
                S xh = (xi[j] - mu) * rs;
                S gd = g.data[static_cast<std::size_t>(j)] * dyi[j];
                dxi[j] += rs * (gd - inv_d * sum_gdy - xh * inv_d * sum_gdyx);
            }
        }
    }
}

// ---- gelu, tanh approximation ----

template <typename S>
void gelu_forward(const TensorT<S>& x, TensorT<S>& y) {
    y.shape = x.shape;
    y.data.resize(x.size());
    const S c = S(0.7978845608028654);  // sqrt(2/pi)
    const S a = S(0.044715);
    for (std::size_t i = 0; i < x.size(); ++i) {
        S v = x.data[i];
        S u = c * (v + a * v * v * v);
        y.data[i] = S(0.5) * v * (S(1) + std::tanh(u));
    }
}

template <typename S>
void gelu_backward(const TensorT<S>& x, const TensorT<S>& dy, TensorT<S>& dx) {
    const S c = S(0.7978845608028654);
    const S a = S(0.044715);
    for (std::size_t i = 0; i < x.size(); ++i) {
        S v = x.data[i];
        S u = c * (v + a * v * v * v);
        S t = std::tanh(u);
        S du = c * (S(1) + S(3) * a * v * v);
        S d = S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * du;
        dx.data[i] += dy.data[i] * d;
    }
}

// ---- dropout (inverted scaling; identity when p <= 0 or not training) ----

template <typename S>
void dropout_forward(TensorT<S>& x, S p, bool training, Rng* rng, TensorT<S>* mask_out) {
    if (!training || p <= S(0)) {
        if (mask_out) mask_out->data.clear();
        return;
    }
    S keep = S(1) - p;
    S scale = S(1) / keep;
    if (mask_out) {
        mask_out->shape = x.shape;
        mask_out->data.resize(x.size());
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        S m = (rng->uniform() >= static_cast<double>(p)) ? scale : S(0);
        if (mask_out) mask_out->data[i] = m;
        x.data[i] *= m;
    }
}

template <typename S>
void dropout_backward(const TensorT<S>& mask, TensorT<S>& dy) {
    if (mask.data.empty()) return;
    for (std::size_t i = 0; i < dy.size(); ++i) dy.data[i] *= mask.data[i];
}

// ---- multi-head self-attention with key masking ----

template <typename S>
struct AttnParams {
    int heads = 1;
    TensorT<S> wq, bq, wk, bk, wv, bv, wo, bo;

    void init(int width, int n_heads, double std, Rng& rng) {
        heads = n_heads;
        if (width % n_heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
        for (TensorT<S>* w : {&wq, &wk, &wv, &wo}) {
            *w = TensorT<S>({width, width});
            rng.fill_gaussian(*w, std);
        }
        for (TensorT<S>* b : {&bq, &bk, &bv, &bo}) *b = TensorT<S>({width});
    }

    std::vector<TensorT<S>*> params() { return {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}; }
};

template <typename S>
struct AttnCache {
    TensorT<S> q, k, v;    // [L,D], padding rows zero
    TensorT<S> att;        // [H,L,L], softmax weights, padding rows/cols zero
    TensorT<S> ctx;        // [L,D], pre-output-projection
};

// Padding rows never contribute as keys or values and produce zero output rows.
template <typename S>
void attention_forward(const TensorT<S>& x, const AttnParams<S>& p, const Mask& mask,
                       TensorT<S>& y, AttnCache<S>& c) {
    int L = x.dim(0), D = x.dim(1);
    int H = p.heads, hd = D / H;
    const S scale = S(1.0 / std::sqrt(static_cast<double>(hd)));
    auto valid = valid_rows(mask);

    resize_zero(c.q, {L, D});
    resize_zero(c.k, {L, D});
    resize_zero(c.v, {L, D});
    resize_zero(c.att, {H, L, L});
    resize_zero(c.ctx, {L, D});
    resize_zero(y, {L, D});

    for (int i : valid) {
        const S* xi = x.row(i);
        S* qi = c.q.row(i);
        S* ki = c.k.row(i);
        S* vi = c.v.row(i);
        for (int j = 0; j < D; ++j) {
            qi[j] = p.bq.data[static_cast<std::size_t>(j)];
            ki[j] = p.bk.data[static_cast<std::size_t>(j)];
            vi[j] = p.bv.data[static_cast<std::size_t>(j)];
        }
        for (int r = 0; r < D; ++r) {
            S xv = xi[r];
            if (xv == S(0)) continue;
            const S* wq = p.wq.row(r);
            const S* wk = p.wk.row(r);
            const S* wv = p.wv.row(r);
            for (int j = 0; j < D; ++j) {
                qi[j] += xv * wq[j];
                ki[j] += xv * wk[j];
                vi[j] += xv * wv[j];
            }
        }
    }

    std::vector<S> scores(valid.size());
    for (int h = 0; h < H; ++h) {
        int off = h * hd;
        S* att_h = c.att.data.data() + static_cast<std::size_t>(h) * static_cast<std::size_t>(L) * static_cast<std::size_t>(L);
        for (int i : valid) {
            const S* qi = c.q.row(i) + off;
            S mx = S(-1e30);
            for (std::size_t jj = 0; jj < valid.size(); ++jj) {
                const S* kj = c.k.row(valid[jj]) + off;
                S s = S(0);
                for (int r = 0; r < hd; ++r) s += qi[r] * kj[r];
                s *= scale;
                scores[jj] = s;
                if (s > mx) mx = s;
            }
            S denom = S(0);
            for (std::size_t jj = 0; jj < valid.size(); ++jj) {
                scores[jj] = std::exp(scores[jj] - mx);
                denom += scores[jj];
            }
            S* ai = att_h + static_cast<std::size_t>(i) * static_cast<std::size_t>(L);
            S* ctxi = c.ctx.row(i) + off;
            for (std::size_t jj = 0; jj < valid.size(); ++jj) {
                S a = scores[jj] / denom;
                ai[valid[jj]] = a;
                const S* vj = c.v.row(valid[jj]) + off;
                for (int r = 0; r < hd; ++r) ctxi[r] += a * vj[r];
            }
        }
    }

    for (int i : valid) {
        const S* ctxi = c.ctx.row(i);
        S* yi = y.row(i);
        for (int j = 0; j < D; ++j) yi[j] = p.bo.data[static_cast<std::size_t>(j)];
        for (int r = 0; r < D; ++r) {
            S cv = ctxi[r];
            if (cv == S(0)) continue;
            const S* wo = p.wo.row(r);
            for (int j = 0; j < D; ++j) yi[j] += cv * wo[j];
        }
    }
}

template <typename S>
void attention_backward(const TensorT<S>& x, AttnParams<S>& p, const AttnCache<S>& c,
                        const Mask& mask, const TensorT<S>& dy, TensorT<S>* dx) {
    int L = x.dim(0), D = x.dim(1);
    int H = p.heads, hd = D / H;
    const S scale = S(1.0 / std::sqrt(static_cast<double>(hd)));
    auto valid = valid_rows(mask);
    for (TensorT<S>* t : p.params()) t->ensure_grad();

    TensorT<S> dctx({L, D}), dq({L, D}), dk({L, D}), dv({L, D});

    // output projection
    for (int i : valid) {
        const S* dyi = dy.row(i);
        const S* ctxi = c.ctx.row(i);
        S* dctxi = dctx.row(i);
        for (int j = 0; j < D; ++j) p.bo.grad[static_cast<std::size_t>(j)] += dyi[j];
        for (int r = 0; r < D; ++r) {
            const S* wo = p.wo.row(r);
            S* gwo = p.wo.grad.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(D);
            S cv = ctxi[r];
            S acc = S(0);
            for (int j = 0; j < D; ++j) {
                acc += wo[j] * dyi[j];
                gwo[j] += cv * dyi[j];
            }
            dctxi[r] = acc;
        }
    }

    // attention weights and scores
    for (int h = 0; h < H; ++h) {
        int off = h * hd;
        const S* att_h = c.att.data.data() + static_cast<std::size_t>(h) * static_cast<std::size_t>(L) * static_cast<std::size_t>(L);
        for (int i : valid) {
            const S* dctxi = dctx.row(i) + off;
            const S* ai = att_h + static_cast<std::size_t>(i) * static_cast<std::size_t>(L);
            // da_ij = dctx_i . v_j ; dv_j += a_ij * dctx_i
            std::vector<S> da(valid.size(), S(0));
            S dot = S(0);
            for (std::size_t jj = 0; jj < valid.size(); ++jj) {
                int j = valid[jj];
                const S* vj = c.v.row(j) + off;
                S* dvj = dv.row(j) + off;
                S a = ai[j];
                S d = S(0);
                for (int r = 0; r < hd; ++r) {
                    d += dctxi[r] * vj[r];
                    dvj[r] += a * dctxi[r];
                }
                da[jj] = d;
                dot += a * d;
            }
            // softmax backward, then scores to q/k
            S* dqi = dq.row(i) + off;
            const S* qi = c.q.row(i) + off;
            for (std::size_t jj = 0; jj < valid.size(); ++jj) {
                int j = valid[jj];
                S ds = ai[j] * (da[jj] - dot) * scale;
                if (ds == S(0)) continue;
                const S* kj = c.k.row(j) + off;
                S* dkj = dk.row(j) + off;
                for (int r = 0; r < hd; ++r) {
                    dqi[r] += ds * kj[r];
                    dkj[r] += ds * qi[r];
                }
            }
        }
    }

    // input projections
    for (int i : valid) {
        const S* xi = x.row(i);
        const S* dqi = dq.row(i);
        const S* dki = dk.row(i);
        const S* dvi = dv.row(i);
        for (int j = 0; j < D; ++j) {
            p.bq.grad[static_cast<std::size_t>(j)] += dqi[j];
            p.bk.grad[static_cast<std::size_t>(j)] += dki[j];
            p.bv.grad[static_cast<std::size_t>(j)] += dvi[j];
        }
        S* dxi = dx ? dx->row(i) : nullptr;
        for (int r = 0; r < D; ++r) {
            S xv = xi[r];
            const S* wq = p.wq.row(r);
            const S* wk = p.wk.row(r);
            const S* wv = p.wv.row(r);
            S* gwq = p.wq.grad.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(D);
            S* gwk = p.wk.grad.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(D);
            S* gwv = p.wv.grad.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(D);
            S acc = S(0);
            for (int j = 0; j < D; ++j) {
                acc += wq[j] * dqi[j] + wk[j] * dki[j] + wv[j] * dvi[j];
                gwq[j] += xv * dqi[j];
                gwk[j] += xv * dki[j];
                gwv[j] += xv * dvi[j];
            }
            if (dxi) dxi[r] += acc;
        }
    }
}

// ---- softmax cross-entropy over rows, mean-reduced ----

template <typename S>
void softmax_rows(const TensorT<S>& logits, TensorT<S>& probs) {
    int n = logits.rows(), cdim = logits.cols();
    probs.shape = logits.shape;
    probs.data.resize(logits.size());
    for (int i = 0; i < n; ++i) {
        const S* li = logits.row(i);
        S* pi = probs.row(i);
        S mx = li[0];
        for (int j = 1; j < cdim; ++j)
            if (li[j] > mx) mx = li[j];
        S denom = S(0);
        for (int j = 0; j < cdim; ++j) {
            pi[j] = std::exp(li[j] - mx);
            denom += pi[j];
        }
        for (int j = 0; j < cdim; ++j) pi[j] /= denom;
    }
}

template <typename S>
S softmax_xent_forward(const TensorT<S>& logits, const std::vector<int>& labels, TensorT<S>& probs) {
    int n = logits.rows(), cdim = logits.cols();
    if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("xent: labels size != rows");
    softmax_rows(logits, probs);
    S loss = S(0);
    for (int i = 0; i < n; ++i) {
        int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= cdim) throw std::invalid_argument("xent: label out of range");
        S py = probs.row(i)[y];
        loss += -std::log(py > S(1e-30) ? py : S(1e-30));
    }
    return loss / S(n);
}

template <typename S>
void softmax_xent_backward(const TensorT<S>& probs, const std::vector<int>& labels, S dscale, TensorT<S>& dlogits) {
    int n = probs.rows(), cdim = probs.cols();
    dlogits.shape = probs.shape;
    if (dlogits.data.size() != probs.size()) dlogits.data.assign(probs.size(), S(0));
    S inv_n = dscale / S(n);
    for (int i = 0; i < n; ++i) {
        const S* pi = probs.row(i);
        S* di = dlogits.row(i);
        int y = labels[static_cast<std::size_t>(i)];
        for (int j = 0; j < cdim; ++j) di[j] += (pi[j] - (j == y ? S(1) : S(0))) * inv_n;
    }
}

// ---- mean squared error over all elements ----

template <typename S>
S mse_forward(const TensorT<S>& a, const TensorT<S>& b) {
    check_same_shape(a, b, "mse");
    S acc = S(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        S d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / S(a.size());
}

template <typename S>
void mse_backward(const TensorT<S>& a, const TensorT<S>& b, S dscale, TensorT<S>& da) {
    S c = dscale * S(2) / S(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) da.data[i] += c * (a.data[i] - b.data[i]);
}

// Masked variant: mean over valid rows only (padding rows carry no signal).
template <typename S>
S mse_masked_forward(const TensorT<S>& a, const TensorT<S>& b, const Mask& mask) {
    check_same_shape(a, b, "mse");
    int d = a.cols();
    S acc = S(0);
    std::size_t n = 0;
    for (int i = 0; i < a.rows(); ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const S* ai = a.row(i);
        const S* bi = b.row(i);
        for (int j = 0; j < d; ++j) {
            S dv = ai[j] - bi[j];
            acc += dv * dv;
        }
        n += static_cast<std::size_t>(d);
    }
    if (n == 0) throw std::invalid_argument("mse: empty mask");
    return acc / S(n);
}

template <typename S>
void mse_masked_backward(const TensorT<S>& a, const TensorT<S>& b, const Mask& mask, S dscale, TensorT<S>& da) {
    int d = a.cols();
    std::size_t n = 0;
    for (int i = 0; i < a.rows(); ++i)
        if (mask[static_cast<std::size_t>(i)]) n += static_cast<std::size_t>(d);
    S c = dscale * S(2) / S(n);
    for (int i = 0; i < a.rows(); ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const S* ai = a.row(i);
        const S* bi = b.row(i);
        S* di = da.row(i);
        for (int j = 0; j < d; ++j) di[j] += c * (ai[j] - bi[j]);
    }
}

}  // namespace diffshield
