#pragma once

// Reverse-mode tape over Tensor<T>. Ops compute values eagerly and, when a
// tape is supplied, record backward closures executed in reverse order by
// Tape::backward. Passing tape = nullptr runs pure inference.
//
// Templated on the scalar so tests can run the exact same graph in double
// (gradient checks) while training runs float.

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "tryon/kernels.hpp"
#include "tryon/tensor.hpp"

namespace tryon {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated on first accumulation
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor<T>(value.shape());
    }
    void accumulate(const Tensor<T>& g) {
        ensure_grad();
        const T* src = g.data();
        T* dst = grad.data();
        const int64_t n = grad.numel();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) dst[i] += src[i];
    }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
class Tape {
public:
    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }

    // Seeds d(loss)/d(loss) = 1 and unwinds the tape.
    void backward(const NodePtr<T>& loss) {
        TRYON_CHECK(loss->value.numel() == 1, "backward: loss must be scalar");
        loss->ensure_grad();
        loss->grad[0] = T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

    size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

private:
    std::vector<std::function<void()>> steps_;
};

namespace ag {

template <typename T>
NodePtr<T> leaf(Tensor<T> v, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
NodePtr<T> make_out(Tensor<T> v, bool requires_grad) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

template <typename T>
bool track(Tape<T>* tape, std::initializer_list<const NodePtr<T>*> ins) {
    if (!tape) return false;
    for (auto* p : ins)
        if ((*p)->requires_grad) return true;
    return false;
}

/*------------------------------- elementwise ------------------------------*/

template <typename T>
NodePtr<T> add(Tape<T>* tape, NodePtr<T> a, NodePtr<T> b) {
    TRYON_CHECK(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor<T> v(a->value.shape());
    const int64_t n = v.numel();
    const T* pa = a->value.data();
    const T* pb = b->value.data();
    T* pv = v.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) pv[i] = pa[i] + pb[i];
    bool rg = track(tape, {&a, &b});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([a, b, out] {
            if (a->requires_grad) a->accumulate(out->grad);
            if (b->requires_grad) b->accumulate(out->grad);
        });
    return out;
}

template <typename T>
NodePtr<T> scale(Tape<T>* tape, NodePtr<T> a, T s) {
    Tensor<T> v(a->value.shape());
    const int64_t n = v.numel();
    const T* pa = a->value.data();
    T* pv = v.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) pv[i] = pa[i] * s;
    bool rg = track(tape, {&a});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([a, out, s] {
            Tensor<T> g(out->grad.shape());
            const int64_t m = g.numel();
            const T* og = out->grad.data();
            T* pg = g.data();
            for (int64_t i = 0; i < m; ++i) pg[i] = og[i] * s;
            a->accumulate(g);
        });
    return out;
}

template <typename T>
NodePtr<T> silu(Tape<T>* tape, NodePtr<T> a) {
    Tensor<T> v(a->value.shape());
    const int64_t n = v.numel();
    const T* pa = a->value.data();
    T* pv = v.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        T s = T(1) / (T(1) + std::exp(-pa[i]));
        pv[i] = pa[i] * s;
    }
    bool rg = track(tape, {&a});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([a, out] {
            Tensor<T> g(a->value.shape());
            const int64_t m = g.numel();
            const T* x = a->value.data();
            const T* og = out->grad.data();
            T* pg = g.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < m; ++i) {
                T s = T(1) / (T(1) + std::exp(-x[i]));
                pg[i] = og[i] * s * (T(1) + x[i] * (T(1) - s));
            }
            a->accumulate(g);
        });
    return out;
}

// (B,C,H,W) + bias(C), broadcast over batch and space.
template <typename T>
NodePtr<T> add_channel_bias(Tape<T>* tape, NodePtr<T> x, NodePtr<T> bias) {
    const int64_t B = x->value.dim(0), C = x->value.dim(1);
    const int64_t HW = x->value.dim(2) * x->value.dim(3);
    TRYON_CHECK(bias->value.numel() == C, "add_channel_bias: bias size mismatch");
    Tensor<T> v(x->value.shape());
    const T* px = x->value.data();
    const T* pb = bias->value.data();
    T* pv = v.data();
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T bv = pb[bc % C];
        const T* s = px + bc * HW;
        T* d = pv + bc * HW;
        for (int64_t i = 0; i < HW; ++i) d[i] = s[i] + bv;
    }
    bool rg = track(tape, {&x, &bias});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([x, bias, out, B, C, HW] {
            if (x->requires_grad) x->accumulate(out->grad);
            if (bias->requires_grad) {
                Tensor<T> g({C});
                const T* og = out->grad.data();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        T acc = T(0);
                        const T* s = og + (b * C + c) * HW;
                        for (int64_t i = 0; i < HW; ++i) acc += s[i];
                        g[c] += acc;
                    }
                bias->accumulate(g);
            }
        });
    return out;
}

// Per-sample scalar bias broadcast: x (B,C,H,W) + e (B,C) one value per (b,c).
template <typename T>
NodePtr<T> add_sample_channel_bias(Tape<T>* tape, NodePtr<T> x, NodePtr<T> e) {
    const int64_t B = x->value.dim(0), C = x->value.dim(1);
    const int64_t HW = x->value.dim(2) * x->value.dim(3);
    TRYON_CHECK(e->value.numel() == B * C, "add_sample_channel_bias: size mismatch");
    Tensor<T> v(x->value.shape());
    const T* px = x->value.data();
    const T* pe = e->value.data();
    T* pv = v.data();
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T bv = pe[bc];
        const T* s = px + bc * HW;
        T* d = pv + bc * HW;
        for (int64_t i = 0; i < HW; ++i) d[i] = s[i] + bv;
    }
    bool rg = track(tape, {&x, &e});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([x, e, out, B, C, HW] {
            if (x->requires_grad) x->accumulate(out->grad);
            if (e->requires_grad) {
                Tensor<T> g({B, C});
                const T* og = out->grad.data();
#pragma omp parallel for schedule(static)
                for (int64_t bc = 0; bc < B * C; ++bc) {
                    T acc = T(0);
                    const T* s = og + bc * HW;
                    for (int64_t i = 0; i < HW; ++i) acc += s[i];
                    g[bc] = acc;
                }
                e->accumulate(g);
            }
        });
    return out;
}

/*--------------------------------- linear ---------------------------------*/

// x (N,Din) * W(Dout,Din)^T + b(Dout) -> (N,Dout)
template <typename T>
NodePtr<T> linear(Tape<T>* tape, NodePtr<T> x, NodePtr<T> w, NodePtr<T> b) {
    const int64_t N = x->value.dim(0), Din = x->value.dim(1);
    const int64_t Dout = w->value.dim(0);
    TRYON_CHECK(w->value.dim(1) == Din, "linear: weight/input mismatch");
    Tensor<T> v({N, Dout});
    kernels::matmul_nt(x->value.data(), w->value.data(), v.data(), N, Din, Dout);
    T* pv = v.data();
    const T* pb = b->value.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < Dout; ++j) pv[i * Dout + j] += pb[j];
    bool rg = track(tape, {&x, &w, &b});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([x, w, b, out, N, Din, Dout] {
            const T* og = out->grad.data();
            if (x->requires_grad) {
                Tensor<T> g({N, Din});
                kernels::matmul_nn(og, w->value.data(), g.data(), N, Dout, Din);
                x->accumulate(g);
            }
            if (w->requires_grad) {
                Tensor<T> g({Dout, Din});
                kernels::matmul_tn(og, x->value.data(), g.data(), Dout, N, Din);
                w->accumulate(g);
            }
            if (b->requires_grad) {
                Tensor<T> g({Dout});
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < Dout; ++j) g[j] += og[i * Dout + j];
                b->accumulate(g);
            }
        });
    return out;
}

/*--------------------------------- conv2d ---------------------------------*/

// x (B,IC,H,W), w (OC,IC,KH,KW), b (OC). im2col + matmul; the direct-loop
// reference lives in kernels::serial::conv2d_direct.
template <typename T>
NodePtr<T> conv2d(Tape<T>* tape, NodePtr<T> x, NodePtr<T> w, NodePtr<T> b, int64_t stride,
                  int64_t pad) {
    const int64_t B = x->value.dim(0), IC = x->value.dim(1);
    const int64_t H = x->value.dim(2), W = x->value.dim(3);
    const int64_t OC = w->value.dim(0), KH = w->value.dim(2), KW = w->value.dim(3);
    TRYON_CHECK(w->value.dim(1) == IC, "conv2d: channel mismatch");
    const int64_t OH = (H + 2 * pad - KH) / stride + 1;
    const int64_t OW = (W + 2 * pad - KW) / stride + 1;
    const int64_t K = IC * KH * KW;

    Tensor<T> v({B, OC, OH, OW});
    auto cols = std::make_shared<std::vector<Tensor<T>>>();
    cols->reserve(static_cast<size_t>(B));
    for (int64_t bi = 0; bi < B; ++bi) {
        Tensor<T> col({K, OH * OW});
        kernels::im2col(x->value.data() + bi * IC * H * W, IC, H, W, KH, KW, stride, pad,
                        col.data());
        kernels::matmul_nn(w->value.data(), col.data(), v.data() + bi * OC * OH * OW, OC, K,
                           OH * OW);
        cols->push_back(std::move(col));
    }
    const T* pb = b->value.data();
    T* pv = v.data();
#pragma omp parallel for schedule(static)
    for (int64_t boc = 0; boc < B * OC; ++boc) {
        const T bv = pb[boc % OC];
        T* d = pv + boc * OH * OW;
        for (int64_t i = 0; i < OH * OW; ++i) d[i] += bv;
    }
    bool rg = track(tape, {&x, &w, &b});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([x, w, b, out, cols, B, IC, H, W, OC, KH, KW, K, OH, OW, stride, pad] {
            const T* og = out->grad.data();
            if (w->requires_grad) {
                Tensor<T> g({OC, IC, KH, KW});
                for (int64_t bi = 0; bi < B; ++bi)
                    kernels::matmul_nt(og + bi * OC * OH * OW, (*cols)[static_cast<size_t>(bi)].data(),
                                       g.data(), OC, OH * OW, K, /*accumulate=*/true);
                w->accumulate(g);
            }
            if (b->requires_grad) {
                Tensor<T> g({OC});
                for (int64_t bi = 0; bi < B; ++bi)
                    for (int64_t oc = 0; oc < OC; ++oc) {
                        T acc = T(0);
                        const T* s = og + (bi * OC + oc) * OH * OW;
                        for (int64_t i = 0; i < OH * OW; ++i) acc += s[i];
                        g[oc] += acc;
                    }
                b->accumulate(g);
            }
            if (x->requires_grad) {
                Tensor<T> g({B, IC, H, W});
                Tensor<T> dcol({K, OH * OW});
                for (int64_t bi = 0; bi < B; ++bi) {
                    kernels::matmul_tn(w->value.data(), og + bi * OC * OH * OW, dcol.data(), K, OC,
                                       OH * OW);
                    kernels::col2im(dcol.data(), IC, H, W, KH, KW, stride, pad,
                                    g.data() + bi * IC * H * W);
                }
                x->accumulate(g);
            }
        });
    return out;
}

/*-------------------------------- group norm -------------------------------*/

template <typename T>
NodePtr<T> group_norm(Tape<T>* tape, NodePtr<T> x, NodePtr<T> gamma, NodePtr<T> beta,
                      int64_t groups, T eps = T(1e-5)) {
    const int64_t B = x->value.dim(0), C = x->value.dim(1);
    const int64_t HW = x->value.dim(2) * x->value.dim(3);
    TRYON_CHECK(C % groups == 0, "group_norm: channels not divisible by groups");
    const int64_t Cg = C / groups;
    const int64_t m = Cg * HW;

    Tensor<T> v(x->value.shape());
    auto xhat = std::make_shared<Tensor<T>>(x->value.shape());
    auto istd = std::make_shared<Tensor<T>>(std::vector<int64_t>{B, groups});
    const T* px = x->value.data();
    const T* pg = gamma->value.data();
    const T* pbt = beta->value.data();
    T* pv = v.data();
    T* ph = xhat->data();
#pragma omp parallel for schedule(static)
    for (int64_t bg = 0; bg < B * groups; ++bg) {
        const int64_t b = bg / groups, g = bg % groups;
        const int64_t off = (b * C + g * Cg) * HW;
        T mean = T(0);
        for (int64_t i = 0; i < m; ++i) mean += px[off + i];
        mean /= T(m);
        T var = T(0);
        for (int64_t i = 0; i < m; ++i) {
            T d = px[off + i] - mean;
            var += d * d;
        }
        var /= T(m);
        const T is = T(1) / std::sqrt(var + eps);
        (*istd)[bg] = is;
        for (int64_t cc = 0; cc < Cg; ++cc) {
            const int64_t c = g * Cg + cc;
            const T ga = pg[c], be = pbt[c];
            for (int64_t i = 0; i < HW; ++i) {
                const int64_t idx = off + cc * HW + i;
                const T h = (px[idx] - mean) * is;
                ph[idx] = h;
                pv[idx] = ga * h + be;
            }
        }
    }
    bool rg = track(tape, {&x, &gamma, &beta});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([x, gamma, beta, out, xhat, istd, B, C, HW, groups, Cg, m] {
            const T* og = out->grad.data();
            const T* ph = xhat->data();
            if (gamma->requires_grad || beta->requires_grad) {
                Tensor<T> dg({C}), db({C});
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        const int64_t off = (b * C + c) * HW;
                        T sg = T(0), sb = T(0);
                        for (int64_t i = 0; i < HW; ++i) {
                            sg += og[off + i] * ph[off + i];
                            sb += og[off + i];
                        }
                        dg[c] += sg;
                        db[c] += sb;
                    }
                if (gamma->requires_grad) gamma->accumulate(dg);
                if (beta->requires_grad) beta->accumulate(db);
            }
            if (x->requires_grad) {
                Tensor<T> g(x->value.shape());
                const T* pgm = gamma->value.data();
                T* pd = g.data();
#pragma omp parallel for schedule(static)
                for (int64_t bg = 0; bg < B * groups; ++bg) {
                    const int64_t b = bg / groups, grp = bg % groups;
                    const int64_t off = (b * C + grp * Cg) * HW;
                    const T is = (*istd)[bg];
                    T sum_dh = T(0), sum_dh_h = T(0);
                    for (int64_t cc = 0; cc < Cg; ++cc) {
                        const T ga = pgm[grp * Cg + cc];
                        for (int64_t i = 0; i < HW; ++i) {
                            const int64_t idx = off + cc * HW + i;
                            const T dh = og[idx] * ga;
                            sum_dh += dh;
                            sum_dh_h += dh * ph[idx];
                        }
                    }
                    const T inv_m = T(1) / T(m);
                    for (int64_t cc = 0; cc < Cg; ++cc) {
                        const T ga = pgm[grp * Cg + cc];
                        for (int64_t i = 0; i < HW; ++i) {
                            const int64_t idx = off + cc * HW + i;
                            const T dh = og[idx] * ga;
                            pd[idx] = is * (dh - inv_m * sum_dh - ph[idx] * inv_m * sum_dh_h);
                        }
                    }
                }
                x->accumulate(g);
            }
        });
    return out;
}

/*----------------------------- spatial reshaping ---------------------------*/

template <typename T>
NodePtr<T> upsample_nearest2x(Tape<T>* tape, NodePtr<T> x) {
    const int64_t B = x->value.dim(0), C = x->value.dim(1);
    const int64_t H = x->value.dim(2), W = x->value.dim(3);
    Tensor<T> v({B, C, 2 * H, 2 * W});
    const T* px = x->value.data();
    T* pv = v.data();
#pragma omp parallel for schedule(static)
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* s = px + bc * H * W;
        T* d = pv + bc * 4 * H * W;
        for (int64_t y = 0; y < 2 * H; ++y)
            for (int64_t x2 = 0; x2 < 2 * W; ++x2) d[y * 2 * W + x2] = s[(y / 2) * W + x2 / 2];
    }
    bool rg = track(tape, {&x});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([x, out, B, C, H, W] {
            Tensor<T> g({B, C, H, W});
            const T* og = out->grad.data();
            T* pd = g.data();
#pragma omp parallel for schedule(static)
            for (int64_t bc = 0; bc < B * C; ++bc) {
                const T* s = og + bc * 4 * H * W;
                T* d = pd + bc * H * W;
                for (int64_t y = 0; y < H; ++y)
                    for (int64_t x2 = 0; x2 < W; ++x2)
                        d[y * W + x2] = s[(2 * y) * 2 * W + 2 * x2] +
                                        s[(2 * y) * 2 * W + 2 * x2 + 1] +
                                        s[(2 * y + 1) * 2 * W + 2 * x2] +
                                        s[(2 * y + 1) * 2 * W + 2 * x2 + 1];
            }
            x->accumulate(g);
        });
    return out;
}

template <typename T>
NodePtr<T> concat_channels(Tape<T>* tape, NodePtr<T> a, NodePtr<T> b) {
    const int64_t B = a->value.dim(0), C1 = a->value.dim(1), C2 = b->value.dim(1);
    const int64_t H = a->value.dim(2), W = a->value.dim(3);
    TRYON_CHECK(b->value.dim(0) == B && b->value.dim(2) == H && b->value.dim(3) == W,
                "concat_channels: shape mismatch");
    Tensor<T> v({B, C1 + C2, H, W});
    const int64_t HW = H * W;
#pragma omp parallel for schedule(static)
    for (int64_t bi = 0; bi < B; ++bi) {
        std::copy(a->value.data() + bi * C1 * HW, a->value.data() + (bi + 1) * C1 * HW,
                  v.data() + bi * (C1 + C2) * HW);
        std::copy(b->value.data() + bi * C2 * HW, b->value.data() + (bi + 1) * C2 * HW,
                  v.data() + (bi * (C1 + C2) + C1) * HW);
    }
    bool rg = track(tape, {&a, &b});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([a, b, out, B, C1, C2, HW] {
            const T* og = out->grad.data();
            if (a->requires_grad) {
                Tensor<T> g(a->value.shape());
                for (int64_t bi = 0; bi < B; ++bi)
                    std::copy(og + bi * (C1 + C2) * HW, og + (bi * (C1 + C2) + C1) * HW,
                              g.data() + bi * C1 * HW);
                a->accumulate(g);
            }
            if (b->requires_grad) {
                Tensor<T> g(b->value.shape());
                for (int64_t bi = 0; bi < B; ++bi)
                    std::copy(og + (bi * (C1 + C2) + C1) * HW, og + (bi + 1) * (C1 + C2) * HW,
                              g.data() + bi * C2 * HW);
                b->accumulate(g);
            }
        });
    return out;
}

/*------------------------------- attention bits ----------------------------*/

// Sample b of x (B,C,H,W) flattened position-major -> (H*W, C).
template <typename T>
NodePtr<T> rows_from_plane(Tape<T>* tape, NodePtr<T> x, int64_t b) {
    const int64_t C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
    const int64_t HW = H * W;
    Tensor<T> v({HW, C});
    const T* px = x->value.data() + b * C * HW;
    T* pv = v.data();
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c)
        for (int64_t i = 0; i < HW; ++i) pv[i * C + c] = px[c * HW + i];
    bool rg = track(tape, {&x});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([x, out, b, C, HW] {
            Tensor<T> g(x->value.shape());
            const T* og = out->grad.data();
            T* pd = g.data() + b * C * HW;
            for (int64_t c = 0; c < C; ++c)
                for (int64_t i = 0; i < HW; ++i) pd[c * HW + i] = og[i * C + c];
            x->accumulate(g);
        });
    return out;
}

// x + scatter of per-sample row blocks (each (H*W, C)) back into planes.
template <typename T>
NodePtr<T> add_rows_to_planes(Tape<T>* tape, NodePtr<T> x, std::vector<NodePtr<T>> rows) {
    const int64_t B = x->value.dim(0), C = x->value.dim(1);
    const int64_t HW = x->value.dim(2) * x->value.dim(3);
    TRYON_CHECK(static_cast<int64_t>(rows.size()) == B, "add_rows_to_planes: batch mismatch");
    Tensor<T> v = x->value;
    T* pv = v.data();
    for (int64_t b = 0; b < B; ++b) {
        const T* pr = rows[static_cast<size_t>(b)]->value.data();
        T* d = pv + b * C * HW;
#pragma omp parallel for schedule(static)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < HW; ++i) d[c * HW + i] += pr[i * C + c];
    }
    bool rg = tape != nullptr;
    if (rg) {
        bool any = x->requires_grad;
        for (auto& r : rows) any = any || r->requires_grad;
        rg = any;
    }
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([x, rows, out, B, C, HW] {
            const T* og = out->grad.data();
            if (x->requires_grad) x->accumulate(out->grad);
            for (int64_t b = 0; b < B; ++b) {
                auto& r = rows[static_cast<size_t>(b)];
                if (!r->requires_grad) continue;
                Tensor<T> g({HW, C});
                const T* s = og + b * C * HW;
                T* pd = g.data();
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < HW; ++i) pd[i * C + c] = s[c * HW + i];
                r->accumulate(g);
            }
        });
    return out;
}

// Row slice of a matrix (B,M) reshaped to (rows, cols); used for per-sample tokens.
template <typename T>
NodePtr<T> slice_row_reshape(Tape<T>* tape, NodePtr<T> x, int64_t b, int64_t rows, int64_t cols) {
    const int64_t M = x->value.dim(1);
    TRYON_CHECK(rows * cols == M, "slice_row_reshape: size mismatch");
    Tensor<T> v({rows, cols});
    std::copy(x->value.data() + b * M, x->value.data() + (b + 1) * M, v.data());
    bool rg = track(tape, {&x});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([x, out, b, M] {
            Tensor<T> g(x->value.shape());
            std::copy(out->grad.data(), out->grad.data() + M, g.data() + b * M);
            x->accumulate(g);
        });
    return out;
}

// C = A(M,K) * B(K,N)
template <typename T>
NodePtr<T> matmul(Tape<T>* tape, NodePtr<T> a, NodePtr<T> b) {
    const int64_t M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(1);
    TRYON_CHECK(b->value.dim(0) == K, "matmul: inner dim mismatch");
    Tensor<T> v({M, N});
    kernels::matmul_nn(a->value.data(), b->value.data(), v.data(), M, K, N);
    bool rg = track(tape, {&a, &b});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([a, b, out, M, K, N] {
            const T* og = out->grad.data();
            if (a->requires_grad) {
                Tensor<T> g({M, K});
                kernels::matmul_nt(og, b->value.data(), g.data(), M, N, K);
                a->accumulate(g);
            }
            if (b->requires_grad) {
                Tensor<T> g({K, N});
                kernels::matmul_tn(a->value.data(), og, g.data(), K, M, N);
                b->accumulate(g);
            }
        });
    return out;
}

// C = A(M,K) * B(N,K)^T
template <typename T>
NodePtr<T> matmul_bt(Tape<T>* tape, NodePtr<T> a, NodePtr<T> b) {
    const int64_t M = a->value.dim(0), K = a->value.dim(1), N = b->value.dim(0);
    TRYON_CHECK(b->value.dim(1) == K, "matmul_bt: inner dim mismatch");
    Tensor<T> v({M, N});
    kernels::matmul_nt(a->value.data(), b->value.data(), v.data(), M, K, N);
    bool rg = track(tape, {&a, &b});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([a, b, out, M, K, N] {
            const T* og = out->grad.data();
            if (a->requires_grad) {
                Tensor<T> g({M, K});
                kernels::matmul_nn(og, b->value.data(), g.data(), M, N, K);
                a->accumulate(g);
            }
            if (b->requires_grad) {
                Tensor<T> g({N, K});
                kernels::matmul_tn(og, a->value.data(), g.data(), N, M, K);
                b->accumulate(g);
            }
        });
    return out;
}

template <typename T>
NodePtr<T> softmax_rows(Tape<T>* tape, NodePtr<T> x) {
    const int64_t M = x->value.dim(0), N = x->value.dim(1);
    Tensor<T> v({M, N});
    const T* px = x->value.data();
    T* pv = v.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < M; ++i) {
        const T* s = px + i * N;
        T* d = pv + i * N;
        T mx = s[0];
        for (int64_t j = 1; j < N; ++j) mx = s[j] > mx ? s[j] : mx;
        T sum = T(0);
        for (int64_t j = 0; j < N; ++j) {
            d[j] = std::exp(s[j] - mx);
            sum += d[j];
        }
        const T inv = T(1) / sum;
        for (int64_t j = 0; j < N; ++j) d[j] *= inv;
    }
    bool rg = track(tape, {&x});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([x, out, M, N] {
            Tensor<T> g({M, N});
            const T* p = out->value.data();
            const T* og = out->grad.data();
            T* pd = g.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < M; ++i) {
                T dot = T(0);
                for (int64_t j = 0; j < N; ++j) dot += og[i * N + j] * p[i * N + j];
                for (int64_t j = 0; j < N; ++j)
                    pd[i * N + j] = p[i * N + j] * (og[i * N + j] - dot);
            }
            x->accumulate(g);
        });
    return out;
}

/*---------------------------------- losses ---------------------------------*/

// Mean squared error against a constant target; returns a scalar node.
template <typename T>
NodePtr<T> mse_loss(Tape<T>* tape, NodePtr<T> pred, std::shared_ptr<Tensor<T>> target) {
    TRYON_CHECK(pred->value.same_shape(*target), "mse_loss: shape mismatch");
    const int64_t n = pred->value.numel();
    const T* pp = pred->value.data();
    const T* pt = target->data();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) {
        T d = pp[i] - pt[i];
        acc += d * d;
    }
    Tensor<T> v({1});
    v[0] = acc / T(n);
    bool rg = track(tape, {&pred});
    auto out = make_out(std::move(v), rg);
    if (rg)
        tape->record([pred, target, out, n] {
            Tensor<T> g(pred->value.shape());
            const T s = out->grad[0] * T(2) / T(n);
            const T* pp = pred->value.data();
            const T* pt = target->data();
            T* pd = g.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) pd[i] = s * (pp[i] - pt[i]);
            pred->accumulate(g);
        });
    return out;
}

}  // namespace ag
}  // namespace tryon
