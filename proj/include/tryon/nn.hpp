#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tryon/autograd.hpp"
#include "tryon/rng.hpp"

namespace tryon {
namespace nn {

template <typename T>
using ParamMap = std::vector<std::pair<std::string, NodePtr<T>>>;

template <typename T>
int64_t param_count(const ParamMap<T>& params) {
    int64_t n = 0;
    for (const auto& [name, p] : params) n += p->value.numel();
    return n;
}

template <typename T>
void set_trainable(ParamMap<T>& params, bool trainable) {
    for (auto& [name, p] : params) p->requires_grad = trainable;
}

template <typename T>
void zero_grads(ParamMap<T>& params) {
    for (auto& [name, p] : params) {
        p->ensure_grad();
        p->grad.fill(T(0));
    }
}

/*--------------------------------- modules ---------------------------------*/

template <typename T>
struct Conv2d {
    NodePtr<T> w, b;
    int64_t stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(int64_t in_ch, int64_t out_ch, int64_t ksize, int64_t stride_, int64_t pad_,
           Philox& rng, bool zero_init = false)
        : stride(stride_), pad(pad_) {
        Tensor<T> wt({out_ch, in_ch, ksize, ksize});
        if (!zero_init) {
            double s = std::sqrt(2.0 / double(in_ch * ksize * ksize));
            rng.fill_normal(wt.data(), static_cast<size_t>(wt.numel()), s);
        }
        w = ag::leaf(std::move(wt), true);
        b = ag::leaf(Tensor<T>({out_ch}), true);
    }

    NodePtr<T> forward(Tape<T>* tape, NodePtr<T> x) const {
        return ag::conv2d(tape, x, w, b, stride, pad);
    }
    void collect(ParamMap<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

template <typename T>
struct Linear {
    NodePtr<T> w, b;

    Linear() = default;
    Linear(int64_t d_in, int64_t d_out, Philox& rng, bool zero_init = false) {
        Tensor<T> wt({d_out, d_in});
        if (!zero_init) {
            double s = std::sqrt(2.0 / double(d_in));
            rng.fill_normal(wt.data(), static_cast<size_t>(wt.numel()), s);
        }
        w = ag::leaf(std::move(wt), true);
        b = ag::leaf(Tensor<T>({d_out}), true);
    }

    NodePtr<T> forward(Tape<T>* tape, NodePtr<T> x) const { return ag::linear(tape, x, w, b); }
    void collect(ParamMap<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

template <typename T>
struct GroupNorm {
    NodePtr<T> gamma, beta;
    int64_t groups = 1;

    GroupNorm() = default;
    GroupNorm(int64_t channels, int64_t groups_) : groups(groups_) {
        gamma = ag::leaf(Tensor<T>::full({channels}, T(1)), true);
        beta = ag::leaf(Tensor<T>({channels}), true);
    }

    NodePtr<T> forward(Tape<T>* tape, NodePtr<T> x) const {
        return ag::group_norm(tape, x, gamma, beta, groups);
    }
    void collect(ParamMap<T>& out, const std::string& prefix) const {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
};

// Single-head cross-attention from a feature plane to a token sequence,
// applied as a residual. The output projection starts at zero so an
// untrained block is an exact no-op on the plane.
template <typename T>
struct CrossAttention {
    Linear<T> q;         // C -> C
    NodePtr<T> wk, wv;   // (C, token_dim), no bias so zero tokens stay zero
    Linear<T> out;       // C -> C, zero-init
    int64_t channels = 0, token_dim = 0;

    CrossAttention() = default;
    CrossAttention(int64_t channels_, int64_t token_dim_, Philox& rng)
        : channels(channels_), token_dim(token_dim_) {
        q = Linear<T>(channels_, channels_, rng);
        double s = std::sqrt(1.0 / double(token_dim_));
        Tensor<T> k({channels_, token_dim_}), v({channels_, token_dim_});
        rng.fill_normal(k.data(), static_cast<size_t>(k.numel()), s);
        rng.fill_normal(v.data(), static_cast<size_t>(v.numel()), s);
        wk = ag::leaf(std::move(k), true);
        wv = ag::leaf(std::move(v), true);
        out = Linear<T>(channels_, channels_, rng, /*zero_init=*/true);
    }

    // x (B,C,H,W), tokens-per-sample provided as (K, token_dim) nodes.
    // Queries come from positions, keys/values from the tokens; attention is
    // order-invariant in the tokens (no positional encoding on them).
    NodePtr<T> forward(Tape<T>* tape, NodePtr<T> x,
                       const std::vector<NodePtr<T>>& tokens) const {
        const int64_t B = x->value.dim(0);
        TRYON_CHECK(static_cast<int64_t>(tokens.size()) == B, "cross_attention: batch mismatch");
        const T inv_sqrt = T(1.0 / std::sqrt(double(channels)));
        std::vector<NodePtr<T>> blocks;
        blocks.reserve(static_cast<size_t>(B));
        for (int64_t b = 0; b < B; ++b) {
            auto rows = ag::rows_from_plane(tape, x, b);                 // (HW, C)
            auto qm = q.forward(tape, rows);                             // (HW, C)
            auto km = ag::matmul_bt(tape, tokens[size_t(b)], wk);        // (K, C)
            auto vm = ag::matmul_bt(tape, tokens[size_t(b)], wv);        // (K, C)
            auto scores = ag::scale(tape, ag::matmul_bt(tape, qm, km), inv_sqrt);  // (HW, K)
            auto probs = ag::softmax_rows(tape, scores);
            auto attended = ag::matmul(tape, probs, vm);                 // (HW, C)
            blocks.push_back(out.forward(tape, attended));
        }
        return ag::add_rows_to_planes(tape, x, std::move(blocks));
    }

    void collect(ParamMap<T>& out_params, const std::string& prefix) const {
        q.collect(out_params, prefix + ".q");
        out_params.emplace_back(prefix + ".wk", wk);
        out_params.emplace_back(prefix + ".wv", wv);
        out.collect(out_params, prefix + ".out");
    }
};

/*-------------------------------- optimizer --------------------------------*/

// AdamW with decoupled weight decay. State is keyed by parameter name so it
// can ride along in checkpoints for exact resume.
template <typename T>
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int64_t step_count = 0;
    std::map<std::string, Tensor<T>> m, v;

    void step(ParamMap<T>& params) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, double(step_count));
        const double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (auto& [name, p] : params) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            auto& mm = m[name];
            auto& vv = v[name];
            if (mm.numel() != p->value.numel()) mm = Tensor<T>(p->value.shape());
            if (vv.numel() != p->value.numel()) vv = Tensor<T>(p->value.shape());
            const int64_t n = p->value.numel();
            T* pm = mm.data();
            T* pv = vv.data();
            T* pw = p->value.data();
            const T* pg = p->grad.data();
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < n; ++i) {
                double g = double(pg[i]);
                double mi = beta1 * double(pm[i]) + (1.0 - beta1) * g;
                double vi = beta2 * double(pv[i]) + (1.0 - beta2) * g * g;
                pm[i] = T(mi);
                pv[i] = T(vi);
                double mh = mi / bc1, vh = vi / bc2;
                pw[i] = T(double(pw[i]) - lr * (mh / (std::sqrt(vh) + eps) +
                                                weight_decay * double(pw[i])));
            }
        }
    }
};

/*--------------------------------- helpers ---------------------------------*/

// Sinusoidal timestep embedding, one row per batch item: [cos(t f), sin(t f)].
template <typename T>
Tensor<T> sinusoidal_embedding(const std::vector<int>& t, int64_t dim) {
    const int64_t B = static_cast<int64_t>(t.size());
    const int64_t half = dim / 2;
    Tensor<T> e({B, dim});
    const double log_base = std::log(10000.0) / double(half);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t i = 0; i < half; ++i) {
            double f = std::exp(-double(i) * log_base);
            double a = double(t[static_cast<size_t>(b)]) * f;
            e[b * dim + i] = T(std::cos(a));
            e[b * dim + half + i] = T(std::sin(a));
        }
    }
    return e;
}

}  // namespace nn
}  // namespace tryon
