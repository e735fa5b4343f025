#pragma once

// Forward noising, the DDIM reverse update and the epsilon-prediction training
// loss, plus the denoiser interface everything samples through.

#include <memory>
#include <vector>

#include "tryon/autograd.hpp"
#include "tryon/schedule.hpp"
#include "tryon/tensor.hpp"

namespace tryon {

// Dynamic tokens plus optional per-scale control residuals.
template <typename T>
struct Conditioning {
    Tensor<T> tokens;                    // (B, K, token_dim); empty => unconditioned
    std::vector<Tensor<T>> residuals;    // one per scale + mid; empty => none

    bool has_tokens() const { return tokens.numel() > 0; }
    bool has_residuals() const { return !residuals.empty(); }
};

template <typename T>
struct TrainBatch {
    Tensor<T> x0;           // (B,C,H,W) clean targets
    Conditioning<T> cond;
    std::vector<int> t;     // per-item timesteps, in [1, T_train]
    Tensor<T> eps;          // same shape as x0

    int64_t batch_size() const { return x0.numel() ? x0.dim(0) : 0; }
};

template <typename T>
class Denoiser {
public:
    virtual ~Denoiser() = default;

    // Inference-path prediction of epsilon. x_t (B,C,H,W), one timestep per item.
    virtual Tensor<T> predict(const Tensor<T>& x_t, const std::vector<int>& t,
                              const Conditioning<T>& cond) const = 0;

    // Differentiable path; only trainable denoisers provide it.
    virtual NodePtr<T> predict_node(Tape<T>* tape, NodePtr<T> x_t, const std::vector<int>& t,
                                    const Conditioning<T>& cond) {
        (void)tape; (void)x_t; (void)t; (void)cond;
        throw UnsupportedDenoiser("denoiser has no differentiable path");
    }

    virtual int64_t param_count() const { return 0; }
    virtual bool trainable() const { return false; }
};

/*------------------------------ forward process ----------------------------*/

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps. The paper-literal flag swaps the
// noise coefficient for (1-abar_t), the form printed in the sampling
// pseudocode; the standard form is the default since the DDIM update above it
// is only consistent with that one.
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& x0, int t, const Tensor<T>& eps,
                        const NoiseSchedule& sched, bool paper_literal = false) {
    TRYON_CHECK(x0.same_shape(eps), "forward_noise: eps shape mismatch");
    TRYON_CHECK(t >= 0 && t <= sched.T_train, "forward_noise: t out of range");
    const double ab = sched.at(t);
    const T cs = T(std::sqrt(ab));
    const T cn = paper_literal ? T(1.0 - ab) : T(std::sqrt(1.0 - ab));
    Tensor<T> out(x0.shape());
    const T* px = x0.data();
    const T* pe = eps.data();
    T* po = out.data();
    const int64_t n = out.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) po[i] = cs * px[i] + cn * pe[i];
    return out;
}

// DDIM sigma_t for a (t -> t_prev) jump.
inline double ddim_sigma(const NoiseSchedule& sched, int t, int t_prev, double eta) {
    const double ab_t = sched.at(t), ab_p = sched.at(t_prev);
    return eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
}

// One DDIM update from level t to t_prev. With eta = 0 the step is
// deterministic and `noise` may be empty.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t, int t_prev, double eta,
                    const Tensor<T>& noise, const NoiseSchedule& sched) {
    TRYON_CHECK(t > t_prev && t_prev >= 0, "ddim_step: need t > t_prev >= 0");
    TRYON_CHECK(t <= sched.T_train, "ddim_step: t out of range");
    TRYON_CHECK(eta >= 0.0 && eta <= 1.0, "ddim_step: eta in [0,1]");
    TRYON_CHECK(x_t.same_shape(eps_hat), "ddim_step: eps_hat shape mismatch");
    const double ab_t = sched.at(t), ab_p = sched.at(t_prev);
    const double sigma = ddim_sigma(sched, t, t_prev, eta);
    const double c_x0 = std::sqrt(ab_p);
    double dir_sq = 1.0 - ab_p - sigma * sigma;
    if (dir_sq < 0.0) dir_sq = 0.0;  // guard tiny negative rounding
    const double c_dir = std::sqrt(dir_sq);
    const double inv_sqrt_ab = 1.0 / std::sqrt(ab_t);
    const double sqrt_1mab = std::sqrt(1.0 - ab_t);

    const bool stochastic = sigma > 0.0;
    if (stochastic) TRYON_CHECK(noise.same_shape(x_t), "ddim_step: noise shape mismatch");

    Tensor<T> out(x_t.shape());
    const T* px = x_t.data();
    const T* pe = eps_hat.data();
    const T* pn = stochastic ? noise.data() : nullptr;
    T* po = out.data();
    const int64_t n = out.numel();
    const T a = T(c_x0 * inv_sqrt_ab);
    const T b = T(c_dir - c_x0 * inv_sqrt_ab * sqrt_1mab);
    const T s = T(sigma);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
        T v = a * px[i] + b * pe[i];
        if (stochastic) v += s * pn[i];
        po[i] = v;
    }
    return out;
}

/*------------------------------- training loss -----------------------------*/

// L = E || eps - eps_theta(x_t, t, c) ||^2, as a graph node.
template <typename T>
NodePtr<T> training_loss_node(Tape<T>* tape, const TrainBatch<T>& batch, Denoiser<T>& denoiser,
                              const NoiseSchedule& sched) {
    const int64_t B = batch.batch_size();
    TRYON_CHECK(B > 0, "training_loss: empty batch");
    TRYON_CHECK(static_cast<int64_t>(batch.t.size()) == B, "training_loss: t size mismatch");
    TRYON_CHECK(batch.x0.same_shape(batch.eps), "training_loss: eps shape mismatch");
    for (int tv : batch.t)
        TRYON_CHECK(tv >= 1 && tv <= sched.T_train, "training_loss: timestep out of range");

    // Noise each item at its own level.
    Tensor<T> x_t(batch.x0.shape());
    const int64_t per = batch.x0.numel() / B;
    for (int64_t b = 0; b < B; ++b) {
        const double ab = sched.at(batch.t[static_cast<size_t>(b)]);
        const T cs = T(std::sqrt(ab)), cn = T(std::sqrt(1.0 - ab));
        const T* px = batch.x0.data() + b * per;
        const T* pe = batch.eps.data() + b * per;
        T* po = x_t.data() + b * per;
        for (int64_t i = 0; i < per; ++i) po[i] = cs * px[i] + cn * pe[i];
    }

    auto x_node = ag::leaf(std::move(x_t), false);
    auto pred = denoiser.predict_node(tape, x_node, batch.t, batch.cond);
    if (!pred->value.all_finite()) {
        int bad_t = -1;
        for (int64_t b = 0; b < B; ++b) {
            const T* p = pred->value.data() + b * per;
            for (int64_t i = 0; i < per; ++i)
                if (!std::isfinite(double(p[i]))) { bad_t = batch.t[static_cast<size_t>(b)]; break; }
            if (bad_t >= 0) break;
        }
        throw NumericFailure("training_loss: non-finite prediction", bad_t);
    }
    auto target = std::make_shared<Tensor<T>>(batch.eps);
    return ag::mse_loss(tape, pred, target);
}

template <typename T>
T training_loss(const TrainBatch<T>& batch, Denoiser<T>& denoiser, const NoiseSchedule& sched) {
    Tape<T> tape;
    auto loss = training_loss_node(&tape, batch, denoiser, sched);
    return loss->value[0];
}

/*---------------------------- analytic denoiser ----------------------------*/

// Exact minimum-MSE epsilon predictor for data ~ Normal(mean, std^2 I):
//   eps_hat = sqrt(1-abar) (x_t - sqrt(abar) mean) / (abar std^2 + 1 - abar).
// Used as the sampler verification oracle.
template <typename T>
class AnalyticGaussianDenoiser final : public Denoiser<T> {
public:
    AnalyticGaussianDenoiser(Tensor<T> mean, double std_dev, NoiseSchedule sched)
        : mean_(std::move(mean)), std_(std_dev), sched_(std::move(sched)) {
        TRYON_CHECK(std_dev >= 0.0, "analytic denoiser: std must be >= 0");
    }

    Tensor<T> predict(const Tensor<T>& x_t, const std::vector<int>& t,
                      const Conditioning<T>&) const override {
        if (!x_t.all_finite()) throw NumericFailure("analytic denoiser: non-finite input");
        const int64_t B = x_t.dim(0);
        const int64_t per = x_t.numel() / B;
        TRYON_CHECK(mean_.numel() == per, "analytic denoiser: mean shape mismatch");
        Tensor<T> out(x_t.shape());
        for (int64_t b = 0; b < B; ++b) {
            const double ab = sched_.at(t[static_cast<size_t>(b)]);
            const double denom = ab * std_ * std_ + 1.0 - ab;
            const T c1 = T(std::sqrt(1.0 - ab) / denom);
            const T c2 = T(std::sqrt(ab));
            const T* px = x_t.data() + b * per;
            const T* pm = mean_.data();
            T* po = out.data() + b * per;
#pragma omp parallel for schedule(static)
            for (int64_t i = 0; i < per; ++i) po[i] = c1 * (px[i] - c2 * pm[i]);
        }
        return out;
    }

private:
    Tensor<T> mean_;
    double std_;
    NoiseSchedule sched_;
};

}  // namespace tryon
