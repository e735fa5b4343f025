#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "tryon/diffusion.hpp"
#include "tryon/nn.hpp"
#include "tryon/rng.hpp"

using namespace tryon;

namespace {

TensorD randn(std::vector<int64_t> shape, uint64_t seed) {
    TensorD t(std::move(shape));
    Philox rng(seed, 0);
    rng.fill_normal(t.data(), static_cast<size_t>(t.numel()));
    return t;
}

// Two-parameter linear denoiser (a 1x1 conv on one channel): eps_hat = w*x + b.
class TinyLinearDenoiser final : public Denoiser<double> {
public:
    explicit TinyLinearDenoiser(Philox& rng) : conv_(1, 1, 1, 1, 0, rng) {}

    Tensor<double> predict(const Tensor<double>& x_t, const std::vector<int>&,
                           const Conditioning<double>&) const override {
        auto x = ag::leaf(x_t, false);
        return conv_.forward(nullptr, x)->value;
    }
    NodePtr<double> predict_node(Tape<double>* tape, NodePtr<double> x_t,
                                 const std::vector<int>&, const Conditioning<double>&) override {
        return conv_.forward(tape, x_t);
    }
    bool trainable() const override { return true; }
    int64_t param_count() const override { return 2; }

    nn::Conv2d<double> conv_;
};

// Denoiser that echoes a fixed tensor sliced per batch item.
class FixedDenoiser final : public Denoiser<double> {
public:
    explicit FixedDenoiser(TensorD out) : out_(std::move(out)) {}
    Tensor<double> predict(const Tensor<double>&, const std::vector<int>&,
                           const Conditioning<double>&) const override {
        return out_;
    }
    NodePtr<double> predict_node(Tape<double>*, NodePtr<double>, const std::vector<int>&,
                                 const Conditioning<double>&) override {
        return ag::leaf(out_, false);
    }
    TensorD out_;
};

}  // namespace

TEST_CASE("forward_noise at t=0 returns x0 exactly") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    auto x0 = randn({1, 2, 4, 4}, 1);
    auto eps = randn({1, 2, 4, 4}, 2);
    auto out = forward_noise(x0, 0, eps, sched);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == x0[i]);
}

TEST_CASE("forward_noise of zero signal is scaled noise") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    TensorD x0({1, 1, 3, 3});
    auto eps = randn({1, 1, 3, 3}, 3);
    int t = 400;
    auto out = forward_noise(x0, t, eps, sched);
    double c = std::sqrt(1.0 - sched.at(t));
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(c * eps[i]));
}

TEST_CASE("forward_noise matches a scalar-by-scalar reference") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    auto x0 = randn({1, 3, 5, 4}, 4);
    auto eps = randn({1, 3, 5, 4}, 5);
    const int t = 500;
    auto out = forward_noise(x0, t, eps, sched);
    const double cs = std::sqrt(sched.at(t));
    const double cn = std::sqrt(1.0 - sched.at(t));
    for (int64_t i = 0; i < out.numel(); ++i) {
        double ref = cs * x0[i] + cn * eps[i];  // element loop oracle
        CHECK(out[i] == doctest::Approx(ref).epsilon(1e-15));
    }
}

TEST_CASE("forward_noise paper-literal mode uses (1 - alpha_bar)") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    auto x0 = randn({1, 1, 2, 2}, 6);
    auto eps = randn({1, 1, 2, 2}, 7);
    const int t = 300;
    auto out = forward_noise(x0, t, eps, sched, /*paper_literal=*/true);
    const double cs = std::sqrt(sched.at(t));
    const double cn = 1.0 - sched.at(t);
    for (int64_t i = 0; i < out.numel(); ++i)
        CHECK(out[i] == doctest::Approx(cs * x0[i] + cn * eps[i]));
}

TEST_CASE("forward_noise rejects mismatched shapes") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 100);
    TensorD x0({1, 1, 2, 2}), eps({1, 1, 2, 3});
    CHECK_THROWS_AS(forward_noise(x0, 1, eps, sched), InvalidArgument);
}

TEST_CASE("ddim_step point-mass substitution lands on sqrt(abar_prev)*c0") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    const int t = 600, tp = 480;
    const double c0 = 1.7;
    auto x_t = randn({1, 1, 4, 4}, 8);
    TensorD eps_hat(x_t.shape());
    const double ab = sched.at(t);
    for (int64_t i = 0; i < x_t.numel(); ++i)
        eps_hat[i] = (x_t[i] - std::sqrt(ab) * c0) / std::sqrt(1.0 - ab);
    TensorD none;
    auto out = ddim_step(x_t, eps_hat, t, tp, 0.0, none, sched);
    const double abp = sched.at(tp);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double expected = std::sqrt(abp) * c0 + std::sqrt(1.0 - abp) * eps_hat[i];
        CHECK(out[i] == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("ddim_step to t_prev=0 with eta=0 returns the predicted x0") {
    auto sched = build_schedule(ScheduleKind::Cosine, 1000);
    const int t = 350;
    auto x_t = randn({1, 2, 3, 3}, 9);
    auto eps_hat = randn({1, 2, 3, 3}, 10);
    TensorD none;
    auto out = ddim_step(x_t, eps_hat, t, 0, 0.0, none, sched);
    const double ab = sched.at(t);
    for (int64_t i = 0; i < out.numel(); ++i) {
        double pred_x0 = (x_t[i] - std::sqrt(1.0 - ab) * eps_hat[i]) / std::sqrt(ab);
        CHECK(out[i] == doctest::Approx(pred_x0).epsilon(1e-12));
    }
}

TEST_CASE("eta=1 sigma reduces to the DDPM posterior std for adjacent steps") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    for (int t : {2, 57, 500, 1000}) {
        const int tp = t - 1;
        const double ab_t = sched.at(t), ab_p = sched.at(tp);
        const double beta_t = 1.0 - ab_t / ab_p;
        const double posterior_var = beta_t * (1.0 - ab_p) / (1.0 - ab_t);  // direct formula
        const double sigma = ddim_sigma(sched, t, tp, 1.0);
        CHECK(sigma * sigma == doctest::Approx(posterior_var).epsilon(1e-10));
    }
}

TEST_CASE("ddim_step validates arguments") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 100);
    auto x = randn({1, 1, 2, 2}, 11);
    TensorD none;
    CHECK_THROWS_AS(ddim_step(x, x, 5, 5, 0.0, none, sched), InvalidArgument);
    CHECK_THROWS_AS(ddim_step(x, x, 4, 7, 0.0, none, sched), InvalidArgument);
    CHECK_THROWS_AS(ddim_step(x, x, 5, 2, 1.5, none, sched), InvalidArgument);
}

TEST_CASE("perfect-epsilon single-step inversion recovers x0") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    Philox rng(123, 1);
    for (int trial = 0; trial < 100; ++trial) {
        int t = rng.uniform_int(1, 1000);
        auto x0 = randn({1, 1, 4, 3}, 1000 + static_cast<uint64_t>(trial));
        auto eps = randn({1, 1, 4, 3}, 2000 + static_cast<uint64_t>(trial));
        auto x_t = forward_noise(x0, t, eps, sched);
        TensorD none;
        auto rec = ddim_step(x_t, eps, t, 0, 0.0, none, sched);
        for (int64_t i = 0; i < rec.numel(); ++i)
            CHECK(std::abs(rec[i] - x0[i]) <= 1e-5);
    }
}

TEST_CASE("ddim_step is equivariant under spatial permutation") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    auto x = randn({1, 1, 4, 4}, 12);
    auto e = randn({1, 1, 4, 4}, 13);
    auto z = randn({1, 1, 4, 4}, 14);
    Philox prng(77, 2);
    auto perm = prng.permutation(16);
    auto apply = [&](const TensorD& src) {
        TensorD dst(src.shape());
        for (size_t i = 0; i < 16; ++i) dst[static_cast<int64_t>(i)] = src[static_cast<int64_t>(perm[i])];
        return dst;
    };
    auto base = ddim_step(x, e, 700, 500, 0.5, z, sched);
    auto permuted = ddim_step(apply(x), apply(e), 700, 500, 0.5, apply(z), sched);
    auto base_p = apply(base);
    for (int64_t i = 0; i < 16; ++i) CHECK(permuted[i] == base_p[i]);
}

TEST_CASE("diffusion ops are bit-reproducible for a fixed seed") {
    auto sched = build_schedule(ScheduleKind::Cosine, 500);
    auto run = [&] {
        auto x0 = randn({1, 1, 3, 3}, 99);
        auto eps = randn({1, 1, 3, 3}, 98);
        auto x_t = forward_noise(x0, 250, eps, sched);
        auto z = randn({1, 1, 3, 3}, 97);
        return ddim_step(x_t, eps, 250, 100, 0.7, z, sched);
    };
    auto a = run();
    auto b = run();
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("training loss is zero for the true-eps denoiser and one for eps+1") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    TrainBatch<double> batch;
    batch.x0 = randn({2, 1, 4, 4}, 20);
    batch.eps = randn({2, 1, 4, 4}, 21);
    batch.t = {100, 900};

    FixedDenoiser exact(batch.eps);
    CHECK(training_loss(batch, exact, sched) == doctest::Approx(0.0));

    TensorD off(batch.eps.shape());
    for (int64_t i = 0; i < off.numel(); ++i) off[i] = batch.eps[i] + 1.0;
    FixedDenoiser offset(off);
    CHECK(training_loss(batch, offset, sched) == doctest::Approx(1.0));
}

TEST_CASE("training loss reports non-finite predictions with a timestep") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    TrainBatch<double> batch;
    batch.x0 = randn({2, 1, 2, 2}, 22);
    batch.eps = randn({2, 1, 2, 2}, 23);
    batch.t = {5, 777};
    TensorD bad(batch.eps.shape());
    bad[5] = std::numeric_limits<double>::quiet_NaN();  // second item is poisoned
    FixedDenoiser nan_denoiser(bad);
    try {
        training_loss(batch, nan_denoiser, sched);
        FAIL("expected NumericFailure");
    } catch (const NumericFailure& e) {
        CHECK(e.timestep == 777);
    }
}

TEST_CASE("training loss gradient matches finite differences (tiny linear denoiser)") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);
    Philox rng(31, 3);
    TinyLinearDenoiser den(rng);
    TrainBatch<double> batch;
    batch.x0 = randn({4, 1, 4, 4}, 24);
    batch.eps = randn({4, 1, 4, 4}, 25);
    batch.t = {50, 300, 600, 950};
    auto build = [&](Tape<double>* tape) {
        return training_loss_node(tape, batch, den, sched);
    };
    gradcheck::check(build, {den.conv_.w, den.conv_.b}, 1e-4);
}

TEST_CASE("analytic denoiser closed forms") {
    auto sched = build_schedule(ScheduleKind::LinearBeta, 1000);

    SUBCASE("std=1 mean=0 collapses the denominator") {
        TensorD mean({1, 2, 2});
        AnalyticGaussianDenoiser<double> den(mean, 1.0, sched);
        auto x = randn({1, 1, 2, 2}, 30);
        x.reshape({1, 1, 2, 2});
        for (int t : {1, 250, 999}) {
            auto e = den.predict(x, {t}, {});
            const double c = std::sqrt(1.0 - sched.at(t));
            for (int64_t i = 0; i < e.numel(); ++i)
                CHECK(e[i] == doctest::Approx(c * x[i]).epsilon(1e-12));
        }
    }

    SUBCASE("std=0 point mass: one eta=0 step to 0 yields the mean exactly") {
        TensorD mean = TensorD::full({1, 3, 3}, 2.5);
        AnalyticGaussianDenoiser<double> den(mean, 0.0, sched);
        auto x = randn({1, 1, 3, 3}, 31);
        for (int t : {50, 400, 1000}) {
            auto e = den.predict(x, {t}, {});
            TensorD none;
            auto x0 = ddim_step(x, e, t, 0, 0.0, none, sched);
            for (int64_t i = 0; i < x0.numel(); ++i)
                CHECK(x0[i] == doctest::Approx(2.5).epsilon(1e-9));
        }
    }

    SUBCASE("full 50-step chain reproduces the Gaussian marginal") {
        // 4096 independent scalar chains via one (1,64,64) plane.
        const double mu = 2.0, sd = 0.5;
        TensorD mean = TensorD::full({1, 64, 64}, mu);
        AnalyticGaussianDenoiser<double> den(mean, sd, sched);
        auto sl = build_step_list(50, 1000);
        TensorD x({1, 1, 64, 64});
        Philox rng(4242, 5);
        rng.fill_normal(x.data(), static_cast<size_t>(x.numel()));
        TensorD none;
        for (int i = sl.count() - 1; i >= 0; --i) {
            int t = sl.steps[static_cast<size_t>(i)];
            int tp = i > 0 ? sl.steps[static_cast<size_t>(i - 1)] : 0;
            auto e = den.predict(x, {t}, {});
            x = ddim_step(x, e, t, tp, 0.0, none, sched);
        }
        double m = 0;
        for (int64_t i = 0; i < x.numel(); ++i) m += x[i];
        m /= double(x.numel());
        double v = 0;
        for (int64_t i = 0; i < x.numel(); ++i) v += (x[i] - m) * (x[i] - m);
        v /= double(x.numel() - 1);
        CHECK(std::abs(m - mu) < 3.0 * sd / 64.0);
        CHECK(std::abs(std::sqrt(v) - sd) < 0.05 * sd);
    }
}
