#include <array>
#include <vector>

#include "doctest.h"
#include "tryon/kernels.hpp"
#include "tryon/rng.hpp"

using namespace tryon;

namespace {

TensorF random_tensor(std::vector<int64_t> shape, uint64_t seed) {
    TensorF t(std::move(shape));
    Philox rng(seed, 0);
    rng.fill_normal(t.data(), static_cast<size_t>(t.numel()));
    return t;
}

}  // namespace

TEST_CASE("matmul variants bit-match the serial references") {
    const int64_t M = 17, K = 33, N = 291;  // awkward sizes straddle the column block
    auto A = random_tensor({M, K}, 1);
    auto B = random_tensor({K, N}, 2);
    TensorF C1({M, N}), C2({M, N});
    kernels::matmul_nn(A.data(), B.data(), C1.data(), M, K, N);
    kernels::serial::matmul_nn(A.data(), B.data(), C2.data(), M, K, N);
    for (int64_t i = 0; i < C1.numel(); ++i) REQUIRE(C1[i] == C2[i]);

    auto At = random_tensor({K, M}, 3);
    kernels::matmul_tn(At.data(), B.data(), C1.data(), M, K, N);
    kernels::serial::matmul_tn(At.data(), B.data(), C2.data(), M, K, N);
    for (int64_t i = 0; i < C1.numel(); ++i) REQUIRE(C1[i] == C2[i]);

    auto Bt = random_tensor({N, K}, 4);
    kernels::matmul_nt(A.data(), Bt.data(), C1.data(), M, K, N);
    kernels::serial::matmul_nt(A.data(), Bt.data(), C2.data(), M, K, N);
    for (int64_t i = 0; i < C1.numel(); ++i) REQUIRE(C1[i] == C2[i]);
}

TEST_CASE("matmul accumulate mode adds on top") {
    const int64_t M = 4, K = 5, N = 6;
    auto A = random_tensor({M, K}, 5);
    auto B = random_tensor({K, N}, 6);
    TensorF C = random_tensor({M, N}, 7);
    TensorF Cref = C;
    kernels::matmul_nn(A.data(), B.data(), C.data(), M, K, N, true);
    kernels::serial::matmul_nn(A.data(), B.data(), Cref.data(), M, K, N, true);
    for (int64_t i = 0; i < C.numel(); ++i) REQUIRE(C[i] == Cref[i]);
}

TEST_CASE("im2col+matmul convolution bit-matches the direct reference") {
    const std::vector<std::array<int64_t, 3>> cases = {{1, 1, 3}, {2, 1, 3}, {1, 0, 1}};
    for (auto [stride, pad, ks] : cases) {
        auto x = random_tensor({2, 3, 12, 10}, 10 + static_cast<uint64_t>(stride));
        auto w = random_tensor({5, 3, ks, ks}, 20 + static_cast<uint64_t>(ks));
        auto b = random_tensor({5}, 30);
        auto ref = kernels::serial::conv2d_direct(x, w, b, stride, pad);

        const int64_t OH = (12 + 2 * pad - ks) / stride + 1;
        const int64_t OW = (10 + 2 * pad - ks) / stride + 1;
        const int64_t K = 3 * ks * ks;
        TensorF out({2, 5, OH, OW});
        TensorF col({K, OH * OW});
        for (int64_t bi = 0; bi < 2; ++bi) {
            kernels::im2col(x.data() + bi * 3 * 12 * 10, 3, 12, 10, ks, ks, stride, pad,
                            col.data());
            kernels::matmul_nn(w.data(), col.data(), out.data() + bi * 5 * OH * OW, 5, K,
                               OH * OW);
        }
        for (int64_t i = 0; i < out.numel(); ++i) out[i] += b[(i / (OH * OW)) % 5];
        REQUIRE(out.same_shape(ref));
        for (int64_t i = 0; i < out.numel(); ++i) REQUIRE(out[i] == ref[i]);
    }
}

TEST_CASE("col2im is the adjoint of im2col") {
    // <im2col(x), y> == <x, col2im(y)> for random x, y.
    const int64_t C = 2, H = 7, W = 6, ks = 3, stride = 2, pad = 1;
    const int64_t OH = (H + 2 * pad - ks) / stride + 1;
    const int64_t OW = (W + 2 * pad - ks) / stride + 1;
    auto x = random_tensor({C, H, W}, 41);
    auto y = random_tensor({C * ks * ks, OH * OW}, 42);
    TensorF cx({C * ks * ks, OH * OW});
    kernels::im2col(x.data(), C, H, W, ks, ks, stride, pad, cx.data());
    TensorF xy({C, H, W});
    kernels::col2im(y.data(), C, H, W, ks, ks, stride, pad, xy.data());
    double lhs = 0, rhs = 0;
    for (int64_t i = 0; i < cx.numel(); ++i) lhs += double(cx[i]) * double(y[i]);
    for (int64_t i = 0; i < x.numel(); ++i) rhs += double(x[i]) * double(xy[i]);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("gaussian blur matches serial reference and preserves constants") {
    auto x = random_tensor({3, 16, 12}, 50);
    TensorF a, b;
    kernels::gaussian_blur(x, 2.0, a);
    kernels::serial::gaussian_blur(x, 2.0, b);
    for (int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);

    TensorF c = TensorF::full({1, 8, 8}, 0.37f);
    TensorF cb;
    kernels::gaussian_blur(c, 1.5, cb);
    for (int64_t i = 0; i < cb.numel(); ++i) CHECK(cb[i] == doctest::Approx(0.37f).epsilon(1e-6));
}

TEST_CASE("area resample basics") {
    auto x = random_tensor({3, 9, 7}, 60);
    auto same = kernels::area_resample(x, 9, 7);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(same[i] == x[i]);

    TensorF c = TensorF::full({2, 6, 6}, 1.25f);
    auto cr = kernels::area_resample(c, 4, 3);
    for (int64_t i = 0; i < cr.numel(); ++i) CHECK(cr[i] == doctest::Approx(1.25f));

    TensorF checker({1, 2, 2});
    checker[0] = 0.f; checker[1] = 1.f; checker[2] = 1.f; checker[3] = 0.f;
    auto one = kernels::area_resample(checker, 1, 1);
    CHECK(one[0] == doctest::Approx(0.5f));
}

TEST_CASE("bilinear resize identity and constants") {
    auto x = random_tensor({2, 5, 5}, 70);
    auto same = kernels::bilinear_resize(x, 5, 5);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(same[i] == x[i]);
    TensorF c = TensorF::full({1, 4, 4}, -0.6f);
    auto up = kernels::bilinear_resize(c, 9, 6);
    for (int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(-0.6f));
}

TEST_CASE("sobel of a linear ramp is its slope") {
    TensorF ramp({6, 8});
    for (int64_t y = 0; y < 6; ++y)
        for (int64_t x = 0; x < 8; ++x) ramp[y * 8 + x] = float(3 * x + 2 * y);
    TensorF gx, gy;
    kernels::sobel(ramp, gx, gy);
    // Interior of a ramp: sobel_x = 8*slope_x, sobel_y = 8*slope_y.
    for (int64_t y = 1; y < 5; ++y)
        for (int64_t x = 1; x < 7; ++x) {
            CHECK(gx[y * 8 + x] == doctest::Approx(24.f));
            CHECK(gy[y * 8 + x] == doctest::Approx(16.f));
        }
}
