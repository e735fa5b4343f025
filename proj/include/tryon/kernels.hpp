#pragma once

// Compute kernels. The tryon::kernels functions are OpenMP-parallel; the
// tryon::kernels::serial functions are plain reference implementations of the
// same contracts, kept for tests and for the bench_kernels target.
//
// Determinism contract: every parallel loop owns a disjoint slice of the
// output and accumulates in the same element order as the serial reference,
// so results are bit-identical for any thread count.

#include <cmath>
#include <cstdint>

#include "tryon/tensor.hpp"

namespace tryon {
namespace kernels {

inline constexpr int64_t kMatmulColBlock = 256;

// C(M,N) = A(M,K) * B(K,N), C zeroed first unless accumulate.
template <typename T>
void matmul_nn(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N,
               bool accumulate = false) {
    int64_t nblocks = (N + kMatmulColBlock - 1) / kMatmulColBlock;
#pragma omp parallel for schedule(static)
    for (int64_t jb = 0; jb < nblocks; ++jb) {
        int64_t j0 = jb * kMatmulColBlock;
        int64_t j1 = j0 + kMatmulColBlock < N ? j0 + kMatmulColBlock : N;
        for (int64_t i = 0; i < M; ++i) {
            T* c = C + i * N;
            if (!accumulate)
                for (int64_t j = j0; j < j1; ++j) c[j] = T(0);
            const T* a = A + i * K;
            for (int64_t k = 0; k < K; ++k) {
                const T ak = a[k];
                const T* b = B + k * N;
                for (int64_t j = j0; j < j1; ++j) c[j] += ak * b[j];
            }
        }
    }
}

// C(M,N) = A^T * B with A stored (K,M), B stored (K,N).
template <typename T>
void matmul_tn(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N,
               bool accumulate = false) {
    int64_t nblocks = (N + kMatmulColBlock - 1) / kMatmulColBlock;
#pragma omp parallel for schedule(static)
    for (int64_t jb = 0; jb < nblocks; ++jb) {
        int64_t j0 = jb * kMatmulColBlock;
        int64_t j1 = j0 + kMatmulColBlock < N ? j0 + kMatmulColBlock : N;
        for (int64_t i = 0; i < M; ++i) {
            T* c = C + i * N;
            if (!accumulate)
                for (int64_t j = j0; j < j1; ++j) c[j] = T(0);
            for (int64_t k = 0; k < K; ++k) {
                const T ak = A[k * M + i];
                const T* b = B + k * N;
                for (int64_t j = j0; j < j1; ++j) c[j] += ak * b[j];
            }
        }
    }
}

// C(M,N) = A * B^T with A stored (M,K), B stored (N,K).
template <typename T>
void matmul_nt(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N,
               bool accumulate = false) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < M; ++i) {
        const T* a = A + i * K;
        T* c = C + i * N;
        for (int64_t j = 0; j < N; ++j) {
            const T* b = B + j * K;
            T acc = accumulate ? c[j] : T(0);
            for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] = acc;
        }
    }
}

// Unpack one (C,H,W) image into columns (C*KH*KW, OH*OW) for convolution.
template <typename T>
void im2col(const T* img, int64_t C, int64_t H, int64_t W, int64_t KH, int64_t KW,
            int64_t stride, int64_t pad, T* col) {
    int64_t OH = (H + 2 * pad - KH) / stride + 1;
    int64_t OW = (W + 2 * pad - KW) / stride + 1;
    int64_t rows = C * KH * KW;
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        int64_t kx = r % KW;
        int64_t ky = (r / KW) % KH;
        int64_t c = r / (KW * KH);
        const T* src = img + c * H * W;
        T* dst = col + r * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
            int64_t iy = oy * stride + ky - pad;
            for (int64_t ox = 0; ox < OW; ++ox) {
                int64_t ix = ox * stride + kx - pad;
                dst[oy * OW + ox] =
                    (iy >= 0 && iy < H && ix >= 0 && ix < W) ? src[iy * W + ix] : T(0);
            }
        }
    }
}

// Scatter columns back into an image (accumulating); adjoint of im2col.
// Parallel over channels: each channel's accumulation order matches serial.
template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t KH, int64_t KW,
            int64_t stride, int64_t pad, T* img) {
    int64_t OH = (H + 2 * pad - KH) / stride + 1;
    int64_t OW = (W + 2 * pad - KW) / stride + 1;
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        T* dst = img + c * H * W;
        for (int64_t i = 0; i < H * W; ++i) dst[i] = T(0);
        for (int64_t ky = 0; ky < KH; ++ky) {
            for (int64_t kx = 0; kx < KW; ++kx) {
                const T* src = col + ((c * KH + ky) * KW + kx) * OH * OW;
                for (int64_t oy = 0; oy < OH; ++oy) {
                    int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int64_t ox = 0; ox < OW; ++ox) {
                        int64_t ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[iy * W + ix] += src[oy * OW + ox];
                    }
                }
            }
        }
    }
}

// Separable Gaussian blur, per channel, reflect-101 borders.
// Kernel radius 3*sigma, normalized.
template <typename T>
std::vector<T> gaussian_taps(double sigma) {
    int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
    if (radius < 1) radius = 1;
    std::vector<T> taps(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int64_t i = -radius; i <= radius; ++i) {
        double v = std::exp(-0.5 * (double(i) * double(i)) / (sigma * sigma));
        taps[static_cast<size_t>(i + radius)] = static_cast<T>(v);
        sum += v;
    }
    for (auto& t : taps) t = static_cast<T>(static_cast<double>(t) / sum);
    return taps;
}

inline int64_t reflect101(int64_t i, int64_t n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

template <typename T>
void gaussian_blur(const Tensor<T>& src, double sigma, Tensor<T>& dst) {
    TRYON_CHECK(src.ndim() == 3, "gaussian_blur: expected (C,H,W)");
    TRYON_CHECK(sigma > 0, "gaussian_blur: sigma must be > 0");
    const int64_t C = src.dim(0), H = src.dim(1), W = src.dim(2);
    auto taps = gaussian_taps<T>(sigma);
    int64_t radius = (static_cast<int64_t>(taps.size()) - 1) / 2;
    dst = Tensor<T>({C, H, W});
    Tensor<T> tmp({C, H, W});
#pragma omp parallel for schedule(static)
    for (int64_t cy = 0; cy < C * H; ++cy) {  // horizontal pass
        int64_t c = cy / H, y = cy % H;
        for (int64_t x = 0; x < W; ++x) {
            T acc = T(0);
            for (int64_t k = -radius; k <= radius; ++k)
                acc += taps[static_cast<size_t>(k + radius)] * src.at(c, y, reflect101(x + k, W));
            tmp.at(c, y, x) = acc;
        }
    }
#pragma omp parallel for schedule(static)
    for (int64_t cy = 0; cy < C * H; ++cy) {  // vertical pass
        int64_t c = cy / H, y = cy % H;
        for (int64_t x = 0; x < W; ++x) {
            T acc = T(0);
            for (int64_t k = -radius; k <= radius; ++k)
                acc += taps[static_cast<size_t>(k + radius)] * tmp.at(c, reflect101(y + k, H), x);
            dst.at(c, y, x) = acc;
        }
    }
}

// Sobel gradients of a single-channel plane (H,W), reflect-101 borders.
template <typename T>
void sobel(const Tensor<T>& src, Tensor<T>& gx, Tensor<T>& gy) {
    TRYON_CHECK(src.ndim() == 2, "sobel: expected (H,W)");
    const int64_t H = src.dim(0), W = src.dim(1);
    gx = Tensor<T>({H, W});
    gy = Tensor<T>({H, W});
    static const int sx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static const int sy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
#pragma omp parallel for schedule(static)
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            T ax = T(0), ay = T(0);
            for (int dy = -1; dy <= 1; ++dy) {
                int64_t yy = reflect101(y + dy, H);
                for (int dx = -1; dx <= 1; ++dx) {
                    int64_t xx = reflect101(x + dx, W);
                    T v = src[yy * W + xx];
                    ax += static_cast<T>(sx[dy + 1][dx + 1]) * v;
                    ay += static_cast<T>(sy[dy + 1][dx + 1]) * v;
                }
            }
            gx[y * W + x] = ax;
            gy[y * W + x] = ay;
        }
    }
}

// Exact fractional-coverage area average, (C,H,W) -> (C,th,tw).
// Identity when sizes match; preserves constants.
template <typename T>
Tensor<T> area_resample(const Tensor<T>& src, int64_t th, int64_t tw) {
    TRYON_CHECK(src.ndim() == 3, "area_resample: expected (C,H,W)");
    const int64_t C = src.dim(0), H = src.dim(1), W = src.dim(2);
    TRYON_CHECK(th >= 1 && tw >= 1, "area_resample: target must be positive");
    if (th == H && tw == W) return src;
    Tensor<T> dst({C, th, tw});
    const double sy = static_cast<double>(H) / th;
    const double sx = static_cast<double>(W) / tw;
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t oy = 0; oy < th; ++oy) {
            double y0 = oy * sy, y1 = (oy + 1) * sy;
            int64_t iy0 = static_cast<int64_t>(std::floor(y0));
            int64_t iy1 = static_cast<int64_t>(std::ceil(y1));
            for (int64_t ox = 0; ox < tw; ++ox) {
                double x0 = ox * sx, x1 = (ox + 1) * sx;
                int64_t ix0 = static_cast<int64_t>(std::floor(x0));
                int64_t ix1 = static_cast<int64_t>(std::ceil(x1));
                double acc = 0.0, area = 0.0;
                for (int64_t iy = iy0; iy < iy1 && iy < H; ++iy) {
                    double wy = std::min<double>(y1, double(iy + 1)) - std::max<double>(y0, double(iy));
                    if (wy <= 0) continue;
                    for (int64_t ix = ix0; ix < ix1 && ix < W; ++ix) {
                        double wx =
                            std::min<double>(x1, double(ix + 1)) - std::max<double>(x0, double(ix));
                        if (wx <= 0) continue;
                        acc += wy * wx * static_cast<double>(src.at(c, iy, ix));
                        area += wy * wx;
                    }
                }
                dst.at(c, oy, ox) = static_cast<T>(acc / area);
            }
        }
    }
    return dst;
}

// Bilinear resize, (C,H,W) -> (C,th,tw), half-pixel centers, edge clamp.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& src, int64_t th, int64_t tw) {
    TRYON_CHECK(src.ndim() == 3, "bilinear_resize: expected (C,H,W)");
    const int64_t C = src.dim(0), H = src.dim(1), W = src.dim(2);
    if (th == H && tw == W) return src;
    Tensor<T> dst({C, th, tw});
    const double sy = static_cast<double>(H) / th;
    const double sx = static_cast<double>(W) / tw;
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        for (int64_t oy = 0; oy < th; ++oy) {
            double fy = (oy + 0.5) * sy - 0.5;
            int64_t y0 = static_cast<int64_t>(std::floor(fy));
            double wy = fy - y0;
            int64_t y0c = std::min<int64_t>(std::max<int64_t>(y0, 0), H - 1);
            int64_t y1c = std::min<int64_t>(std::max<int64_t>(y0 + 1, 0), H - 1);
            for (int64_t ox = 0; ox < tw; ++ox) {
                double fx = (ox + 0.5) * sx - 0.5;
                int64_t x0 = static_cast<int64_t>(std::floor(fx));
                double wx = fx - x0;
                int64_t x0c = std::min<int64_t>(std::max<int64_t>(x0, 0), W - 1);
                int64_t x1c = std::min<int64_t>(std::max<int64_t>(x0 + 1, 0), W - 1);
                double v = (1 - wy) * ((1 - wx) * src.at(c, y0c, x0c) + wx * src.at(c, y0c, x1c)) +
                           wy * ((1 - wx) * src.at(c, y1c, x0c) + wx * src.at(c, y1c, x1c));
                dst.at(c, oy, ox) = static_cast<T>(v);
            }
        }
    }
    return dst;
}

/*============================== serial references ==========================*/

namespace serial {

template <typename T>
void matmul_nn(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N,
               bool accumulate = false) {
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < N; ++j) {
            T acc = accumulate ? C[i * N + j] : T(0);
            for (int64_t k = 0; k < K; ++k) acc += A[i * K + k] * B[k * N + j];
            C[i * N + j] = acc;
        }
    }
}

template <typename T>
void matmul_tn(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N,
               bool accumulate = false) {
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < N; ++j) {
            T acc = accumulate ? C[i * N + j] : T(0);
            for (int64_t k = 0; k < K; ++k) acc += A[k * M + i] * B[k * N + j];
            C[i * N + j] = acc;
        }
    }
}

template <typename T>
void matmul_nt(const T* A, const T* B, T* C, int64_t M, int64_t K, int64_t N,
               bool accumulate = false) {
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < N; ++j) {
            T acc = accumulate ? C[i * N + j] : T(0);
            for (int64_t k = 0; k < K; ++k) acc += A[i * K + k] * B[j * K + k];
            C[i * N + j] = acc;
        }
    }
}

// Direct 7-loop convolution, the reference the im2col+matmul path is
// validated against. input (B,C,H,W), weight (OC,IC,KH,KW), bias (OC).
template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                        int64_t stride, int64_t pad) {
    const int64_t B = input.dim(0), IC = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t OC = weight.dim(0), KH = weight.dim(2), KW = weight.dim(3);
    const int64_t OH = (H + 2 * pad - KH) / stride + 1;
    const int64_t OW = (W + 2 * pad - KW) / stride + 1;
    Tensor<T> out({B, OC, OH, OW});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t oc = 0; oc < OC; ++oc)
            for (int64_t oy = 0; oy < OH; ++oy)
                for (int64_t ox = 0; ox < OW; ++ox) {
                    T acc = T(0);
                    for (int64_t ic = 0; ic < IC; ++ic)
                        for (int64_t ky = 0; ky < KH; ++ky)
                            for (int64_t kx = 0; kx < KW; ++kx) {
                                int64_t iy = oy * stride + ky - pad;
                                int64_t ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += weight.at(oc, ic, ky, kx) * input.at(b, ic, iy, ix);
                            }
                    out.at(b, oc, oy, ox) = acc + bias[oc];
                }
    return out;
}

template <typename T>
void gaussian_blur(const Tensor<T>& src, double sigma, Tensor<T>& dst) {
    const int64_t C = src.dim(0), H = src.dim(1), W = src.dim(2);
    auto taps = gaussian_taps<T>(sigma);
    int64_t radius = (static_cast<int64_t>(taps.size()) - 1) / 2;
    dst = Tensor<T>({C, H, W});
    Tensor<T> tmp({C, H, W});
    for (int64_t cy = 0; cy < C * H; ++cy) {
        int64_t c = cy / H, y = cy % H;
        for (int64_t x = 0; x < W; ++x) {
            T acc = T(0);
            for (int64_t k = -radius; k <= radius; ++k)
                acc += taps[static_cast<size_t>(k + radius)] * src.at(c, y, reflect101(x + k, W));
            tmp.at(c, y, x) = acc;
        }
    }
    for (int64_t cy = 0; cy < C * H; ++cy) {
        int64_t c = cy / H, y = cy % H;
        for (int64_t x = 0; x < W; ++x) {
            T acc = T(0);
            for (int64_t k = -radius; k <= radius; ++k)
                acc += taps[static_cast<size_t>(k + radius)] * tmp.at(c, reflect101(y + k, H), x);
            dst.at(c, y, x) = acc;
        }
    }
}

}  // namespace serial

}  // namespace kernels
}  // namespace tryon
