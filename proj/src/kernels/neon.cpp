// NEON variants for AArch64, where Advanced SIMD is part of the base ISA.

#if defined(__aarch64__)

#include <arm_neon.h>

#include <cmath>

#include "vcon/kernels.hpp"

namespace vcon::kernels::neon {
namespace {

void gemm(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b,
          double* c) {
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * m;
        std::size_t j = 0;
        for (; j + 8 <= m; j += 8) {
            float64x2_t c0 = vdupq_n_f64(0.0);
            float64x2_t c1 = vdupq_n_f64(0.0);
            float64x2_t c2 = vdupq_n_f64(0.0);
            float64x2_t c3 = vdupq_n_f64(0.0);
            for (std::size_t p = 0; p < k; ++p) {
                const float64x2_t av = vdupq_n_f64(a[i * k + p]);
                const double* brow = b + p * m + j;
                c0 = vfmaq_f64(c0, av, vld1q_f64(brow));
                c1 = vfmaq_f64(c1, av, vld1q_f64(brow + 2));
                c2 = vfmaq_f64(c2, av, vld1q_f64(brow + 4));
                c3 = vfmaq_f64(c3, av, vld1q_f64(brow + 6));
            }
            vst1q_f64(crow + j, c0);
            vst1q_f64(crow + j + 2, c1);
            vst1q_f64(crow + j + 4, c2);
            vst1q_f64(crow + j + 6, c3);
        }
        for (; j + 2 <= m; j += 2) {
            float64x2_t acc = vdupq_n_f64(0.0);
            for (std::size_t p = 0; p < k; ++p)
                acc = vfmaq_f64(acc, vdupq_n_f64(a[i * k + p]), vld1q_f64(b + p * m + j));
            vst1q_f64(crow + j, acc);
        }
        for (; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * m + j];
            crow[j] = acc;
        }
    }
}

double dot(std::size_t n, const double* x, const double* y) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(x + i), vld1q_f64(y + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(x + i + 2), vld1q_f64(y + i + 2));
    }
    double s = vaddvq_f64(vaddq_f64(acc0, acc1));
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
    const float64x2_t av = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), av, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void add(std::size_t n, const double* x, const double* y, double* out) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub(std::size_t n, const double* x, const double* y, double* out) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul(std::size_t n, const double* x, const double* y, double* out) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
    for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale(std::size_t n, double c, const double* x, double* out) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_n_f64(vld1q_f64(x + i), c));
    for (; i < n; ++i) out[i] = c * x[i];
}

void relu(std::size_t n, const double* x, double* out) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t v = vld1q_f64(x + i);
        vst1q_f64(out + i, vbslq_f64(vcgtq_f64(v, zero), v, zero));
    }
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::size_t n, const double* x, const double* grad, double* out) {
    const float64x2_t zero = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(out + i, vbslq_f64(vcgtq_f64(vld1q_f64(x + i), zero), vld1q_f64(grad + i), zero));
    for (; i < n; ++i) out[i] = x[i] > 0.0 ? grad[i] : 0.0;
}

void adam(std::size_t n, double lr, double beta1, double beta2, double eps, double bc1, double bc2,
          const double* grad, double* m, double* v, double* param) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t g = vld1q_f64(grad + i);
        const float64x2_t mi = vaddq_f64(vmulq_n_f64(vld1q_f64(m + i), beta1), vmulq_n_f64(g, 1.0 - beta1));
        const float64x2_t vi =
            vaddq_f64(vmulq_n_f64(vld1q_f64(v + i), beta2), vmulq_f64(vmulq_n_f64(g, 1.0 - beta2), g));
        vst1q_f64(m + i, mi);
        vst1q_f64(v + i, vi);
        const float64x2_t mhat = vdivq_f64(mi, vdupq_n_f64(bc1));
        const float64x2_t vhat = vdivq_f64(vi, vdupq_n_f64(bc2));
        const float64x2_t step =
            vdivq_f64(vmulq_n_f64(mhat, lr), vaddq_f64(vsqrtq_f64(vhat), vdupq_n_f64(eps)));
        vst1q_f64(param + i, vsubq_f64(vld1q_f64(param + i), step));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        param[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

constexpr KernelTable kTable{Isa::neon, gemm,  dot,  axpy,          add,
                             sub,       mul,   scale, relu,         relu_backward,
                             adam};

}  // namespace

const KernelTable& table() noexcept { return kTable; }

}  // namespace vcon::kernels::neon

#endif
