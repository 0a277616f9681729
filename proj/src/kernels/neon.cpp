// NEON kernels for aarch64, 2 doubles per lane. Same contracts as the AVX2
// backend; the equivalence suite covers whichever SIMD backend the host has.

#include "mmfuse/kernels/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

namespace mmfuse::kernels {
namespace {

double dot_neon(const double* a, const double* b, size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
        acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    for (; i + 2 <= n; i += 2) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    }
    double tail = 0.0;
    for (; i < n; ++i) {
        tail += a[i] * b[i];
    }
    return vaddvq_f64(acc0) + vaddvq_f64(acc1) + tail;
}

double sum_neon(const double* a, size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        acc = vaddq_f64(acc, vld1q_f64(a + i));
    }
    double tail = 0.0;
    for (; i < n; ++i) {
        tail += a[i];
    }
    return vaddvq_f64(acc) + tail;
}

double max_index_neon(const double* a, size_t n, size_t* argmax) {
    double best = a[0];
    size_t i = 1;
    if (n >= 4) {
        float64x2_t vbest = vld1q_f64(a);
        for (i = 2; i + 2 <= n; i += 2) {
            vbest = vmaxq_f64(vbest, vld1q_f64(a + i));
        }
        best = vmaxvq_f64(vbest);
    }
    for (; i < n; ++i) {
        if (a[i] > best) {
            best = a[i];
        }
    }
    for (size_t j = 0; j < n; ++j) {
        if (a[j] == best) {
            *argmax = j;
            return best;
        }
    }
    *argmax = 0;
    return best;
}

void add_neon(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (; i < n; ++i) {
        out[i] = a[i] + b[i];
    }
}

void mul_neon(const double* a, const double* b, double* out, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (; i < n; ++i) {
        out[i] = a[i] * b[i];
    }
}

void scale_neon(const double* a, double s, double* out, size_t n) {
    float64x2_t vs = vdupq_n_f64(s);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vs));
    }
    for (; i < n; ++i) {
        out[i] = a[i] * s;
    }
}

void axpy_neon(double a, const double* x, double* y, size_t n) {
    float64x2_t va = vdupq_n_f64(a);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    }
    for (; i < n; ++i) {
        y[i] += a * x[i];
    }
}

void matmul_nn_neon(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        double* crow = C + i * n;
        for (size_t p = 0; p < k; ++p) {
            const float64x2_t a = vdupq_n_f64(A[i * k + p]);
            const double* brow = B + p * n;
            size_t j = 0;
            for (; j + 2 <= n; j += 2) {
                vst1q_f64(crow + j, vfmaq_f64(vld1q_f64(crow + j), a, vld1q_f64(brow + j)));
            }
            const double as = A[i * k + p];
            for (; j < n; ++j) {
                crow[j] += as * brow[j];
            }
        }
    }
}

void matmul_tn_neon(const double* A, const double* B, double* C, size_t k, size_t m, size_t n) {
    for (size_t p = 0; p < k; ++p) {
        const double* arow = A + p * m;
        const double* brow = B + p * n;
        for (size_t i = 0; i < m; ++i) {
            const float64x2_t a = vdupq_n_f64(arow[i]);
            double* crow = C + i * n;
            size_t j = 0;
            for (; j + 2 <= n; j += 2) {
                vst1q_f64(crow + j, vfmaq_f64(vld1q_f64(crow + j), a, vld1q_f64(brow + j)));
            }
            const double as = arow[i];
            for (; j < n; ++j) {
                crow[j] += as * brow[j];
            }
        }
    }
}

void matmul_nt_neon(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        for (size_t j = 0; j < n; ++j) {
            C[i * n + j] += dot_neon(arow, B + j * k, k);
        }
    }
}

}  // namespace

const Backend* neon_backend() {
    static const Backend backend = {
        "neon",       dot_neon,       sum_neon,       max_index_neon, add_neon,
        mul_neon,     scale_neon,     axpy_neon,      matmul_nn_neon, matmul_tn_neon,
        matmul_nt_neon,
    };
    return &backend;
}

}  // namespace mmfuse::kernels

#else

namespace mmfuse::kernels {
const Backend* neon_backend() {
    return nullptr;
}
}  // namespace mmfuse::kernels

#endif
