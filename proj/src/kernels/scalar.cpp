// Reference kernels. Plain textbook loops, fixed left-to-right order: the
// SIMD backends are tested against these.

#include "mmfuse/kernels/kernels.hpp"

namespace mmfuse::kernels {
namespace {

double dot_scalar(const double* a, const double* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double sum_scalar(const double* a, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        acc += a[i];
    }
    return acc;
}

double max_index_scalar(const double* a, size_t n, size_t* argmax) {
    double best = a[0];
    size_t best_i = 0;
    for (size_t i = 1; i < n; ++i) {
        if (a[i] > best) {
            best = a[i];
            best_i = i;
        }
    }
    *argmax = best_i;
    return best;
}

void add_scalar(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        out[i] = a[i] + b[i];
    }
}

void mul_scalar(const double* a, const double* b, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        out[i] = a[i] * b[i];
    }
}

void scale_scalar(const double* a, double s, double* out, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        out[i] = a[i] * s;
    }
}

void axpy_scalar(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        y[i] += a * x[i];
    }
}

void matmul_nn_scalar(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        for (size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            const double* brow = B + p * n;
            double* crow = C + i * n;
            for (size_t j = 0; j < n; ++j) {
                crow[j] += a * brow[j];
            }
        }
    }
}

void matmul_tn_scalar(const double* A, const double* B, double* C, size_t k, size_t m, size_t n) {
    for (size_t p = 0; p < k; ++p) {
        const double* arow = A + p * m;
        const double* brow = B + p * n;
        for (size_t i = 0; i < m; ++i) {
            const double a = arow[i];
            double* crow = C + i * n;
            for (size_t j = 0; j < n; ++j) {
                crow[j] += a * brow[j];
            }
        }
    }
}

void matmul_nt_scalar(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = A + i * k;
        for (size_t j = 0; j < n; ++j) {
            C[i * n + j] += dot_scalar(arow, B + j * k, k);
        }
    }
}

}  // namespace

const Backend& scalar_backend() {
    static const Backend backend = {
        "scalar",       dot_scalar,       sum_scalar,       max_index_scalar, add_scalar,
        mul_scalar,     scale_scalar,     axpy_scalar,      matmul_nn_scalar, matmul_tn_scalar,
        matmul_nt_scalar,
    };
    return backend;
}

}  // namespace mmfuse::kernels
