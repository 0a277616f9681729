#include "mmfuse/tensor.hpp"

#include <cmath>
#include <sstream>

#include "mmfuse/error.hpp"

namespace mmfuse {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream out;
    out << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out << "x";
        }
        out << shape[i];
    }
    out << "]";
    return out.str();
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    for (int64_t e : shape) {
        if (e < 0) {
            throw ShapeError("tensor extent must be non-negative, got " + mmfuse::shape_str(shape));
        }
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(static_cast<size_t>(shape_numel(t.shape_)), 0.0);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data_.assign(1, v);
    return t;
}

Tensor Tensor::vector(std::vector<double> values) {
    Tensor t;
    t.shape_ = {static_cast<int64_t>(values.size())};
    t.data_ = std::move(values);
    return t;
}

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::vector<double> values) {
    if (static_cast<int64_t>(values.size()) != rows * cols) {
        throw ShapeError("matrix: " + std::to_string(values.size()) + " values for " + std::to_string(rows) + "x" +
                         std::to_string(cols));
    }
    Tensor t;
    t.shape_ = {rows, cols};
    t.data_ = std::move(values);
    return t;
}

Tensor Tensor::filled(std::vector<int64_t> shape, double v) {
    Tensor t = zeros(std::move(shape));
    t.fill(v);
    return t;
}

int64_t Tensor::rows() const {
    return rank() == 2 ? shape_[0] : 1;
}

int64_t Tensor::cols() const {
    if (rank() == 2) {
        return shape_[1];
    }
    if (rank() == 1) {
        return shape_[0];
    }
    return 1;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

void Tensor::fill(double v) {
    for (double& x : data_) {
        x = v;
    }
}

std::string Tensor::shape_str() const {
    return mmfuse::shape_str(shape_);
}

}  // namespace mmfuse
