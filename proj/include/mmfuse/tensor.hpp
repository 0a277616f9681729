#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace mmfuse {

// Dense row-major tensor of doubles. Rank 0 is a scalar (numel 1), rank 1 a
// vector, rank 2 a matrix; nothing here needs more. Gradients live next to
// values in graph nodes and parameters, not inside Tensor itself.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor scalar(double v);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(int64_t rows, int64_t cols, std::vector<double> values);
    static Tensor filled(std::vector<int64_t> shape, double v);

    const std::vector<int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    // rank <= 2 accessors; a vector is 1 x n, a scalar 1 x 1.
    int64_t rows() const;
    int64_t cols() const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data_[static_cast<size_t>(i)]; }
    double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

    double* row(int64_t r) { return data() + r * cols(); }
    const double* row(int64_t r) const { return data() + r * cols(); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void fill(double v);

    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace mmfuse
