#pragma once

#include <cassert>
#include <cstdint>
#include <string>
#include <vector>

#include "fallfuse/error.hpp"

namespace fallfuse {

// Extents of a dense tensor. Rank 1..4, every extent positive.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<int> dims) : dims_(dims) { validate(); }
    explicit Shape(std::vector<int> dims) : dims_(std::move(dims)) { validate(); }

    int rank() const { return static_cast<int>(dims_.size()); }
    int dim(int i) const {
        assert(i >= 0 && i < rank());
        return dims_[static_cast<std::size_t>(i)];
    }
    const std::vector<int>& dims() const { return dims_; }

    std::int64_t elements() const {
        std::int64_t n = 1;
        for (int d : dims_) n *= d;
        return n;
    }

    bool operator==(const Shape& other) const { return dims_ == other.dims_; }
    bool operator!=(const Shape& other) const { return !(*this == other); }

    // "16x4x3" style, used by error messages.
    std::string str() const;

private:
    void validate() const;
    std::vector<int> dims_;
};

// Dense row-major tensor of 64-bit floats. Value-semantic; the carrier
// for activations, parameters and gradients throughout.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)),
          data_(static_cast<std::size_t>(shape_.elements()), fill) {}
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::int64_t i) {
        assert(i >= 0 && i < size());
        return data_[static_cast<std::size_t>(i)];
    }
    double operator[](std::int64_t i) const {
        assert(i >= 0 && i < size());
        return data_[static_cast<std::size_t>(i)];
    }

    double& at(int i, int j) {
        assert(shape_.rank() == 2);
        return data_[static_cast<std::size_t>(i) * shape_.dim(1) + j];
    }
    double at(int i, int j) const {
        assert(shape_.rank() == 2);
        return data_[static_cast<std::size_t>(i) * shape_.dim(1) + j];
    }
    double& at(int i, int j, int k) {
        assert(shape_.rank() == 3);
        return data_[(static_cast<std::size_t>(i) * shape_.dim(1) + j) * shape_.dim(2) + k];
    }
    double at(int i, int j, int k) const {
        assert(shape_.rank() == 3);
        return data_[(static_cast<std::size_t>(i) * shape_.dim(1) + j) * shape_.dim(2) + k];
    }
    double& at(int i, int j, int k, int l) {
        assert(shape_.rank() == 4);
        return data_[((static_cast<std::size_t>(i) * shape_.dim(1) + j) * shape_.dim(2) + k) *
                         shape_.dim(3) + l];
    }
    double at(int i, int j, int k, int l) const {
        assert(shape_.rank() == 4);
        return data_[((static_cast<std::size_t>(i) * shape_.dim(1) + j) * shape_.dim(2) + k) *
                         shape_.dim(3) + l];
    }

    bool all_finite() const;

    // Same data, new extents; element counts must agree.
    Tensor reshaped(Shape new_shape) const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Closed-form output extent of a strided window sweep:
// floor((in + 2*padding - window) / stride) + 1.
int conv_output_extent(int in, int window, int stride, int padding);

// Standard matrix product, a[m x k] * b[k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// 2-D transpose.
Tensor transpose(const Tensor& a);

// Cross-correlation (no kernel flip), the usual deep-learning convention.
// input [C x L], kernels [F x C x k] -> [F x L'].
Tensor conv1d(const Tensor& input, const Tensor& kernels, int stride, int padding);

// input [C x H x W], kernels [F x C x kh x kw] -> [F x H' x W'].
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding);

// Max pooling. `argmax` records, per output cell, the flat index of the
// winning input element; ties break toward the lowest flat index so the
// backward pass is deterministic.
struct PoolResult {
    Tensor output;
    std::vector<std::int64_t> argmax;
};

// input [C x L] -> [C x L'].
PoolResult maxpool1d(const Tensor& input, int window, int stride);

// input [C x H x W] -> [C x H' x W'].
PoolResult maxpool2d(const Tensor& input, int window, int stride);

// Dispatch on dimensionality (1 or 2).
PoolResult maxpool(const Tensor& input, int window, int stride, int dimensionality);

}  // namespace fallfuse
