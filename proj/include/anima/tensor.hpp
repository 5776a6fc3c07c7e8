#pragma once

#include "anima/scalar.hpp"

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace anima::inline ANIMA_NS {

class Rng;

/// Dense row-major array of 32-bit floats. Plain value type: copies are deep,
/// and no operation mutates its inputs.
class NdTensor {
public:
    using Dims = std::vector<std::size_t>;

    NdTensor() : NdTensor(Dims{1}) {}
    explicit NdTensor(Dims dims, Scalar fill = 0.0f);
    NdTensor(Dims dims, std::vector<Scalar> data);

    static NdTensor zeros(Dims dims) { return NdTensor(std::move(dims), 0.0f); }
    static NdTensor ones(Dims dims) { return NdTensor(std::move(dims), 1.0f); }
    static NdTensor scalar(Scalar v) { return NdTensor(Dims{1}, v); }
    static NdTensor eye(std::size_t n);
    static NdTensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows);
    static NdTensor randn(Dims dims, Rng& rng, double stddev = 1.0);

    const Dims& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
    std::size_t size() const { return data_.size(); }

    /// Rows/cols of a rank-2 view: all leading dims folded into rows.
    std::size_t rows() const { return size() / dims_.back(); }
    std::size_t cols() const { return dims_.back(); }

    std::span<const Scalar> data() const { return data_; }
    std::span<Scalar> mutable_data() { return data_; }
    const std::vector<Scalar>& vec() const { return data_; }

    Scalar operator[](std::size_t i) const { return data_[i]; }
    Scalar& operator[](std::size_t i) { return data_[i]; }
    Scalar at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    Scalar& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    Scalar item() const;

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v) { requires_grad_ = v; }

    /// Same buffer, new dims. Element count must match.
    NdTensor reshaped(Dims dims) const;

    bool same_shape(const NdTensor& other) const { return dims_ == other.dims_; }
    /// Bitwise equality of dims and payload.
    bool bit_equal(const NdTensor& other) const;

    std::string shape_string() const;

private:
    Dims dims_;
    std::vector<Scalar> data_;
    bool requires_grad_ = false;
};

std::string dims_string(const NdTensor::Dims& dims);
std::size_t product(const NdTensor::Dims& dims);

/// Forward kernels. These are the numeric bodies behind the tape primitives;
/// they never record gradients.
namespace kernels {

NdTensor matmul(const NdTensor& a, const NdTensor& b);
NdTensor add(const NdTensor& a, const NdTensor& b);
NdTensor sub(const NdTensor& a, const NdTensor& b);
NdTensor mul(const NdTensor& a, const NdTensor& b);
NdTensor scale(const NdTensor& a, Scalar s);
NdTensor concat(std::span<const NdTensor> parts, std::size_t axis);
NdTensor slice(const NdTensor& a, std::size_t axis, std::size_t begin, std::size_t end);
NdTensor pad(const NdTensor& a, std::size_t axis, std::size_t before, std::size_t after);
NdTensor transpose(const NdTensor& a);
NdTensor softmax_rows(const NdTensor& x);
NdTensor layer_norm(const NdTensor& x, const NdTensor& gamma, const NdTensor& beta, Scalar eps);
NdTensor gelu(const NdTensor& x);
NdTensor mean(const NdTensor& x);
NdTensor sum(const NdTensor& x);
NdTensor mse(const NdTensor& a, const NdTensor& b);

Scalar gelu_scalar(Scalar x);
Scalar gelu_grad_scalar(Scalar x);

}  // namespace kernels

}  // namespace anima
