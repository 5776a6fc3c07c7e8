#include "anima/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "anima/errors.hpp"
#include "anima/rng.hpp"

namespace anima::inline ANIMA_NS {

std::size_t product(const NdTensor::Dims& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::string dims_string(const NdTensor::Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << 'x';
        os << dims[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_dims(const NdTensor::Dims& dims) {
    if (dims.empty()) throw ShapeError("tensor dims must be non-empty");
    for (auto d : dims) {
        if (d == 0) throw ShapeError("tensor dims must be >= 1, got " + dims_string(dims));
    }
}

}  // namespace

NdTensor::NdTensor(Dims dims, Scalar fill) : dims_(std::move(dims)) {
    check_dims(dims_);
    data_.assign(product(dims_), fill);
}

NdTensor::NdTensor(Dims dims, std::vector<Scalar> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims(dims_);
    if (product(dims_) != data_.size()) {
        throw ShapeError("tensor payload of " + std::to_string(data_.size()) + " elements does not fit dims " +
                         dims_string(dims_));
    }
}

NdTensor NdTensor::eye(std::size_t n) {
    NdTensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

NdTensor NdTensor::matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<Scalar> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return NdTensor({r, c}, std::move(data));
}

NdTensor NdTensor::randn(Dims dims, Rng& rng, double stddev) {
    auto n = product(dims);
    return NdTensor(std::move(dims), rng.normal_vector(n, stddev));
}

Scalar NdTensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string());
    return data_[0];
}

NdTensor NdTensor::reshaped(Dims dims) const {
    NdTensor out(std::move(dims), data_);
    return out;
}

bool NdTensor::bit_equal(const NdTensor& other) const {
    return dims_ == other.dims_ &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(Scalar)) == 0;
}

std::string NdTensor::shape_string() const { return dims_string(dims_); }

namespace kernels {

namespace {

void require_same(const NdTensor& a, const NdTensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

// Split dims around an axis: outer * axis_len * inner == size.
struct AxisSplit {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(const NdTensor::Dims& dims, std::size_t axis) {
    if (axis >= dims.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + dims_string(dims));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= dims[i];
    s.len = dims[axis];
    for (std::size_t i = axis + 1; i < dims.size(); ++i) s.inner *= dims[i];
    return s;
}

}  // namespace

NdTensor matmul(const NdTensor& a, const NdTensor& b) {
    if (b.rank() != 2) throw ShapeError("matmul: right operand must be rank 2, got " + b.shape_string());
    const std::size_t k = a.cols();
    if (k != b.dim(0)) {
        throw ShapeError("matmul: inner dims differ (" + std::to_string(k) + " vs " + std::to_string(b.dim(0)) +
                         ") for " + a.shape_string() + " x " + b.shape_string());
    }
    const std::size_t m = a.rows();
    const std::size_t n = b.dim(1);
    auto dims = a.dims();
    dims.back() = n;
    NdTensor out(dims);
    std::vector<double> acc(n);
    const Scalar* pa = a.data().data();
    const Scalar* pb = b.data().data();
    Scalar* po = out.mutable_data().data();
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            if (av == 0.0) continue;
            const Scalar* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
        }
        for (std::size_t j = 0; j < n; ++j) po[i * n + j] = static_cast<Scalar>(acc[j]);
    }
    return out;
}

NdTensor add(const NdTensor& a, const NdTensor& b) {
    require_same(a, b, "add");
    NdTensor out(a.dims());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

NdTensor sub(const NdTensor& a, const NdTensor& b) {
    require_same(a, b, "sub");
    NdTensor out(a.dims());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

NdTensor mul(const NdTensor& a, const NdTensor& b) {
    require_same(a, b, "mul");
    NdTensor out(a.dims());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

NdTensor scale(const NdTensor& a, Scalar s) {
    NdTensor out(a.dims());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
    return out;
}

NdTensor concat(std::span<const NdTensor> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    auto dims = parts[0].dims();
    if (axis >= dims.size()) throw ShapeError("concat: axis out of range for " + parts[0].shape_string());
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != dims.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < dims.size(); ++i) {
            if (i != axis && p.dim(i) != dims[i]) {
                throw ShapeError("concat: dims differ off-axis " + parts[0].shape_string() + " vs " + p.shape_string());
            }
        }
        total += p.dim(axis);
    }
    dims[axis] = total;
    NdTensor out(dims);
    const auto s = split_axis(dims, axis);
    Scalar* po = out.mutable_data().data();
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t chunk = p.dim(axis) * s.inner;
            std::memcpy(po + (o * total + offset) * s.inner, p.data().data() + o * chunk, chunk * sizeof(Scalar));
            offset += p.dim(axis);
        }
    }
    return out;
}

NdTensor slice(const NdTensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto s = split_axis(a.dims(), axis);
    if (begin >= end || end > s.len) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                         std::to_string(axis) + " of " + a.shape_string());
    }
    auto dims = a.dims();
    dims[axis] = end - begin;
    NdTensor out(dims);
    const std::size_t chunk = (end - begin) * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::memcpy(out.mutable_data().data() + o * chunk, a.data().data() + (o * s.len + begin) * s.inner,
                    chunk * sizeof(Scalar));
    }
    return out;
}

NdTensor pad(const NdTensor& a, std::size_t axis, std::size_t before, std::size_t after) {
    const auto s = split_axis(a.dims(), axis);
    auto dims = a.dims();
    dims[axis] = s.len + before + after;
    NdTensor out(dims);
    const std::size_t chunk = s.len * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::memcpy(out.mutable_data().data() + (o * dims[axis] + before) * s.inner, a.data().data() + o * chunk,
                    chunk * sizeof(Scalar));
    }
    return out;
}

NdTensor transpose(const NdTensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: rank-2 tensor required, got " + a.shape_string());
    const std::size_t r = a.dim(0), c = a.dim(1);
    NdTensor out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
    return out;
}

NdTensor softmax_rows(const NdTensor& x) {
    NdTensor out(x.dims());
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const Scalar* row = x.data().data() + r * n;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < n; ++j) {
            if (std::isnan(row[j])) throw NumericError("softmax_rows: NaN input in row " + std::to_string(r));
            mx = std::max<double>(mx, row[j]);
        }
        if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite input in row " + std::to_string(r));
        double total = 0.0;
        std::vector<double> e(n);
        for (std::size_t j = 0; j < n; ++j) {
            e[j] = std::exp(static_cast<double>(row[j]) - mx);
            total += e[j];
        }
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = static_cast<Scalar>(e[j] / total);
    }
    return out;
}

NdTensor layer_norm(const NdTensor& x, const NdTensor& gamma, const NdTensor& beta, Scalar eps) {
    const std::size_t d = x.cols();
    if (gamma.size() != d || beta.size() != d) {
        throw ShapeError("layer_norm: last dim " + std::to_string(d) + " vs gamma " + gamma.shape_string() +
                         " / beta " + beta.shape_string());
    }
    if (!(eps > 0.0f)) throw ContractError("layer_norm: eps must be positive");
    NdTensor out(x.dims());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const Scalar* row = x.data().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            out[r * d + j] = static_cast<Scalar>((row[j] - mu) * inv * gamma[j] + beta[j]);
        }
    }
    return out;
}

Scalar gelu_scalar(Scalar x) {
    const double xd = x;
    return static_cast<Scalar>(0.5 * xd * (1.0 + std::erf(xd / std::numbers::sqrt2)));
}

Scalar gelu_grad_scalar(Scalar x) {
    const double xd = x;
    const double cdf = 0.5 * (1.0 + std::erf(xd / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * std::numbers::pi);
    return static_cast<Scalar>(cdf + xd * pdf);
}

NdTensor gelu(const NdTensor& x) {
    NdTensor out(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_scalar(x[i]);
    return out;
}

NdTensor sum(const NdTensor& x) {
    double s = 0.0;
    for (Scalar v : x.data()) s += v;
    return NdTensor::scalar(static_cast<Scalar>(s));
}

NdTensor mean(const NdTensor& x) {
    double s = 0.0;
    for (Scalar v : x.data()) s += v;
    return NdTensor::scalar(static_cast<Scalar>(s / static_cast<double>(x.size())));
}

NdTensor mse(const NdTensor& a, const NdTensor& b) {
    require_same(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return NdTensor::scalar(static_cast<Scalar>(s / static_cast<double>(a.size())));
}

}  // namespace kernels

}  // namespace anima
