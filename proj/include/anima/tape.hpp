#pragma once

#include "anima/scalar.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anima/tensor.hpp"

namespace anima::inline ANIMA_NS {

class GradTape;

/// Handle to a node on a GradTape. Cheap to copy; valid while the tape lives.
struct Var {
    GradTape* tape = nullptr;
    int id = -1;

    const NdTensor& value() const;
    const NdTensor::Dims& dims() const { return value().dims(); }
    std::size_t dim(std::size_t axis) const { return value().dim(axis); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;
};

/// Leaf id -> accumulated gradient.
using Gradients = std::map<int, NdTensor>;

/// Reverse-mode tape. Nodes are appended in evaluation order, so parents
/// always precede children and a single reverse sweep is a valid
/// topological traversal.
class GradTape {
public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    using BackwardFn = std::function<std::vector<std::optional<NdTensor>>(const NdTensor& grad_out,
                                                                          const std::vector<bool>& need)>;

    Var leaf(NdTensor value, bool requires_grad = false);
    Var constant(NdTensor value) { return leaf(std::move(value), false); }

    Var record(NdTensor value, std::vector<int> parents, BackwardFn backward, const char* op);

    const NdTensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
    bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
    bool is_leaf(int id) const { return nodes_.at(static_cast<std::size_t>(id)).parents.empty(); }
    const char* op_name(int id) const { return nodes_.at(static_cast<std::size_t>(id)).op; }
    const std::vector<int>& parents(int id) const { return nodes_.at(static_cast<std::size_t>(id)).parents; }

    /// Next free node id.
    int cursor() const { return static_cast<int>(nodes_.size()); }

    /// Gradients of a scalar loss with respect to every requires_grad leaf
    /// reachable from it.
    Gradients backward(Var loss) const;

private:
    struct Node {
        NdTensor value;
        std::vector<int> parents;
        BackwardFn backward;
        bool requires_grad = false;
        const char* op = "leaf";
    };
    std::vector<Node> nodes_;
};

Gradients backward(Var loss);

// Differentiable primitives. The set is closed: everything else in the model
// composes from these.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Scalar s);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var pad(Var a, std::size_t axis, std::size_t before, std::size_t after);
Var transpose(Var a);
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gamma, Var beta, Scalar eps);
Var gelu(Var x);
Var mean(Var x);
Var sum(Var x);
Var mse(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a, Var b) { return add(a, scale(b, -1.0f)); }

}  // namespace anima
