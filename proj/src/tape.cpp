#include "anima/tape.hpp"

#include <cmath>

#include "anima/errors.hpp"

namespace anima::inline ANIMA_NS {

const NdTensor& Var::value() const {
    if (!tape) throw ContractError("Var not bound to a tape");
    return tape->value(id);
}

bool Var::requires_grad() const { return tape && tape->requires_grad(id); }

Var GradTape::leaf(NdTensor value, bool requires_grad) {
    value.set_requires_grad(requires_grad);
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, "leaf"});
    return Var{this, cursor() - 1};
}

Var GradTape::record(NdTensor value, std::vector<int> parents, BackwardFn backward, const char* op) {
    bool needs = false;
    for (int p : parents) {
        if (p < 0 || p >= cursor()) throw ContractError(std::string(op) + ": parent not on this tape");
        needs = needs || nodes_[static_cast<std::size_t>(p)].requires_grad;
    }
    value.set_requires_grad(needs);
    Node node{std::move(value), std::move(parents), needs ? std::move(backward) : BackwardFn{}, needs, op};
    nodes_.push_back(std::move(node));
    return Var{this, cursor() - 1};
}

Gradients GradTape::backward(Var loss) const {
    if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
    const auto& root = nodes_.at(static_cast<std::size_t>(loss.id));
    if (root.value.size() != 1) {
        throw ContractError("backward: loss must be a scalar, got " + root.value.shape_string());
    }
    std::vector<std::optional<NdTensor>> grads(nodes_.size());
    grads[static_cast<std::size_t>(loss.id)] = NdTensor::ones(root.value.dims());

    Gradients out;
    for (int i = loss.id; i >= 0; --i) {
        auto& g = grads[static_cast<std::size_t>(i)];
        if (!g) continue;
        const Node& node = nodes_[static_cast<std::size_t>(i)];
        if (node.parents.empty()) {
            if (node.requires_grad) out.emplace(i, std::move(*g));
            g.reset();
            continue;
        }
        if (!node.requires_grad) continue;
        std::vector<bool> need(node.parents.size());
        for (std::size_t k = 0; k < node.parents.size(); ++k) {
            need[k] = nodes_[static_cast<std::size_t>(node.parents[k])].requires_grad;
        }
        auto contributions = node.backward(*g, need);
        g.reset();
        for (std::size_t k = 0; k < node.parents.size(); ++k) {
            if (!need[k] || !contributions[k]) continue;
            auto& target = grads[static_cast<std::size_t>(node.parents[k])];
            if (!target) {
                target = std::move(*contributions[k]);
            } else {
                auto& acc = *target;
                const auto& c = *contributions[k];
                for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += c[e];
            }
        }
    }
    return out;
}

Gradients backward(Var loss) {
    if (!loss.tape) throw ContractError("backward: unbound loss");
    return loss.tape->backward(loss);
}

namespace {

using Grads = std::vector<std::optional<NdTensor>>;

GradTape& tape_of(Var a) {
    if (!a.tape) throw ContractError("operation on unbound Var");
    return *a.tape;
}

GradTape& tape_of(Var a, Var b) {
    if (a.tape != b.tape || !a.tape) throw ContractError("operands live on different tapes");
    return *a.tape;
}

}  // namespace

Var matmul(Var a, Var b) {
    auto& t = tape_of(a, b);
    NdTensor out = kernels::matmul(a.value(), b.value());
    return t.record(std::move(out), {a.id, b.id},
                    [&t, ia = a.id, ib = b.id](const NdTensor& g, const std::vector<bool>& need) {
                        const NdTensor& av = t.value(ia);
                        const NdTensor& bv = t.value(ib);
                        Grads r(2);
                        if (need[0]) r[0] = kernels::matmul(g, kernels::transpose(bv)).reshaped(av.dims());
                        if (need[1]) {
                            auto a2 = av.reshaped({av.rows(), av.cols()});
                            auto g2 = g.reshaped({g.rows(), g.cols()});
                            r[1] = kernels::matmul(kernels::transpose(a2), g2);
                        }
                        return r;
                    },
                    "matmul");
}

Var add(Var a, Var b) {
    auto& t = tape_of(a, b);
    return t.record(kernels::add(a.value(), b.value()), {a.id, b.id},
                    [](const NdTensor& g, const std::vector<bool>&) { return Grads{g, g}; }, "add");
}

Var mul(Var a, Var b) {
    auto& t = tape_of(a, b);
    return t.record(kernels::mul(a.value(), b.value()), {a.id, b.id},
                    [&t, ia = a.id, ib = b.id](const NdTensor& g, const std::vector<bool>& need) {
                        Grads r(2);
                        if (need[0]) r[0] = kernels::mul(g, t.value(ib));
                        if (need[1]) r[1] = kernels::mul(g, t.value(ia));
                        return r;
                    },
                    "mul");
}

Var scale(Var a, Scalar s) {
    auto& t = tape_of(a);
    return t.record(kernels::scale(a.value(), s), {a.id},
                    [s](const NdTensor& g, const std::vector<bool>&) { return Grads{kernels::scale(g, s)}; },
                    "scale");
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    auto& t = tape_of(parts.front());
    std::vector<NdTensor> values;
    std::vector<int> ids;
    std::vector<std::size_t> lens;
    values.reserve(parts.size());
    for (const auto& p : parts) {
        if (p.tape != &t) throw ContractError("concat: operands live on different tapes");
        values.push_back(p.value());
        ids.push_back(p.id);
        lens.push_back(p.value().dims().at(std::min(axis, p.value().rank() - 1)));
    }
    NdTensor out = kernels::concat(values, axis);
    return t.record(std::move(out), std::move(ids),
                    [axis, lens](const NdTensor& g, const std::vector<bool>& need) {
                        Grads r(lens.size());
                        std::size_t offset = 0;
                        for (std::size_t k = 0; k < lens.size(); ++k) {
                            if (need[k]) r[k] = kernels::slice(g, axis, offset, offset + lens[k]);
                            offset += lens[k];
                        }
                        return r;
                    },
                    "concat");
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
    auto& t = tape_of(a);
    const std::size_t len = a.value().dims().at(axis);
    return t.record(kernels::slice(a.value(), axis, begin, end), {a.id},
                    [axis, begin, end, len](const NdTensor& g, const std::vector<bool>&) {
                        return Grads{kernels::pad(g, axis, begin, len - end)};
                    },
                    "slice");
}

Var pad(Var a, std::size_t axis, std::size_t before, std::size_t after) {
    auto& t = tape_of(a);
    const std::size_t len = a.value().dims().at(axis);
    return t.record(kernels::pad(a.value(), axis, before, after), {a.id},
                    [axis, before, len](const NdTensor& g, const std::vector<bool>&) {
                        return Grads{kernels::slice(g, axis, before, before + len)};
                    },
                    "pad");
}

Var transpose(Var a) {
    auto& t = tape_of(a);
    return t.record(kernels::transpose(a.value()), {a.id},
                    [](const NdTensor& g, const std::vector<bool>&) { return Grads{kernels::transpose(g)}; },
                    "transpose");
}

Var softmax_rows(Var x) {
    auto& t = tape_of(x);
    NdTensor y = kernels::softmax_rows(x.value());
    const int out_id = t.cursor();
    return t.record(std::move(y), {x.id},
                    [&t, out_id](const NdTensor& g, const std::vector<bool>&) {
                        const NdTensor& y = t.value(out_id);
                        NdTensor gx(y.dims());
                        const std::size_t n = y.cols();
                        for (std::size_t r = 0; r < y.rows(); ++r) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(g[r * n + j]) * y[r * n + j];
                            for (std::size_t j = 0; j < n; ++j) {
                                gx[r * n + j] = static_cast<Scalar>(y[r * n + j] * (g[r * n + j] - dot));
                            }
                        }
                        return Grads{std::move(gx)};
                    },
                    "softmax_rows");
}

Var layer_norm(Var x, Var gamma, Var beta, Scalar eps) {
    auto& t = tape_of(x, gamma);
    tape_of(x, beta);
    NdTensor out = kernels::layer_norm(x.value(), gamma.value(), beta.value(), eps);
    return t.record(std::move(out), {x.id, gamma.id, beta.id},
                    [&t, ix = x.id, ig = gamma.id, eps](const NdTensor& g, const std::vector<bool>& need) {
                        const NdTensor& xv = t.value(ix);
                        const NdTensor& gm = t.value(ig);
                        const std::size_t d = xv.cols();
                        NdTensor gx(xv.dims());
                        std::vector<double> ggamma(d, 0.0), gbeta(d, 0.0), xhat(d), gxhat(d);
                        for (std::size_t r = 0; r < xv.rows(); ++r) {
                            const Scalar* row = xv.data().data() + r * d;
                            double mu = 0.0;
                            for (std::size_t j = 0; j < d; ++j) mu += row[j];
                            mu /= static_cast<double>(d);
                            double var = 0.0;
                            for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
                            var /= static_cast<double>(d);
                            const double inv = 1.0 / std::sqrt(var + eps);
                            double m1 = 0.0, m2 = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                                xhat[j] = (row[j] - mu) * inv;
                                const double go = g[r * d + j];
                                gxhat[j] = go * gm[j];
                                ggamma[j] += go * xhat[j];
                                gbeta[j] += go;
                                m1 += gxhat[j];
                                m2 += gxhat[j] * xhat[j];
                            }
                            m1 /= static_cast<double>(d);
                            m2 /= static_cast<double>(d);
                            for (std::size_t j = 0; j < d; ++j) {
                                gx[r * d + j] = static_cast<Scalar>(inv * (gxhat[j] - m1 - xhat[j] * m2));
                            }
                        }
                        Grads res(3);
                        if (need[0]) res[0] = std::move(gx);
                        auto to_tensor = [&](const std::vector<double>& v, const NdTensor& like) {
                            NdTensor tt(like.dims());
                            for (std::size_t j = 0; j < d; ++j) tt[j] = static_cast<Scalar>(v[j]);
                            return tt;
                        };
                        if (need[1]) res[1] = to_tensor(ggamma, gm);
                        if (need[2]) res[2] = to_tensor(gbeta, gm);
                        return res;
                    },
                    "layer_norm");
}

Var gelu(Var x) {
    auto& t = tape_of(x);
    return t.record(kernels::gelu(x.value()), {x.id},
                    [&t, ix = x.id](const NdTensor& g, const std::vector<bool>&) {
                        const NdTensor& xv = t.value(ix);
                        NdTensor gx(xv.dims());
                        for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = g[i] * kernels::gelu_grad_scalar(xv[i]);
                        return Grads{std::move(gx)};
                    },
                    "gelu");
}

Var sum(Var x) {
    auto& t = tape_of(x);
    auto dims = x.value().dims();
    return t.record(kernels::sum(x.value()), {x.id},
                    [dims](const NdTensor& g, const std::vector<bool>&) { return Grads{NdTensor(dims, g[0])}; },
                    "sum");
}

Var mean(Var x) {
    auto& t = tape_of(x);
    auto dims = x.value().dims();
    const Scalar n = static_cast<Scalar>(x.value().size());
    return t.record(kernels::mean(x.value()), {x.id},
                    [dims, n](const NdTensor& g, const std::vector<bool>&) {
                        return Grads{NdTensor(dims, g[0] / n)};
                    },
                    "mean");
}

Var mse(Var a, Var b) {
    auto& t = tape_of(a, b);
    return t.record(kernels::mse(a.value(), b.value()), {a.id, b.id},
                    [&t, ia = a.id, ib = b.id](const NdTensor& g, const std::vector<bool>& need) {
                        const NdTensor& av = t.value(ia);
                        const NdTensor& bv = t.value(ib);
                        const double k = 2.0 * g[0] / static_cast<double>(av.size());
                        NdTensor ga(av.dims());
                        for (std::size_t i = 0; i < av.size(); ++i) {
                            ga[i] = static_cast<Scalar>(k * (static_cast<double>(av[i]) - bv[i]));
                        }
                        Grads r(2);
                        if (need[1]) r[1] = kernels::scale(ga, -1.0f);
                        if (need[0]) r[0] = std::move(ga);
                        return r;
                    },
                    "mse");
}

}  // namespace anima
