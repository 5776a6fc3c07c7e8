#include "anima/model/layers.hpp"

#include <cmath>

#include "anima/errors.hpp"

namespace anima::inline ANIMA_NS::model {

NdTensor to_patches(const NdTensor& clip, PatchSize p) {
    if (clip.rank() != 4) throw ShapeError("to_patches: clip must be l x H x W x C, got " + clip.shape_string());
    const std::size_t l = clip.dim(0), H = clip.dim(1), W = clip.dim(2), C = clip.dim(3);
    if (l % p.t || H % p.h || W % p.w) {
        throw ShapeError("patchify: clip " + clip.shape_string() + " not divisible by patch (" + std::to_string(p.t) +
                         "," + std::to_string(p.h) + "," + std::to_string(p.w) + ")");
    }
    const std::size_t tl = l / p.t, th = H / p.h, tw = W / p.w;
    const std::size_t pd = p.t * p.h * p.w * C;
    NdTensor out({tl * th * tw, pd});
    std::size_t tok = 0;
    for (std::size_t a = 0; a < tl; ++a)
        for (std::size_t b = 0; b < th; ++b)
            for (std::size_t c = 0; c < tw; ++c, ++tok) {
                Scalar* dst = out.mutable_data().data() + tok * pd;
                std::size_t k = 0;
                for (std::size_t dt = 0; dt < p.t; ++dt)
                    for (std::size_t dy = 0; dy < p.h; ++dy)
                        for (std::size_t dx = 0; dx < p.w; ++dx)
                            for (std::size_t ch = 0; ch < C; ++ch) {
                                const std::size_t f = a * p.t + dt, y = b * p.h + dy, x = c * p.w + dx;
                                dst[k++] = clip[((f * H + y) * W + x) * C + ch];
                            }
            }
    return out;
}

NdTensor from_patches(const NdTensor& patches, PatchSize p, std::size_t l, std::size_t H, std::size_t W,
                      std::size_t C) {
    const std::size_t tl = l / p.t, th = H / p.h, tw = W / p.w;
    const std::size_t pd = p.t * p.h * p.w * C;
    if (patches.rows() != tl * th * tw || patches.cols() != pd) {
        throw ShapeError("from_patches: got " + patches.shape_string() + " for grid " + std::to_string(tl * th * tw) +
                         " x " + std::to_string(pd));
    }
    NdTensor out({l, H, W, C});
    std::size_t tok = 0;
    for (std::size_t a = 0; a < tl; ++a)
        for (std::size_t b = 0; b < th; ++b)
            for (std::size_t c = 0; c < tw; ++c, ++tok) {
                const Scalar* src = patches.data().data() + tok * pd;
                std::size_t k = 0;
                for (std::size_t dt = 0; dt < p.t; ++dt)
                    for (std::size_t dy = 0; dy < p.h; ++dy)
                        for (std::size_t dx = 0; dx < p.w; ++dx)
                            for (std::size_t ch = 0; ch < C; ++ch) {
                                const std::size_t f = a * p.t + dt, y = b * p.h + dy, x = c * p.w + dx;
                                out[((f * H + y) * W + x) * C + ch] = src[k++];
                            }
            }
    return out;
}

std::vector<Pos3> grid_positions(std::size_t tl, std::size_t th, std::size_t tw, double t_offset) {
    std::vector<Pos3> out;
    out.reserve(tl * th * tw);
    for (std::size_t a = 0; a < tl; ++a)
        for (std::size_t b = 0; b < th; ++b)
            for (std::size_t c = 0; c < tw; ++c)
                out.push_back({static_cast<double>(a) + t_offset, static_cast<double>(b), static_cast<double>(c)});
    return out;
}

NdTensor patchify(const LatentClip& clip, PatchSize p, const NdTensor& projection) {
    auto patches = to_patches(clip.data, p);
    return kernels::matmul(patches, projection);
}

LatentClip unpatchify(const NdTensor& tokens, PatchSize p, const NdTensor& projection, std::size_t l, std::size_t H,
                      std::size_t W, std::size_t C) {
    auto patches = kernels::matmul(tokens, kernels::transpose(projection));
    return LatentClip(from_patches(patches, p, l, H, W, C));
}

void check_rope_head_dim(std::size_t head_dim) {
    if (head_dim == 0 || head_dim % 8 != 0) {
        throw ConfigError("rope_3d: head_dim " + std::to_string(head_dim) +
                          " must be a multiple of 8 for the 2:1:1 (t,y,x) pair split");
    }
}

RopeTables rope_tables(const std::vector<Pos3>& positions, std::size_t model_dim, std::size_t heads, double base) {
    if (heads == 0 || model_dim % heads != 0) throw ConfigError("rope_3d: model_dim not divisible by heads");
    const std::size_t dh = model_dim / heads;
    check_rope_head_dim(dh);
    const std::size_t n = positions.size();
    RopeTables tb{NdTensor({n, model_dim}), NdTensor({n, model_dim}), NdTensor({model_dim, model_dim})};
    // Sections within a head: [t: dh/2][y: dh/4][x: dh/4].
    const std::array<std::size_t, 3> sizes{dh / 2, dh / 4, dh / 4};
    for (std::size_t h = 0; h < heads; ++h) {
        std::size_t offset = h * dh;
        for (std::size_t axis = 0; axis < 3; ++axis) {
            const std::size_t m = sizes[axis];
            const std::size_t half = m / 2;
            for (std::size_t i = 0; i < half; ++i) {
                const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(m));
                for (std::size_t tok = 0; tok < n; ++tok) {
                    const double pos = axis == 0 ? positions[tok].t : axis == 1 ? positions[tok].y : positions[tok].x;
                    const Scalar c = static_cast<Scalar>(std::cos(pos * freq));
                    const Scalar s = static_cast<Scalar>(std::sin(pos * freq));
                    tb.cos.at(tok, offset + i) = c;
                    tb.cos.at(tok, offset + i + half) = c;
                    tb.sin.at(tok, offset + i) = s;
                    tb.sin.at(tok, offset + i + half) = s;
                }
                tb.rotate.at(offset + i + half, offset + i) = -1.0f;
                tb.rotate.at(offset + i, offset + i + half) = 1.0f;
            }
            offset += m;
        }
    }
    return tb;
}

NdTensor rope_3d(const NdTensor& tokens, const std::vector<Pos3>& positions, std::size_t heads) {
    if (tokens.rank() != 2 || tokens.dim(0) != positions.size()) {
        throw ShapeError("rope_3d: tokens " + tokens.shape_string() + " vs " + std::to_string(positions.size()) +
                         " positions");
    }
    auto tb = rope_tables(positions, tokens.dim(1), heads);
    return kernels::add(kernels::mul(tokens, tb.cos), kernels::mul(kernels::matmul(tokens, tb.rotate), tb.sin));
}

Var apply_rope(Var tokens, const RopeTables& tb) {
    auto& tape = *tokens.tape;
    Var c = tape.constant(tb.cos);
    Var s = tape.constant(tb.sin);
    Var r = tape.constant(tb.rotate);
    return tokens * c + matmul(tokens, r) * s;
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads) {
    const std::size_t d = q.cols();
    if (heads == 0 || d % heads != 0) throw ShapeError("attention: model_dim not divisible by heads");
    if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
        throw ShapeError("attention: q/k/v shapes disagree");
    }
    const std::size_t dh = d / heads;
    const Scalar inv = 1.0f / std::sqrt(static_cast<Scalar>(dh));
    if (heads == 1) return matmul(softmax_rows(scale(matmul(q, transpose(k)), inv)), v);
    std::vector<Var> outs;
    outs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = slice(q, 1, h * dh, (h + 1) * dh);
        Var kh = slice(k, 1, h * dh, (h + 1) * dh);
        Var vh = slice(v, 1, h * dh, (h + 1) * dh);
        outs.push_back(matmul(softmax_rows(scale(matmul(qh, transpose(kh)), inv)), vh));
    }
    return concat(outs, 1);
}

NdTensor full_attention_3d(const NdTensor& q, const NdTensor& k, const NdTensor& v, std::size_t heads) {
    GradTape tape;
    return multi_head_attention(tape.constant(q), tape.constant(k), tape.constant(v), heads).value();
}

Var broadcast_rows(Var row, std::size_t n) {
    if (row.rows() != 1) throw ShapeError("broadcast_rows: expected a single row");
    if (n == 1) return row;
    return matmul(row.tape->constant(NdTensor::ones({n, 1})), row);
}

Var mean_rows(Var x) {
    const std::size_t n = x.rows();
    if (n == 1) return x;
    return matmul(x.tape->constant(NdTensor({1, n}, 1.0f / static_cast<Scalar>(n))), x);
}

Var plain_norm(Var x) {
    auto& tape = *x.tape;
    const std::size_t d = x.cols();
    return layer_norm(x, tape.constant(NdTensor::ones({d})), tape.constant(NdTensor::zeros({d})), 1e-6f);
}

Var modulate(Var x, Var shift, Var scale_row) {
    const std::size_t n = x.rows();
    return x + x * broadcast_rows(scale_row, n) + broadcast_rows(shift, n);
}

Var linear(ParamBinder& p, const std::string& prefix, Var x, bool bias) {
    Var y = matmul(x, p.get(prefix + ".w"));
    if (bias) y = y + broadcast_rows(p.get(prefix + ".b"), x.rows());
    return y;
}

Modulation split_modulation(Var mod, std::size_t dim) {
    auto part = [&](std::size_t i) { return slice(mod, 1, i * dim, (i + 1) * dim); };
    return {part(0), part(1), part(2), part(3), part(4), part(5)};
}

ExpertModulation expert_adaln(ParamBinder& p, const std::string& prefix, Var cond, std::size_t dim) {
    Var h = gelu(cond);
    return {split_modulation(linear(p, prefix + ".mod_vision", h), dim),
            split_modulation(linear(p, prefix + ".mod_text", h), dim)};
}

NdTensor timestep_features(double t, std::size_t dim) {
    NdTensor out({1, dim});
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        out.at(0, i) = static_cast<Scalar>(std::cos(t * freq));
        out.at(0, i + half) = static_cast<Scalar>(std::sin(t * freq));
    }
    return out;
}

}  // namespace anima::model
