#pragma once

#include "anima/scalar.hpp"

#include <array>
#include <string>
#include <vector>

#include "anima/model/codec.hpp"
#include "anima/model/params.hpp"
#include "anima/tape.hpp"

namespace anima::inline ANIMA_NS::model {

struct PatchSize {
    std::size_t t = 1;
    std::size_t h = 2;
    std::size_t w = 2;
};

/// Spatio-temporal coordinate of a token on the patch grid.
struct Pos3 {
    double t = 0;
    double y = 0;
    double x = 0;
};

/// Rearranges l x H x W x C into tokens x (pt*ph*pw*C), token order (t, y, x).
NdTensor to_patches(const NdTensor& clip, PatchSize p);
/// Inverse of to_patches for the given latent grid.
NdTensor from_patches(const NdTensor& patches, PatchSize p, std::size_t l, std::size_t H, std::size_t W,
                      std::size_t C);

/// Token positions for a (l/pt) x (H/ph) x (W/pw) grid in token order.
std::vector<Pos3> grid_positions(std::size_t tl, std::size_t th, std::size_t tw, double t_offset = 0.0);

/// Linear patch embedding: to_patches followed by a projection with no bias.
NdTensor patchify(const LatentClip& clip, PatchSize p, const NdTensor& projection);
/// Inverse embedding through the transposed projection.
LatentClip unpatchify(const NdTensor& tokens, PatchSize p, const NdTensor& projection, std::size_t l, std::size_t H,
                      std::size_t W, std::size_t C);

/// Rotary tables for multi-head tokens. Each head's channels split 2:1:1 over
/// (t, y, x); every axis section rotates channel i with channel i + m/2.
struct RopeTables {
    NdTensor cos;      // [tokens x model_dim]
    NdTensor sin;      // [tokens x model_dim]
    NdTensor rotate;   // [model_dim x model_dim], signed pair swap
};

RopeTables rope_tables(const std::vector<Pos3>& positions, std::size_t model_dim, std::size_t heads,
                       double base = 10000.0);
void check_rope_head_dim(std::size_t head_dim);

NdTensor rope_3d(const NdTensor& tokens, const std::vector<Pos3>& positions, std::size_t heads);
Var apply_rope(Var tokens, const RopeTables& tables);

/// Multi-head scaled dot-product attention over projected q, k, v.
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads);
NdTensor full_attention_3d(const NdTensor& q, const NdTensor& k, const NdTensor& v, std::size_t heads);

/// Tiles a 1 x D row over n rows.
Var broadcast_rows(Var row, std::size_t n);
/// Row mean of an n x D tensor as 1 x D.
Var mean_rows(Var x);
/// Layer norm over the last dim without affine parameters.
Var plain_norm(Var x);
/// x + x*scale + shift with row-vector scale/shift.
Var modulate(Var x, Var shift, Var scale);
/// x @ W (+ b broadcast over rows).
Var linear(ParamBinder& p, const std::string& prefix, Var x, bool bias = true);

/// Per-block modulation produced by adaptive layer norm.
struct Modulation {
    Var shift_attn, scale_attn, gate_attn;
    Var shift_mlp, scale_mlp, gate_mlp;
};

/// Splits a 1 x 6D vector into the six modulation rows.
Modulation split_modulation(Var mod, std::size_t dim);

struct ExpertModulation {
    Modulation vision;
    Modulation text;
};

/// Expert adaptive layer norm: separate modulation heads for vision and text
/// tokens, both driven by the same (timestep, text) conditioning vector.
ExpertModulation expert_adaln(ParamBinder& p, const std::string& prefix, Var cond, std::size_t dim);

/// Sinusoidal embedding of a (possibly rescaled) timestep.
NdTensor timestep_features(double t, std::size_t dim);

}  // namespace anima::model
