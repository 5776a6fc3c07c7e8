#pragma once

#include "anima/scalar.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "anima/model/codec.hpp"
#include "anima/model/layers.hpp"
#include "anima/model/params.hpp"

namespace anima::inline ANIMA_NS::cond {

using model::LatentClip;
using model::ParamBinder;
using model::Pos3;

inline constexpr std::size_t kAudioLayers = 12;

struct TextEmbedding {
    NdTensor tokens;  // [text_tokens x text_dim]
};

/// Stand-in for stacked speech-encoder hidden states: 12 "layers" of
/// layer_dim features per video frame, concatenated.
struct AudioEmbedding {
    NdTensor features;                 // [frames x 12*layer_dim]
    std::optional<NdTensor> projected; // [frames x model_dim]

    std::size_t frames() const { return features.dim(0); }
};

struct AudioFeatureConfig {
    std::size_t layer_dim = 4;
    std::size_t samples_per_frame = 4;
    std::uint64_t seed = 7;
};

/// Per-frame window statistics used by the audio stand-in.
inline constexpr std::size_t kAudioStats = 7;

/// 12 fixed random linear projections of windowed signal statistics. Layers
/// 0-3 see the current frame, 4-7 the last two frames, 8-11 the last four.
AudioEmbedding synth_audio_features(const std::vector<Scalar>& signal, const AudioFeatureConfig& cfg);

/// Re-indexes per-video-frame rows onto the codec's causal windows:
/// `stride` rows per latent frame, latent frame 0 replicating frame 0.
NdTensor align_to_latent(const NdTensor& per_frame, std::size_t latent_frames, std::size_t stride);

/// Three linear layers with GELU between them, mapping each row to model_dim.
Var project_audio(ParamBinder& p, Var features);
AudioEmbedding project_audio(const model::ParamStore& params, AudioEmbedding a);

enum class AudioStrategy { self_attention, adaln, adaln_zero, cross_attention };
const char* strategy_name(AudioStrategy s);
AudioStrategy parse_strategy(const std::string& s);

enum class IdentityMode { none, face_attention, face_adaln, ref_net, face_attention_plus_ref_net };
const char* identity_mode_name(IdentityMode m);
IdentityMode parse_identity_mode(const std::string& s);
bool uses_ref_net(IdentityMode m);
bool uses_face_attention(IdentityMode m);
bool uses_face_adaln(IdentityMode m);

/// Per-layer reference tokens from the reference network (pre-attention
/// residual stream of each layer).
struct ReferenceFeatures {
    std::vector<NdTensor> layers;  // depth x [tokens x model_dim]
};

struct IdentityCondition {
    IdentityMode mode = IdentityMode::none;
    NdTensor face_embed;                        // [1 x face_dim]
    std::optional<ReferenceFeatures> ref_features;

    /// Throws ContractError when the populated fields do not fit the mode.
    void validate(std::size_t depth) const;
};

/// Face-encoder stand-in: fixed projection of reference-image pixels.
NdTensor face_embedding(const NdTensor& ref_image, const NdTensor& encoder);

/// Motion-frame condition: n motion latents, (l - n) zero frames on the
/// condition half; l noise frames on the noise half.
struct MotionCondition {
    std::size_t n = 0;
    std::size_t l = 0;
    NdTensor motion_latents;            // [n x H x W x C]
    LatentClip condition;               // [l x H x W x C], roles motion/padded
    LatentClip noise;                   // [l x H x W x C], roles noise

    /// Channel concatenation [l x H x W x 2C].
    NdTensor stacked() const;
};

MotionCondition build_motion_condition(const LatentClip& prev_clip, std::size_t n, std::size_t l,
                                       std::uint64_t noise_seed);

/// Condition half with no motion frames (all padded).
LatentClip empty_motion(std::size_t l, std::size_t H, std::size_t W, std::size_t C);

/// Layout facts the injection sublayers need about the vision tokens.
struct TokenLayout {
    std::size_t token_frames = 1;
    std::size_t tokens_per_frame = 1;
    std::size_t audio_per_frame = 1;  // audio tokens per token frame
    std::size_t heads = 1;
    std::vector<Pos3> positions;      // vision token positions
};

/// Audio injection sublayer (residual). Token count and width are preserved;
/// the self-attention strategy appends audio tokens for the attention and
/// strips them on exit.
Var inject_audio(ParamBinder& p, const std::string& prefix, Var tokens, Var audio, AudioStrategy strategy,
                 const TokenLayout& layout);

/// Tensors the identity sublayers consume, already bound to the tape.
struct IdentityInputs {
    IdentityMode mode = IdentityMode::none;
    std::optional<Var> face_embed;            // [1 x face_dim]
    std::optional<Var> face_tokens;           // [k x model_dim]
    std::vector<Var> ref_features;            // depth entries when ref modes are active
    std::vector<Pos3> ref_positions;
};

/// Face tokens from the face embedding via face_proj.
Var face_tokens(ParamBinder& p, Var face_embed, std::size_t count, std::size_t dim);

/// Standalone identity injection for one layer: ref modes attend from the
/// tokens over concat(tokens, ref_features[layer]); face attention
/// cross-attends onto the face tokens; face adaln modulates from the face
/// embedding. The combined mode applies the ref-net step then face attention.
Var inject_identity(ParamBinder& p, const std::string& layer_prefix, Var tokens, const IdentityInputs& id,
                    std::size_t layer_index, const TokenLayout& layout);

/// Self-attention over `queries_src` with keys/values from
/// concat(queries_src, extra_kv). RoPE tables cover the query rows and the
/// extra rows respectively (null to skip). Returns W_o-projected output rows
/// for the queries.
Var attention_with_extra_kv(ParamBinder& p, const std::string& prefix, Var queries_src,
                            const model::RopeTables* query_rope, std::optional<Var> extra_kv,
                            const model::RopeTables* extra_rope, std::size_t heads,
                            std::size_t unroped_prefix_rows = 0);

/// Face sublayers, residual form.
Var face_cross_attention(ParamBinder& p, const std::string& prefix, Var tokens, Var face_tokens, std::size_t heads);
Var face_adaptive_norm(ParamBinder& p, const std::string& prefix, Var tokens, Var face_embed);

}  // namespace anima::cond
