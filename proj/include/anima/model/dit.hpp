#pragma once

#include "anima/scalar.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anima/conditioning.hpp"
#include "anima/model/codec.hpp"
#include "anima/model/layers.hpp"
#include "anima/model/params.hpp"

namespace anima::inline ANIMA_NS::model {

struct DitConfig {
    std::size_t depth = 4;
    std::size_t model_dim = 64;
    std::size_t heads = 4;
    PatchSize patch{1, 2, 2};
    std::size_t mlp_ratio = 2;

    std::size_t text_dim = 16;
    std::size_t text_tokens = 4;
    std::size_t audio_layer_dim = 4;
    std::size_t face_dim = 16;
    std::size_t face_tokens = 2;

    // Latent grid; the pixel grid follows from the codec factors.
    std::size_t latent_frames = 7;
    std::size_t latent_height = 8;
    std::size_t latent_width = 12;
    std::size_t video_channels = 1;
    std::size_t temporal_stride = 2;
    std::size_t spatial_patch = 2;

    cond::AudioStrategy audio_strategy = cond::AudioStrategy::cross_attention;
    cond::IdentityMode identity_mode = cond::IdentityMode::face_attention_plus_ref_net;

    std::size_t head_dim() const { return model_dim / heads; }
    std::size_t audio_dim() const { return cond::kAudioLayers * audio_layer_dim; }
    std::size_t latent_channels() const { return temporal_stride * spatial_patch * spatial_patch * video_channels; }
    std::size_t video_frames() const { return 1 + (latent_frames - 1) * temporal_stride; }
    std::size_t video_height() const { return latent_height * spatial_patch; }
    std::size_t video_width() const { return latent_width * spatial_patch; }
    std::size_t token_frames() const { return latent_frames / patch.t; }
    std::size_t tokens_per_frame() const { return (latent_height / patch.h) * (latent_width / patch.w); }
    std::size_t tokens() const { return token_frames() * tokens_per_frame(); }
    std::size_t patch_in() const { return patch.t * patch.h * patch.w * 2 * latent_channels(); }
    std::size_t patch_out() const { return patch.t * patch.h * patch.w * latent_channels(); }
    std::size_t audio_tokens() const { return latent_frames * temporal_stride; }

    /// Throws ConfigError naming the offending field.
    void validate() const;
    /// Canonical one-line description used for hashing.
    std::string describe() const;
    std::uint64_t hash() const;
};

/// Identity condition as fed to the network: the reference latent (single
/// frame) and the face embedding. Precomputed reference features may be
/// supplied to skip the reference stack.
struct IdentityInput {
    const NdTensor* ref_latent = nullptr;                  // [1 x H x W x C]
    const NdTensor* face_embed = nullptr;                  // [1 x face_dim]
    const cond::ReferenceFeatures* cached_ref = nullptr;
};

struct DenoiserInputs {
    const NdTensor* noisy = nullptr;   // z_t, [l x H x W x C]
    const NdTensor* motion = nullptr;  // condition half, [l x H x W x C]; null -> zeros
    int t = 1;
    int T = 1;
    const NdTensor* text = nullptr;    // [text_tokens x text_dim]; null -> null text
    const NdTensor* audio = nullptr;   // latent-aligned raw features [audio_tokens x audio_dim]; null -> absent
    const IdentityInput* identity = nullptr;  // null -> absent
};

/// Denoising transformer plus its parallel reference network. Parameters
/// live in one ParamStore; forward passes never mutate them.
class DitModel {
public:
    DitModel(DitConfig cfg, ParamStore params);

    static DitModel init(const DitConfig& cfg, std::uint64_t seed);

    const DitConfig& config() const { return cfg_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }

    CausalCodec codec() const;
    const NdTensor& face_encoder() const { return params_.get("face_encoder.w"); }

    /// Positions of the reference tokens: frame 0 of the grid.
    std::vector<Pos3> reference_positions() const;
    std::vector<Pos3> vision_positions() const;

    /// Reference stack on the tape; entry i is the token set entering layer i.
    std::vector<Var> reference_forward(ParamBinder& p, const NdTensor& ref_latent) const;
    cond::ReferenceFeatures reference_forward(const LatentClip& ref) const;

    /// v-prediction in token layout [tokens x patch_out].
    Var forward(ParamBinder& p, const DenoiserInputs& in) const;
    /// v-prediction in latent layout [l x H x W x C], no gradients.
    NdTensor predict(const DenoiserInputs& in) const;

    /// Conditioning vector from timestep and text, [1 x model_dim].
    Var condition_vector(ParamBinder& p, int t, int T, Var text) const;

    void save(const std::filesystem::path& dir) const;
    static DitModel load(const std::filesystem::path& dir, const DitConfig& cfg);

private:
    DitConfig cfg_;
    ParamStore params_;
};

/// Token-layout view of a latent clip tensor.
NdTensor latent_to_tokens(const NdTensor& latent, const DitConfig& cfg);
NdTensor tokens_to_latent(const NdTensor& tokens, const DitConfig& cfg);

}  // namespace anima::model
