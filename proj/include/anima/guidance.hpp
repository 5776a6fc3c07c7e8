#pragma once

#include "anima/scalar.hpp"

#include <cstdint>
#include <optional>
#include <vector>

#include "anima/conditioning.hpp"
#include "anima/diffusion.hpp"
#include "anima/model/dit.hpp"

namespace anima::inline ANIMA_NS::guidance {

struct GuidanceScales {
    double lambda_a = 3.5;
    double lambda_t = 3.5;
    double lambda_i = 1.0;

    void validate() const;
};

struct BranchOutputs {
    NdTensor v_uncond;
    NdTensor v_text;
    NdTensor v_text_audio;
    NdTensor v_full;
};

/// Per-branch weights of the nested combination
///   v_u + lt (v_t - v_u) + la (v_ta - v_t) + li (v_f - v_ta)
/// regrouped as sum_k w_k v_k.
struct BranchWeights {
    double uncond, text, text_audio, full;
};
BranchWeights branch_weights(const GuidanceScales& g);

NdTensor cfg_combine(const BranchOutputs& b, const GuidanceScales& g);

/// Conditions for sampling. Absent optionals are the null condition.
struct ConditionSet {
    std::optional<NdTensor> text;        // [text_tokens x text_dim]
    std::optional<NdTensor> audio;       // latent-aligned rows, >= clips * audio_tokens
    std::optional<NdTensor> ref_latent;  // [1 x H x W x C]
    std::optional<NdTensor> face_embed;  // [1 x face_dim]

    bool has_identity() const { return ref_latent.has_value() || face_embed.has_value(); }
};

struct SampleOptions {
    int steps = 0;                  // strided sampler steps; 0 = every step
    std::size_t motion_frames = 2;  // n, used by extrapolate
};

/// One guided clip. `motion` is the condition half (null -> no motion frames)
/// and `audio_offset` selects the audio rows for this clip.
model::LatentClip sample_with(const model::DitModel& m, const ConditionSet& c, const GuidanceScales& g,
                              const diffusion::Schedule& s, const NdTensor& init_noise, const NdTensor* motion,
                              std::size_t audio_offset, const SampleOptions& opt);

NdTensor initial_noise(const model::DitConfig& cfg, std::uint64_t seed, std::size_t clip_index);

model::LatentClip sample_clip(const model::DitModel& m, const ConditionSet& c, const GuidanceScales& g,
                              const diffusion::Schedule& s, std::uint64_t seed, const SampleOptions& opt = {});

struct Extrapolation {
    std::vector<model::LatentClip> clips;
    std::vector<cond::MotionCondition> motion;  // entry k-1 conditions clip k
};

Extrapolation extrapolate(const model::DitModel& m, const ConditionSet& c, const GuidanceScales& g,
                          const diffusion::Schedule& s, std::size_t clips, std::uint64_t seed,
                          const SampleOptions& opt = {});

}  // namespace anima::guidance
