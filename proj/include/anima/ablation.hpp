#pragma once

#include "anima/scalar.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include "anima/guidance.hpp"
#include "anima/trainer.hpp"

namespace anima::inline ANIMA_NS::trainer {

enum class Axis { audio_injection, identity_injection, motion_frames, cfg };
const char* axis_name(Axis a);
Axis parse_axis(const std::string& s);

struct AblationSettings {
    model::DitConfig model;
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    TrainConfig train;  // shared by both phases; phase is set per run
    int identity_steps = 500;
    int audio_steps = 500;
    std::size_t corpus_size = 64;
    std::size_t heldout_size = 16;
    std::size_t samples_per_frame = 4;
    std::size_t subjects = 8;
    std::uint64_t subject_seed = 11;
    /// Evaluation step as a fraction of T (one-step x0 prediction there).
    double eval_t_fraction = 0.8;
    std::size_t eval_draws = 2;
    /// Sampler steps for the cfg axis.
    int sample_steps = 10;

    /// Small model (depth 2, width 32, 8x4x6 latent) trained with Adam at
    /// lr 3e-3; one audio-axis seed runs in about 15 s on one core.
    static AblationSettings toy();
};

struct AblationRow {
    std::string variant;
    double lip_sync_error = 0.0;        // lip-block pixel MSE
    double reconstruction_error = 0.0;  // all-pixel MSE
    double identity_drift = 0.0;        // non-lip (subject) pixel MSE
};

struct AblationTable {
    Axis axis = Axis::audio_injection;
    std::uint64_t seed = 0;
    std::vector<AblationRow> rows;

    const AblationRow& row(const std::string& variant) const;
    /// CSV: variant,lip_sync_error,reconstruction_error,identity_drift
    std::string format() const;
};

std::vector<std::string> axis_variants(Axis a);

/// Trains every variant of an axis on the seeded synthetic corpus and scores
/// it on held-out clips of the same subjects. `only` restricts the variants.
AblationTable run_ablation(const AblationSettings& s, Axis axis, std::uint64_t seed,
                           const std::vector<std::string>& only = {});

/// Pixel-space proxies of a predicted clip against the true clip.
AblationRow score_video(const NdTensor& predicted, const NdTensor& truth, const SyntheticConfig& geometry);

}  // namespace anima::trainer
