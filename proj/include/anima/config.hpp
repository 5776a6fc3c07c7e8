#pragma once

#include "anima/scalar.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

#include "anima/ablation.hpp"
#include "anima/datapipe.hpp"
#include "anima/guidance.hpp"
#include "anima/model/dit.hpp"
#include "anima/trainer.hpp"

namespace anima::inline ANIMA_NS {

struct ScheduleSection {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
};

struct TrainSection {
    /// lr, batch, drop/mask rates, motion_frames, clip_norm and optimizer.
    trainer::TrainConfig base;
    int identity_steps = 500;
    int audio_steps = 500;
    std::size_t corpus_size = 64;
    std::size_t samples_per_frame = 4;
    std::size_t subjects = 8;
    std::uint64_t subject_seed = 11;
    // Ablation evaluation.
    std::size_t heldout_size = 16;
    double eval_t_fraction = 0.8;
    std::size_t eval_draws = 2;
};

struct ConditionsSection {
    bool audio = true;
    bool text = true;
    // The identity mode lives in model.identity_mode and is written here.
};

struct GuidanceSection {
    guidance::GuidanceScales scales;
    int steps = 0;  // sampler steps, 0 = every step
    std::size_t clips = 3;
};

/// Sectioned key=value run configuration. `seed` and `output_dir` are
/// top-level keys; every section must be present (possibly empty).
struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    ScheduleSection schedule;
    model::DitConfig model;
    TrainSection train;
    ConditionsSection conditions;
    GuidanceSection guidance;
    datapipe::FilterPolicy filter;

    /// Throws ConfigError naming the section or key.
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);
    /// Canonical text: every key, doubles printed round-trip exact.
    std::string serialize() const;
    void validate() const;

    diffusion::Schedule make_schedule() const;
    trainer::TrainConfig phase_config(trainer::Phase p) const;
    trainer::SyntheticConfig synthetic() const;
    trainer::AblationSettings ablation() const;
};

bool operator==(const RunConfig& a, const RunConfig& b);

/// Applies DIT_ANIMA_SEED when set; ConfigError if it is not an unsigned integer.
void apply_seed_env(RunConfig& cfg);

}  // namespace anima
