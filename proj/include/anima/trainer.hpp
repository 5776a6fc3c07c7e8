#pragma once

#include "anima/scalar.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "anima/conditioning.hpp"
#include "anima/diffusion.hpp"
#include "anima/model/dit.hpp"
#include "anima/rng.hpp"

namespace anima::inline ANIMA_NS::trainer {

enum class Phase { identity, audio };
const char* phase_name(Phase p);
Phase parse_phase(const std::string& s);

enum class OptimizerKind { sgd, adam };
const char* optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
    Phase phase = Phase::identity;
    int steps = 500;
    double lr = 1e-5;
    std::size_t batch = 1;
    double drop_prob = 0.05;
    double motion_mask_prob = 0.25;
    std::uint64_t seed = 0;
    std::size_t motion_frames = 2;
    /// Global gradient-norm clip; 0 disables.
    double clip_norm = 0.0;
    OptimizerKind optimizer = OptimizerKind::sgd;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const;
};

/// Trainable flag per parameter group.
struct FreezeMask {
    std::map<model::ParamGroup, bool> trainable;

    /// identity: codec, face encoder and audio frozen, the rest trainable.
    /// audio: only the audio attention group trainable.
    static FreezeMask for_phase(Phase p);

    bool is_trainable(model::ParamGroup g) const;
    bool is_trainable(const std::string& param_name) const { return is_trainable(model::group_of(param_name)); }

    /// Throws ConfigError when the mask contradicts the phase's freeze rules.
    void check(Phase p) const;
};

struct SyntheticConfig {
    std::size_t frames = 13;  // video frames per clip
    std::size_t height = 16;
    std::size_t width = 24;
    std::size_t channels = 1;
    std::size_t samples_per_frame = 4;
    std::size_t subjects = 8;
    std::uint64_t subject_seed = 11;
    std::size_t text_tokens = 4;
    std::size_t text_dim = 16;
    // Lip block in pixels.
    std::size_t lip_y = 12, lip_x = 12, lip_h = 4, lip_w = 4;
    double jitter = 0.02;
    /// Clips covered by the audio signal (>= 2); prev_video is clip 0, video clip 1.
    std::size_t clips = 2;

    /// Video geometry and lip block (one token footprint, bottom centre)
    /// derived from a model config.
    static SyntheticConfig for_model(const model::DitConfig& cfg);
    bool in_lip(std::size_t y, std::size_t x) const {
        return y >= lip_y && y < lip_y + lip_h && x >= lip_x && x < lip_x + lip_w;
    }
};

struct SyntheticSample {
    NdTensor video;       // [L x H0 x W0 x C0]
    NdTensor prev_video;  // preceding clip of the same subject, same shape
    std::vector<Scalar> audio_signal;  // covers prev_video then video
    NdTensor ref_image;   // [1 x H0 x W0 x C0], lip block at 0
    cond::TextEmbedding text;
    std::size_t subject_id = 0;
};

/// Per-subject static texture + offset; the lip block of frame k holds the
/// mean of that frame's audio samples.
std::vector<SyntheticSample> gen_synthetic(std::size_t count, const SyntheticConfig& cfg, std::uint64_t seed);

/// Mean audio over each video frame's samples (the lip value the generator writes).
std::vector<double> frame_audio_means(const std::vector<Scalar>& signal, std::size_t samples_per_frame);

/// Network-ready tensors for one sample.
struct PreparedSample {
    NdTensor z0;           // [l x H x W x C]
    NdTensor prev_latent;  // [l x H x W x C]
    NdTensor ref_latent;   // [1 x H x W x C]
    NdTensor face_embed;   // [1 x face_dim]
    NdTensor audio;        // latent-aligned [l*s x audio_dim]
    NdTensor text;         // [text_tokens x text_dim]
    std::size_t subject_id = 0;
};

PreparedSample prepare(const model::DitModel& m, const SyntheticSample& s, std::size_t samples_per_frame);

/// Latent-aligned audio rows for clips [first, first + count) of a signal,
/// each clip aligned on its own: [count * audio_tokens x audio_dim].
NdTensor aligned_audio(const model::DitModel& m, const std::vector<Scalar>& signal, std::size_t samples_per_frame,
                       std::size_t first, std::size_t count);
std::vector<PreparedSample> prepare_all(const model::DitModel& m, const std::vector<SyntheticSample>& corpus,
                                        std::size_t samples_per_frame);

/// Everything random about one training step, so a step can be replayed.
struct StepDraws {
    std::size_t sample = 0;
    int t = 1;
    NdTensor eps;
    bool drop_text = false;
    bool drop_audio = false;
    bool drop_identity = false;
    bool mask_motion = false;
};

StepDraws draw_step(Rng& rng, const TrainConfig& cfg, const model::DitConfig& mcfg, int T, std::size_t corpus_size);

/// Mean squared error between prediction and target.
double v_loss(const NdTensor& v_hat, const NdTensor& v);

/// Denoiser inputs for a step, honoring phase and drop flags. Pointers refer
/// into `sample`, `zt`, `motion` and `id`.
model::DenoiserInputs step_inputs(const model::DitModel& m, const PreparedSample& sample, const StepDraws& d,
                                  const TrainConfig& cfg, const NdTensor& zt, const NdTensor& motion,
                                  model::IdentityInput& id, int T);

/// Loss of the current parameters on a fixed set of draws (no update).
double evaluate_loss(const model::DitModel& m, const PreparedSample& sample, const StepDraws& d,
                     const TrainConfig& cfg, const diffusion::Schedule& s);

/// Update rule state. SGD is stateless; Adam keeps per-parameter moments.
class Optimizer {
public:
    explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

    /// Applies `grads` (already averaged) to the trainable parameters only.
    void apply(model::ParamStore& params, const std::map<std::string, NdTensor>& grads, const FreezeMask& mask);

    long steps() const { return steps_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    TrainConfig cfg_;
    std::map<std::string, Moments> moments_;
    long steps_ = 0;
};

/// One update over `batch` draws; returns the mean loss before the update.
/// Without an optimizer a stateless one is built from cfg (exact for SGD).
double train_step(model::DitModel& m, const std::vector<PreparedSample>& corpus, const std::vector<StepDraws>& draws,
                  const TrainConfig& cfg, const FreezeMask& mask, const diffusion::Schedule& s,
                  Optimizer* opt = nullptr);

/// Draws then steps.
double train_step(model::DitModel& m, const std::vector<PreparedSample>& corpus, const TrainConfig& cfg,
                  const FreezeMask& mask, const diffusion::Schedule& s, Rng& rng, Optimizer* opt = nullptr);

struct LossRecord {
    int step = 0;
    Phase phase = Phase::identity;
    double loss = 0.0;
};

std::string format_trace(const std::vector<LossRecord>& trace);

std::vector<LossRecord> run_phase(model::DitModel& m, const std::vector<PreparedSample>& corpus,
                                  const TrainConfig& cfg, const diffusion::Schedule& s);

}  // namespace anima::trainer
