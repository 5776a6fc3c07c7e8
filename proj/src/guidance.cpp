#include "anima/guidance.hpp"

#include <cmath>

#include "anima/errors.hpp"
#include "anima/rng.hpp"

namespace anima::inline ANIMA_NS::guidance {

void GuidanceScales::validate() const {
    for (double v : {lambda_a, lambda_t, lambda_i}) {
        if (!std::isfinite(v) || v < 0.0) throw ConfigError("guidance: scales must be finite and nonnegative");
    }
}

BranchWeights branch_weights(const GuidanceScales& g) {
    return {1.0 - g.lambda_t, g.lambda_t - g.lambda_a, g.lambda_a - g.lambda_i, g.lambda_i};
}

NdTensor cfg_combine(const BranchOutputs& b, const GuidanceScales& g) {
    const NdTensor* parts[4] = {&b.v_uncond, &b.v_text, &b.v_text_audio, &b.v_full};
    for (const NdTensor* p : parts) {
        if (!p->same_shape(b.v_full)) {
            throw ShapeError("cfg_combine: branch shape " + p->shape_string() + " vs " + b.v_full.shape_string());
        }
    }
    const auto w = branch_weights(g);
    const double weights[4] = {w.uncond, w.text, w.text_audio, w.full};
    NdTensor out(b.v_full.dims());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) {
            if (weights[k] != 0.0) acc += weights[k] * (*parts[k])[i];
        }
        out[i] = static_cast<Scalar>(acc);
    }
    return out;
}

NdTensor initial_noise(const model::DitConfig& cfg, std::uint64_t seed, std::size_t clip_index) {
    Rng rng = Rng(seed).split("sample").split(clip_index);
    return NdTensor::randn({cfg.latent_frames, cfg.latent_height, cfg.latent_width, cfg.latent_channels()}, rng);
}

namespace {

struct Branch {
    bool text, audio, identity;
};

}  // namespace

model::LatentClip sample_with(const model::DitModel& m, const ConditionSet& c, const GuidanceScales& g,
                              const diffusion::Schedule& s, const NdTensor& init_noise, const NdTensor* motion,
                              std::size_t audio_offset, const SampleOptions& opt) {
    g.validate();
    const auto& cfg = m.config();
    std::optional<NdTensor> audio;
    if (c.audio) {
        const std::size_t rows = cfg.audio_tokens();
        if (c.audio->rank() != 2 || c.audio->dim(0) < audio_offset + rows) {
            throw ShapeError("sample: audio has " + std::to_string(c.audio->rank() == 2 ? c.audio->dim(0) : 0) +
                             " aligned rows, need " + std::to_string(audio_offset + rows));
        }
        audio = kernels::slice(*c.audio, 0, audio_offset, audio_offset + rows);
    }

    const bool identity_on = cfg.identity_mode != cond::IdentityMode::none && c.has_identity();
    std::optional<cond::ReferenceFeatures> ref;
    if (identity_on && cond::uses_ref_net(cfg.identity_mode)) {
        if (!c.ref_latent) throw ContractError("sample: identity mode needs a reference latent");
        ref = m.reference_forward(model::LatentClip(*c.ref_latent));
    }
    model::IdentityInput id;
    id.ref_latent = c.ref_latent ? &*c.ref_latent : nullptr;
    id.face_embed = c.face_embed ? &*c.face_embed : nullptr;
    id.cached_ref = ref ? &*ref : nullptr;

    const auto w = branch_weights(g);
    const double weights[4] = {w.uncond, w.text, w.text_audio, w.full};
    const Branch branches[4] = {{false, false, false}, {true, false, false}, {true, true, false}, {true, true, true}};

    NdTensor z = init_noise;
    const auto steps = diffusion::sampling_steps(s, opt.steps);
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const int t = steps[i];
        const int t_prev = i + 1 < steps.size() ? steps[i + 1] : 0;
        NdTensor outs[4];
        for (int k = 0; k < 4; ++k) {
            if (weights[k] == 0.0) {
                outs[k] = NdTensor::zeros(z.dims());
                continue;
            }
            model::DenoiserInputs in;
            in.noisy = &z;
            in.motion = motion;
            in.t = t;
            in.T = s.T;
            in.text = branches[k].text && c.text ? &*c.text : nullptr;
            in.audio = branches[k].audio && audio ? &*audio : nullptr;
            in.identity = branches[k].identity && identity_on ? &id : nullptr;
            outs[k] = m.predict(in);
        }
        NdTensor v = cfg_combine({outs[0], outs[1], outs[2], outs[3]}, g);
        z = diffusion::sampler_step(z, v, t, t_prev, s);
    }
    for (Scalar x : z.data()) {
        if (!std::isfinite(x)) throw NumericError("sample: non-finite latent");
    }
    return model::LatentClip(std::move(z));
}

model::LatentClip sample_clip(const model::DitModel& m, const ConditionSet& c, const GuidanceScales& g,
                              const diffusion::Schedule& s, std::uint64_t seed, const SampleOptions& opt) {
    return sample_with(m, c, g, s, initial_noise(m.config(), seed, 0), nullptr, 0, opt);
}

Extrapolation extrapolate(const model::DitModel& m, const ConditionSet& c, const GuidanceScales& g,
                          const diffusion::Schedule& s, std::size_t clips, std::uint64_t seed,
                          const SampleOptions& opt) {
    if (clips == 0) throw ContractError("extrapolate: need at least one clip");
    const auto& cfg = m.config();
    if (c.audio && c.audio->dim(0) < clips * cfg.audio_tokens()) {
        throw ShapeError("extrapolate: audio covers " + std::to_string(c.audio->dim(0) / cfg.audio_tokens()) +
                         " clips, need " + std::to_string(clips));
    }
    Extrapolation out;
    out.clips.push_back(sample_clip(m, c, g, s, seed, opt));
    for (std::size_t k = 1; k < clips; ++k) {
        // Noise half drawn from the same per-clip stream sample_clip would use.
        auto mc = cond::build_motion_condition(out.clips.back(), opt.motion_frames, cfg.latent_frames, 0);
        mc.noise = model::LatentClip(initial_noise(cfg, seed, k), model::FrameRole::noise);
        out.clips.push_back(
            sample_with(m, c, g, s, mc.noise.data, &mc.condition.data, k * cfg.audio_tokens(), opt));
        out.motion.push_back(std::move(mc));
    }
    return out;
}

}  // namespace anima::guidance
