#include "anima/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "anima/errors.hpp"

namespace anima::inline ANIMA_NS::trainer {

const char* axis_name(Axis a) {
    switch (a) {
        case Axis::audio_injection: return "audio_injection";
        case Axis::identity_injection: return "identity_injection";
        case Axis::motion_frames: return "motion_frames";
        case Axis::cfg: return "cfg";
    }
    return "?";
}

Axis parse_axis(const std::string& s) {
    for (Axis a : {Axis::audio_injection, Axis::identity_injection, Axis::motion_frames, Axis::cfg}) {
        if (s == axis_name(a)) return a;
    }
    throw ConfigError("unknown ablation axis '" + s + "'");
}

std::vector<std::string> axis_variants(Axis a) {
    switch (a) {
        case Axis::audio_injection: return {"self_attention", "cross_attention", "adaln", "adaln_zero"};
        case Axis::identity_injection:
            return {"none", "face_attention", "face_adaln", "ref_net", "face_attention_plus_ref_net"};
        case Axis::motion_frames: return {"n=1", "n=2", "n=4", "n=8"};
        case Axis::cfg:
            return {"la=3.5,lt=1,li=1", "la=3.5,lt=3.5,li=1", "la=3.5,lt=6,li=1", "la=6,lt=3.5,li=1",
                    "la=3.5,lt=3.5,li=3.5"};
    }
    return {};
}

const AblationRow& AblationTable::row(const std::string& variant) const {
    for (const auto& r : rows) {
        if (r.variant == variant) return r;
    }
    throw IndexError("ablation table has no variant '" + variant + "'");
}

std::string AblationTable::format() const {
    std::ostringstream os;
    os.precision(6);
    os << "variant,lip_sync_error,reconstruction_error,identity_drift\n";
    for (const auto& r : rows) {
        os << r.variant << ',' << r.lip_sync_error << ',' << r.reconstruction_error << ',' << r.identity_drift << '\n';
    }
    return os.str();
}

AblationRow score_video(const NdTensor& predicted, const NdTensor& truth, const SyntheticConfig& g) {
    if (!predicted.same_shape(truth)) throw ShapeError("score_video: shape mismatch");
    const std::size_t L = truth.dim(0), H = truth.dim(1), W = truth.dim(2), C = truth.dim(3);
    double lip = 0.0, rest = 0.0;
    std::size_t n_lip = 0, n_rest = 0;
    for (std::size_t f = 0; f < L; ++f)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t i = ((f * H + y) * W + x) * C + c;
                    const double e = static_cast<double>(predicted[i]) - truth[i];
                    if (g.in_lip(y, x)) {
                        lip += e * e;
                        ++n_lip;
                    } else {
                        rest += e * e;
                        ++n_rest;
                    }
                }
    AblationRow r;
    r.lip_sync_error = n_lip ? lip / static_cast<double>(n_lip) : 0.0;
    r.identity_drift = n_rest ? rest / static_cast<double>(n_rest) : 0.0;
    r.reconstruction_error = (lip + rest) / static_cast<double>(n_lip + n_rest);
    return r;
}

namespace {

struct Data {
    SyntheticConfig geometry;
    std::vector<SyntheticSample> train_raw;
    std::vector<SyntheticSample> heldout_raw;
};

Data make_data(const AblationSettings& s, std::uint64_t seed) {
    Data d;
    d.geometry = SyntheticConfig::for_model(s.model);
    d.geometry.samples_per_frame = s.samples_per_frame;
    d.geometry.subjects = s.subjects;
    d.geometry.subject_seed = s.subject_seed;
    d.train_raw = gen_synthetic(s.corpus_size, d.geometry, Rng(seed).split("corpus").next_u64());
    d.heldout_raw = gen_synthetic(s.heldout_size, d.geometry, Rng(seed).split("heldout").next_u64());
    return d;
}

model::DitModel train_phase(model::DitModel m, const std::vector<PreparedSample>& corpus, const AblationSettings& s,
                            Phase phase, std::size_t motion_frames, std::uint64_t seed,
                            const diffusion::Schedule& sched) {
    TrainConfig tc = s.train;
    tc.phase = phase;
    tc.steps = phase == Phase::identity ? s.identity_steps : s.audio_steps;
    tc.seed = seed;
    tc.motion_frames = motion_frames;
    run_phase(m, corpus, tc, sched);
    return m;
}

/// Fresh init for `cfg` with every parameter the two configs share copied
/// from `trained`.
model::DitModel transplant(const model::DitModel& trained, const model::DitConfig& cfg, std::uint64_t seed) {
    auto m = model::DitModel::init(cfg, seed);
    for (const auto& name : m.params().names()) {
        if (trained.params().contains(name) && trained.params().get(name).same_shape(m.params().get(name))) {
            m.params().mutable_get(name) = trained.params().get(name);
        }
    }
    return m;
}

AblationRow average(const std::string& variant, const std::vector<AblationRow>& rows) {
    AblationRow out;
    out.variant = variant;
    for (const auto& r : rows) {
        out.lip_sync_error += r.lip_sync_error;
        out.reconstruction_error += r.reconstruction_error;
        out.identity_drift += r.identity_drift;
    }
    const double n = static_cast<double>(std::max<std::size_t>(rows.size(), 1));
    out.lip_sync_error /= n;
    out.reconstruction_error /= n;
    out.identity_drift /= n;
    return out;
}

/// One-step clean-clip prediction at a high noise level from held-out clips.
AblationRow evaluate_one_step(const model::DitModel& m, const Data& data, const AblationSettings& s,
                              std::size_t motion_frames, bool mask_motion, std::uint64_t seed,
                              const diffusion::Schedule& sched, const std::string& variant) {
    const auto codec = m.codec();
    const int t = std::clamp(static_cast<int>(std::lround(s.eval_t_fraction * sched.T)), 1, sched.T);
    std::vector<AblationRow> rows;
    TrainConfig tc = s.train;
    tc.phase = Phase::audio;
    tc.motion_frames = motion_frames;
    for (std::size_t i = 0; i < data.heldout_raw.size(); ++i) {
        const auto& raw = data.heldout_raw[i];
        const auto prepared = prepare(m, raw, s.samples_per_frame);
        for (std::size_t j = 0; j < s.eval_draws; ++j) {
            Rng r = Rng(seed).split("eval").split(i).split(j);
            StepDraws d;
            d.t = t;
            d.mask_motion = mask_motion;
            d.eps = NdTensor::randn(prepared.z0.dims(), r);
            diffusion::NoisePair pair{prepared.z0, d.eps};
            NdTensor zt = diffusion::q_sample(pair, t, sched);
            NdTensor motion = motion_frames == 0 ? NdTensor::zeros(prepared.z0.dims())
                                                 : cond::build_motion_condition(model::LatentClip(prepared.prev_latent),
                                                                                motion_frames,
                                                                                m.config().latent_frames, 0)
                                                       .condition.data;
            model::IdentityInput id;
            auto in = step_inputs(m, prepared, d, tc, zt, motion, id, sched.T);
            NdTensor v = m.predict(in);
            NdTensor x0 = diffusion::v_to_x0_eps(zt, v, t, sched).x0_hat;
            rows.push_back(score_video(codec.decode(model::LatentClip(x0)), raw.video, data.geometry));
        }
    }
    return average(variant, rows);
}

AblationRow evaluate_sampled(const model::DitModel& m, const Data& data, const AblationSettings& s,
                             const guidance::GuidanceScales& g, std::uint64_t seed, const diffusion::Schedule& sched,
                             const std::string& variant) {
    const auto codec = m.codec();
    guidance::SampleOptions opt;
    opt.steps = s.sample_steps;
    opt.motion_frames = s.train.motion_frames;
    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < data.heldout_raw.size(); ++i) {
        const auto& raw = data.heldout_raw[i];
        const auto p = prepare(m, raw, s.samples_per_frame);
        guidance::ConditionSet c;
        c.text = p.text;
        c.audio = p.audio;
        c.ref_latent = p.ref_latent;
        c.face_embed = p.face_embed;
        NdTensor motion = cond::build_motion_condition(model::LatentClip(p.prev_latent), opt.motion_frames,
                                                       m.config().latent_frames, 0)
                              .condition.data;
        NdTensor noise = guidance::initial_noise(m.config(), Rng(seed).split("cfg-eval").next_u64(), i);
        auto clip = guidance::sample_with(m, c, g, sched, noise, &motion, 0, opt);
        rows.push_back(score_video(codec.decode(clip), raw.video, data.geometry));
    }
    return average(variant, rows);
}

guidance::GuidanceScales parse_scales(const std::string& v) {
    guidance::GuidanceScales g;
    std::sscanf(v.c_str(), "la=%lf,lt=%lf,li=%lf", &g.lambda_a, &g.lambda_t, &g.lambda_i);
    return g;
}

}  // namespace

AblationSettings AblationSettings::toy() {
    AblationSettings s;
    auto& m = s.model;
    m.depth = 2;
    m.model_dim = 32;
    m.heads = 2;
    m.text_dim = 8;
    m.text_tokens = 2;
    m.face_dim = 8;
    m.face_tokens = 2;
    m.audio_layer_dim = 2;
    m.latent_frames = 8;
    m.latent_height = 4;
    m.latent_width = 6;
    s.train.optimizer = OptimizerKind::adam;
    s.train.lr = 3e-3;
    return s;
}

AblationTable run_ablation(const AblationSettings& s, Axis axis, std::uint64_t seed,
                           const std::vector<std::string>& only) {
    s.model.validate();
    s.train.validate();
    const auto sched = diffusion::make_schedule(s.T, s.beta_start, s.beta_end);
    const Data data = make_data(s, seed);
    auto wanted = [&](const std::string& v) { return only.empty() || std::count(only.begin(), only.end(), v) > 0; };
    for (const auto& v : only) {
        const auto all = axis_variants(axis);
        if (std::find(all.begin(), all.end(), v) == all.end()) {
            throw ConfigError("axis " + std::string(axis_name(axis)) + " has no variant '" + v + "'");
        }
    }

    AblationTable table;
    table.axis = axis;
    table.seed = seed;
    const std::uint64_t init_seed = Rng(seed).split("init").next_u64();

    auto both_phases = [&](model::DitConfig cfg, std::size_t n) {
        auto m = model::DitModel::init(cfg, init_seed);
        const auto corpus = prepare_all(m, data.train_raw, s.samples_per_frame);
        m = train_phase(std::move(m), corpus, s, Phase::identity, n, seed, sched);
        return train_phase(std::move(m), corpus, s, Phase::audio, n, seed, sched);
    };

    switch (axis) {
        case Axis::audio_injection: {
            // The identity phase never sees audio, so it is trained once and shared.
            auto base = model::DitModel::init(s.model, init_seed);
            const auto corpus = prepare_all(base, data.train_raw, s.samples_per_frame);
            base = train_phase(std::move(base), corpus, s, Phase::identity, s.train.motion_frames, seed, sched);
            for (const auto& v : axis_variants(axis)) {
                if (!wanted(v)) continue;
                auto cfg = s.model;
                cfg.audio_strategy = cond::parse_strategy(v);
                auto m = transplant(base, cfg, init_seed);
                m = train_phase(std::move(m), corpus, s, Phase::audio, s.train.motion_frames, seed, sched);
                table.rows.push_back(evaluate_one_step(m, data, s, s.train.motion_frames, true, seed, sched, v));
            }
            break;
        }
        case Axis::identity_injection:
            for (const auto& v : axis_variants(axis)) {
                if (!wanted(v)) continue;
                auto cfg = s.model;
                cfg.identity_mode = cond::parse_identity_mode(v);
                auto m = both_phases(cfg, s.train.motion_frames);
                table.rows.push_back(evaluate_one_step(m, data, s, s.train.motion_frames, true, seed, sched, v));
            }
            break;
        case Axis::motion_frames:
            for (const auto& v : axis_variants(axis)) {
                if (!wanted(v)) continue;
                const std::size_t n = std::stoul(v.substr(2));
                if (n > s.model.latent_frames) {
                    throw ConfigError("motion_frames axis: n=" + std::to_string(n) + " exceeds latent_frames");
                }
                auto m = both_phases(s.model, n);
                table.rows.push_back(evaluate_one_step(m, data, s, n, false, seed, sched, v));
            }
            break;
        case Axis::cfg: {
            auto m = both_phases(s.model, s.train.motion_frames);
            for (const auto& v : axis_variants(axis)) {
                if (!wanted(v)) continue;
                table.rows.push_back(evaluate_sampled(m, data, s, parse_scales(v), seed, sched, v));
            }
            break;
        }
    }
    return table;
}

}  // namespace anima::trainer
