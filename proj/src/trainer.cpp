#include "anima/trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "anima/errors.hpp"

namespace anima::inline ANIMA_NS::trainer {

using model::ParamGroup;

const char* phase_name(Phase p) { return p == Phase::identity ? "identity" : "audio"; }

Phase parse_phase(const std::string& s) {
    if (s == "identity") return Phase::identity;
    if (s == "audio") return Phase::audio;
    throw ConfigError("unknown training phase '" + s + "'");
}

const char* optimizer_name(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + s + "'");
}

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("train.steps must be >= 0");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be finite and >= 0");
    if (batch == 0) throw ConfigError("train.batch must be >= 1");
    if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) throw ConfigError("train.drop_prob must lie in [0,1]");
    if (!(motion_mask_prob >= 0.0 && motion_mask_prob <= 1.0)) {
        throw ConfigError("train.motion_mask_prob must lie in [0,1]");
    }
    if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1 must lie in [0,1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2 must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
}

namespace {

constexpr ParamGroup kGroups[] = {ParamGroup::codec,           ParamGroup::face_encoder, ParamGroup::full_attention,
                                  ParamGroup::face_attention,  ParamGroup::audio_attention,
                                  ParamGroup::reference_net,   ParamGroup::backbone};

}  // namespace

FreezeMask FreezeMask::for_phase(Phase p) {
    FreezeMask m;
    for (auto g : kGroups) {
        if (p == Phase::audio) {
            m.trainable[g] = g == ParamGroup::audio_attention;
        } else {
            m.trainable[g] =
                g != ParamGroup::codec && g != ParamGroup::face_encoder && g != ParamGroup::audio_attention;
        }
    }
    return m;
}

bool FreezeMask::is_trainable(ParamGroup g) const {
    auto it = trainable.find(g);
    return it != trainable.end() && it->second;
}

void FreezeMask::check(Phase p) const {
    auto fail = [&](ParamGroup g, const char* want) {
        throw ConfigError(std::string("freeze mask: group ") + model::group_name(g) + " must be " + want +
                          " in phase " + phase_name(p));
    };
    if (is_trainable(ParamGroup::codec)) fail(ParamGroup::codec, "frozen");
    if (is_trainable(ParamGroup::face_encoder)) fail(ParamGroup::face_encoder, "frozen");
    if (p == Phase::identity) {
        if (!is_trainable(ParamGroup::full_attention)) fail(ParamGroup::full_attention, "trainable");
        if (!is_trainable(ParamGroup::face_attention)) fail(ParamGroup::face_attention, "trainable");
        if (is_trainable(ParamGroup::audio_attention)) fail(ParamGroup::audio_attention, "frozen");
    } else {
        for (auto g : kGroups) {
            if (g == ParamGroup::audio_attention) {
                if (!is_trainable(g)) fail(g, "trainable");
            } else if (is_trainable(g)) {
                fail(g, "frozen");
            }
        }
    }
}

SyntheticConfig SyntheticConfig::for_model(const model::DitConfig& cfg) {
    SyntheticConfig s;
    s.frames = cfg.video_frames();
    s.height = cfg.video_height();
    s.width = cfg.video_width();
    s.channels = cfg.video_channels;
    s.text_tokens = cfg.text_tokens;
    s.text_dim = cfg.text_dim;
    const std::size_t th = cfg.patch.h * cfg.spatial_patch;
    const std::size_t tw = cfg.patch.w * cfg.spatial_patch;
    const std::size_t rows = s.height / th, cols = s.width / tw;
    s.lip_h = th;
    s.lip_w = tw;
    s.lip_y = (rows - 1) * th;
    s.lip_x = (cols / 2) * tw;
    return s;
}

std::vector<double> frame_audio_means(const std::vector<Scalar>& signal, std::size_t samples_per_frame) {
    std::vector<double> out(signal.size() / samples_per_frame);
    for (std::size_t f = 0; f < out.size(); ++f) {
        double acc = 0.0;
        for (std::size_t i = 0; i < samples_per_frame; ++i) acc += signal[f * samples_per_frame + i];
        out[f] = acc / static_cast<double>(samples_per_frame);
    }
    return out;
}

std::vector<SyntheticSample> gen_synthetic(std::size_t count, const SyntheticConfig& cfg, std::uint64_t seed) {
    if (count == 0) throw ConfigError("gen_synthetic: count must be >= 1");
    if (cfg.clips < 2) throw ConfigError("gen_synthetic: clips must be >= 2");
    const std::size_t L = cfg.frames, H = cfg.height, W = cfg.width, C = cfg.channels;
    const std::size_t pixels = H * W * C;

    // Subject textures depend only on subject_seed, so corpora drawn with
    // different seeds share subjects.
    std::vector<std::vector<double>> textures(cfg.subjects, std::vector<double>(pixels));
    for (std::size_t s = 0; s < cfg.subjects; ++s) {
        Rng r = Rng(cfg.subject_seed).split("subject").split(s);
        const double offset = r.uniform() - 0.5;
        for (auto& v : textures[s]) v = offset + 0.8 * r.normal();
    }

    std::vector<SyntheticSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng r = Rng(seed).split("sample").split(i);
        SyntheticSample smp;
        smp.subject_id = static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(cfg.subjects) - 1));
        const auto& tex = textures[smp.subject_id];

        const std::size_t total_frames = cfg.clips * L;
        const std::size_t n = total_frames * cfg.samples_per_frame;
        const double spf = static_cast<double>(cfg.samples_per_frame);
        smp.audio_signal.resize(n);
        const double f1 = 0.05 + 0.3 * r.uniform(), f2 = 0.05 + 0.3 * r.uniform();
        const double p1 = 2 * std::numbers::pi * r.uniform(), p2 = 2 * std::numbers::pi * r.uniform();
        const double a1 = 0.6 + 0.6 * r.uniform(), a2 = 0.3 + 0.4 * r.uniform();
        for (std::size_t k = 0; k < n; ++k) {
            const double x = static_cast<double>(k) / spf;
            smp.audio_signal[k] = static_cast<Scalar>(a1 * std::sin(2 * std::numbers::pi * f1 * x + p1) +
                                                      a2 * std::sin(2 * std::numbers::pi * f2 * x + p2));
        }
        const auto lip = frame_audio_means(smp.audio_signal, cfg.samples_per_frame);

        auto render = [&](std::size_t first) {
            NdTensor v({L, H, W, C});
            for (std::size_t f = 0; f < L; ++f)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x)
                        for (std::size_t c = 0; c < C; ++c) {
                            const std::size_t px = (y * W + x) * C + c;
                            const double val = cfg.in_lip(y, x) ? lip[first + f] : tex[px] + cfg.jitter * r.normal();
                            v[f * pixels + px] = static_cast<Scalar>(val);
                        }
            return v;
        };
        smp.prev_video = render(0);
        smp.video = render(L);

        smp.ref_image = NdTensor({1, H, W, C});
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t px = (y * W + x) * C + c;
                    smp.ref_image[px] = cfg.in_lip(y, x) ? Scalar(0) : static_cast<Scalar>(tex[px]);
                }
        smp.text.tokens = NdTensor::randn({cfg.text_tokens, cfg.text_dim}, r);
        out.push_back(std::move(smp));
    }
    return out;
}

NdTensor aligned_audio(const model::DitModel& m, const std::vector<Scalar>& signal, std::size_t samples_per_frame,
                       std::size_t first, std::size_t count) {
    const auto& cfg = m.config();
    cond::AudioFeatureConfig acfg;
    acfg.layer_dim = cfg.audio_layer_dim;
    acfg.samples_per_frame = samples_per_frame;
    const auto feats = cond::synth_audio_features(signal, acfg).features;
    const std::size_t L = cfg.video_frames();
    if (feats.dim(0) < (first + count) * L) {
        throw ShapeError("aligned_audio: signal covers " + std::to_string(feats.dim(0) / L) + " clips, need " +
                         std::to_string(first + count));
    }
    std::vector<NdTensor> parts;
    for (std::size_t k = first; k < first + count; ++k)
        parts.push_back(cond::align_to_latent(kernels::slice(feats, 0, k * L, (k + 1) * L), cfg.latent_frames,
                                              cfg.temporal_stride));
    return kernels::concat(parts, 0);
}

PreparedSample prepare(const model::DitModel& m, const SyntheticSample& s, std::size_t samples_per_frame) {
    const auto codec = m.codec();
    PreparedSample p;
    p.z0 = codec.encode(s.video).data;
    p.prev_latent = codec.encode(s.prev_video).data;
    p.ref_latent = codec.encode(s.ref_image).data;
    p.face_embed = cond::face_embedding(s.ref_image, m.face_encoder());
    p.audio = aligned_audio(m, s.audio_signal, samples_per_frame, 1, 1);
    p.text = s.text.tokens;
    p.subject_id = s.subject_id;
    return p;
}

std::vector<PreparedSample> prepare_all(const model::DitModel& m, const std::vector<SyntheticSample>& corpus,
                                        std::size_t samples_per_frame) {
    std::vector<PreparedSample> out;
    out.reserve(corpus.size());
    for (const auto& s : corpus) out.push_back(prepare(m, s, samples_per_frame));
    return out;
}

StepDraws draw_step(Rng& rng, const TrainConfig& cfg, const model::DitConfig& mcfg, int T, std::size_t corpus_size) {
    StepDraws d;
    d.sample = corpus_size > 1 ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(corpus_size) - 1))
                               : 0;
    d.t = static_cast<int>(rng.uniform_int(1, T));
    d.drop_identity = rng.bernoulli(cfg.drop_prob);
    d.drop_audio = rng.bernoulli(cfg.drop_prob);
    d.drop_text = rng.bernoulli(cfg.drop_prob);
    d.mask_motion = rng.bernoulli(cfg.motion_mask_prob);
    d.eps = NdTensor::randn({mcfg.latent_frames, mcfg.latent_height, mcfg.latent_width, mcfg.latent_channels()}, rng);
    return d;
}

double v_loss(const NdTensor& v_hat, const NdTensor& v) {
    if (!v_hat.same_shape(v)) throw ShapeError("v_loss: " + v_hat.shape_string() + " vs " + v.shape_string());
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double e = static_cast<double>(v_hat[i]) - v[i];
        acc += e * e;
    }
    return acc / static_cast<double>(v.size());
}

namespace {

NdTensor motion_half(const model::DitModel& m, const PreparedSample& s, std::size_t n) {
    const auto& cfg = m.config();
    if (n == 0) return NdTensor::zeros(s.z0.dims());
    return cond::build_motion_condition(model::LatentClip(s.prev_latent), n, cfg.latent_frames, 0).condition.data;
}

struct StepTensors {
    NdTensor zt;
    NdTensor motion;
    NdTensor target;  // token layout
};

StepTensors step_tensors(const model::DitModel& m, const PreparedSample& sample, const StepDraws& d,
                         const TrainConfig& cfg, const diffusion::Schedule& s) {
    diffusion::NoisePair pair{sample.z0, d.eps};
    StepTensors st;
    st.zt = diffusion::q_sample(pair, d.t, s);
    st.motion = motion_half(m, sample, cfg.motion_frames);
    st.target = model::latent_to_tokens(diffusion::v_target(pair, d.t, s), m.config());
    return st;
}

}  // namespace

model::DenoiserInputs step_inputs(const model::DitModel& m, const PreparedSample& sample, const StepDraws& d,
                                  const TrainConfig& cfg, const NdTensor& zt, const NdTensor& motion,
                                  model::IdentityInput& id, int T) {
    model::DenoiserInputs in;
    in.noisy = &zt;
    in.motion = d.mask_motion ? nullptr : &motion;
    in.t = d.t;
    in.T = T;
    in.text = d.drop_text ? nullptr : &sample.text;
    in.audio = cfg.phase == Phase::audio && !d.drop_audio ? &sample.audio : nullptr;
    id = model::IdentityInput{&sample.ref_latent, &sample.face_embed, nullptr};
    const bool identity = m.config().identity_mode != cond::IdentityMode::none && !d.drop_identity;
    in.identity = identity ? &id : nullptr;
    return in;
}

double evaluate_loss(const model::DitModel& m, const PreparedSample& sample, const StepDraws& d,
                     const TrainConfig& cfg, const diffusion::Schedule& s) {
    auto st = step_tensors(m, sample, d, cfg, s);
    model::IdentityInput id;
    auto in = step_inputs(m, sample, d, cfg, st.zt, st.motion, id, s.T);
    GradTape tape;
    model::ParamBinder binder(tape, m.params());
    return v_loss(m.forward(binder, in).value(), st.target);
}

void Optimizer::apply(model::ParamStore& params, const std::map<std::string, NdTensor>& grads,
                      const FreezeMask& mask) {
    ++steps_;
    double norm_sq = 0.0;
    for (const auto& [_, g] : grads)
        for (Scalar x : g.data()) norm_sq += static_cast<double>(x) * x;
    if (!std::isfinite(norm_sq)) throw NumericError("optimizer: non-finite gradient");
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0 && norm_sq > cfg_.clip_norm * cfg_.clip_norm) clip = cfg_.clip_norm / std::sqrt(norm_sq);
    if (cfg_.lr == 0.0) return;

    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (const auto& [name, g] : grads) {
        if (!mask.is_trainable(name)) continue;
        auto& p = params.mutable_get(name);
        if (cfg_.optimizer == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<Scalar>(p[i] - cfg_.lr * clip * g[i]);
            continue;
        }
        auto& mo = moments_[name];
        if (mo.m.empty()) {
            mo.m.assign(p.size(), 0.0);
            mo.v.assign(p.size(), 0.0);
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = clip * g[i];
            mo.m[i] = b1 * mo.m[i] + (1.0 - b1) * gi;
            mo.v[i] = b2 * mo.v[i] + (1.0 - b2) * gi * gi;
            const double step = cfg_.lr * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + cfg_.adam_eps);
            p[i] = static_cast<Scalar>(p[i] - step);
        }
    }
}

double train_step(model::DitModel& m, const std::vector<PreparedSample>& corpus, const std::vector<StepDraws>& draws,
                  const TrainConfig& cfg, const FreezeMask& mask, const diffusion::Schedule& s, Optimizer* opt) {
    cfg.validate();
    mask.check(cfg.phase);
    if (corpus.empty()) throw ContractError("train_step: empty corpus");
    if (draws.empty()) throw ContractError("train_step: no draws");

    std::map<std::string, NdTensor> grads;
    double loss_sum = 0.0;
    for (const auto& d : draws) {
        if (d.sample >= corpus.size()) throw IndexError("train_step: sample index out of range");
        const auto& sample = corpus[d.sample];
        auto st = step_tensors(m, sample, d, cfg, s);
        model::IdentityInput id;
        auto in = step_inputs(m, sample, d, cfg, st.zt, st.motion, id, s.T);
        GradTape tape;
        model::ParamBinder binder(tape, m.params(), [&](const std::string& n) { return mask.is_trainable(n); });
        Var loss = mse(m.forward(binder, in), tape.constant(st.target));
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw NumericError("train_step: non-finite loss");
        loss_sum += value;
        Gradients g = tape.backward(loss);
        for (const auto& [name, id_] : binder.bound()) {
            auto it = g.find(id_);
            if (it == g.end()) continue;
            auto [slot, fresh] = grads.try_emplace(name, it->second);
            if (!fresh) slot->second = kernels::add(slot->second, it->second);
        }
    }

    const double inv = 1.0 / static_cast<double>(draws.size());
    if (draws.size() > 1) {
        for (auto& [_, g] : grads) g = kernels::scale(g, static_cast<Scalar>(inv));
    }
    if (opt) {
        opt->apply(m.params(), grads, mask);
    } else {
        Optimizer once(cfg);
        once.apply(m.params(), grads, mask);
    }
    return loss_sum * inv;
}

double train_step(model::DitModel& m, const std::vector<PreparedSample>& corpus, const TrainConfig& cfg,
                  const FreezeMask& mask, const diffusion::Schedule& s, Rng& rng, Optimizer* opt) {
    std::vector<StepDraws> draws;
    draws.reserve(cfg.batch);
    for (std::size_t b = 0; b < cfg.batch; ++b) draws.push_back(draw_step(rng, cfg, m.config(), s.T, corpus.size()));
    return train_step(m, corpus, draws, cfg, mask, s, opt);
}

std::string format_trace(const std::vector<LossRecord>& trace) {
    std::ostringstream os;
    os.precision(9);
    for (const auto& r : trace) os << r.step << ',' << phase_name(r.phase) << ',' << r.loss << '\n';
    return os.str();
}

std::vector<LossRecord> run_phase(model::DitModel& m, const std::vector<PreparedSample>& corpus,
                                  const TrainConfig& cfg, const diffusion::Schedule& s) {
    cfg.validate();
    if (corpus.empty()) throw ContractError("run_phase: empty corpus");
    const FreezeMask mask = FreezeMask::for_phase(cfg.phase);
    Rng stream = Rng(cfg.seed).split("train").split(phase_name(cfg.phase));
    Optimizer opt(cfg);
    std::vector<LossRecord> trace;
    trace.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng = stream.split(static_cast<std::uint64_t>(step));
        trace.push_back({step, cfg.phase, train_step(m, corpus, cfg, mask, s, rng, &opt)});
    }
    return trace;
}

}  // namespace anima::trainer
