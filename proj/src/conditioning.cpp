#include "anima/conditioning.hpp"

#include <algorithm>
#include <cmath>

#include "anima/errors.hpp"
#include "anima/rng.hpp"

namespace anima::inline ANIMA_NS::cond {

using model::broadcast_rows;
using model::linear;
using model::mean_rows;
using model::plain_norm;

namespace {

std::array<double, kAudioStats> window_stats(const std::vector<Scalar>& signal, std::size_t begin, std::size_t end) {
    std::array<double, kAudioStats> s{};
    const double n = static_cast<double>(end - begin);
    double sum = 0.0, sq = 0.0, mx = signal[begin], mn = signal[begin];
    for (std::size_t i = begin; i < end; ++i) {
        sum += signal[i];
        sq += static_cast<double>(signal[i]) * signal[i];
        mx = std::max<double>(mx, signal[i]);
        mn = std::min<double>(mn, signal[i]);
    }
    s[0] = sum / n;
    s[1] = std::sqrt(sq / n);
    s[2] = mx;
    s[3] = mn;
    s[4] = signal[begin];
    s[5] = signal[end - 1];
    s[6] = static_cast<double>(signal[end - 1]) - signal[begin];
    return s;
}

}  // namespace

AudioEmbedding synth_audio_features(const std::vector<Scalar>& signal, const AudioFeatureConfig& cfg) {
    if (signal.empty()) throw ShapeError("synth_audio_features: empty signal");
    if (cfg.samples_per_frame == 0 || cfg.layer_dim == 0) throw ConfigError("audio features: zero frame size");
    const std::size_t frames = signal.size() / cfg.samples_per_frame;
    if (frames == 0) throw ShapeError("synth_audio_features: signal shorter than one frame");
    const std::size_t ld = cfg.layer_dim;
    const std::size_t width = kAudioLayers * ld;

    // Fixed random projections; same seed -> same stand-in network.
    Rng rng(cfg.seed);
    std::vector<std::vector<double>> weights(kAudioLayers, std::vector<double>(kAudioStats * ld));
    std::vector<std::vector<double>> biases(kAudioLayers, std::vector<double>(ld));
    for (std::size_t k = 0; k < kAudioLayers; ++k) {
        for (auto& w : weights[k]) w = rng.normal() / std::sqrt(static_cast<double>(kAudioStats));
        for (auto& b : biases[k]) b = 0.1 * rng.normal();
    }

    NdTensor out({frames, width});
    for (std::size_t f = 0; f < frames; ++f) {
        for (std::size_t k = 0; k < kAudioLayers; ++k) {
            const std::size_t span = k < 4 ? 1 : k < 8 ? 2 : 4;
            const std::size_t first_frame = f + 1 >= span ? f + 1 - span : 0;
            const auto st = window_stats(signal, first_frame * cfg.samples_per_frame, (f + 1) * cfg.samples_per_frame);
            for (std::size_t j = 0; j < ld; ++j) {
                double acc = biases[k][j];
                for (std::size_t q = 0; q < kAudioStats; ++q) acc += weights[k][q * ld + j] * st[q];
                out.at(f, k * ld + j) = static_cast<Scalar>(acc);
            }
        }
    }
    return AudioEmbedding{std::move(out), std::nullopt};
}

NdTensor align_to_latent(const NdTensor& per_frame, std::size_t latent_frames, std::size_t stride) {
    const std::size_t needed = 1 + (latent_frames - 1) * stride;
    if (per_frame.rank() != 2 || per_frame.dim(0) < needed) {
        throw ShapeError("audio alignment: need " + std::to_string(needed) + " frames, got " +
                         per_frame.shape_string());
    }
    const std::size_t w = per_frame.dim(1);
    NdTensor out({latent_frames * stride, w});
    for (std::size_t j = 0; j < latent_frames; ++j) {
        for (std::size_t s = 0; s < stride; ++s) {
            const std::size_t src = j == 0 ? 0 : (j - 1) * stride + 1 + s;
            std::copy_n(per_frame.data().begin() + static_cast<std::ptrdiff_t>(src * w), w,
                        out.mutable_data().begin() + static_cast<std::ptrdiff_t>((j * stride + s) * w));
        }
    }
    return out;
}

Var project_audio(ParamBinder& p, Var features) {
    Var h = gelu(linear(p, "audio_proj.l1", features));
    h = gelu(linear(p, "audio_proj.l2", h));
    return linear(p, "audio_proj.l3", h);
}

AudioEmbedding project_audio(const model::ParamStore& params, AudioEmbedding a) {
    GradTape tape;
    ParamBinder binder(tape, params);
    a.projected = project_audio(binder, tape.constant(a.features)).value();
    return a;
}

const char* strategy_name(AudioStrategy s) {
    switch (s) {
        case AudioStrategy::self_attention: return "self_attention";
        case AudioStrategy::adaln: return "adaln";
        case AudioStrategy::adaln_zero: return "adaln_zero";
        case AudioStrategy::cross_attention: return "cross_attention";
    }
    return "?";
}

AudioStrategy parse_strategy(const std::string& s) {
    if (s == "self_attention") return AudioStrategy::self_attention;
    if (s == "adaln") return AudioStrategy::adaln;
    if (s == "adaln_zero") return AudioStrategy::adaln_zero;
    if (s == "cross_attention") return AudioStrategy::cross_attention;
    throw ConfigError("unknown audio strategy '" + s + "'");
}

const char* identity_mode_name(IdentityMode m) {
    switch (m) {
        case IdentityMode::none: return "none";
        case IdentityMode::face_attention: return "face_attention";
        case IdentityMode::face_adaln: return "face_adaln";
        case IdentityMode::ref_net: return "ref_net";
        case IdentityMode::face_attention_plus_ref_net: return "face_attention_plus_ref_net";
    }
    return "?";
}

IdentityMode parse_identity_mode(const std::string& s) {
    if (s == "none") return IdentityMode::none;
    if (s == "face_attention") return IdentityMode::face_attention;
    if (s == "face_adaln") return IdentityMode::face_adaln;
    if (s == "ref_net") return IdentityMode::ref_net;
    if (s == "face_attention_plus_ref_net") return IdentityMode::face_attention_plus_ref_net;
    throw ConfigError("unknown identity mode '" + s + "'");
}

bool uses_ref_net(IdentityMode m) {
    return m == IdentityMode::ref_net || m == IdentityMode::face_attention_plus_ref_net;
}
bool uses_face_attention(IdentityMode m) {
    return m == IdentityMode::face_attention || m == IdentityMode::face_attention_plus_ref_net;
}
bool uses_face_adaln(IdentityMode m) { return m == IdentityMode::face_adaln; }

void IdentityCondition::validate(std::size_t depth) const {
    if (mode == IdentityMode::none) return;
    if ((uses_face_attention(mode) || uses_face_adaln(mode)) && face_embed.rank() != 2) {
        throw ContractError(std::string("identity mode ") + identity_mode_name(mode) + " needs a face embedding");
    }
    if (uses_ref_net(mode)) {
        if (!ref_features) {
            throw ContractError(std::string("identity mode ") + identity_mode_name(mode) + " needs reference features");
        }
        if (ref_features->layers.size() != depth) {
            throw ContractError("reference features depth differs from denoiser depth");
        }
    }
}

NdTensor face_embedding(const NdTensor& ref_image, const NdTensor& encoder) {
    if (ref_image.size() != encoder.dim(0)) {
        throw ShapeError("face encoder expects " + std::to_string(encoder.dim(0)) + " pixels, got " +
                         std::to_string(ref_image.size()));
    }
    return kernels::matmul(ref_image.reshaped({1, ref_image.size()}), encoder);
}

NdTensor MotionCondition::stacked() const { return kernels::concat(std::vector{condition.data, noise.data}, 3); }

LatentClip empty_motion(std::size_t l, std::size_t H, std::size_t W, std::size_t C) {
    return LatentClip(NdTensor::zeros({l, H, W, C}), model::FrameRole::padded);
}

MotionCondition build_motion_condition(const LatentClip& prev_clip, std::size_t n, std::size_t l,
                                       std::uint64_t noise_seed) {
    if (n > l) throw ContractError("motion frames: n=" + std::to_string(n) + " exceeds l=" + std::to_string(l));
    if (prev_clip.frames() < n) {
        throw ContractError("motion frames: previous clip has " + std::to_string(prev_clip.frames()) +
                            " frames, need " + std::to_string(n));
    }
    const std::size_t H = prev_clip.height(), W = prev_clip.width(), C = prev_clip.channels();
    MotionCondition m;
    m.n = n;
    m.l = l;
    std::vector<model::FrameRole> roles(l, model::FrameRole::padded);
    std::fill_n(roles.begin(), n, model::FrameRole::motion);
    if (n > 0) {
        m.motion_latents = kernels::slice(prev_clip.data, 0, prev_clip.frames() - n, prev_clip.frames());
        NdTensor cond = n < l ? kernels::pad(m.motion_latents, 0, 0, l - n) : m.motion_latents;
        m.condition = LatentClip(std::move(cond), roles);
    } else {
        m.motion_latents = NdTensor({1, H, W, C});
        m.condition = LatentClip(NdTensor::zeros({l, H, W, C}), roles);
    }
    Rng rng(noise_seed);
    m.noise = LatentClip(NdTensor::randn({l, H, W, C}, rng), model::FrameRole::noise);
    return m;
}

Var attention_with_extra_kv(ParamBinder& p, const std::string& prefix, Var src, const model::RopeTables* query_rope,
                            std::optional<Var> extra_kv, const model::RopeTables* extra_rope, std::size_t heads,
                            std::size_t unroped_prefix_rows) {
    auto rope_rows = [&](Var x) {
        if (!query_rope) return x;
        if (unroped_prefix_rows == 0) return model::apply_rope(x, *query_rope);
        Var head = slice(x, 0, 0, unroped_prefix_rows);
        Var tail = model::apply_rope(slice(x, 0, unroped_prefix_rows, x.rows()), *query_rope);
        return concat({head, tail}, 0);
    };
    Var q = rope_rows(matmul(src, p.get(prefix + ".wq")));
    Var k = rope_rows(matmul(src, p.get(prefix + ".wk")));
    Var v = matmul(src, p.get(prefix + ".wv"));
    if (extra_kv) {
        Var ke = matmul(*extra_kv, p.get(prefix + ".wk"));
        if (extra_rope) ke = model::apply_rope(ke, *extra_rope);
        Var ve = matmul(*extra_kv, p.get(prefix + ".wv"));
        k = concat({k, ke}, 0);
        v = concat({v, ve}, 0);
    }
    return matmul(model::multi_head_attention(q, k, v, heads), p.get(prefix + ".wo"));
}

namespace {

Var audio_cross_attention(ParamBinder& p, const std::string& prefix, Var x, Var audio, const TokenLayout& layout) {
    const std::size_t d = x.cols();
    const std::size_t frames = layout.token_frames;
    if (audio.rows() != frames * layout.audio_per_frame) {
        throw ShapeError("audio cross-attention: " + std::to_string(audio.rows()) + " audio tokens for " +
                         std::to_string(frames) + " token frames x " + std::to_string(layout.audio_per_frame));
    }
    if (x.rows() != frames * layout.tokens_per_frame) throw ShapeError("audio cross-attention: token layout mismatch");
    auto& tape = p.tape();
    Var q = matmul(plain_norm(x), p.get(prefix + ".wq"));
    Var k = matmul(audio, p.get(prefix + ".wk"));
    Var v = matmul(audio, p.get(prefix + ".wv"));
    // A learned null key with a zero value lets queries opt out of the audio.
    Var null_k = p.get(prefix + ".null_k");
    Var null_v = tape.constant(NdTensor::zeros({1, d}));
    std::vector<Var> outs;
    outs.reserve(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        Var qf = frames == 1 ? q : slice(q, 0, f * layout.tokens_per_frame, (f + 1) * layout.tokens_per_frame);
        Var kf = frames == 1 ? k : slice(k, 0, f * layout.audio_per_frame, (f + 1) * layout.audio_per_frame);
        Var vf = frames == 1 ? v : slice(v, 0, f * layout.audio_per_frame, (f + 1) * layout.audio_per_frame);
        outs.push_back(model::multi_head_attention(qf, concat({null_k, kf}, 0), concat({null_v, vf}, 0), layout.heads));
    }
    Var o = frames == 1 ? outs.front() : concat(outs, 0);
    return x + matmul(o, p.get(prefix + ".wo"));
}

Var audio_self_attention(ParamBinder& p, const std::string& prefix, Var x, Var audio, const TokenLayout& layout) {
    const std::size_t n = x.rows();
    std::vector<Pos3> positions = layout.positions;
    for (std::size_t i = 0; i < audio.rows(); ++i) {
        positions.push_back({static_cast<double>(i / std::max<std::size_t>(1, layout.audio_per_frame)), 0.0, 0.0});
    }
    auto tables = model::rope_tables(positions, x.cols(), layout.heads);
    Var seq = concat({plain_norm(x), plain_norm(audio)}, 0);
    Var o = attention_with_extra_kv(p, prefix, seq, &tables, std::nullopt, nullptr, layout.heads);
    return x + slice(o, 0, 0, n);
}

Var audio_adaptive_norm(ParamBinder& p, const std::string& prefix, Var x, Var audio, bool zero_gate) {
    const std::size_t d = x.cols();
    Var pooled = mean_rows(audio);
    Var mod = linear(p, prefix + ".mod", pooled);
    Var shift = slice(mod, 1, 0, d);
    Var scl = slice(mod, 1, d, 2 * d);
    Var h = linear(p, prefix + ".out", model::modulate(plain_norm(x), shift, scl));
    if (zero_gate) h = h * broadcast_rows(slice(mod, 1, 2 * d, 3 * d), x.rows());
    return x + h;
}

}  // namespace

Var inject_audio(ParamBinder& p, const std::string& prefix, Var tokens, Var audio, AudioStrategy strategy,
                 const TokenLayout& layout) {
    if (audio.cols() != tokens.cols()) {
        throw ShapeError("inject_audio: projected audio width " + std::to_string(audio.cols()) + " vs model dim " +
                         std::to_string(tokens.cols()));
    }
    switch (strategy) {
        case AudioStrategy::cross_attention: return audio_cross_attention(p, prefix, tokens, audio, layout);
        case AudioStrategy::self_attention: return audio_self_attention(p, prefix, tokens, audio, layout);
        case AudioStrategy::adaln: return audio_adaptive_norm(p, prefix, tokens, audio, false);
        case AudioStrategy::adaln_zero: return audio_adaptive_norm(p, prefix, tokens, audio, true);
    }
    throw ConfigError("inject_audio: unknown strategy");
}

Var face_tokens(ParamBinder& p, Var face_embed, std::size_t count, std::size_t dim) {
    Var flat = linear(p, "face_proj", face_embed);
    if (count == 1) return flat;
    std::vector<Var> rows;
    rows.reserve(count);
    for (std::size_t i = 0; i < count; ++i) rows.push_back(slice(flat, 1, i * dim, (i + 1) * dim));
    return concat(rows, 0);
}

Var face_cross_attention(ParamBinder& p, const std::string& prefix, Var tokens, Var face, std::size_t heads) {
    Var q = matmul(plain_norm(tokens), p.get(prefix + ".wq"));
    Var k = matmul(face, p.get(prefix + ".wk"));
    Var v = matmul(face, p.get(prefix + ".wv"));
    return tokens + matmul(model::multi_head_attention(q, k, v, heads), p.get(prefix + ".wo"));
}

Var face_adaptive_norm(ParamBinder& p, const std::string& prefix, Var tokens, Var face_embed) {
    const std::size_t d = tokens.cols();
    Var mod = linear(p, prefix + ".mod", face_embed);
    Var h = model::modulate(plain_norm(tokens), slice(mod, 1, 0, d), slice(mod, 1, d, 2 * d));
    return tokens + linear(p, prefix + ".out", h);
}

Var inject_identity(ParamBinder& p, const std::string& layer_prefix, Var tokens, const IdentityInputs& id,
                    std::size_t layer_index, const TokenLayout& layout) {
    if (id.mode == IdentityMode::none) return tokens;
    Var x = tokens;
    if (uses_ref_net(id.mode)) {
        if (layer_index >= id.ref_features.size()) {
            throw ContractError("inject_identity: missing reference features for layer " + std::to_string(layer_index));
        }
        auto q_rope = model::rope_tables(layout.positions, x.cols(), layout.heads);
        auto r_rope = model::rope_tables(id.ref_positions, x.cols(), layout.heads);
        x = x + attention_with_extra_kv(p, layer_prefix + ".attn", plain_norm(x), &q_rope,
                                        plain_norm(id.ref_features[layer_index]), &r_rope, layout.heads);
    }
    if (uses_face_attention(id.mode)) {
        if (!id.face_tokens) throw ContractError("inject_identity: face attention needs face tokens");
        x = face_cross_attention(p, layer_prefix + ".face_attn", x, *id.face_tokens, layout.heads);
    }
    if (uses_face_adaln(id.mode)) {
        if (!id.face_embed) throw ContractError("inject_identity: face adaln needs a face embedding");
        x = face_adaptive_norm(p, layer_prefix + ".face_norm", x, *id.face_embed);
    }
    return x;
}

}  // namespace anima::cond
