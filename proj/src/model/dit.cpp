#include "anima/model/dit.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "anima/errors.hpp"
#include "anima/ndt_io.hpp"
#include "anima/rng.hpp"

namespace anima::inline ANIMA_NS::model {

using cond::IdentityMode;

void DitConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ConfigError("model." + field + ": " + why);
    };
    if (depth == 0) fail("depth", "must be >= 1");
    if (heads == 0 || model_dim % heads != 0) fail("model_dim", "must be divisible by heads");
    if (head_dim() % 8 != 0) fail("heads", "head_dim must be a multiple of 8 (2:1:1 rotary split)");
    if (patch.t == 0 || patch.h == 0 || patch.w == 0) fail("patch", "sizes must be positive");
    if (latent_frames == 0) fail("latent_frames", "must be >= 1");
    if (latent_frames % patch.t) fail("latent_frames", "not divisible by patch_t");
    if (latent_height % patch.h) fail("latent_height", "not divisible by patch_h");
    if (latent_width % patch.w) fail("latent_width", "not divisible by patch_w");
    if (text_dim == 0 || text_tokens == 0) fail("text_dim", "text dims must be positive");
    if (audio_layer_dim == 0) fail("audio_layer_dim", "must be positive");
    if (face_dim == 0 || face_tokens == 0) fail("face_dim", "face dims must be positive");
    if (video_channels == 0 || temporal_stride == 0 || spatial_patch == 0) fail("video_channels", "codec factors");
    if (mlp_ratio == 0) fail("mlp_ratio", "must be positive");
    if (cond::uses_ref_net(identity_mode) && patch.t != 1) {
        fail("patch", "reference network needs patch_t == 1 (single-frame reference)");
    }
}

std::string DitConfig::describe() const {
    std::ostringstream os;
    os << "depth=" << depth << " dim=" << model_dim << " heads=" << heads << " patch=" << patch.t << "," << patch.h
       << "," << patch.w << " mlp=" << mlp_ratio << " text=" << text_tokens << "x" << text_dim
       << " audio_ld=" << audio_layer_dim << " face=" << face_tokens << "x" << face_dim << " latent=" << latent_frames
       << "x" << latent_height << "x" << latent_width << " c0=" << video_channels << " s=" << temporal_stride
       << " sp=" << spatial_patch << " audio=" << cond::strategy_name(audio_strategy)
       << " identity=" << cond::identity_mode_name(identity_mode);
    return os.str();
}

std::uint64_t DitConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : describe()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

struct Initializer {
    ParamStore& store;
    Rng rng;

    void normal(const std::string& name, NdTensor::Dims dims, double stddev) {
        store.set(name, NdTensor::randn(std::move(dims), rng, stddev));
    }
    void fan_in(const std::string& name, std::size_t in, std::size_t out) {
        normal(name, {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
    }
    void zeros(const std::string& name, NdTensor::Dims dims) { store.set(name, NdTensor::zeros(std::move(dims))); }
    void linear(const std::string& prefix, std::size_t in, std::size_t out, bool zero = false) {
        if (zero) {
            zeros(prefix + ".w", {in, out});
        } else {
            fan_in(prefix + ".w", in, out);
        }
        zeros(prefix + ".b", {1, out});
    }
    void attention(const std::string& prefix, std::size_t d) {
        for (const char* w : {".wq", ".wk", ".wv", ".wo"}) fan_in(prefix + w, d, d);
    }
};

}  // namespace

DitModel::DitModel(DitConfig cfg, ParamStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
}

DitModel DitModel::init(const DitConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore store;
    Initializer init{store, Rng(seed).split("init")};
    const std::size_t d = cfg.model_dim;
    const std::size_t hidden = d * cfg.mlp_ratio;

    store.set("codec.matrix", random_orthogonal(cfg.latent_channels(), Rng(seed).split("codec").next_u64()));
    const std::size_t pixels = cfg.video_height() * cfg.video_width() * cfg.video_channels;
    init.normal("face_encoder.w", {pixels, cfg.face_dim}, 1.0 / std::sqrt(static_cast<double>(pixels)));

    init.fan_in("patch_embed.w", cfg.patch_in(), d);
    init.normal("pos_embed", {cfg.tokens(), d}, 0.5);
    init.linear("text_proj", cfg.text_dim, d);
    init.linear("time.l1", d, d);
    init.linear("time.l2", d, d);
    init.linear("text_cond", cfg.text_dim, d);
    init.linear("final.mod", d, 2 * d, true);
    init.linear("final.out", d, cfg.patch_out(), true);

    init.linear("audio_proj.l1", cfg.audio_dim(), d);
    init.linear("audio_proj.l2", d, d);
    init.linear("audio_proj.l3", d, d);

    const auto mode = cfg.identity_mode;
    if (cond::uses_face_attention(mode)) init.linear("face_proj", cfg.face_dim, cfg.face_tokens * d);

    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string b = "blocks." + std::to_string(i);
        init.attention(b + ".attn", d);
        init.linear(b + ".mod_vision", d, 6 * d, true);
        init.linear(b + ".mod_text", d, 6 * d, true);
        init.linear(b + ".mlp.l1", d, hidden);
        init.linear(b + ".mlp.l2", hidden, d);
        if (cond::uses_face_attention(mode)) init.attention(b + ".face_attn", d);
        if (cond::uses_face_adaln(mode)) {
            init.linear(b + ".face_norm.mod", cfg.face_dim, 2 * d, true);
            init.linear(b + ".face_norm.out", d, d);
        }
        const std::string a = b + ".audio";
        switch (cfg.audio_strategy) {
            case cond::AudioStrategy::cross_attention:
                init.attention(a, d);
                init.zeros(a + ".null_k", {1, d});
                break;
            case cond::AudioStrategy::self_attention: init.attention(a, d); break;
            case cond::AudioStrategy::adaln:
                init.linear(a + ".mod", d, 2 * d);
                init.linear(a + ".out", d, d);
                break;
            case cond::AudioStrategy::adaln_zero:
                init.linear(a + ".mod", d, 3 * d, true);
                init.linear(a + ".out", d, d);
                break;
        }
        if (cond::uses_ref_net(mode) && i + 1 < cfg.depth) {
            const std::string r = "ref.blocks." + std::to_string(i);
            init.attention(r + ".attn", d);
            init.zeros(r + ".mod.b", {1, 6 * d});
            init.linear(r + ".mlp.l1", d, hidden);
            init.linear(r + ".mlp.l2", hidden, d);
        }
    }
    return DitModel(cfg, std::move(store));
}

CausalCodec DitModel::codec() const {
    CodecConfig cc{cfg_.temporal_stride, cfg_.spatial_patch, cfg_.video_channels, 0};
    return CausalCodec(cc, params_.get("codec.matrix"));
}

std::vector<Pos3> DitModel::vision_positions() const {
    return grid_positions(cfg_.token_frames(), cfg_.latent_height / cfg_.patch.h, cfg_.latent_width / cfg_.patch.w);
}

std::vector<Pos3> DitModel::reference_positions() const {
    return grid_positions(1, cfg_.latent_height / cfg_.patch.h, cfg_.latent_width / cfg_.patch.w);
}

NdTensor latent_to_tokens(const NdTensor& latent, const DitConfig& cfg) { return to_patches(latent, cfg.patch); }

NdTensor tokens_to_latent(const NdTensor& tokens, const DitConfig& cfg) {
    return from_patches(tokens, cfg.patch, cfg.latent_frames, cfg.latent_height, cfg.latent_width,
                        cfg.latent_channels());
}

namespace {

Var mlp(ParamBinder& p, const std::string& prefix, Var x) {
    return linear(p, prefix + ".l2", gelu(linear(p, prefix + ".l1", x)));
}

Var gated(Var x, Var gate, Var delta) { return x + broadcast_rows(gate, x.rows()) * delta; }

}  // namespace

std::vector<Var> DitModel::reference_forward(ParamBinder& p, const NdTensor& ref_latent) const {
    const std::size_t C = cfg_.latent_channels();
    if (ref_latent.rank() != 4 || ref_latent.dim(0) != 1) {
        throw ContractError("reference_forward: reference must be a single latent frame, got " +
                            ref_latent.shape_string());
    }
    if (ref_latent.dim(1) != cfg_.latent_height || ref_latent.dim(2) != cfg_.latent_width || ref_latent.dim(3) != C) {
        throw ShapeError("reference_forward: latent " + ref_latent.shape_string() + " does not match model grid");
    }
    const std::size_t d = cfg_.model_dim;
    const std::size_t n = cfg_.tokens_per_frame();
    NdTensor input = kernels::concat(std::vector{ref_latent, NdTensor::zeros(ref_latent.dims())}, 3);
    Var r = matmul(p.constant(to_patches(input, cfg_.patch)), p.get("patch_embed.w"));
    r = r + slice(p.get("pos_embed"), 0, 0, n);
    auto rope = rope_tables(reference_positions(), d, cfg_.heads);

    std::vector<Var> features;
    features.reserve(cfg_.depth);
    for (std::size_t i = 0; i < cfg_.depth; ++i) {
        features.push_back(r);
        if (i + 1 == cfg_.depth) break;  // the last layer's output feeds nothing
        const std::string b = "ref.blocks." + std::to_string(i);
        Modulation m = split_modulation(p.get(b + ".mod.b"), d);
        Var h = modulate(plain_norm(r), m.shift_attn, m.scale_attn);
        r = gated(r, m.gate_attn,
                  cond::attention_with_extra_kv(p, b + ".attn", h, &rope, std::nullopt, nullptr, cfg_.heads));
        h = modulate(plain_norm(r), m.shift_mlp, m.scale_mlp);
        r = gated(r, m.gate_mlp, mlp(p, b + ".mlp", h));
    }
    return features;
}

cond::ReferenceFeatures DitModel::reference_forward(const LatentClip& ref) const {
    if (ref.frames() != 1) {
        throw ContractError("reference_forward: reference clip must have one frame, got " +
                            std::to_string(ref.frames()));
    }
    GradTape tape;
    ParamBinder binder(tape, params_);
    cond::ReferenceFeatures out;
    for (Var v : reference_forward(binder, ref.data)) out.layers.push_back(v.value());
    return out;
}

Var DitModel::condition_vector(ParamBinder& p, int t, int T, Var text) const {
    const double scaled = static_cast<double>(t) * 1000.0 / static_cast<double>(std::max(T, 1));
    Var tf = p.constant(timestep_features(scaled, cfg_.model_dim));
    Var temb = linear(p, "time.l2", gelu(linear(p, "time.l1", tf)));
    return temb + linear(p, "text_cond", mean_rows(text));
}

Var DitModel::forward(ParamBinder& p, const DenoiserInputs& in) const {
    const std::size_t d = cfg_.model_dim;
    const std::size_t l = cfg_.latent_frames, H = cfg_.latent_height, W = cfg_.latent_width;
    const std::size_t C = cfg_.latent_channels();
    if (!in.noisy) throw ContractError("forward: missing noisy latent");
    const NdTensor::Dims latent_dims{l, H, W, C};
    if (in.noisy->dims() != latent_dims) {
        throw ShapeError("forward: noisy latent " + in.noisy->shape_string() + " vs model grid " +
                         dims_string(latent_dims));
    }
    if (in.motion && in.motion->dims() != latent_dims) {
        throw ShapeError("forward: motion condition " + in.motion->shape_string() + " vs " + dims_string(latent_dims));
    }

    NdTensor stacked = kernels::concat(std::vector{*in.noisy, in.motion ? *in.motion : NdTensor::zeros(latent_dims)}, 3);
    Var x = matmul(p.constant(to_patches(stacked, cfg_.patch)), p.get("patch_embed.w")) + p.get("pos_embed");

    NdTensor text_value = in.text ? *in.text : NdTensor::zeros({cfg_.text_tokens, cfg_.text_dim});
    if (text_value.rank() != 2 || text_value.dim(1) != cfg_.text_dim) {
        throw ShapeError("forward: text embedding " + text_value.shape_string() + " vs text_dim " +
                         std::to_string(cfg_.text_dim));
    }
    Var text_raw = p.constant(std::move(text_value));
    Var c = linear(p, "text_proj", text_raw);
    Var cond_vec = condition_vector(p, in.t, in.T, text_raw);
    const std::size_t M = c.rows();

    cond::TokenLayout layout;
    layout.token_frames = cfg_.token_frames();
    layout.tokens_per_frame = cfg_.tokens_per_frame();
    layout.audio_per_frame = cfg_.temporal_stride * cfg_.patch.t;
    layout.heads = cfg_.heads;
    layout.positions = vision_positions();
    auto vision_rope = rope_tables(layout.positions, d, cfg_.heads);

    std::optional<Var> audio;
    if (in.audio) {
        if (in.audio->rank() != 2 || in.audio->dim(0) != cfg_.audio_tokens() || in.audio->dim(1) != cfg_.audio_dim()) {
            throw ShapeError("forward: audio features " + in.audio->shape_string() + " vs expected " +
                             std::to_string(cfg_.audio_tokens()) + "x" + std::to_string(cfg_.audio_dim()));
        }
        audio = cond::project_audio(p, p.constant(*in.audio));
    }

    cond::IdentityInputs id;
    std::optional<RopeTables> ref_rope;
    if (in.identity && cfg_.identity_mode != IdentityMode::none) {
        id.mode = cfg_.identity_mode;
        if (cond::uses_face_attention(id.mode) || cond::uses_face_adaln(id.mode)) {
            if (!in.identity->face_embed) throw ContractError("forward: identity mode needs a face embedding");
            id.face_embed = p.constant(*in.identity->face_embed);
            if (cond::uses_face_attention(id.mode)) {
                id.face_tokens = cond::face_tokens(p, *id.face_embed, cfg_.face_tokens, d);
            }
        }
        if (cond::uses_ref_net(id.mode)) {
            if (in.identity->cached_ref) {
                if (in.identity->cached_ref->layers.size() != cfg_.depth) {
                    throw ContractError("forward: cached reference features depth mismatch");
                }
                for (const auto& f : in.identity->cached_ref->layers) id.ref_features.push_back(p.constant(f));
            } else {
                if (!in.identity->ref_latent) throw ContractError("forward: ref_net mode needs a reference latent");
                id.ref_features = reference_forward(p, *in.identity->ref_latent);
            }
            id.ref_positions = reference_positions();
            ref_rope = rope_tables(id.ref_positions, d, cfg_.heads);
        }
    }

    for (std::size_t i = 0; i < cfg_.depth; ++i) {
        const std::string b = "blocks." + std::to_string(i);
        ExpertModulation em = expert_adaln(p, b, cond_vec, d);

        // 3D full attention over [text; vision] with optional reference KV.
        Var cn = modulate(plain_norm(c), em.text.shift_attn, em.text.scale_attn);
        Var xn = modulate(plain_norm(x), em.vision.shift_attn, em.vision.scale_attn);
        std::optional<Var> ref_kv;
        if (!id.ref_features.empty()) {
            ref_kv = modulate(plain_norm(id.ref_features[i]), em.vision.shift_attn, em.vision.scale_attn);
        }
        Var o = cond::attention_with_extra_kv(p, b + ".attn", concat({cn, xn}, 0), &vision_rope, ref_kv,
                                              ref_rope ? &*ref_rope : nullptr, cfg_.heads, M);
        c = gated(c, em.text.gate_attn, slice(o, 0, 0, M));
        x = gated(x, em.vision.gate_attn, slice(o, 0, M, M + x.rows()));

        if (id.face_tokens) x = cond::face_cross_attention(p, b + ".face_attn", x, *id.face_tokens, cfg_.heads);
        if (cond::uses_face_adaln(id.mode) && id.face_embed) {
            x = cond::face_adaptive_norm(p, b + ".face_norm", x, *id.face_embed);
        }
        if (audio) x = cond::inject_audio(p, b + ".audio", x, *audio, cfg_.audio_strategy, layout);

        Var cn2 = modulate(plain_norm(c), em.text.shift_mlp, em.text.scale_mlp);
        Var xn2 = modulate(plain_norm(x), em.vision.shift_mlp, em.vision.scale_mlp);
        Var h = mlp(p, b + ".mlp", concat({cn2, xn2}, 0));
        c = gated(c, em.text.gate_mlp, slice(h, 0, 0, M));
        x = gated(x, em.vision.gate_mlp, slice(h, 0, M, M + x.rows()));
    }

    Var fm = linear(p, "final.mod", gelu(cond_vec));
    Var xf = modulate(plain_norm(x), slice(fm, 1, 0, d), slice(fm, 1, d, 2 * d));
    return linear(p, "final.out", xf);
}

NdTensor DitModel::predict(const DenoiserInputs& in) const {
    GradTape tape;
    ParamBinder binder(tape, params_);
    return tokens_to_latent(forward(binder, in).value(), cfg_);
}

void DitModel::save(const std::filesystem::path& dir) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string());
    std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
    if (!manifest) throw IoError("cannot write " + (dir / "manifest.txt").string());
    manifest << "config_hash " << std::hex << std::setw(16) << std::setfill('0') << cfg_.hash() << std::dec << '\n';
    manifest << "config " << cfg_.describe() << '\n';
    for (const auto& [name, value] : params_.all()) {
        const std::string file = name + ".ndt";
        ndt::save(value, dir / file);
        manifest << "param " << name << ' ' << value.shape_string() << ' ' << file << '\n';
    }
    if (!manifest) throw IoError("write failed: manifest.txt");
}

DitModel DitModel::load(const std::filesystem::path& dir, const DitConfig& cfg) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw IoError("missing checkpoint manifest in " + dir.string());
    std::string line;
    ParamStore store;
    bool hash_seen = false;
    while (std::getline(manifest, line)) {
        std::istringstream is(line);
        std::string kind;
        is >> kind;
        if (kind == "config_hash") {
            std::string hex;
            is >> hex;
            if (std::stoull(hex, nullptr, 16) != cfg.hash()) {
                throw ConfigError("checkpoint config hash does not match the model config");
            }
            hash_seen = true;
        } else if (kind == "param") {
            std::string name, shape, file;
            is >> name >> shape >> file;
            auto t = ndt::load(dir / file);
            if (t.shape_string() != shape) throw IoError("checkpoint tensor " + name + " shape differs from manifest");
            store.set(name, std::move(t));
        }
    }
    if (!hash_seen) throw IoError("checkpoint manifest lacks config_hash");
    DitModel fresh = init(cfg, 0);
    for (const auto& name : fresh.params().names()) {
        if (!store.contains(name)) throw IoError("checkpoint lacks parameter " + name);
        if (!store.get(name).same_shape(fresh.params().get(name))) {
            throw IoError("checkpoint parameter " + name + " has the wrong shape");
        }
    }
    return DitModel(cfg, std::move(store));
}

}  // namespace anima::model
