#include "anima/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "anima/errors.hpp"

namespace anima::inline ANIMA_NS {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& v, const std::string& key) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    return out;
}

int to_int(const std::string& v, const std::string& key) {
    int out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return out;
}

double to_double(const std::string& v, const std::string& key) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty())
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& v, const std::string& key) {
    if (v == "on") return true;
    if (v == "off") return false;
    throw ConfigError(key + ": expected on|off, got '" + v + "'");
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string onoff(bool b) { return b ? "on" : "off"; }

template <class F>
auto wrap(const std::string& key, F f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        if (msg.rfind(key, 0) == 0) throw;
        throw ConfigError(key + ": " + msg);
    }
}

struct Field {
    std::string key;
    std::function<void(RunConfig&, const std::string& value, const std::string& full)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name, expr)                                                                              \
    Field {                                                                                                 \
        name, [](RunConfig& c, const std::string& v, const std::string& k) { expr = to_u64(v, k); },        \
            [](const RunConfig& c) { return std::to_string(expr); }                                         \
    }
#define INT_FIELD(name, expr)                                                                               \
    Field {                                                                                                 \
        name, [](RunConfig& c, const std::string& v, const std::string& k) { expr = to_int(v, k); },        \
            [](const RunConfig& c) { return std::to_string(expr); }                                         \
    }
#define DOUBLE_FIELD(name, expr)                                                                            \
    Field {                                                                                                 \
        name, [](RunConfig& c, const std::string& v, const std::string& k) { expr = to_double(v, k); },     \
            [](const RunConfig& c) { return fmt(expr); }                                                    \
    }
#define BOOL_FIELD(name, expr)                                                                              \
    Field {                                                                                                 \
        name, [](RunConfig& c, const std::string& v, const std::string& k) { expr = to_bool(v, k); },       \
            [](const RunConfig& c) { return onoff(expr); }                                                  \
    }

const std::vector<std::string>& section_order() {
    static const std::vector<std::string> order = {"schedule", "model", "train", "conditions", "guidance", "filter"};
    return order;
}

const std::map<std::string, std::vector<Field>>& field_table() {
    static const std::map<std::string, std::vector<Field>> table = [] {
        std::map<std::string, std::vector<Field>> t;
        t[""] = {
            SIZE_FIELD("seed", c.seed),
            Field{"output_dir", [](RunConfig& c, const std::string& v, const std::string&) { c.output_dir = v; },
                  [](const RunConfig& c) { return c.output_dir; }},
        };
        t["schedule"] = {
            INT_FIELD("T", c.schedule.T),
            DOUBLE_FIELD("beta_start", c.schedule.beta_start),
            DOUBLE_FIELD("beta_end", c.schedule.beta_end),
        };
        t["model"] = {
            SIZE_FIELD("depth", c.model.depth),
            SIZE_FIELD("model_dim", c.model.model_dim),
            SIZE_FIELD("heads", c.model.heads),
            SIZE_FIELD("patch_t", c.model.patch.t),
            SIZE_FIELD("patch_h", c.model.patch.h),
            SIZE_FIELD("patch_w", c.model.patch.w),
            SIZE_FIELD("mlp_ratio", c.model.mlp_ratio),
            SIZE_FIELD("text_dim", c.model.text_dim),
            SIZE_FIELD("text_tokens", c.model.text_tokens),
            SIZE_FIELD("audio_layer_dim", c.model.audio_layer_dim),
            SIZE_FIELD("face_dim", c.model.face_dim),
            SIZE_FIELD("face_tokens", c.model.face_tokens),
            SIZE_FIELD("latent_frames", c.model.latent_frames),
            SIZE_FIELD("latent_height", c.model.latent_height),
            SIZE_FIELD("latent_width", c.model.latent_width),
            SIZE_FIELD("video_channels", c.model.video_channels),
            SIZE_FIELD("temporal_stride", c.model.temporal_stride),
            SIZE_FIELD("spatial_patch", c.model.spatial_patch),
            Field{"audio_strategy",
                  [](RunConfig& c, const std::string& v, const std::string& k) {
                      c.model.audio_strategy = wrap(k, [&] { return cond::parse_strategy(v); });
                  },
                  [](const RunConfig& c) { return std::string(cond::strategy_name(c.model.audio_strategy)); }},
        };
        t["train"] = {
            INT_FIELD("identity_steps", c.train.identity_steps),
            INT_FIELD("audio_steps", c.train.audio_steps),
            DOUBLE_FIELD("lr", c.train.base.lr),
            SIZE_FIELD("batch", c.train.base.batch),
            DOUBLE_FIELD("drop_prob", c.train.base.drop_prob),
            DOUBLE_FIELD("motion_mask_prob", c.train.base.motion_mask_prob),
            SIZE_FIELD("motion_frames", c.train.base.motion_frames),
            DOUBLE_FIELD("clip_norm", c.train.base.clip_norm),
            Field{"optimizer",
                  [](RunConfig& c, const std::string& v, const std::string& k) {
                      c.train.base.optimizer = wrap(k, [&] { return trainer::parse_optimizer(v); });
                  },
                  [](const RunConfig& c) { return std::string(trainer::optimizer_name(c.train.base.optimizer)); }},
            DOUBLE_FIELD("adam_beta1", c.train.base.adam_beta1),
            DOUBLE_FIELD("adam_beta2", c.train.base.adam_beta2),
            DOUBLE_FIELD("adam_eps", c.train.base.adam_eps),
            SIZE_FIELD("corpus_size", c.train.corpus_size),
            SIZE_FIELD("samples_per_frame", c.train.samples_per_frame),
            SIZE_FIELD("subjects", c.train.subjects),
            SIZE_FIELD("subject_seed", c.train.subject_seed),
            SIZE_FIELD("heldout_size", c.train.heldout_size),
            DOUBLE_FIELD("eval_t_fraction", c.train.eval_t_fraction),
            SIZE_FIELD("eval_draws", c.train.eval_draws),
        };
        t["conditions"] = {
            BOOL_FIELD("audio", c.conditions.audio),
            BOOL_FIELD("text", c.conditions.text),
            Field{"identity",
                  [](RunConfig& c, const std::string& v, const std::string& k) {
                      c.model.identity_mode = wrap(k, [&] { return cond::parse_identity_mode(v); });
                  },
                  [](const RunConfig& c) { return std::string(cond::identity_mode_name(c.model.identity_mode)); }},
        };
        t["guidance"] = {
            DOUBLE_FIELD("lambda_a", c.guidance.scales.lambda_a),
            DOUBLE_FIELD("lambda_t", c.guidance.scales.lambda_t),
            DOUBLE_FIELD("lambda_i", c.guidance.scales.lambda_i),
            INT_FIELD("steps", c.guidance.steps),
            SIZE_FIELD("clips", c.guidance.clips),
        };
        return t;
    }();
    return table;
}

// [filter]: single_speaker=on|off and <metric>.min / <metric>.max.
void set_filter(RunConfig& c, const std::string& key, const std::string& v) {
    const std::string full = "filter." + key;
    if (key == "single_speaker") {
        c.filter.single_speaker = to_bool(v, full);
        return;
    }
    const auto dot = key.rfind('.');
    if (dot == std::string::npos) throw ConfigError("unknown key " + full);
    const std::string bound = key.substr(dot + 1);
    if (bound != "min" && bound != "max") throw ConfigError("unknown key " + full);
    datapipe::Metric m;
    try {
        m = datapipe::parse_metric(key.substr(0, dot));
    } catch (const ConfigError&) {
        throw ConfigError("unknown key " + full);
    }
    auto& t = c.filter.thresholds[m];
    (bound == "min" ? t.min : t.max) = to_double(v, full);
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line, section;
    std::set<std::string> seen_sections, seen_keys;
    std::size_t lineno = 0;
    const auto& table = field_table();
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "filter" && !table.count(section)) throw ConfigError(where + "unknown section [" + section + "]");
            if (section.empty()) throw ConfigError(where + "empty section name");
            if (!seen_sections.insert(section).second) throw ConfigError(where + "duplicate section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string full = section.empty() ? key : section + "." + key;
        if (!seen_keys.insert(full).second) throw ConfigError("duplicate key " + full);
        if (section == "filter") {
            set_filter(c, key, value);
            continue;
        }
        const auto& fields = table.at(section);
        bool found = false;
        for (const auto& f : fields) {
            if (f.key == key) {
                f.set(c, value, full);
                found = true;
                break;
            }
        }
        if (!found) throw ConfigError("unknown key " + full);
    }
    for (const auto& s : section_order())
        if (!seen_sections.count(s)) throw ConfigError("missing section [" + s + "]");
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    const auto& table = field_table();
    for (const auto& f : table.at("")) os << f.key << " = " << f.get(*this) << '\n';
    for (const auto& s : section_order()) {
        os << "\n[" << s << "]\n";
        if (s == "filter") {
            os << "single_speaker = " << onoff(filter.single_speaker) << '\n';
            for (const auto& [m, t] : filter.thresholds) {
                if (t.min) os << datapipe::metric_name(m) << ".min = " << fmt(*t.min) << '\n';
                if (t.max) os << datapipe::metric_name(m) << ".max = " << fmt(*t.max) << '\n';
            }
            continue;
        }
        for (const auto& f : table.at(s)) os << f.key << " = " << f.get(*this) << '\n';
    }
    return os.str();
}

void RunConfig::validate() const {
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (schedule.T < 1) throw ConfigError("schedule.T must be >= 1");
    if (!(schedule.beta_start > 0 && schedule.beta_end < 1 && schedule.beta_start <= schedule.beta_end))
        throw ConfigError("schedule.beta_start/beta_end must satisfy 0 < beta_start <= beta_end < 1");
    model.validate();
    trainer::TrainConfig tc = train.base;
    tc.seed = seed;
    wrap("train", [&] {
        tc.validate();
        return 0;
    });
    if (train.identity_steps < 0) throw ConfigError("train.identity_steps must be >= 0");
    if (train.audio_steps < 0) throw ConfigError("train.audio_steps must be >= 0");
    if (train.corpus_size == 0) throw ConfigError("train.corpus_size must be >= 1");
    if (train.samples_per_frame == 0) throw ConfigError("train.samples_per_frame must be >= 1");
    if (train.subjects == 0) throw ConfigError("train.subjects must be >= 1");
    if (train.heldout_size == 0) throw ConfigError("train.heldout_size must be >= 1");
    if (!(train.eval_t_fraction > 0 && train.eval_t_fraction <= 1))
        throw ConfigError("train.eval_t_fraction must lie in (0,1]");
    if (train.eval_draws == 0) throw ConfigError("train.eval_draws must be >= 1");
    if (train.base.motion_frames > model.latent_frames)
        throw ConfigError("train.motion_frames must not exceed model.latent_frames");
    wrap("guidance", [&] {
        guidance.scales.validate();
        return 0;
    });
    if (guidance.steps < 0 || guidance.steps > schedule.T) throw ConfigError("guidance.steps must lie in [0, T]");
    if (guidance.clips == 0) throw ConfigError("guidance.clips must be >= 1");
    wrap("filter", [&] {
        filter.validate();
        return 0;
    });
}

diffusion::Schedule RunConfig::make_schedule() const {
    return diffusion::make_schedule(schedule.T, schedule.beta_start, schedule.beta_end);
}

trainer::TrainConfig RunConfig::phase_config(trainer::Phase p) const {
    trainer::TrainConfig tc = train.base;
    tc.phase = p;
    tc.seed = seed;
    tc.steps = p == trainer::Phase::identity ? train.identity_steps : train.audio_steps;
    return tc;
}

trainer::SyntheticConfig RunConfig::synthetic() const {
    auto s = trainer::SyntheticConfig::for_model(model);
    s.samples_per_frame = train.samples_per_frame;
    s.subjects = train.subjects;
    s.subject_seed = train.subject_seed;
    return s;
}

trainer::AblationSettings RunConfig::ablation() const {
    trainer::AblationSettings s;
    s.model = model;
    s.T = schedule.T;
    s.beta_start = schedule.beta_start;
    s.beta_end = schedule.beta_end;
    s.train = train.base;
    s.train.seed = seed;
    s.identity_steps = train.identity_steps;
    s.audio_steps = train.audio_steps;
    s.corpus_size = train.corpus_size;
    s.heldout_size = train.heldout_size;
    s.samples_per_frame = train.samples_per_frame;
    s.subjects = train.subjects;
    s.subject_seed = train.subject_seed;
    s.eval_t_fraction = train.eval_t_fraction;
    s.eval_draws = train.eval_draws;
    s.sample_steps = guidance.steps;
    return s;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return a.serialize() == b.serialize(); }

void apply_seed_env(RunConfig& cfg) {
    const char* v = std::getenv("DIT_ANIMA_SEED");
    if (!v) return;
    cfg.seed = to_u64(trim(v), "DIT_ANIMA_SEED");
}

}  // namespace anima
