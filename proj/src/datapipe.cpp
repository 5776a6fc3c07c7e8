#include "anima/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "anima/errors.hpp"

namespace anima::inline ANIMA_NS::datapipe {

const char* source_name(Source s) {
    switch (s) {
        case Source::hdtf: return "hdtf";
        case Source::youtube: return "youtube";
        case Source::movie: return "movie";
        case Source::synthetic: return "synthetic";
    }
    return "?";
}

Source parse_source(const std::string& s) {
    for (auto src : kSources)
        if (s == source_name(src)) return src;
    throw ManifestError("unknown source '" + s + "'");
}

const char* metric_name(Metric m) {
    switch (m) {
        case Metric::duration_s: return "duration_s";
        case Metric::num_speakers: return "num_speakers";
        case Metric::face_ratio: return "face_ratio";
        case Metric::head_rotation_deg: return "head_rotation_deg";
        case Metric::sync_c: return "sync_c";
        case Metric::sync_d: return "sync_d";
        case Metric::camera_motion_score: return "camera_motion_score";
    }
    return "?";
}

Metric parse_metric(const std::string& s) {
    for (auto m : kMetrics)
        if (s == metric_name(m)) return m;
    throw ConfigError("unknown metric '" + s + "'");
}

double metric_field(const ClipRecord& r, Metric m) {
    switch (m) {
        case Metric::duration_s: return r.duration_s;
        case Metric::num_speakers: return r.num_speakers;
        case Metric::face_ratio: return r.face_ratio;
        case Metric::head_rotation_deg: return r.head_rotation_deg;
        case Metric::sync_c: return r.sync_c;
        case Metric::sync_d: return r.sync_d;
        case Metric::camera_motion_score: return r.camera_motion_score;
    }
    return 0;
}

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::single_speaker: return "single_speaker";
        case Stage::motion_filter: return "motion_filter";
        case Stage::post_process: return "post_process";
    }
    return "?";
}

Stage stage_of(Metric m) {
    switch (m) {
        case Metric::num_speakers: return Stage::single_speaker;
        case Metric::head_rotation_deg:
        case Metric::camera_motion_score: return Stage::motion_filter;
        default: return Stage::post_process;
    }
}

void ClipRecord::validate() const {
    auto fail = [&](const std::string& what) { throw ManifestError("clip '" + id + "': " + what); };
    if (id.empty()) throw ManifestError("clip with empty id");
    if (!(duration_s > 0) || !std::isfinite(duration_s)) fail("duration_s must be > 0");
    if (num_speakers < 0) fail("num_speakers must be >= 0");
    if (!(face_ratio >= 0 && face_ratio <= 1)) fail("face_ratio must lie in [0,1]");
    const BBox& b = face_bbox;
    if (!(b.x >= 0 && b.y >= 0 && b.w >= 0 && b.h >= 0)) fail("face bbox must be non-negative");
    for (double v : {b.x, b.y, b.w, b.h, head_rotation_deg, sync_c, sync_d, camera_motion_score})
        if (!std::isfinite(v)) fail("non-finite field");
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) out.push_back(cur);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double(const std::string& s, const std::string& field, std::size_t line) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size())
        throw ManifestError("line " + std::to_string(line) + ": bad value for " + field + ": '" + s + "'");
    return v;
}

std::string trim_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

std::vector<ClipRecord> read_manifest(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ManifestError("manifest: missing header line");
    if (trim_cr(line) != kManifestHeader) throw ManifestError("manifest: header must be '" + std::string(kManifestHeader) + "'");
    const auto names = split_csv(kManifestHeader);
    std::vector<ClipRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim_cr(line);
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != names.size())
            throw ManifestError("line " + std::to_string(lineno) + ": expected " + std::to_string(names.size()) +
                                " fields, got " + std::to_string(f.size()));
        auto num = [&](std::size_t i) { return parse_double(f[i], names[i], lineno); };
        ClipRecord r;
        r.id = f[0];
        r.duration_s = num(1);
        const double speakers = num(2);
        if (speakers != std::floor(speakers))
            throw ManifestError("line " + std::to_string(lineno) + ": num_speakers must be an integer");
        r.num_speakers = static_cast<int>(speakers);
        r.face_bbox = {num(3), num(4), num(5), num(6)};
        r.face_ratio = num(7);
        r.head_rotation_deg = num(8);
        r.sync_c = num(9);
        r.sync_d = num(10);
        r.camera_motion_score = num(11);
        r.source = parse_source(f[12]);
        r.validate();
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<ClipRecord> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest '" + path + "'");
    return read_manifest(in);
}

std::string format_manifest(const std::vector<ClipRecord>& clips) {
    std::ostringstream os;
    os << std::setprecision(17) << kManifestHeader << '\n';
    for (const auto& r : clips) {
        os << r.id << ',' << r.duration_s << ',' << r.num_speakers << ',' << r.face_bbox.x << ',' << r.face_bbox.y
           << ',' << r.face_bbox.w << ',' << r.face_bbox.h << ',' << r.face_ratio << ',' << r.head_rotation_deg << ','
           << r.sync_c << ',' << r.sync_d << ',' << r.camera_motion_score << ',' << source_name(r.source) << '\n';
    }
    return os.str();
}

ScorerSet::ScorerSet() {
    for (auto m : kMetrics) scorers_[m] = std::make_shared<ManifestScorer>(m);
}

void ScorerSet::set(Metric m, std::shared_ptr<const Scorer> s) {
    if (!s) throw ConfigError(std::string("null scorer for ") + metric_name(m));
    scorers_[m] = std::move(s);
}

double ScorerSet::score(const ClipRecord& clip, Metric m) const { return scorers_.at(m)->score(clip); }

void FilterPolicy::validate() const {
    for (const auto& [m, t] : thresholds) {
        const std::string name = std::string("filter.") + metric_name(m);
        if (t.min && !std::isfinite(*t.min)) throw ConfigError(name + ".min must be finite");
        if (t.max && !std::isfinite(*t.max)) throw ConfigError(name + ".max must be finite");
        if (t.min && t.max && *t.min > *t.max) throw ConfigError(name + ": min exceeds max");
    }
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

// First failing predicate of `stage`, or nullopt.
std::optional<std::string> failing(const ClipRecord& c, Stage stage, const FilterPolicy& p, const ScorerSet& sc) {
    if (stage == Stage::single_speaker && p.single_speaker) {
        const double n = sc.score(c, Metric::num_speakers);
        if (n != 1.0) return "num_speakers == 1 (got " + fmt(n) + ")";
    }
    for (const auto& [m, t] : p.thresholds) {
        if (stage_of(m) != stage) continue;
        const double v = sc.score(c, m);
        if (t.min && !(v >= *t.min)) return std::string(metric_name(m)) + " >= " + fmt(*t.min) + " (got " + fmt(v) + ")";
        if (t.max && !(v <= *t.max)) return std::string(metric_name(m)) + " <= " + fmt(*t.max) + " (got " + fmt(v) + ")";
    }
    return std::nullopt;
}

}  // namespace

PipelineResult run_pipeline(const std::vector<ClipRecord>& manifest, const FilterPolicy& policy,
                            const ScorerSet& scorers) {
    policy.validate();
    std::vector<const ClipRecord*> order;
    order.reserve(manifest.size());
    std::set<std::string> seen;
    for (const auto& c : manifest) {
        if (!seen.insert(c.id).second) throw ManifestError("duplicate clip id '" + c.id + "'");
        order.push_back(&c);
    }
    std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return a->id < b->id; });

    PipelineResult out;
    for (const ClipRecord* c : order) {
        bool kept = true;
        for (Stage st : kStages) {
            if (auto why = failing(*c, st, policy, scorers)) {
                out.rejected.push_back({*c, st, *why});
                kept = false;
                break;
            }
        }
        if (kept) out.kept.push_back(*c);
    }
    return out;
}

std::string format_rejections(const std::vector<Rejection>& rejected) {
    std::ostringstream os;
    os << "id,stage,reason\n";
    for (const auto& r : rejected) os << r.clip.id << ',' << stage_name(r.stage) << ',' << r.reason << '\n';
    return os.str();
}

namespace {

// Offset in [0, frame - len] whose window centre is nearest `centre`; ties go low.
long place(double centre, long len, long frame) {
    const double ideal = centre - static_cast<double>(len) / 2.0;
    long lo = static_cast<long>(std::ceil(ideal - 0.5));
    return std::clamp(lo, 0L, frame - len);
}

}  // namespace

CropRect crop_3_2(const ClipRecord& record, long frame_w, long frame_h, CropOrientation orientation) {
    const BBox& b = record.face_bbox;
    if (frame_w <= 0 || frame_h <= 0) throw DegenerateInputError("crop_3_2: frame dimensions must be positive");
    if (!(b.x >= 0 && b.y >= 0 && b.w >= 0 && b.h >= 0 && b.x + b.w <= frame_w && b.y + b.h <= frame_h))
        throw ContractError("crop_3_2: face bbox of '" + record.id + "' lies outside the frame");
    const long rw = orientation == CropOrientation::landscape ? 3 : 2;
    const long rh = orientation == CropOrientation::landscape ? 2 : 3;
    const long k = std::min(frame_w / rw, frame_h / rh);
    if (k < 1) {
        throw DegenerateInputError("crop_3_2: frame " + std::to_string(frame_w) + "x" + std::to_string(frame_h) +
                                   " is smaller than the minimal crop");
    }
    CropRect r;
    r.w = rw * k;
    r.h = rh * k;
    r.x = place(b.x + b.w / 2.0, r.w, frame_w);
    r.y = place(b.y + b.h / 2.0, r.h, frame_h);
    return r;
}

std::size_t Histogram::total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
}

std::size_t bin_index(const std::vector<double>& edges, double v) {
    const std::size_t bins = edges.size() - 1;
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    if (it == edges.begin()) return 0;
    const auto i = static_cast<std::size_t>(it - edges.begin()) - 1;
    return std::min(i, bins - 1);
}

BinSpec uniform_bins(const std::vector<ClipRecord>& clips, std::size_t count) {
    if (count == 0) throw ConfigError("bin count must be >= 1");
    BinSpec out;
    for (auto m : kMetrics) {
        double lo = 0, hi = 1;
        if (!clips.empty()) {
            lo = hi = metric_field(clips.front(), m);
            for (const auto& c : clips) {
                lo = std::min(lo, metric_field(c, m));
                hi = std::max(hi, metric_field(c, m));
            }
            if (hi <= lo) hi = lo + 1;
        }
        std::vector<double> e(count + 1);
        for (std::size_t i = 0; i <= count; ++i)
            e[i] = i == count ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count);
        out[m] = std::move(e);
    }
    return out;
}

CorpusStats corpus_stats(const std::vector<ClipRecord>& kept, const BinSpec& bins) {
    CorpusStats s;
    s.clips = kept.size();
    for (const auto& [m, edges] : bins) {
        if (edges.size() < 2) throw ConfigError(std::string("bins for ") + metric_name(m) + " need at least 2 edges");
        for (std::size_t i = 1; i < edges.size(); ++i)
            if (!(edges[i] > edges[i - 1]))
                throw ConfigError(std::string("bins for ") + metric_name(m) + " must be strictly increasing");
        Histogram h;
        h.edges = edges;
        h.counts.assign(edges.size() - 1, 0);
        for (const auto& c : kept) ++h.counts[bin_index(edges, metric_field(c, m))];
        s.histograms[m] = std::move(h);
    }
    for (auto src : kSources) s.hours[src] = 0;
    double total_s = 0;
    std::map<Source, double> secs;
    for (const auto& c : kept) {
        secs[c.source] += c.duration_s;
        total_s += c.duration_s;
    }
    for (const auto& [src, v] : secs) s.hours[src] = v / 3600.0;
    s.total_hours = total_s / 3600.0;
    return s;
}

std::string format_report(const CorpusStats& s) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << "clips " << s.clips << "\n";
    os << "hours total " << s.total_hours << "\n";
    for (const auto& [src, h] : s.hours) os << "hours " << source_name(src) << ' ' << h << "\n";
    for (const auto& [m, h] : s.histograms) {
        os << metric_name(m) << ":";
        for (auto c : h.counts) os << ' ' << c;
        os << "\n";
    }
    return os.str();
}

std::string format_histograms(const CorpusStats& s) {
    std::ostringstream os;
    os << std::setprecision(10) << "metric,bin_lo,bin_hi,count\n";
    for (const auto& [m, h] : s.histograms)
        for (std::size_t i = 0; i < h.counts.size(); ++i)
            os << metric_name(m) << ',' << h.edges[i] << ',' << h.edges[i + 1] << ',' << h.counts[i] << '\n';
    return os.str();
}

}  // namespace anima::datapipe
