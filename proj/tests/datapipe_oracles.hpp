#pragma once

// Random manifests and linear-scan references for the curation pipeline.

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "anima/datapipe.hpp"

namespace dpo {

namespace dp = anima::datapipe;

inline std::vector<dp::ClipRecord> random_clips(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<dp::ClipRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        dp::ClipRecord c;
        c.id = "clip" + std::to_string(100000 + (i * 7919) % 1000003);
        c.duration_s = 0.5 + 20 * u(g);
        c.num_speakers = 1 + static_cast<int>(u(g) * u(g) * 3);
        c.face_bbox = {100 + 200 * u(g), 50 + 100 * u(g), 40 + 80 * u(g), 40 + 80 * u(g)};
        c.face_ratio = u(g);
        c.head_rotation_deg = 60 * u(g);
        c.sync_c = 10 * u(g);
        c.sync_d = 4 + 8 * u(g);
        c.camera_motion_score = u(g);
        c.source = dp::kSources[static_cast<std::size_t>(u(g) * 4) % 4];
        out.push_back(c);
    }
    return out;
}

inline double field(const dp::ClipRecord& c, const std::string& name) {
    if (name == "duration_s") return c.duration_s;
    if (name == "num_speakers") return c.num_speakers;
    if (name == "face_ratio") return c.face_ratio;
    if (name == "head_rotation_deg") return c.head_rotation_deg;
    if (name == "sync_c") return c.sync_c;
    if (name == "sync_d") return c.sync_d;
    return c.camera_motion_score;
}

/// Stage (1-3) at which a clip is rejected, or 0 when it is kept.
inline int reject_stage(const dp::ClipRecord& c, const dp::FilterPolicy& p) {
    static const std::map<std::string, int> stage = {
        {"num_speakers", 1},      {"head_rotation_deg", 2}, {"camera_motion_score", 2}, {"duration_s", 3},
        {"face_ratio", 3},        {"sync_c", 3},            {"sync_d", 3}};
    for (int s = 1; s <= 3; ++s) {
        if (s == 1 && p.single_speaker && c.num_speakers != 1) return 1;
        for (const auto& [m, t] : p.thresholds) {
            const std::string name = dp::metric_name(m);
            if (stage.at(name) != s) continue;
            const double v = field(c, name);
            if ((t.min && v < *t.min) || (t.max && v > *t.max)) return s;
        }
    }
    return 0;
}

/// Exhaustive search over every 3:2 rectangle inside the frame: maximal
/// area, then centre closest to the face centre per axis, then smaller x, y.
inline dp::CropRect crop_bruteforce(const dp::ClipRecord& r, long W, long H, bool portrait) {
    const double cx = r.face_bbox.x + r.face_bbox.w / 2, cy = r.face_bbox.y + r.face_bbox.h / 2;
    const long rw = portrait ? 2 : 3, rh = portrait ? 3 : 2;
    long best_k = 0;
    for (long k = 1; rw * k <= W && rh * k <= H; ++k) best_k = k;
    if (best_k == 0) return {};
    const long w = rw * best_k, h = rh * best_k;
    auto place = [](long len, long frame, double centre) {
        long best = 0;
        double best_d = 1e300;
        for (long x = 0; x + len <= frame; ++x) {
            const double d = std::abs(x + len / 2.0 - centre);
            if (d < best_d) {
                best_d = d;
                best = x;
            }
        }
        return best;
    };
    return {place(w, W, cx), place(h, H, cy), w, h};
}

/// Counting reference: bin i holds e_i <= v < e_{i+1}, the last bin is
/// closed, out-of-range values land in the end bins.
inline std::vector<std::size_t> count_bins(const std::vector<double>& values, const std::vector<double>& edges) {
    std::vector<std::size_t> counts(edges.size() - 1, 0);
    for (double v : values) {
        std::size_t bin = 0;
        if (v >= edges.back()) {
            bin = counts.size() - 1;
        } else {
            for (std::size_t i = 0; i + 1 < edges.size(); ++i)
                if (v >= edges[i] && v < edges[i + 1]) bin = i;
        }
        ++counts[bin];
    }
    return counts;
}

inline dp::FilterPolicy desk_policy() {
    dp::FilterPolicy p;
    p.single_speaker = true;
    p.thresholds[dp::Metric::duration_s].min = 2;
    p.thresholds[dp::Metric::head_rotation_deg].max = 30;
    p.thresholds[dp::Metric::camera_motion_score].max = 0.5;
    p.thresholds[dp::Metric::face_ratio].min = 0.2;
    p.thresholds[dp::Metric::sync_c].min = 3;
    p.thresholds[dp::Metric::sync_d].max = 9;
    return p;
}

}  // namespace dpo
