#pragma once

#include "anima/scalar.hpp"

#include <array>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace anima::inline ANIMA_NS::datapipe {

enum class Source { hdtf, youtube, movie, synthetic };
const char* source_name(Source s);
Source parse_source(const std::string& s);
inline constexpr std::array<Source, 4> kSources = {Source::hdtf, Source::youtube, Source::movie, Source::synthetic};

struct BBox {
    double x = 0, y = 0, w = 0, h = 0;
};

struct ClipRecord {
    std::string id;
    double duration_s = 0;
    int num_speakers = 1;
    BBox face_bbox;
    double face_ratio = 0;  // face height / video height
    double head_rotation_deg = 0;
    double sync_c = 0;
    double sync_d = 0;
    double camera_motion_score = 0;
    Source source = Source::synthetic;

    /// Throws ManifestError naming the field.
    void validate() const;
};

/// Scalar fields that thresholds and histograms operate on.
enum class Metric { duration_s, num_speakers, face_ratio, head_rotation_deg, sync_c, sync_d, camera_motion_score };
inline constexpr std::array<Metric, 7> kMetrics = {Metric::duration_s,        Metric::num_speakers, Metric::face_ratio,
                                                   Metric::head_rotation_deg, Metric::sync_c,       Metric::sync_d,
                                                   Metric::camera_motion_score};
const char* metric_name(Metric m);
Metric parse_metric(const std::string& s);
double metric_field(const ClipRecord& r, Metric m);

enum class Stage { single_speaker = 1, motion_filter = 2, post_process = 3 };
inline constexpr std::array<Stage, 3> kStages = {Stage::single_speaker, Stage::motion_filter, Stage::post_process};
const char* stage_name(Stage s);
/// num_speakers -> single_speaker; head rotation and camera motion -> motion_filter; the rest -> post_process.
Stage stage_of(Metric m);

/// Manifest CSV: header line, then one record per line in ClipRecord field order.
inline constexpr const char* kManifestHeader =
    "id,duration_s,num_speakers,bbox_x,bbox_y,bbox_w,bbox_h,face_ratio,head_rotation_deg,sync_c,sync_d,"
    "camera_motion_score,source";

std::vector<ClipRecord> read_manifest(std::istream& in);
std::vector<ClipRecord> load_manifest(const std::string& path);
std::string format_manifest(const std::vector<ClipRecord>& clips);

/// Produces one metric score for a clip. Real scorers (diarization, tracking,
/// SyncNet) would sit behind this; the shipped ones read the manifest field.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual double score(const ClipRecord& clip) const = 0;
};

class ManifestScorer : public Scorer {
public:
    explicit ManifestScorer(Metric m) : metric_(m) {}
    double score(const ClipRecord& clip) const override { return metric_field(clip, metric_); }

private:
    Metric metric_;
};

/// One scorer per metric; defaults to manifest fields.
class ScorerSet {
public:
    ScorerSet();
    void set(Metric m, std::shared_ptr<const Scorer> s);
    double score(const ClipRecord& clip, Metric m) const;

private:
    std::map<Metric, std::shared_ptr<const Scorer>> scorers_;
};

struct Threshold {
    std::optional<double> min;
    std::optional<double> max;
    bool admits(double v) const { return (!min || v >= *min) && (!max || v <= *max); }
};

struct FilterPolicy {
    /// Stage 1 additionally requires exactly one speaker when on.
    bool single_speaker = false;
    std::map<Metric, Threshold> thresholds;

    bool empty() const { return !single_speaker && thresholds.empty(); }
    void validate() const;
};

struct Rejection {
    ClipRecord clip;
    Stage stage = Stage::single_speaker;
    std::string reason;  // the first failing predicate
};

struct PipelineResult {
    std::vector<ClipRecord> kept;
    std::vector<Rejection> rejected;
};

/// Stages run in order; a clip is rejected at the first failing predicate.
/// Both outputs are sorted by id. Duplicate ids throw ManifestError.
PipelineResult run_pipeline(const std::vector<ClipRecord>& manifest, const FilterPolicy& policy,
                            const ScorerSet& scorers = ScorerSet());

std::string format_rejections(const std::vector<Rejection>& rejected);

enum class CropOrientation { landscape, portrait };

struct CropRect {
    long x = 0, y = 0, w = 0, h = 0;
    bool operator==(const CropRect&) const = default;
};

/// Largest 3:2 rectangle (w:h = 3:2 landscape, 2:3 portrait) centred on the
/// face box centre as closely as the frame allows. Ties go to the smaller
/// coordinate.
CropRect crop_3_2(const ClipRecord& record, long frame_w, long frame_h,
                  CropOrientation orientation = CropOrientation::landscape);

struct Histogram {
    std::vector<double> edges;  // ascending, counts.size() + 1 entries
    std::vector<std::size_t> counts;

    std::size_t total() const;
};

/// Bin i holds edges[i] <= v < edges[i+1]; the last bin also holds its right
/// edge. Values outside the edges go to the nearest end bin, so every clip is
/// counted once.
std::size_t bin_index(const std::vector<double>& edges, double v);

struct CorpusStats {
    std::size_t clips = 0;
    std::map<Metric, Histogram> histograms;
    std::map<Source, double> hours;
    double total_hours = 0;
};

using BinSpec = std::map<Metric, std::vector<double>>;

/// `count` equal-width bins spanning each metric's range over `clips`.
BinSpec uniform_bins(const std::vector<ClipRecord>& clips, std::size_t count);

CorpusStats corpus_stats(const std::vector<ClipRecord>& kept, const BinSpec& bins);

/// Plain-text summary.
std::string format_report(const CorpusStats& s);
/// CSV: metric,bin_lo,bin_hi,count
std::string format_histograms(const CorpusStats& s);

}  // namespace anima::datapipe
