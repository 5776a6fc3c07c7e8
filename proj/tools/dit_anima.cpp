// dit_anima: train, sample, extrapolate, ablate, curate, stats, metrics, gradcheck.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "anima/ablation.hpp"
#include "anima/config.hpp"
#include "anima/datapipe.hpp"
#include "anima/errors.hpp"
#include "anima/evalmetrics.hpp"
#include "anima/gradcheck.hpp"
#include "anima/guidance.hpp"
#include "anima/ndt_io.hpp"
#include "anima/trainer.hpp"

namespace fs = std::filesystem;
using namespace anima;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw IoError("write failed: " + path.string());
}

void save_ndt(const NdTensor& t, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    ndt::save(t, path);
}

fs::path sibling(const fs::path& p, const std::string& suffix) {
    fs::path out = p;
    out.replace_filename(p.stem().string() + suffix + p.extension().string());
    return out;
}

RunConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_flag) {
    RunConfig cfg = RunConfig::load(path);
    apply_seed_env(cfg);
    if (seed_flag) cfg.seed = *seed_flag;
    return cfg;
}

int cmd_train(const std::string& config, const std::string& out_flag, std::optional<std::uint64_t> seed) {
    const RunConfig cfg = load_config(config, seed);
    const fs::path out = out_flag.empty() ? fs::path(cfg.output_dir) : fs::path(out_flag);
    const auto sched = cfg.make_schedule();

    auto m = model::DitModel::init(cfg.model, Rng(cfg.seed).split("init").next_u64());
    const auto raw = trainer::gen_synthetic(cfg.train.corpus_size, cfg.synthetic(), Rng(cfg.seed).split("corpus").next_u64());
    const auto corpus = trainer::prepare_all(m, raw, cfg.train.samples_per_frame);

    std::vector<trainer::LossRecord> trace;
    for (auto phase : {trainer::Phase::identity, trainer::Phase::audio}) {
        auto part = trainer::run_phase(m, corpus, cfg.phase_config(phase), sched);
        trace.insert(trace.end(), part.begin(), part.end());
        std::cerr << "phase " << trainer::phase_name(phase) << ": " << part.size() << " steps";
        if (!part.empty()) std::cerr << ", final loss " << part.back().loss;
        std::cerr << "\n";
    }
    fs::create_directories(out);
    m.save(out / "checkpoint");
    write_text(out / "loss_trace.csv", trainer::format_trace(trace));
    write_text(out / "config.ini", cfg.serialize());
    std::cout << "checkpoint " << (out / "checkpoint").string() << "\n";
    return kExitOk;
}

struct SampleFlags {
    std::string config, checkpoint, out;
    std::optional<double> lambda_a, lambda_t, lambda_i;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> clips;
};

// Conditions drawn from one synthetic clip of the configured subjects.
guidance::ConditionSet make_conditions(const RunConfig& cfg, const model::DitModel& m, std::size_t clips) {
    auto geom = cfg.synthetic();
    geom.clips = clips + 1;
    const auto raw = trainer::gen_synthetic(1, geom, Rng(cfg.seed).split("condition").next_u64());
    const auto& s = raw.front();
    guidance::ConditionSet c;
    if (cfg.conditions.text) c.text = s.text.tokens;
    if (cfg.conditions.audio) c.audio = trainer::aligned_audio(m, s.audio_signal, cfg.train.samples_per_frame, 1, clips);
    if (cfg.model.identity_mode != cond::IdentityMode::none) {
        c.ref_latent = m.codec().encode(s.ref_image).data;
        c.face_embed = cond::face_embedding(s.ref_image, m.face_encoder());
    }
    return c;
}

int cmd_generate(const SampleFlags& f, bool extrapolating) {
    const RunConfig cfg = load_config(f.config, f.seed);
    guidance::GuidanceScales g = cfg.guidance.scales;
    if (f.lambda_a) g.lambda_a = *f.lambda_a;
    if (f.lambda_t) g.lambda_t = *f.lambda_t;
    if (f.lambda_i) g.lambda_i = *f.lambda_i;
    g.validate();
    const std::size_t clips = extrapolating ? f.clips.value_or(cfg.guidance.clips) : 1;
    if (clips == 0) throw ConfigError("--clips must be >= 1");

    const fs::path ckpt = f.checkpoint.empty() ? fs::path(cfg.output_dir) / "checkpoint" : fs::path(f.checkpoint);
    if (!fs::exists(ckpt / "manifest.txt")) throw IoError("no checkpoint at " + ckpt.string() + " (run train first)");
    const auto m = model::DitModel::load(ckpt, cfg.model);
    const auto sched = cfg.make_schedule();
    const auto c = make_conditions(cfg, m, clips);
    guidance::SampleOptions opt;
    opt.steps = cfg.guidance.steps;
    opt.motion_frames = cfg.train.base.motion_frames;

    const auto ex = guidance::extrapolate(m, c, g, sched, clips, cfg.seed, opt);
    std::vector<NdTensor> latents, videos;
    const auto codec = m.codec();
    for (const auto& clip : ex.clips) {
        latents.push_back(clip.data);
        videos.push_back(codec.decode(clip));
    }
    const NdTensor latent = kernels::concat(latents, 0);
    const NdTensor video = kernels::concat(videos, 0);
    const std::string name = extrapolating ? "extrapolate.ndt" : "sample.ndt";
    const fs::path out = f.out.empty() ? fs::path(cfg.output_dir) / name : fs::path(f.out);
    save_ndt(latent, out);
    save_ndt(video, sibling(out, "_video"));
    std::cout << out.string() << " latent " << latent.shape_string() << " video " << video.shape_string() << "\n";
    return kExitOk;
}

int cmd_ablate(const std::string& config, const std::string& axis, const std::string& out,
               std::optional<std::uint64_t> seed) {
    const RunConfig cfg = load_config(config, seed);
    const auto a = trainer::parse_axis(axis);
    const auto table = trainer::run_ablation(cfg.ablation(), a, cfg.seed);
    const std::string text = table.format();
    std::cout << text;
    if (!out.empty()) write_text(out, text);
    return kExitOk;
}

int cmd_curate(const std::string& config, const std::string& manifest, const std::string& out_flag, long frame_w,
               long frame_h, bool portrait) {
    const RunConfig cfg = RunConfig::load(config);
    const auto clips = datapipe::load_manifest(manifest);
    const auto res = datapipe::run_pipeline(clips, cfg.filter);
    const fs::path out = out_flag.empty() ? fs::path(cfg.output_dir) / "curate" : fs::path(out_flag);
    write_text(out / "kept.csv", datapipe::format_manifest(res.kept));
    write_text(out / "rejected.csv", datapipe::format_rejections(res.rejected));
    if (frame_w > 0 && frame_h > 0) {
        std::string crops = "id,x,y,w,h\n";
        const auto orient = portrait ? datapipe::CropOrientation::portrait : datapipe::CropOrientation::landscape;
        for (const auto& r : res.kept) {
            const auto c = datapipe::crop_3_2(r, frame_w, frame_h, orient);
            crops += r.id + "," + std::to_string(c.x) + "," + std::to_string(c.y) + "," + std::to_string(c.w) + "," +
                     std::to_string(c.h) + "\n";
        }
        write_text(out / "crops.csv", crops);
    }
    std::cout << "kept " << res.kept.size() << " rejected " << res.rejected.size() << "\n";
    return kExitOk;
}

int cmd_stats(const std::string& manifest, std::size_t bins, const std::string& out) {
    const auto clips = datapipe::load_manifest(manifest);
    const auto stats = datapipe::corpus_stats(clips, datapipe::uniform_bins(clips, bins));
    const std::string report = datapipe::format_report(stats);
    std::cout << report;
    if (!out.empty()) {
        write_text(fs::path(out) / "report.txt", report);
        write_text(fs::path(out) / "histograms.csv", datapipe::format_histograms(stats));
    }
    return kExitOk;
}

metrics::GaussianStats stats_of(const std::string& path) {
    NdTensor t = ndt::load(path);
    if (t.rank() > 2) t = metrics::RandomProjectionExtractor(16, 0).extract(t);
    return metrics::fit_gaussian(t);
}

int cmd_gradcheck(const std::string& precision, std::uint64_t seed) {
    GradcheckOptions opt;
    opt.seed = seed;
    std::vector<GradcheckReport> reports;
    if (precision == "f64") {
        reports = gradcheck_suite_f64(seed, opt);
    } else if (precision == "f32") {
        reports = gradcheck_suite(seed, opt);
    } else {
        throw ConfigError("--precision must be f32 or f64");
    }
    bool ok = true;
    for (const auto& r : reports) {
        std::printf("%-12s %s %zu/%zu max_rel %.3e\n", r.name.c_str(), r.ok() ? "ok  " : "FAIL", r.passed, r.coords,
                    r.max_rel);
        ok = ok && r.ok();
    }
    return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-driven talking-head diffusion transformer toolkit"};
    app.require_subcommand(1);

    std::string config, out, checkpoint, axis, manifest, precision = "f64", a_path, b_path, flows_path;
    std::optional<std::uint64_t> seed;
    SampleFlags sf;
    std::size_t bins = 10;
    long frame_w = 0, frame_h = 0;
    bool portrait = false;
    std::uint64_t gc_seed = 1;

    auto* train = app.add_subcommand("train", "Train both phases on the synthetic corpus");
    train->add_option("--config", config, "Run config")->required();
    train->add_option("--out", out, "Output directory (default: output_dir)");
    train->add_option("--seed", seed, "Override seed");

    auto add_sample_flags = [&](CLI::App* c) {
        c->add_option("--config", sf.config, "Run config")->required();
        c->add_option("--checkpoint", sf.checkpoint, "Checkpoint directory (default: output_dir/checkpoint)");
        c->add_option("--lambda-a", sf.lambda_a, "Audio guidance scale");
        c->add_option("--lambda-t", sf.lambda_t, "Text guidance scale");
        c->add_option("--lambda-i", sf.lambda_i, "Identity guidance scale");
        c->add_option("--seed", sf.seed, "Override seed");
        c->add_option("--out", sf.out, "Output NDT1 path for latents; decoded video goes to <stem>_video.ndt");
    };
    auto* sample = app.add_subcommand("sample", "Sample one guided clip");
    add_sample_flags(sample);
    auto* extra = app.add_subcommand("extrapolate", "Sample a chain of clips conditioned on motion frames");
    add_sample_flags(extra);
    extra->add_option("--clips", sf.clips, "Number of clips (default: guidance.clips)");

    auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep");
    ablate->add_option("--config", config, "Run config")->required();
    ablate->add_option("--axis", axis, "audio_injection | identity_injection | motion_frames | cfg")->required();
    ablate->add_option("--out", out, "Write the table to this file");
    ablate->add_option("--seed", seed, "Override seed");

    auto* curate = app.add_subcommand("curate", "Filter a clip manifest");
    curate->add_option("--config", config, "Run config ([filter] section)")->required();
    curate->add_option("--manifest", manifest, "Manifest CSV")->required();
    curate->add_option("--out", out, "Output directory (default: output_dir/curate)");
    curate->add_option("--frame-w", frame_w, "Source frame width; with --frame-h writes crops.csv");
    curate->add_option("--frame-h", frame_h, "Source frame height");
    curate->add_flag("--portrait", portrait, "Crop 2:3 instead of 3:2");

    auto* stats = app.add_subcommand("stats", "Corpus statistics of a manifest");
    stats->add_option("--manifest", manifest, "Manifest CSV")->required();
    stats->add_option("--bins", bins, "Histogram bins per metric");
    stats->add_option("--out", out, "Directory for report.txt and histograms.csv");

    auto* metrics_cmd = app.add_subcommand("metrics", "Evaluation metrics");
    metrics_cmd->require_subcommand(1);
    auto* frechet = metrics_cmd->add_subcommand("frechet", "Frechet distance between two feature dumps");
    frechet->add_option("--a", a_path, "NDT1 features [n x d] or clips [n x ...]")->required();
    frechet->add_option("--b", b_path, "NDT1 features [n x d] or clips [n x ...]")->required();
    auto* dyndeg = metrics_cmd->add_subcommand("dyndeg", "Dynamic degree of flow fields");
    dyndeg->add_option("--flows", flows_path, "NDT1 flows [pairs x H x W x 2]")->required();

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    gc->add_option("--precision", precision, "f64 (default) or f32");
    gc->add_option("--seed", gc_seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train) return cmd_train(config, out, seed);
        if (*sample) return cmd_generate(sf, false);
        if (*extra) return cmd_generate(sf, true);
        if (*ablate) return cmd_ablate(config, axis, out, seed);
        if (*curate) return cmd_curate(config, manifest, out, frame_w, frame_h, portrait);
        if (*stats) return cmd_stats(manifest, bins, out);
        if (*frechet) {
            std::printf("%.10g\n", metrics::frechet_distance(stats_of(a_path), stats_of(b_path)));
            return kExitOk;
        }
        if (*dyndeg) {
            std::printf("%.10g\n", metrics::dynamic_degree(metrics::flows_from_tensor(ndt::load(flows_path))));
            return kExitOk;
        }
        if (*gc) return cmd_gradcheck(precision, gc_seed);
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ManifestError& e) {
        std::cerr << "manifest error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::logic_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
