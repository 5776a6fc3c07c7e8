// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "anima/ablation.hpp"
#include "anima/config.hpp"
#include "anima/evalmetrics.hpp"
#include "anima/gradcheck.hpp"
#include "anima/guidance.hpp"
#include "anima/rng.hpp"
#include "datapipe_oracles.hpp"
#include "test_util.hpp"

using namespace anima;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = ANIMA_SOURCE_DIR;
const std::string kBin = DIT_ANIMA_BIN;

// Pinned tolerances.
constexpr double kGradRelTol = 1e-3;
constexpr double kGradStep = 1e-3;
constexpr double kGradMinFraction = 0.95;
constexpr double kGradBudgetS = 60.0;
constexpr double kRoundTripTol = 1e-5;
constexpr double kClosedLoopTol = 1e-4;
constexpr double kTerminalSignal = 0.05;
constexpr double kFrechetOracleTol = 1e-6;
constexpr double kFrechetAnalyticTol = 1e-8;
constexpr double kAblationBudgetS = 1800.0;
constexpr int kAblationSeeds = 5;
constexpr int kAblationMinWins = 4;
constexpr int kFrozenSteps = 100;
constexpr int kDraws = 10000;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

// 1 ------------------------------------------------------------------------
Outcome gradients() {
    GradcheckOptions opt;
    opt.rel_tol = kGradRelTol;
    opt.step = kGradStep;
    opt.min_pass_fraction = kGradMinFraction;
    const auto t0 = std::chrono::steady_clock::now();
    const auto reports = gradcheck_suite_f64(1, opt);
    const double secs = seconds_since(t0);
    bool ok = !reports.empty() && secs < kGradBudgetS;
    std::size_t coords = 0, passed = 0;
    std::string failing;
    bool has_block = false;
    for (const auto& r : reports) {
        coords += r.coords;
        passed += r.passed;
        if (!r.ok(kGradMinFraction)) {
            ok = false;
            failing += " " + r.name;
        }
        if (r.name.find("block") != std::string::npos) has_block = true;
    }
    ok = ok && has_block;
    std::ostringstream os;
    os << reports.size() << " cases, " << passed << "/" << coords << " coords, " << fmt("%.1f", secs) << " s";
    if (!failing.empty()) os << ", failing:" << failing;
    return {ok, os.str()};
}

// 2 ------------------------------------------------------------------------
Outcome diffusion_algebra() {
    using namespace diffusion;
    const auto s = make_schedule(1000, 1e-4, 0.02);
    Rng rng(42);
    double worst_rt = 0;
    for (int c = 0; c < 100; ++c) {
        const int t = static_cast<int>(rng.uniform_int(1, s.T));
        const auto z0 = NdTensor::randn({2, 3, 4}, rng), eps = NdTensor::randn({2, 3, 4}, rng);
        const auto d = v_to_x0_eps(q_sample({z0, eps}, t, s), v_target({z0, eps}, t, s), t, s);
        worst_rt = std::max({worst_rt, testutil::max_abs_diff(d.x0_hat, z0), testutil::max_abs_diff(d.eps_hat, eps)});
    }
    const auto z0 = NdTensor::randn({3, 4, 4}, rng), eps = NdTensor::randn({3, 4, 4}, rng);
    double worst_loop = 0;
    for (int count : {0, 50}) {
        const auto steps = sampling_steps(s, count);
        NdTensor z = q_sample({z0, eps}, steps.front(), s);
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const int t = steps[i];
            const double ab = s.alpha_bar_at(t);
            NdTensor e(z.dims());
            for (std::size_t j = 0; j < z.size(); ++j)
                e[j] = static_cast<Scalar>((z[j] - std::sqrt(ab) * z0[j]) / std::sqrt(1 - ab));
            z = sampler_step(z, v_target({z0, e}, t, s), t, i + 1 < steps.size() ? steps[i + 1] : 0, s);
        }
        worst_loop = std::max(worst_loop, testutil::max_abs_diff(z, z0));
    }
    const double terminal = std::sqrt(s.alpha_bar_at(s.T));
    return {worst_rt <= kRoundTripTol && worst_loop <= kClosedLoopTol && terminal < kTerminalSignal,
            "round-trip " + fmt("%.2e", worst_rt) + ", closed loop " + fmt("%.2e", worst_loop) + ", sqrt(ab_T) " +
                fmt("%.4f", terminal)};
}

// 3 ------------------------------------------------------------------------
Outcome cfg_algebra() {
    using namespace guidance;
    const BranchOutputs b{testutil::random({3, 4, 5}, 1), testutil::random({3, 4, 5}, 2),
                          testutil::random({3, 4, 5}, 3), testutil::random({3, 4, 5}, 4)};
    const bool full = cfg_combine(b, {1, 1, 1}).bit_equal(b.v_full);
    const bool uncond = cfg_combine(b, {0, 0, 0}).bit_equal(b.v_uncond);
    const BranchOutputs s{NdTensor::scalar(0), NdTensor::scalar(1), NdTensor::scalar(2), NdTensor::scalar(3)};
    const Scalar scalar = cfg_combine(s, {3.5, 3.5, 1.0}).item();
    // Default guidance scales.
    const GuidanceScales base;
    const auto desk = RunConfig::load(kSource / "configs/desk.ini").guidance.scales;
    const auto grid = trainer::axis_variants(trainer::Axis::cfg);
    const bool base_ok = base.lambda_a == 3.5 && base.lambda_t == 3.5 && base.lambda_i == 1.0 &&
                         desk.lambda_a == 3.5 && desk.lambda_t == 3.5 && desk.lambda_i == 1.0 &&
                         std::find(grid.begin(), grid.end(), "la=3.5,lt=3.5,li=1") != grid.end();
    return {full && uncond && scalar == 8.0f && base_ok,
            std::string("ones->full ") + (full ? "bitwise" : "differs") + ", zeros->uncond " +
                (uncond ? "bitwise" : "differs") + ", scalar " + fmt("%g", scalar) + ", base (3.5, 3.5, 1.0) " +
                (base_ok ? "ok" : "mismatch")};
}

// 4 ------------------------------------------------------------------------
Outcome motion_layout() {
    model::DitConfig c;
    c.depth = 2;
    c.model_dim = 16;
    c.heads = 2;
    c.text_dim = 8;
    c.text_tokens = 2;
    c.audio_layer_dim = 2;
    c.face_dim = 8;
    c.face_tokens = 2;
    c.latent_frames = 8;
    c.latent_height = 2;
    c.latent_width = 2;
    auto m = model::DitModel::init(c, 1);
    Rng rng(7);
    for (const auto& name : m.params().names()) {
        if (name.rfind("codec.", 0) == 0) continue;
        auto& t = m.params().mutable_get(name);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += static_cast<Scalar>(0.1 * rng.normal());
    }
    const std::size_t l = c.latent_frames;
    const std::size_t per_frame = c.latent_height * c.latent_width * c.latent_channels();
    const model::LatentClip prev(testutil::random({l, c.latent_height, c.latent_width, c.latent_channels()}, 3));

    bool layout = true, provenance = true;
    guidance::ConditionSet cs;
    cs.text = testutil::random({c.text_tokens, c.text_dim}, 4);
    cs.audio = testutil::random({3 * c.audio_tokens(), c.audio_dim()}, 5);
    cs.ref_latent = testutil::random({1, c.latent_height, c.latent_width, c.latent_channels()}, 6);
    cs.face_embed = testutil::random({1, c.face_dim}, 7);
    const auto sched = diffusion::make_schedule(100, 1e-4, 0.02);
    for (std::size_t n : {1u, 2u, 4u, 8u}) {
        const auto mc = cond::build_motion_condition(prev, n, l, 9);
        std::size_t motion = 0, padded = 0, noise = 0;
        for (std::size_t f = 0; f < l; ++f) {
            const auto role = mc.condition.roles[f];
            if (role == model::FrameRole::motion) {
                ++motion;
                for (std::size_t i = 0; i < per_frame; ++i)
                    layout = layout && mc.condition.data[f * per_frame + i] == prev.data[(l - n + f) * per_frame + i];
            } else if (role == model::FrameRole::padded) {
                ++padded;
                for (std::size_t i = 0; i < per_frame; ++i) {
                    const Scalar v = mc.condition.data[f * per_frame + i];
                    layout = layout && v == 0.0f && !std::signbit(v);
                }
            }
            if (mc.noise.roles[f] == model::FrameRole::noise) ++noise;
        }
        layout = layout && motion == n && padded == l - n && noise == l && mc.noise.frames() == l;

        guidance::SampleOptions opt;
        opt.steps = 3;
        opt.motion_frames = n;
        const auto e = guidance::extrapolate(m, cs, {}, sched, 3, 12, opt);
        provenance = provenance && e.clips.size() == 3 && e.motion.size() == 2;
        for (std::size_t k = 1; provenance && k < 3; ++k) {
            const auto& src = e.clips[k - 1].data;
            const auto& cond = e.motion[k - 1].condition.data;
            for (std::size_t f = 0; f < l; ++f)
                for (std::size_t i = 0; i < per_frame; ++i)
                    provenance = provenance && cond[f * per_frame + i] ==
                                                   (f < n ? src[(l - n + f) * per_frame + i] : Scalar(0));
            provenance = provenance && e.motion[k - 1].noise.data.bit_equal(guidance::initial_noise(c, 12, k));
        }
    }
    return {layout && provenance, std::string("n in {1,2,4,8}: layout ") + (layout ? "ok" : "wrong") +
                                      ", 3-clip provenance " + (provenance ? "ok" : "broken")};
}

// 5, 6 ---------------------------------------------------------------------
Outcome ablation(trainer::Axis axis, const std::string& ours, const std::vector<std::string>& rivals,
                 double trainer::AblationRow::*metric) {
    const auto settings = RunConfig::load(kSource / "configs/ablation.ini").ablation();
    std::vector<std::string> only{ours};
    only.insert(only.end(), rivals.begin(), rivals.end());
    const auto t0 = std::chrono::steady_clock::now();
    int wins = 0;
    std::ostringstream os;
    for (int seed = 1; seed <= kAblationSeeds; ++seed) {
        const auto t = trainer::run_ablation(settings, axis, static_cast<std::uint64_t>(seed), only);
        const double mine = t.row(ours).*metric;
        bool win = true;
        for (const auto& r : rivals) win = win && mine < t.row(r).*metric;
        wins += win;
        os << (seed > 1 ? "; " : "") << "s" << seed << " " << fmt("%.4f", mine);
        for (const auto& r : rivals) os << "/" << fmt("%.4f", t.row(r).*metric);
    }
    const double secs = seconds_since(t0);
    std::ostringstream head;
    head << ours << " best in " << wins << "/" << kAblationSeeds << " seeds, " << fmt("%.0f", secs) << " s ("
         << os.str() << ")";
    return {wins >= kAblationMinWins && secs < kAblationBudgetS, head.str()};
}

// 7 ------------------------------------------------------------------------
metrics::GaussianStats gaussian(const std::vector<double>& mean, const oracle::Mat& cov) {
    metrics::GaussianStats s;
    s.mean = mean;
    for (const auto& r : cov) s.cov.insert(s.cov.end(), r.begin(), r.end());
    s.count = 100;
    return s;
}

Outcome frechet() {
    std::mt19937_64 g(1);
    std::normal_distribution<double> n(0, 1);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 1 + trial % 8;
        const auto sa = oracle::random_psd(d, g, trial % 3 == 0 ? std::max<std::size_t>(1, d / 2) : d + 2);
        const auto sb = oracle::random_psd(d, g, d + 3);
        std::vector<double> ma(d), mb(d);
        for (auto& x : ma) x = n(g);
        for (auto& x : mb) x = n(g);
        worst = std::max(worst, std::abs(metrics::frechet_distance(gaussian(ma, sa), gaussian(mb, sb)) -
                                         oracle::frechet(ma, sa, mb, sb)));
    }
    oracle::Mat eye3 = oracle::zeros(3, 3);
    for (std::size_t i = 0; i < 3; ++i) eye3[i][i] = 1;
    const double mean_case = metrics::frechet_distance(gaussian({0, 0, 0}, eye3), gaussian({1, 2, -2}, eye3));
    const double one_d = metrics::frechet_distance(gaussian({0}, {{1}}), gaussian({0}, {{4}}));
    const double analytic = std::max(std::abs(mean_case - 9.0), std::abs(one_d - 1.0));
    return {worst <= kFrechetOracleTol && analytic <= kFrechetAnalyticTol,
            "oracle max diff " + fmt("%.2e", worst) + ", analytic max diff " + fmt("%.2e", analytic)};
}

// 8 ------------------------------------------------------------------------
std::vector<std::string> kept_ids(const datapipe::PipelineResult& r) {
    std::vector<std::string> out;
    for (const auto& c : r.kept) out.push_back(c.id);
    return out;
}

Outcome data_pipeline() {
    using namespace datapipe;
    const auto clips = dpo::random_clips(1000, 2024);
    const auto policy = dpo::desk_policy();
    const auto r = run_pipeline(clips, policy);
    bool partition = r.kept.size() + r.rejected.size() == clips.size();
    std::set<std::string> kept_set;
    for (const auto& c : r.kept) kept_set.insert(c.id);
    std::map<std::string, int> stage;
    for (const auto& x : r.rejected) stage[x.clip.id] = static_cast<int>(x.stage);
    for (const auto& c : clips) {
        const int want = dpo::reject_stage(c, policy);
        partition = partition && (want == 0 ? kept_set.count(c.id) == 1 : stage.count(c.id) && stage[c.id] == want);
    }

    std::mt19937_64 g(8);
    std::uniform_real_distribution<double> u(0, 1);
    auto p = policy;
    auto prev = kept_ids(run_pipeline(clips, p));
    bool monotone = true;
    for (int i = 0; i < 50; ++i) {
        const Metric m = kMetrics[static_cast<std::size_t>(u(g) * kMetrics.size()) % kMetrics.size()];
        auto& t = p.thresholds[m];
        if (u(g) < 0.5) {
            t.min = t.min ? *t.min + 0.05 * u(g) : 0.0;
        } else {
            t.max = t.max ? *t.max - 0.05 * u(g) : 1e9;
        }
        if (t.min && t.max && *t.min > *t.max) t.max = *t.min;
        const auto next = kept_ids(run_pipeline(clips, p));
        monotone = monotone && std::includes(prev.begin(), prev.end(), next.begin(), next.end());
        prev = next;
    }

    bool hist = true;
    const auto stats = corpus_stats(clips, uniform_bins(clips, 10));
    for (const auto& [m, h] : stats.histograms) {
        std::vector<double> vals;
        for (const auto& c : clips) vals.push_back(dpo::field(c, metric_name(m)));
        hist = hist && h.counts == dpo::count_bins(vals, h.edges);
    }
    std::ostringstream os;
    os << "partition " << (partition ? "exact" : "mismatch") << " (" << r.kept.size() << " kept), 50 tightenings "
       << (monotone ? "monotone" : "non-monotone") << ", histograms " << (hist ? "exact" : "mismatch");
    return {partition && monotone && hist, os.str()};
}

// 9 ------------------------------------------------------------------------
Outcome training_contracts() {
    using namespace trainer;
    const auto settings = AblationSettings::toy();
    bool frozen_ok = true;
    for (auto phase : {Phase::identity, Phase::audio}) {
        auto m = model::DitModel::init(settings.model, 5);
        const auto geom = SyntheticConfig::for_model(m.config());
        const auto corpus = prepare_all(m, gen_synthetic(8, geom, 6), geom.samples_per_frame);
        const auto sched = diffusion::make_schedule(1000, 1e-4, 0.02);
        TrainConfig c = settings.train;
        c.phase = phase;
        const auto mask = FreezeMask::for_phase(phase);
        const auto start = m.params();
        Rng rng(7);
        for (int step = 0; step < kFrozenSteps; ++step) train_step(m, corpus, c, mask, sched, rng);
        for (const auto& [name, t] : start.all())
            if (!mask.is_trainable(model::group_of(name))) frozen_ok = frozen_ok && t.bit_equal(m.params().get(name));
    }

    TrainConfig c;
    Rng rng(123);
    int text = 0, audio = 0, identity = 0, motion = 0;
    for (int i = 0; i < kDraws; ++i) {
        const auto d = draw_step(rng, c, settings.model, 1000, 64);
        text += d.drop_text;
        audio += d.drop_audio;
        identity += d.drop_identity;
        motion += d.mask_motion;
    }
    auto z = [](int count, double p) { return (count / double(kDraws) - p) / std::sqrt(p * (1 - p) / kDraws); };
    const double zs[] = {z(text, c.drop_prob), z(audio, c.drop_prob), z(identity, c.drop_prob),
                         z(motion, c.motion_mask_prob)};
    bool rates = c.drop_prob == 0.05 && c.motion_mask_prob == 0.25;
    for (double v : zs) rates = rates && std::abs(v) <= 3.0;
    std::ostringstream os;
    os << "frozen groups " << (frozen_ok ? "bitwise unchanged" : "CHANGED") << " over " << kFrozenSteps
       << " steps/phase; z text " << fmt("%.2f", zs[0]) << ", audio " << fmt("%.2f", zs[1]) << ", identity "
       << fmt("%.2f", zs[2]) << ", motion mask " << fmt("%.2f", zs[3]);
    return {frozen_ok && rates, os.str()};
}

// 10 -----------------------------------------------------------------------
std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string tree_bytes(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) all += fs::relative(f, dir).string() + "\n" + slurp(f);
    return all;
}

int run(const std::string& args) {
    const int status = std::system((kBin + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "anima_acceptance";
    fs::remove_all(root);
    const std::string cfg = (kSource / "configs/desk.ini").string();
    std::string rendered[2];
    bool ran = true;
    for (int rep = 0; rep < 2; ++rep) {
        const fs::path d = root / std::to_string(rep);
        const std::string ckpt = (d / "train/checkpoint").string();
        ran = ran && run("train --config " + cfg + " --out " + (d / "train").string()) == 0;
        ran = ran && run("sample --config " + cfg + " --checkpoint " + ckpt + " --out " + (d / "gen/sample.ndt").string()) == 0;
        ran = ran && run("extrapolate --config " + cfg + " --checkpoint " + ckpt + " --out " +
                         (d / "gen/extrapolate.ndt").string()) == 0;
        if (ran) rendered[rep] = tree_bytes(d);
    }
    fs::remove_all(root);
    const bool same = ran && !rendered[0].empty() && rendered[0] == rendered[1];
    return {same, std::string("train/sample/extrapolate ") + (ran ? "ran" : "FAILED to run") + ", outputs " +
                      (same ? "byte-identical" : "differ") + " (" + std::to_string(rendered[0].size()) + " bytes)"};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradients},
        {"diffusion algebra", diffusion_algebra},
        {"cfg algebra", cfg_algebra},
        {"motion layout", motion_layout},
        {"audio ablation direction",
         [] {
             return ablation(trainer::Axis::audio_injection, "cross_attention", {"adaln", "adaln_zero"},
                             &trainer::AblationRow::lip_sync_error);
         }},
        {"identity ablation direction",
         [] {
             return ablation(trainer::Axis::identity_injection, "face_attention_plus_ref_net", {"none"},
                             &trainer::AblationRow::identity_drift);
         }},
        {"frechet metric", frechet},
        {"data pipeline", data_pipeline},
        {"training contracts", training_contracts},
        {"determinism", determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s %2zu %-28s %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
