#include <gtest/gtest.h>

#include "anima/errors.hpp"
#include "anima/guidance.hpp"
#include "anima/rng.hpp"
#include "test_util.hpp"

using namespace anima;
using namespace anima::guidance;
using model::DitConfig;
using model::DitModel;

namespace {

DitConfig small_config() {
    DitConfig c;
    c.depth = 2;
    c.model_dim = 16;
    c.heads = 2;
    c.text_dim = 8;
    c.text_tokens = 2;
    c.audio_layer_dim = 2;
    c.face_dim = 8;
    c.face_tokens = 2;
    c.latent_frames = 3;
    c.latent_height = 4;
    c.latent_width = 4;
    return c;
}

// Freshly initialized output heads are zero, which makes every branch
// predict zero; perturb all parameters so the branches differ.
DitModel busy_model(std::uint64_t seed) {
    auto m = DitModel::init(small_config(), seed);
    Rng rng(seed + 100);
    for (const auto& name : m.params().names()) {
        if (name.rfind("codec.", 0) == 0) continue;
        auto& t = m.params().mutable_get(name);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += static_cast<Scalar>(0.1 * rng.normal());
    }
    return m;
}

ConditionSet full_conditions(const DitModel& m, std::size_t clips, std::uint64_t seed) {
    const auto& c = m.config();
    ConditionSet cs;
    cs.text = testutil::random({c.text_tokens, c.text_dim}, seed);
    cs.audio = testutil::random({clips * c.audio_tokens(), c.audio_dim()}, seed + 1);
    cs.ref_latent = testutil::random({1, c.latent_height, c.latent_width, c.latent_channels()}, seed + 2);
    cs.face_embed = testutil::random({1, c.face_dim}, seed + 3);
    return cs;
}

BranchOutputs random_branches(NdTensor::Dims dims, std::uint64_t seed) {
    return {testutil::random(dims, seed), testutil::random(dims, seed + 1), testutil::random(dims, seed + 2),
            testutil::random(dims, seed + 3)};
}

}  // namespace

TEST(Cfg, TelescopingIdentities) {
    const auto b = random_branches({3, 4, 5}, 1);
    EXPECT_TRUE(cfg_combine(b, {1, 1, 1}).bit_equal(b.v_full));
    EXPECT_TRUE(cfg_combine(b, {0, 0, 0}).bit_equal(b.v_uncond));
}

TEST(Cfg, ScalarExample) {
    const BranchOutputs b{NdTensor::scalar(0), NdTensor::scalar(1), NdTensor::scalar(2), NdTensor::scalar(3)};
    EXPECT_EQ(cfg_combine(b, {3.5, 3.5, 1.0}).item(), 8.0f);
}

TEST(Cfg, MatchesNestedFormulaAndIsLinear) {
    const GuidanceScales g{2.0, 4.5, 1.5};
    const auto a = random_branches({4, 6}, 10), b = random_branches({4, 6}, 20);
    const auto ca = cfg_combine(a, g);
    for (std::size_t i = 0; i < ca.size(); ++i) {
        const double want = a.v_uncond[i] + g.lambda_t * (a.v_text[i] - a.v_uncond[i]) +
                            g.lambda_a * (a.v_text_audio[i] - a.v_text[i]) +
                            g.lambda_i * (a.v_full[i] - a.v_text_audio[i]);
        EXPECT_NEAR(ca[i], want, 1e-5);
    }
    namespace k = anima::kernels;
    const BranchOutputs sum{k::add(a.v_uncond, b.v_uncond), k::add(a.v_text, b.v_text),
                            k::add(a.v_text_audio, b.v_text_audio), k::add(a.v_full, b.v_full)};
    EXPECT_LT(testutil::max_abs_diff(cfg_combine(sum, g), k::add(ca, cfg_combine(b, g))), 1e-5);
}

TEST(Cfg, ShapeMismatchAndBadScales) {
    auto b = random_branches({2, 2}, 1);
    b.v_text = NdTensor::zeros({2, 3});
    EXPECT_THROW(cfg_combine(b, {}), ShapeError);
    EXPECT_THROW((GuidanceScales{-1, 1, 1}.validate()), ConfigError);
}

TEST(Sample, DeterministicWithConfigShape) {
    const auto m = busy_model(1);
    const auto s = diffusion::make_schedule(100, 1e-4, 0.02);
    const auto cs = full_conditions(m, 1, 5);
    SampleOptions opt;
    opt.steps = 5;
    const auto a = sample_clip(m, cs, {}, s, 7, opt), b = sample_clip(m, cs, {}, s, 7, opt);
    EXPECT_TRUE(a.data.bit_equal(b.data));
    const auto& c = m.config();
    EXPECT_EQ(a.data.dims(), (NdTensor::Dims{c.latent_frames, c.latent_height, c.latent_width, c.latent_channels()}));
    EXPECT_FALSE(sample_clip(m, cs, {}, s, 8, opt).data.bit_equal(a.data));
}

TEST(Sample, UnitScalesEqualFullConditionSampling) {
    const auto m = busy_model(2);
    const auto s = diffusion::make_schedule(100, 1e-4, 0.02);
    const auto cs = full_conditions(m, 1, 6);
    SampleOptions opt;
    opt.steps = 4;
    const auto guided = sample_clip(m, cs, {1, 1, 1}, s, 3, opt);

    // Single-branch loop with every condition present.
    const auto ref = m.reference_forward(model::LatentClip(*cs.ref_latent));
    model::IdentityInput id{&*cs.ref_latent, &*cs.face_embed, &ref};
    NdTensor z = initial_noise(m.config(), 3, 0);
    const auto steps = diffusion::sampling_steps(s, opt.steps);
    for (std::size_t i = 0; i < steps.size(); ++i) {
        model::DenoiserInputs in;
        in.noisy = &z;
        in.t = steps[i];
        in.T = s.T;
        in.text = &*cs.text;
        in.audio = &*cs.audio;
        in.identity = &id;
        z = diffusion::sampler_step(z, m.predict(in), steps[i], i + 1 < steps.size() ? steps[i + 1] : 0, s);
    }
    EXPECT_TRUE(guided.data.bit_equal(z));
    EXPECT_FALSE(sample_clip(m, cs, {}, s, 3, opt).data.bit_equal(z));
}

TEST(Extrapolate, OneClipIsSampleClip) {
    const auto m = busy_model(3);
    const auto s = diffusion::make_schedule(100, 1e-4, 0.02);
    const auto cs = full_conditions(m, 1, 7);
    SampleOptions opt;
    opt.steps = 3;
    const auto e = extrapolate(m, cs, {}, s, 1, 11, opt);
    ASSERT_EQ(e.clips.size(), 1u);
    EXPECT_TRUE(e.motion.empty());
    EXPECT_TRUE(e.clips[0].data.bit_equal(sample_clip(m, cs, {}, s, 11, opt).data));
}

TEST(Extrapolate, ProvenanceFrameCountAndDeterminism) {
    const auto m = busy_model(4);
    const auto s = diffusion::make_schedule(100, 1e-4, 0.02);
    const auto cs = full_conditions(m, 3, 8);
    SampleOptions opt;
    opt.steps = 3;
    const auto& cfg = m.config();
    for (std::size_t n : {1u, 2u, 3u}) {
        opt.motion_frames = n;
        const auto e = extrapolate(m, cs, {}, s, 3, 12, opt);
        std::size_t frames = 0;
        for (const auto& c : e.clips) frames += c.frames();
        EXPECT_EQ(frames, 3 * cfg.latent_frames);
        ASSERT_EQ(e.motion.size(), 2u);
        const std::size_t per_frame = cfg.latent_height * cfg.latent_width * cfg.latent_channels();
        for (std::size_t k = 1; k < 3; ++k) {
            const auto& prev = e.clips[k - 1].data;
            const auto& cond = e.motion[k - 1].condition;
            for (std::size_t f = 0; f < cfg.latent_frames; ++f) {
                for (std::size_t i = 0; i < per_frame; ++i) {
                    const Scalar got = cond.data[f * per_frame + i];
                    if (f < n) {
                        ASSERT_EQ(got, prev[(cfg.latent_frames - n + f) * per_frame + i]);
                    } else {
                        ASSERT_EQ(got, 0.0f);
                    }
                }
                EXPECT_EQ(cond.roles[f], f < n ? model::FrameRole::motion : model::FrameRole::padded);
            }
            EXPECT_TRUE(e.motion[k - 1].noise.data.bit_equal(initial_noise(cfg, 12, k)));
        }
        const auto again = extrapolate(m, cs, {}, s, 3, 12, opt);
        for (std::size_t k = 0; k < 3; ++k) EXPECT_TRUE(again.clips[k].data.bit_equal(e.clips[k].data));
    }
}

TEST(Extrapolate, ShortAudioIsShapeError) {
    const auto m = busy_model(5);
    const auto s = diffusion::make_schedule(100, 1e-4, 0.02);
    const auto cs = full_conditions(m, 2, 9);
    EXPECT_THROW(extrapolate(m, cs, {}, s, 3, 1, {}), ShapeError);
    EXPECT_THROW(extrapolate(m, cs, {}, s, 0, 1, {}), ContractError);
}
