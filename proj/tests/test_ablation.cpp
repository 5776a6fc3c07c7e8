#include <gtest/gtest.h>

#include <sstream>

#include "anima/ablation.hpp"
#include "anima/errors.hpp"
#include "test_util.hpp"

using namespace anima;
using namespace anima::trainer;

namespace {

AblationSettings tiny() {
    auto s = AblationSettings::toy();
    s.identity_steps = 2;
    s.audio_steps = 2;
    s.corpus_size = 2;
    s.heldout_size = 2;
    s.eval_draws = 1;
    s.sample_steps = 2;
    return s;
}

}  // namespace

TEST(Ablation, AxisVariants) {
    EXPECT_EQ(axis_variants(Axis::audio_injection),
              (std::vector<std::string>{"self_attention", "cross_attention", "adaln", "adaln_zero"}));
    EXPECT_EQ(axis_variants(Axis::identity_injection),
              (std::vector<std::string>{"none", "face_attention", "face_adaln", "ref_net",
                                        "face_attention_plus_ref_net"}));
    EXPECT_EQ(axis_variants(Axis::motion_frames), (std::vector<std::string>{"n=1", "n=2", "n=4", "n=8"}));
    // Guidance grid; the second row is the default.
    EXPECT_EQ(axis_variants(Axis::cfg),
              (std::vector<std::string>{"la=3.5,lt=1,li=1", "la=3.5,lt=3.5,li=1", "la=3.5,lt=6,li=1",
                                        "la=6,lt=3.5,li=1", "la=3.5,lt=3.5,li=3.5"}));
    const guidance::GuidanceScales d;
    EXPECT_EQ(d.lambda_a, 3.5);
    EXPECT_EQ(d.lambda_t, 3.5);
    EXPECT_EQ(d.lambda_i, 1.0);
}

TEST(Ablation, AxisNames) {
    for (auto a : {Axis::audio_injection, Axis::identity_injection, Axis::motion_frames, Axis::cfg})
        EXPECT_EQ(parse_axis(axis_name(a)), a);
    EXPECT_THROW(parse_axis("colour"), ConfigError);
}

TEST(ScoreVideo, MatchesMaskedMseOracle) {
    SyntheticConfig g;
    g.height = 6;
    g.width = 5;
    g.lip_y = 2;
    g.lip_x = 1;
    g.lip_h = 2;
    g.lip_w = 3;
    const auto a = testutil::random({3, 6, 5, 2}, 1), b = testutil::random({3, 6, 5, 2}, 2);
    const auto r = score_video(a, b, g);
    double lip = 0, rest = 0;
    std::size_t nl = 0, nr = 0;
    for (std::size_t f = 0; f < 3; ++f)
        for (std::size_t y = 0; y < 6; ++y)
            for (std::size_t x = 0; x < 5; ++x)
                for (std::size_t c = 0; c < 2; ++c) {
                    const std::size_t i = ((f * 6 + y) * 5 + x) * 2 + c;
                    const double e = double(a[i]) - double(b[i]);
                    const bool in = y >= 2 && y < 4 && x >= 1 && x < 4;
                    (in ? lip : rest) += e * e;
                    ++(in ? nl : nr);
                }
    EXPECT_EQ(nl, 3u * 2 * 3 * 2);
    EXPECT_NEAR(r.lip_sync_error, lip / nl, 1e-9);
    EXPECT_NEAR(r.identity_drift, rest / nr, 1e-9);
    EXPECT_NEAR(r.reconstruction_error, (lip + rest) / (nl + nr), 1e-9);

    const auto z = score_video(a, a, g);
    EXPECT_EQ(z.lip_sync_error, 0.0);
    EXPECT_EQ(z.reconstruction_error, 0.0);
    EXPECT_THROW(score_video(a, testutil::random({3, 6, 4, 2}, 1), g), ShapeError);
}

TEST(Ablation, TinyRunTableAndDeterminism) {
    const auto s = tiny();
    const auto t = run_ablation(s, Axis::audio_injection, 3, {"cross_attention", "adaln"});
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[0].variant, "cross_attention");
    EXPECT_GT(t.row("adaln").reconstruction_error, 0.0);
    EXPECT_THROW(t.row("self_attention"), IndexError);

    std::istringstream csv(t.format());
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "variant,lip_sync_error,reconstruction_error,identity_drift");
    int n = 0;
    while (std::getline(csv, line)) ++n;
    EXPECT_EQ(n, 2);

    EXPECT_EQ(run_ablation(s, Axis::audio_injection, 3, {"cross_attention", "adaln"}).format(), t.format());
    EXPECT_THROW(run_ablation(s, Axis::audio_injection, 3, {"film"}), ConfigError);
}

TEST(Ablation, TinyRunsOfOtherAxes) {
    const auto s = tiny();
    for (auto a : {Axis::identity_injection, Axis::motion_frames, Axis::cfg}) {
        const auto v = axis_variants(a);
        const auto t = run_ablation(s, a, 4, {v.front(), v.back()});
        ASSERT_EQ(t.rows.size(), 2u) << axis_name(a);
        for (const auto& r : t.rows) {
            EXPECT_TRUE(std::isfinite(r.lip_sync_error)) << r.variant;
            EXPECT_GE(r.identity_drift, 0.0) << r.variant;
        }
    }
}
