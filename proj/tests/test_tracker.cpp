#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "sta/pipeline.hpp"
#include "sta/rng.hpp"
#include "sta/tracker.hpp"

using namespace sta;

namespace {

Tensor random_image(int h, int w, uint64_t seed) {
    Rng rng(seed);
    Tensor t = Tensor::zeros({3, h, w});
    for (auto& v : t.data) v = rng.uniform(0, 1);
    return t;
}

}  // namespace

TEST_CASE("context margin and scale factor identities") {
    CropSpec spec;
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        BBox b{rng.uniform(10, 200), rng.uniform(10, 80), rng.uniform(4, 60), rng.uniform(4, 60)};
        double p = spec.context_margin(b);
        CHECK(std::abs(p - (b.w + b.h) / 4.0) < 1e-12);
        double s = spec.scale_factor(b);
        CHECK(std::abs(s * s * (b.w + 2 * p) * (b.h + 2 * p) - spec.area()) < 1e-9);
    }
}

TEST_CASE("square box with p gives the simple closed form") {
    // w = h: p = w/2, crop side 2w, s = 32 / (2w)
    CropSpec spec;
    BBox b{0, 0, 20, 20};
    CHECK(spec.scale_factor(b) == doctest::Approx(32.0 / 40.0).epsilon(1e-12));
}

TEST_CASE("crop_and_scale samples the right region") {
    // constant-color target on black: center crop is dominated by the color
    Tensor img = Tensor::full({3, 96, 96}, 0.0);
    for (int c = 0; c < 3; ++c)
        for (int y = 40; y < 56; ++y)
            for (int x = 40; x < 56; ++x) img.data[(c * 96 + y) * 96 + x] = 0.8;
    BBox box{47.5, 47.5, 16, 16};
    CropSpec spec;
    Tensor crop = crop_and_scale(img, box, CropRole::kExemplar, spec);
    CHECK(crop.shape == Shape{3, 32, 32});
    // center pixel of the crop hits the target
    CHECK(crop.data[16 * 32 + 16] == doctest::Approx(0.8));
    Tensor search = crop_and_scale(img, box, CropRole::kSearch, spec);
    CHECK(search.shape == Shape{3, 64, 64});
    CHECK(search.data[32 * 64 + 32] == doctest::Approx(0.8));
}

TEST_CASE("out-of-image crop samples take the mean color") {
    Tensor img = Tensor::full({3, 32, 32}, 0.25);
    BBox box{0, 0, 16, 16};  // crop window extends far past the top-left corner
    Tensor crop = crop_and_scale(img, box, CropRole::kSearch, CropSpec{});
    CHECK(crop.data[0] == doctest::Approx(0.25));
}

TEST_CASE("cosine window") {
    CosineWindow w;
    CHECK(w.value_1d(0) == doctest::Approx(1.0));
    CHECK(w.value_1d(8) == doctest::Approx(0.5 + 0.5 * std::cos(2 * M_PI * 8 / 16)));
    CHECK(w.value_1d(4) == doctest::Approx(0.5));
    CosineWindow bad;
    bad.weight = 1.0;
    CHECK_THROWS(bad.validate());
    bad.weight = -0.1;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("apply_penalty blends score and window") {
    Tensor map = Tensor::full({17, 17}, 0.5);
    CosineWindow w;
    Tensor pen = apply_penalty(map, w);
    // center cell: (1-c)*0.5 + c*1*1
    CHECK(pen.data[8 * 17 + 8] == doctest::Approx(0.7 * 0.5 + 0.3));
    // corner cell (8,8) away in both axes: window value = w(8)^2
    double w8 = 0.5 + 0.5 * std::cos(2 * M_PI * 8 / 16);
    CHECK(pen.data[0] == doctest::Approx(0.7 * 0.5 + 0.3 * w8 * w8));
}

TEST_CASE("mislead threshold closed form and brute-force agreement") {
    const int M = 17;
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        double c = rng.uniform(0.05, 0.9);
        double d = rng.uniform(0, 8);
        double dp = rng.uniform(0, 8);
        double s = rng.uniform(-1, 1);
        double sp = rng.uniform(-1, 1);
        // oracle: evaluate the penalized pair directly
        auto w1 = [&](double dist) { return 0.5 + 0.5 * std::cos(2 * M_PI * dist / (M - 1)); };
        double pen_target = (1 - c) * s + c * w1(d);
        double pen_distr = (1 - c) * sp + c * w1(dp);
        bool oracle = pen_distr > pen_target;
        CHECK(check_mislead(s, sp, d, dp, c, M) == oracle);
        // threshold itself
        double thr = mislead_threshold(d, dp, c, M);
        double want = c / (1 - c) * 0.5 * (std::cos(2 * M_PI * dp / (M - 1)) -
                                           std::cos(2 * M_PI * d / (M - 1)));
        CHECK(thr == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK_THROWS(mislead_threshold(1, 2, 1.0, M));
}

TEST_CASE("tracker follows a moving block") {
    // simple scene: bright block drifting right on dark background
    Scene scene;
    scene.width = 160;
    scene.height = 64;
    scene.frames = 20;
    scene.background.color = {0.05, 0.05, 0.05};
    scene.target_w = 20;
    scene.target_h = 20;
    scene.trajectory = {{0, 30, 32}, {19, 120, 32}};
    Tensor tex = make_clean_texture(20, 1234);
    PlanarObject obj = PlanarObject::for_texture(tex);
    auto seq = render_sequence(scene, obj, tex);

    Victim v = init_victim(HeadKind::kSymmetric, VictimGeometry{}, 55);
    TrackerConfig cfg;
    BBox init{seq.gt[0].cx, seq.gt[0].cy, seq.gt[0].w, seq.gt[0].h};
    auto out = track(v, seq.frames, init, cfg);
    REQUIRE(out.size() == seq.frames.size());
    // frame 0 echoes the init box
    CHECK(out[0].box.cx == doctest::Approx(init.cx));
    CHECK(out[0].box.cy == doctest::Approx(init.cy));
    // box size is fixed
    for (const auto& f : out) {
        CHECK(f.box.w == doctest::Approx(init.w));
        CHECK(f.box.h == doctest::Approx(init.h));
    }
    // tracker keeps decent overlap throughout
    double mean = 0;
    for (size_t t = 0; t < out.size(); ++t) {
        BBox gt{seq.gt[t].cx, seq.gt[t].cy, seq.gt[t].w, seq.gt[t].h};
        mean += iou(out[t].box, gt);
    }
    mean /= out.size();
    CHECK(mean > 0.5);
}

TEST_CASE("rpn tracker also follows the block") {
    Scene scene;
    scene.width = 160;
    scene.height = 64;
    scene.frames = 16;
    scene.background.color = {0.05, 0.05, 0.05};
    scene.target_w = 20;
    scene.target_h = 20;
    scene.trajectory = {{0, 40, 32}, {15, 110, 32}};
    Tensor tex = make_clean_texture(20, 4321);
    PlanarObject obj = PlanarObject::for_texture(tex);
    auto seq = render_sequence(scene, obj, tex);

    Victim v = init_victim(HeadKind::kRpn, VictimGeometry{}, 66);
    BBox init{seq.gt[0].cx, seq.gt[0].cy, seq.gt[0].w, seq.gt[0].h};
    auto out = track(v, seq.frames, init, TrackerConfig{});
    double mean = 0;
    for (size_t t = 0; t < out.size(); ++t) {
        BBox gt{seq.gt[t].cx, seq.gt[t].cy, seq.gt[t].w, seq.gt[t].h};
        mean += iou(out[t].box, gt);
    }
    mean /= out.size();
    CHECK(mean > 0.4);
    // rpn raw scores are probabilities
    for (const auto& f : out) {
        CHECK(f.raw_max >= 0.0);
        CHECK(f.raw_max <= 1.0);
    }
}

TEST_CASE("track csv round trip") {
    std::vector<FrameScore> recs(3);
    recs[0] = {{10.5, 20.25, 8, 8}, 0.75, 0.6};
    recs[1] = {{11, 21, 8, 8}, 0.5, 0.45};
    recs[2] = {{12, 22, 8, 8}, 0.25, 0.2};
    auto back = track_from_csv(track_csv(recs));
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(back[i].box.cx == doctest::Approx(recs[i].box.cx));
        CHECK(back[i].raw_max == doctest::Approx(recs[i].raw_max));
        CHECK(back[i].penalized_max == doctest::Approx(recs[i].penalized_max));
    }
}

TEST_CASE("argmax tie breaks to smallest row-major index") {
    // uniform map: penalty makes the center strictly largest, so instead use
    // a window-free tracker config? The penalty is always applied; verify via
    // apply_penalty + manual scan on a constant map.
    Tensor map = Tensor::full({17, 17}, 1.0);
    CosineWindow w;
    w.weight = 0.0;  // degenerate: pure score, all ties
    Tensor pen = apply_penalty(map, w);
    int64_t best = 0;
    for (int64_t i = 1; i < pen.size(); ++i)
        if (pen.data[i] > pen.data[best]) best = i;
    CHECK(best == 0);
}
