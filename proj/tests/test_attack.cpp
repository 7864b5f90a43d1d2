#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "sta/attack.hpp"
#include "sta/pipeline.hpp"

using namespace sta;

namespace {

EotDistribution point_dist() {
    EotDistribution d;
    d.scale = {1.0, 1.0};
    d.rotation = {0.0, 0.0};
    d.shear = {0.0, 0.0};
    d.translation = {0.0, 0.0};
    d.gain = {1.0, 1.0};
    d.background = {0.5, 0.5};
    d.occluder_phase = {0.0, 0.0};
    return d;
}

AttackConfig tiny_config() {
    AttackConfig cfg;
    cfg.iters = 4;
    cfg.eot_k = 2;
    cfg.rounds = 1;
    cfg.canvas = 96;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("eot sampling stays in range and is deterministic") {
    EotDistribution dist;
    Rng a(9), b(9);
    auto va = sample_views(dist, 50, a);
    auto vb = sample_views(dist, 50, b);
    REQUIRE(va.size() == 50);
    for (int i = 0; i < 50; ++i) {
        CHECK(va[i].scale >= dist.scale.lo);
        CHECK(va[i].scale <= dist.scale.hi);
        CHECK(va[i].rotation >= dist.rotation.lo);
        CHECK(va[i].rotation <= dist.rotation.hi);
        CHECK(va[i].shear >= dist.shear.lo);
        CHECK(va[i].shear <= dist.shear.hi);
        CHECK(va[i].tx >= dist.translation.lo);
        CHECK(va[i].tx <= dist.translation.hi);
        CHECK(va[i].gain >= dist.gain.lo);
        CHECK(va[i].gain <= dist.gain.hi);
        for (double cch : va[i].background) {
            CHECK(cch >= 0);
            CHECK(cch <= 1);
        }
        CHECK(va[i].occluder_phase >= 0);
        CHECK(va[i].occluder_phase <= 1);
        CHECK(va[i].scale == vb[i].scale);
        CHECK(va[i].tx == vb[i].tx);
    }
    EotRange bad{2, 1};
    CHECK_THROWS(bad.validate());
}

TEST_CASE("attack config validation") {
    AttackConfig cfg;
    cfg.validate();
    cfg.step = 0;
    CHECK_THROWS(cfg.validate());
    cfg = AttackConfig{};
    cfg.iters = 0;
    CHECK_THROWS(cfg.validate());
    cfg = AttackConfig{};
    cfg.eot_k = 0;
    CHECK_THROWS(cfg.validate());
    cfg = AttackConfig{};
    cfg.lambda = -1;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("pgd_step moves against the gradient and clamps") {
    Tensor tex({4}, {0.5, 0.02, 0.98, 0.5});
    Tensor grad({4}, {1.0, -1.0, -1.0, -2.0});
    Tensor out = pgd_step(tex, grad, 0.1);
    CHECK(out.data[0] == doctest::Approx(0.4));
    CHECK(out.data[1] == doctest::Approx(0.12));
    CHECK(out.data[2] == doctest::Approx(1.0));  // clamped
    CHECK(out.data[3] == doctest::Approx(0.7));

    Tensor nan_grad({4}, {0.0, 0.0, std::nan(""), 0.0});
    CHECK_THROWS(pgd_step(tex, nan_grad, 0.1));
}

TEST_CASE("symmetric loss decreases over a short run and texture stays in [0,1]") {
    Tensor clean = make_clean_texture(24, 77);
    PlanarObject obj = PlanarObject::for_texture(clean);
    Victim v = init_victim(HeadKind::kSymmetric, VictimGeometry{}, 41);
    AttackConfig cfg = tiny_config();
    cfg.iters = 10;
    cfg.step = 0.02;
    AttackResult res = run_sta(v, obj, clean, clean, point_dist(), cfg);
    REQUIRE(res.loss_trace.size() == 10);
    CHECK(res.loss_trace.back() < res.loss_trace.front());
    for (double x : res.texture.data) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }
    CHECK(res.l2_final >= 0.0);
}

TEST_CASE("rpn loss decreases over a short run") {
    Tensor clean = make_clean_texture(24, 78);
    PlanarObject obj = PlanarObject::for_texture(clean);
    Victim v = init_victim(HeadKind::kRpn, VictimGeometry{}, 42);
    AttackConfig cfg = tiny_config();
    cfg.iters = 10;
    cfg.step = 0.02;
    AttackResult res = run_sta(v, obj, clean, clean, point_dist(), cfg);
    CHECK(res.loss_trace.back() < res.loss_trace.front());
}

TEST_CASE("lambda adds exactly the L2 distance to the loss") {
    Tensor clean = make_clean_texture(24, 79);
    Tensor perturbed = clean;
    perturbed.data[10] += 0.2;
    perturbed.data[300] -= 0.15;
    PlanarObject obj = PlanarObject::for_texture(clean);
    Victim v = init_victim(HeadKind::kSymmetric, VictimGeometry{}, 43);
    Rng rng(5);
    auto views = sample_views(EotDistribution{}, 2, rng);
    AttackConfig cfg = tiny_config();
    double l0 = sta_loss_symmetric(v, obj, perturbed, views, 0.0, clean, cfg).value();
    double l2w = sta_loss_symmetric(v, obj, perturbed, views, 2.0, clean, cfg).value();
    double dist = std::sqrt(0.2 * 0.2 + 0.15 * 0.15);
    CHECK(l2w - l0 == doctest::Approx(2.0 * dist).epsilon(1e-10));
}

TEST_CASE("attack is bit-deterministic per seed") {
    Tensor clean = make_clean_texture(24, 80);
    PlanarObject obj = PlanarObject::for_texture(clean);
    Victim v = init_victim(HeadKind::kSymmetric, VictimGeometry{}, 44);
    AttackConfig cfg = tiny_config();
    AttackResult a = run_sta(v, obj, clean, clean, EotDistribution{}, cfg);
    AttackResult b = run_sta(v, obj, clean, clean, EotDistribution{}, cfg);
    CHECK(a.texture.data == b.texture.data);
    CHECK(a.loss_trace == b.loss_trace);
    cfg.seed = 6;
    AttackResult c = run_sta(v, obj, clean, clean, EotDistribution{}, cfg);
    CHECK(a.texture.data != c.texture.data);
}

TEST_CASE("combined attack with one victim, one round, decay 1 equals run_sta") {
    Tensor clean = make_clean_texture(24, 81);
    PlanarObject obj = PlanarObject::for_texture(clean);
    Victim v = init_victim(HeadKind::kSymmetric, VictimGeometry{}, 45);
    AttackConfig cfg = tiny_config();
    cfg.decay = 1.0;
    cfg.rounds = 1;
    AttackResult comb = run_combined({&v}, obj, clean, EotDistribution{}, cfg);
    AttackConfig single = cfg;
    single.seed = combined_segment_seed(cfg.seed, 0, 0);
    AttackResult plain = run_sta(v, obj, clean, clean, EotDistribution{}, single);
    CHECK(comb.texture.data == plain.texture.data);
}

TEST_CASE("combined attack cycles victims and produces a finite texture") {
    Tensor clean = make_clean_texture(24, 82);
    PlanarObject obj = PlanarObject::for_texture(clean);
    Victim a = init_victim(HeadKind::kSymmetric, VictimGeometry{}, 46);
    Victim b = init_victim(HeadKind::kRpn, VictimGeometry{}, 47);
    AttackConfig cfg = tiny_config();
    cfg.rounds = 2;
    AttackResult res = run_combined({&a, &b}, obj, clean, EotDistribution{}, cfg);
    // 2 rounds x 2 victims x iters entries
    CHECK(res.loss_trace.size() == 2u * 2u * cfg.iters);
    for (double x : res.texture.data) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }
    CHECK_THROWS(run_combined({}, obj, clean, EotDistribution{}, cfg));
}

TEST_CASE("mean_eot_score is deterministic and within sane bounds") {
    Tensor clean = make_clean_texture(24, 83);
    PlanarObject obj = PlanarObject::for_texture(clean);
    Victim v = init_victim(HeadKind::kSymmetric, VictimGeometry{}, 48);
    double s1 = mean_eot_score(v, obj, clean, EotDistribution{}, 4, 9, 96);
    double s2 = mean_eot_score(v, obj, clean, EotDistribution{}, 4, 9, 96);
    CHECK(s1 == s2);
    CHECK(std::isfinite(s1));

    Victim r = init_victim(HeadKind::kRpn, VictimGeometry{}, 49);
    double p = mean_eot_score(r, obj, clean, EotDistribution{}, 4, 9, 96);
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
}

TEST_CASE("loss trace csv has one row per iteration") {
    AttackResult res;
    res.loss_trace = {3.0, 2.0, 1.5};
    std::string csv = res.loss_trace_csv();
    int lines = 0;
    for (char c : csv)
        if (c == '\n') ++lines;
    CHECK(lines == 4);  // header + 3
    CHECK(csv.find("iter") != std::string::npos);
}
