// The STA optimizer: expectation-over-transformation sampling of viewing
// parameters, the score-suppression and all-anchors-background losses, and
// projected gradient descent on the texture.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sta/renderer.hpp"
#include "sta/rng.hpp"
#include "sta/siamese.hpp"
#include "sta/tensor.hpp"
#include "sta/tracker.hpp"

namespace sta {

struct EotRange {
    double lo = 0, hi = 0;
    void validate() const;
};

struct EotDistribution {
    EotRange scale = {0.85, 1.2};
    EotRange rotation = {-0.15, 0.15};
    EotRange shear = {-0.15, 0.15};
    EotRange translation = {-3, 3};  // both axes
    EotRange gain = {0.85, 1.15};
    EotRange background = {0.0, 1.0};  // each RGB channel
    EotRange occluder_phase = {0.0, 1.0};
};

std::vector<ViewParams> sample_views(const EotDistribution& dist, int count, Rng& rng);

enum class AttackObjective { kCenter, kGlobalMax };

struct AttackConfig {
    double lambda = 1e-4;      // L2 weight (per-texel normalized)
    double step = 0.05;        // PGD step size
    double decay = 0.5;        // per-round factor (combined attack)
    int iters = 150;
    int eot_k = 8;
    int rounds = 3;            // combined attack
    uint64_t seed = 1;
    bool independent_views = false;  // second branch gets its own view sample
    AttackObjective objective = AttackObjective::kCenter;
    int canvas = 160;  // square render canvas for attack iterations

    void validate() const;
};

struct AttackResult {
    Tensor texture;
    std::vector<double> loss_trace;
    double l2_final = 0;

    std::string loss_trace_csv() const;
};

// One-sample STA loss terms (exposed for tests); views.size() = K samples.
Tensor sta_loss_symmetric(const Victim& victim, const PlanarObject& object, const Tensor& texture,
                          const std::vector<ViewParams>& views, double lambda,
                          const Tensor& clean_texture, const AttackConfig& cfg);
Tensor sta_loss_rpn(const Victim& victim, const PlanarObject& object, const Tensor& texture,
                    const std::vector<ViewParams>& views, double lambda,
                    const Tensor& clean_texture, const AttackConfig& cfg);

// texture - step*gradient, clamped into [0,1]. Throws on non-finite gradient.
Tensor pgd_step(const Tensor& texture, const Tensor& gradient, double step_size);

AttackResult run_sta(const Victim& victim, const PlanarObject& object,
                     const Tensor& clean_texture, const Tensor& start_texture,
                     const EotDistribution& dist, const AttackConfig& cfg);

// Outer rounds cycle through the victims with a geometrically decaying step;
// one shared texture is updated throughout.
AttackResult run_combined(const std::vector<const Victim*>& victims, const PlanarObject& object,
                          const Tensor& clean_texture, const EotDistribution& dist,
                          const AttackConfig& cfg);

// Derived seed for round r, victim v of a combined run (also used by tests).
uint64_t combined_segment_seed(uint64_t seed, int round, int victim_index);

// Mean EOT self-similarity of a texture (symmetric: center score; RPN: mean
// foreground probability over anchors), used for reports and acceptance.
double mean_eot_score(const Victim& victim, const PlanarObject& object, const Tensor& texture,
                      const EotDistribution& dist, int samples, uint64_t seed, int canvas);

}  // namespace sta
