// Tracking loop: the crop/scale process, cosine window penalty, the
// closed-form mislead condition, and frame-to-frame localization.

#pragma once

#include <string>
#include <vector>

#include "sta/eval.hpp"
#include "sta/renderer.hpp"
#include "sta/siamese.hpp"
#include "sta/tensor.hpp"

namespace sta {

enum class CropRole { kExemplar, kSearch };

struct CropSpec {
    int exemplar_extent = 32;  // sqrt(A)
    int search_extent = 64;

    static CropSpec from_geometry(const VictimGeometry& g) { return {g.exemplar, g.search}; }

    double area() const { return static_cast<double>(exemplar_extent) * exemplar_extent; }
    // Context margin p = (w + h) / 4.
    double context_margin(const BBox& box) const { return (box.w + box.h) / 4.0; }
    // Scale factor s with s(w+2p) * s(h+2p) = A.
    double scale_factor(const BBox& box) const;
    double search_ratio() const {
        return static_cast<double>(search_extent) / exemplar_extent;
    }
};

// Differentiable crop + bilinear resize; out-of-image samples take the
// image's mean color.
Tensor crop_and_scale(const Tensor& image, const BBox& box, CropRole role, const CropSpec& spec);

struct CosineWindow {
    int size = 17;       // score-map extent M
    double weight = 0.3; // penalty weight c in [0,1]

    // 1-D window value at distance d (score-map cells): 0.5 + 0.5 cos(2πd/(M-1)).
    double value_1d(double d) const;
    void validate() const;
};

// Per cell: (1-c)*s + c*w(dx)*w(dy), window centered at the map center.
Tensor apply_penalty(const Tensor& map, const CosineWindow& window);

// Largest score gap s - s' at which the distractor still outranks the target
// after the penalty: 0.5c/(1-c) * [cos(2πd'/(M-1)) - cos(2πd/(M-1))].
double mislead_threshold(double d, double d_prime, double c, int M);
// True when the distractor wins, i.e. (s - s') < mislead_threshold.
bool check_mislead(double s, double s_prime, double d, double d_prime, double c, int M);

struct TrackerConfig {
    double cosine_weight = 0.3;
};

struct TrackerState {
    BBox box;
    CropSpec spec;
    CosineWindow window;
    HeadKind head = HeadKind::kSymmetric;
    Tensor exemplar_feat;              // symmetric head, fixed from frame 0
    std::vector<Tensor> rpn_kernels;   // RPN head: 2k correlation kernels
};

TrackerState init_tracker(const Victim& victim, const Tensor& frame0, const BBox& init_box,
                          const TrackerConfig& cfg);

struct StepScores {
    double raw_max = 0;
    double penalized_max = 0;
};
StepScores step(const Victim& victim, TrackerState& state, const Tensor& frame);

std::vector<FrameScore> track(const Victim& victim, const std::vector<Tensor>& video,
                              const BBox& init_box, const TrackerConfig& cfg);

std::string track_csv(const std::vector<FrameScore>& records);
std::vector<FrameScore> track_from_csv(const std::string& text);

struct CalibrationReport {
    bool pass = false;
    double mean_iou = 0;
    std::vector<double> per_frame_iou;
};

// Gate: the clean-texture tracker must reach mean IOU >= 0.5 on the scene.
CalibrationReport calibrate_tracker(const Victim& victim, const Scene& scene,
                                    const PlanarObject& object, const Tensor& texture,
                                    const TrackerConfig& cfg);

}  // namespace sta
