// Metrics and experiment reports: IOU, drift detection, per-run evaluation,
// and the transferability matrix.

#pragma once

#include <optional>
#include <string>
#include <vector>

namespace sta {

struct BBox {
    double cx = 0, cy = 0, w = 0, h = 0;
    void validate() const;
};

double iou(const BBox& a, const BBox& b);

// Earliest frame t with IOU < tau for every frame >= t.
std::optional<int> detect_drift(const std::vector<double>& iou_list, double tau);

struct EvalReport {
    std::vector<double> per_frame_iou;
    std::vector<double> raw_scores;
    std::vector<double> penalized_scores;
    std::optional<int> drift_frame;
    double mean_iou = 0;
    std::optional<double> score_drop;  // mean(clean raw) - mean(adv raw)

    std::string to_json() const;
    std::string curves_csv() const;
};

struct FrameScore {
    BBox box;
    double raw_max = 0;
    double penalized_max = 0;
};

EvalReport evaluate(const std::vector<FrameScore>& output, const std::vector<BBox>& ground_truth,
                    const std::vector<FrameScore>* clean_baseline, double drift_tau);

struct TransferMatrix {
    std::vector<std::string> victims;   // rows
    std::vector<std::string> textures;  // columns
    std::vector<double> miou_percent;   // row-major, in [0,100]

    double at(int row, int col) const;
    std::string to_csv() const;
    std::string to_json() const;
};

}  // namespace sta
