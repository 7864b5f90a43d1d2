#include "sta/eval.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace sta {

void BBox::validate() const {
    if (!(w > 0) || !(h > 0))
        throw std::invalid_argument("bbox: width and height must be positive");
}

double iou(const BBox& a, const BBox& b) {
    a.validate();
    b.validate();
    const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) -
                                        std::max(a.cx - a.w / 2, b.cx - b.w / 2));
    const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) -
                                        std::max(a.cy - a.h / 2, b.cy - b.h / 2));
    const double inter = ix * iy;
    const double uni = a.w * a.h + b.w * b.h - inter;
    return inter / uni;
}

std::optional<int> detect_drift(const std::vector<double>& iou_list, double tau) {
    if (!(tau > 0) || !(tau < 1)) throw std::invalid_argument("detect_drift: tau must be in (0,1)");
    std::optional<int> candidate;
    for (int t = 0; t < static_cast<int>(iou_list.size()); ++t) {
        if (iou_list[t] < tau) {
            if (!candidate) candidate = t;
        } else {
            candidate.reset();
        }
    }
    return candidate;
}

EvalReport evaluate(const std::vector<FrameScore>& output, const std::vector<BBox>& ground_truth,
                    const std::vector<FrameScore>* clean_baseline, double drift_tau) {
    if (output.size() != ground_truth.size())
        throw std::invalid_argument("evaluate: output/ground-truth length mismatch");
    if (clean_baseline && clean_baseline->size() != output.size())
        throw std::invalid_argument("evaluate: baseline length mismatch");
    if (output.empty()) throw std::invalid_argument("evaluate: empty run");
    EvalReport r;
    double iou_sum = 0;
    for (size_t i = 0; i < output.size(); ++i) {
        const double v = iou(output[i].box, ground_truth[i]);
        r.per_frame_iou.push_back(v);
        r.raw_scores.push_back(output[i].raw_max);
        r.penalized_scores.push_back(output[i].penalized_max);
        iou_sum += v;
    }
    r.mean_iou = iou_sum / output.size();
    r.drift_frame = detect_drift(r.per_frame_iou, drift_tau);
    if (clean_baseline) {
        double clean_mean = 0, adv_mean = 0;
        for (size_t i = 0; i < output.size(); ++i) {
            clean_mean += (*clean_baseline)[i].raw_max;
            adv_mean += output[i].raw_max;
        }
        r.score_drop = (clean_mean - adv_mean) / output.size();
    }
    return r;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["per_frame_iou"] = per_frame_iou;
    j["raw_scores"] = raw_scores;
    j["penalized_scores"] = penalized_scores;
    j["mean_iou"] = mean_iou;
    if (drift_frame)
        j["drift_frame"] = *drift_frame;
    else
        j["drift_frame"] = nullptr;
    if (score_drop)
        j["score_drop"] = *score_drop;
    else
        j["score_drop"] = nullptr;
    return j.dump(2);
}

std::string EvalReport::curves_csv() const {
    std::ostringstream ss;
    ss << "frame,iou,raw_score,penalized_score\n";
    for (size_t i = 0; i < per_frame_iou.size(); ++i)
        ss << i << "," << per_frame_iou[i] << "," << raw_scores[i] << "," << penalized_scores[i]
           << "\n";
    return ss.str();
}

double TransferMatrix::at(int row, int col) const {
    if (row < 0 || col < 0 || static_cast<size_t>(row) >= victims.size() ||
        static_cast<size_t>(col) >= textures.size())
        throw std::out_of_range("transfer matrix: index out of range");
    return miou_percent[static_cast<size_t>(row) * textures.size() + col];
}

std::string TransferMatrix::to_csv() const {
    std::ostringstream ss;
    ss << "victim";
    for (const auto& t : textures) ss << "," << t;
    ss << "\n";
    for (size_t r = 0; r < victims.size(); ++r) {
        ss << victims[r];
        for (size_t c = 0; c < textures.size(); ++c) ss << "," << miou_percent[r * textures.size() + c];
        ss << "\n";
    }
    return ss.str();
}

std::string TransferMatrix::to_json() const {
    nlohmann::json j;
    j["victims"] = victims;
    j["textures"] = textures;
    j["miou_percent"] = miou_percent;
    return j.dump(2);
}

}  // namespace sta
