// Victim models: a shared convolutional embedder, a fully symmetric
// correlation head, and an asymmetric RPN-style anchor classification head.
// Weights are random but calibrated so activations stay unit-order.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sta/tensor.hpp"

namespace sta {

enum class HeadKind { kSymmetric, kRpn };

// Logit scale applied to the RPN head's cosine similarities.
inline constexpr double kRpnLogitScale = 3.0;

std::string head_kind_name(HeadKind k);
HeadKind head_kind_from_name(const std::string& name);

struct VictimGeometry {
    int exemplar = 32;
    int search = 64;
    std::vector<int> channels = {8, 16, 16};
    std::vector<int> strides = {2, 1, 1};
    int kernel = 3;
    int anchors = 3;  // k aspect ratios (RPN head)
    int adjust_kernel = 3;

    void validate() const;
    int total_stride() const;
    // Spatial extent of embedder output for a square input.
    int feature_extent(int input_extent) const;
    int score_extent() const;      // symmetric head M
    int rpn_score_extent() const;  // RPN head M
};

struct Embedder {
    std::vector<Tensor> kernels;  // layer i: C_out x C_in x k x k, no biases
    std::vector<int> strides;
};

struct RpnHead {
    Tensor template_adjust;  // (2k*C) x C x a x a
    Tensor search_adjust;    // C x C x a x a
    int k = 3;
    // Fixed logit scale calibrated at init so a matched pair peaks near
    // kRpnLogitScale; the search window norm is divided out per cell.
    double logit_gain = 1.0;
};

struct Victim {
    HeadKind head = HeadKind::kSymmetric;
    VictimGeometry geom;
    Embedder embedder;
    std::optional<RpnHead> rpn;
    uint64_t seed = 0;
    double score_norm = 1.0;  // symmetric head: 1/(C*h_z*w_z)
};

// Calibrated random weights, deterministic per seed.
Victim init_victim(HeadKind head, const VictimGeometry& geom, uint64_t seed);

// Shared-branch feature extraction; image must match exemplar or search size.
Tensor embed(const Victim& victim, const Tensor& image);

// cross_correlate(embed(z), embed(x)) * score_norm; shape MxM.
Tensor symmetric_score(const Victim& victim, const Tensor& z_img, const Tensor& x_img);

// Per-anchor fg/bg logits, shape 2k x M x M.
// Channel 2a is the background logit of anchor a, channel 2a+1 the foreground.
Tensor rpn_cls_logits(const Victim& victim, const Tensor& z_img, const Tensor& x_img);

// Rearranges 2k x M x M logits into Nx2 rows (col 0 = background, col 1 = fg).
Tensor rpn_logits_pairs(const Tensor& logits);

// Per-cell max over anchors of the foreground softmax probability; MxM.
Tensor rpn_fg_prob_map(const Victim& victim, const Tensor& z_img, const Tensor& x_img);

// Optional victim hardening: logistic loss on (exemplar, search, label) pairs,
// plain gradient descent on the embedder kernels.
struct TrainPair {
    Tensor exemplar;
    Tensor search;
    int label = 1;  // +1 target present at center, -1 absent
};
void finetune_embedder(Victim& victim, const std::vector<TrainPair>& pairs, double lr, int iters);

// RPN head hardening: cross entropy on the center-cell anchor logits
// (foreground for label +1 pairs, background for label -1 pairs), plain
// gradient descent on the two adjust layers only.
void finetune_rpn(Victim& victim, const std::vector<TrainPair>& pairs, double lr, int iters);

// Checkpoint: flat binary tensor file plus a JSON manifest at path + ".json".
void save_victim(const std::string& path, const Victim& victim);
Victim load_victim(const std::string& path);

}  // namespace sta
