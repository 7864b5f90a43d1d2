#include "sta/tracker.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace sta {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

double CropSpec::scale_factor(const BBox& box) const {
    const double p = context_margin(box);
    return std::sqrt(area() / ((box.w + 2 * p) * (box.h + 2 * p)));
}

Tensor crop_and_scale(const Tensor& image, const BBox& box, CropRole role, const CropSpec& spec) {
    box.validate();
    if (image.shape.size() != 3) throw std::invalid_argument("crop_and_scale: image must be CxHxW");
    const int H = image.shape[1], W = image.shape[2];
    const double p = spec.context_margin(box);
    const double r = role == CropRole::kSearch ? spec.search_ratio() : 1.0;
    const double cw = r * (box.w + 2 * p);
    const double ch = r * (box.h + 2 * p);
    const int O = role == CropRole::kSearch ? spec.search_extent : spec.exemplar_extent;

    std::vector<ResamplePoint> plan(static_cast<size_t>(O) * O);
    for (int i = 0; i < O; ++i)
        for (int j = 0; j < O; ++j) {
            const double u = box.cx - cw / 2 + (j + 0.5) * cw / O - 0.5;
            const double v = box.cy - ch / 2 + (i + 0.5) * ch / O - 0.5;
            ResamplePoint& pt = plan[static_cast<size_t>(i) * O + j];
            if (u >= 0 && u <= W - 1 && v >= 0 && v <= H - 1) {
                pt.kind = ResamplePoint::kSample;
                pt.u = u;
                pt.v = v;
            } else {
                pt.kind = ResamplePoint::kMean;
            }
        }
    return resample(image, plan, O, O, 1.0, std::vector<double>(image.shape[0], 0.0));
}

double CosineWindow::value_1d(double d) const {
    return 0.5 + 0.5 * std::cos(2 * kPi * d / (size - 1));
}

void CosineWindow::validate() const {
    if (size < 2) throw std::invalid_argument("cosine window: size must be >= 2");
    if (weight < 0 || weight >= 1)
        throw std::invalid_argument("cosine window: weight must be in [0,1)");
}

Tensor apply_penalty(const Tensor& map, const CosineWindow& window) {
    window.validate();
    if (map.shape.size() != 2 || map.shape[0] != window.size || map.shape[1] != window.size)
        throw std::invalid_argument("apply_penalty: map must be " + std::to_string(window.size) +
                                    "x" + std::to_string(window.size) + ", got " +
                                    shape_str(map.shape));
    const int M = window.size;
    const double c = window.weight;
    const double center = (M - 1) / 2.0;
    Tensor out = Tensor::zeros({M, M});
    for (int y = 0; y < M; ++y)
        for (int x = 0; x < M; ++x) {
            const double w = window.value_1d(y - center) * window.value_1d(x - center);
            out.data[static_cast<int64_t>(y) * M + x] =
                (1 - c) * map.data[static_cast<int64_t>(y) * M + x] + c * w;
        }
    return out;
}

double mislead_threshold(double d, double d_prime, double c, int M) {
    if (c < 0 || c >= 1)
        throw std::invalid_argument("mislead_threshold: c must be in [0,1)");
    if (M < 2) throw std::invalid_argument("mislead_threshold: M must be >= 2");
    return 0.5 * c / (1 - c) *
           (std::cos(2 * kPi * d_prime / (M - 1)) - std::cos(2 * kPi * d / (M - 1)));
}

bool check_mislead(double s, double s_prime, double d, double d_prime, double c, int M) {
    return (s - s_prime) < mislead_threshold(d, d_prime, c, M);
}

namespace {

// Raw score map for the state's head; plain values (no tape expected).
Tensor raw_score_map(const Victim& victim, const TrackerState& state, const Tensor& frame) {
    Tensor crop = crop_and_scale(frame, state.box, CropRole::kSearch, state.spec);
    Tensor fx = embed(victim, crop);
    if (state.head == HeadKind::kSymmetric)
        return scalar_mul(cross_correlate(state.exemplar_feat, fx), victim.score_norm);

    Tensor x_adj = conv2d(fx, victim.rpn->search_adjust, 1);
    const int k = victim.rpn->k;
    std::vector<Tensor> maps;
    for (int j = 0; j < 2 * k; ++j)
        maps.push_back(scalar_mul(normalized_correlate(state.rpn_kernels[j], x_adj),
                                  victim.rpn->logit_gain));
    const int M = maps[0].shape[0];
    Tensor out = Tensor::zeros({M, M});
    for (int64_t cidx = 0; cidx < static_cast<int64_t>(M) * M; ++cidx) {
        double best = 0;
        for (int a = 0; a < k; ++a) {
            const double bg = maps[2 * a].data[cidx];
            const double fg = maps[2 * a + 1].data[cidx];
            const double prob = 1.0 / (1.0 + std::exp(bg - fg));
            if (a == 0 || prob > best) best = prob;
        }
        out.data[cidx] = best;
    }
    return out;
}

int64_t argmax_row_major(const Tensor& t) {
    int64_t best = 0;
    for (int64_t i = 1; i < t.size(); ++i)
        if (t.data[i] > t.data[best]) best = i;  // ties: smallest index wins
    return best;
}

}  // namespace

TrackerState init_tracker(const Victim& victim, const Tensor& frame0, const BBox& init_box,
                          const TrackerConfig& cfg) {
    init_box.validate();
    TrackerState state;
    state.box = init_box;
    state.spec = CropSpec::from_geometry(victim.geom);
    state.head = victim.head;
    Tensor z = crop_and_scale(frame0, init_box, CropRole::kExemplar, state.spec);
    Tensor fz = embed(victim, z);
    if (victim.head == HeadKind::kSymmetric) {
        state.exemplar_feat = center_channels(fz);
        state.window.size = victim.geom.score_extent();
    } else {
        if (!victim.rpn) throw std::logic_error("init_tracker: RPN victim has no RPN head");
        Tensor t_adj = conv2d(fz, victim.rpn->template_adjust, 1);
        const int C = victim.geom.channels.back();
        const int h = t_adj.shape[1], w = t_adj.shape[2];
        const int64_t plane = static_cast<int64_t>(h) * w;
        for (int j = 0; j < 2 * victim.rpn->k; ++j) {
            std::vector<int64_t> idx(static_cast<size_t>(C) * plane);
            for (int64_t i = 0; i < static_cast<int64_t>(idx.size()); ++i)
                idx[i] = static_cast<int64_t>(j) * C * plane + i;
            Tensor kernel = gather(t_adj, idx, {C, h, w});
            if (j % 2 == 1) kernel = center_channels(kernel);
            state.rpn_kernels.push_back(kernel);
        }
        state.window.size = victim.geom.rpn_score_extent();
    }
    state.window.weight = cfg.cosine_weight;
    return state;
}

StepScores step(const Victim& victim, TrackerState& state, const Tensor& frame) {
    Tensor raw = raw_score_map(victim, state, frame);
    Tensor pen = apply_penalty(raw, state.window);
    const int M = state.window.size;
    const int64_t best = argmax_row_major(pen);
    const double center = (M - 1) / 2.0;
    const double dy_cells = static_cast<double>(best / M) - center;
    const double dx_cells = static_cast<double>(best % M) - center;

    const double stride = victim.geom.total_stride();
    const double p = state.spec.context_margin(state.box);
    const double r = state.spec.search_ratio();
    const double scale_x = state.spec.search_extent / (r * (state.box.w + 2 * p));
    const double scale_y = state.spec.search_extent / (r * (state.box.h + 2 * p));
    state.box.cx += dx_cells * stride / scale_x;
    state.box.cy += dy_cells * stride / scale_y;

    StepScores s;
    s.raw_max = raw.data[argmax_row_major(raw)];
    s.penalized_max = pen.data[best];
    return s;
}

std::vector<FrameScore> track(const Victim& victim, const std::vector<Tensor>& video,
                              const BBox& init_box, const TrackerConfig& cfg) {
    if (video.empty()) throw std::invalid_argument("track: empty video");
    TrackerState state = init_tracker(victim, video[0], init_box, cfg);
    std::vector<FrameScore> out;
    {
        // Frame 0 reports the init box; scores evaluated in place.
        Tensor raw = raw_score_map(victim, state, video[0]);
        Tensor pen = apply_penalty(raw, state.window);
        out.push_back({init_box, raw.data[argmax_row_major(raw)], pen.data[argmax_row_major(pen)]});
    }
    for (size_t f = 1; f < video.size(); ++f) {
        StepScores s = step(victim, state, video[f]);
        out.push_back({state.box, s.raw_max, s.penalized_max});
    }
    return out;
}

std::string track_csv(const std::vector<FrameScore>& records) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "frame,cx,cy,w,h,raw_score,penalized_score\n";
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        ss << i << "," << r.box.cx << "," << r.box.cy << "," << r.box.w << "," << r.box.h << ","
           << r.raw_max << "," << r.penalized_max << "\n";
    }
    return ss.str();
}

std::vector<FrameScore> track_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("track csv: empty file");
    std::vector<FrameScore> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        FrameScore r;
        int frame;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &frame, &r.box.cx, &r.box.cy,
                        &r.box.w, &r.box.h, &r.raw_max, &r.penalized_max) != 7)
            throw std::runtime_error("track csv: malformed line '" + line + "'");
        out.push_back(r);
    }
    return out;
}

CalibrationReport calibrate_tracker(const Victim& victim, const Scene& scene,
                                    const PlanarObject& object, const Tensor& texture,
                                    const TrackerConfig& cfg) {
    RenderedSequence seq = render_sequence(scene, object, texture);
    const BBox init{seq.gt[0].cx, seq.gt[0].cy, seq.gt[0].w, seq.gt[0].h};
    auto records = track(victim, seq.frames, init, cfg);
    CalibrationReport rep;
    double sum = 0;
    for (size_t i = 0; i < records.size(); ++i) {
        const BBox gt{seq.gt[i].cx, seq.gt[i].cy, seq.gt[i].w, seq.gt[i].h};
        const double v = iou(records[i].box, gt);
        rep.per_frame_iou.push_back(v);
        sum += v;
    }
    rep.mean_iou = sum / records.size();
    rep.pass = rep.mean_iou >= 0.5;
    return rep;
}

}  // namespace sta
