#include "sta/attack.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sta {

void EotRange::validate() const {
    if (lo > hi) throw std::invalid_argument("eot range: lo > hi");
}

void AttackConfig::validate() const {
    if (iters < 1) throw std::invalid_argument("attack: iteration count must be >= 1");
    if (!(step > 0)) throw std::invalid_argument("attack: step size must be > 0");
    if (!(decay > 0)) throw std::invalid_argument("attack: decay must be > 0");
    if (eot_k < 1) throw std::invalid_argument("attack: EOT batch size must be >= 1");
    if (lambda < 0) throw std::invalid_argument("attack: lambda must be >= 0");
    if (rounds < 1) throw std::invalid_argument("attack: rounds must be >= 1");
    if (canvas < 8) throw std::invalid_argument("attack: canvas too small");
}

std::vector<ViewParams> sample_views(const EotDistribution& dist, int count, Rng& rng) {
    if (count < 1) throw std::invalid_argument("sample_views: count must be >= 1");
    for (const auto* r : {&dist.scale, &dist.rotation, &dist.shear, &dist.translation, &dist.gain,
                          &dist.background, &dist.occluder_phase})
        r->validate();
    std::vector<ViewParams> out(count);
    for (auto& v : out) {
        v.scale = rng.uniform(dist.scale.lo, dist.scale.hi);
        v.rotation = rng.uniform(dist.rotation.lo, dist.rotation.hi);
        v.shear = rng.uniform(dist.shear.lo, dist.shear.hi);
        v.tx = rng.uniform(dist.translation.lo, dist.translation.hi);
        v.ty = rng.uniform(dist.translation.lo, dist.translation.hi);
        v.gain = rng.uniform(dist.gain.lo, dist.gain.hi);
        for (auto& c : v.background) c = rng.uniform(dist.background.lo, dist.background.hi);
        v.occluder_phase = rng.uniform(dist.occluder_phase.lo, dist.occluder_phase.hi);
        v.validate();
    }
    return out;
}

namespace {

struct BranchCrops {
    Tensor exemplar;
    Tensor search;
};

// Render one EOT sample and split it into exemplar/search crops, imitating
// the tracker's own crop/scale process.
BranchCrops render_and_crop(const Victim& victim, const PlanarObject& object,
                            const Tensor& texture, const ViewParams& view_z,
                            const ViewParams& view_x, int canvas) {
    const CropSpec spec = CropSpec::from_geometry(victim.geom);
    BranchCrops out;
    {
        Tensor img = render(object, texture, view_z, canvas, canvas);
        const GtBox b = target_extent(object, view_z, canvas, canvas);
        out.exemplar = crop_and_scale(img, {b.cx, b.cy, b.w, b.h}, CropRole::kExemplar, spec);
    }
    {
        Tensor img = render(object, texture, view_x, canvas, canvas);
        const GtBox b = target_extent(object, view_x, canvas, canvas);
        out.search = crop_and_scale(img, {b.cx, b.cy, b.w, b.h}, CropRole::kSearch, spec);
    }
    return out;
}

Tensor eot_mean_plus_l2(std::vector<Tensor> terms, const Tensor& texture, double lambda,
                        const Tensor& clean_texture) {
    Tensor acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    Tensor loss = scalar_mul(acc, 1.0 / static_cast<double>(terms.size()));
    if (lambda > 0) loss = add(loss, scalar_mul(l2_distance(texture, clean_texture), lambda));
    return loss;
}

std::vector<std::pair<ViewParams, ViewParams>> view_pairs(const std::vector<ViewParams>& views,
                                                          bool independent) {
    std::vector<std::pair<ViewParams, ViewParams>> pairs;
    if (independent) {
        if (views.size() % 2 != 0)
            throw std::invalid_argument("independent views need an even sample count");
        for (size_t i = 0; i < views.size(); i += 2) pairs.emplace_back(views[i], views[i + 1]);
    } else {
        for (const auto& v : views) pairs.emplace_back(v, v);
    }
    return pairs;
}

}  // namespace

Tensor sta_loss_symmetric(const Victim& victim, const PlanarObject& object, const Tensor& texture,
                          const std::vector<ViewParams>& views, double lambda,
                          const Tensor& clean_texture, const AttackConfig& cfg) {
    const int M = victim.geom.score_extent();
    std::vector<Tensor> terms;
    for (const auto& [vz, vx] : view_pairs(views, cfg.independent_views)) {
        BranchCrops crops = render_and_crop(victim, object, texture, vz, vx, cfg.canvas);
        Tensor map = symmetric_score(victim, crops.exemplar, crops.search);
        int64_t idx = (static_cast<int64_t>(M / 2)) * M + M / 2;
        if (cfg.objective == AttackObjective::kGlobalMax) {
            for (int64_t i = 1; i < map.size(); ++i)
                if (map.data[i] > map.data[idx]) idx = i;
        }
        terms.push_back(pick(map, idx));
    }
    return eot_mean_plus_l2(std::move(terms), texture, lambda, clean_texture);
}

Tensor sta_loss_rpn(const Victim& victim, const PlanarObject& object, const Tensor& texture,
                    const std::vector<ViewParams>& views, double lambda,
                    const Tensor& clean_texture, const AttackConfig& cfg) {
    // The crop process centers the target in the search window, so the
    // anchors that classify the target live in a small neighborhood of the
    // score-map center. Labeling every far-away background cell as well would
    // let the optimizer trade center foreground confidence for background
    // confidence elsewhere, which works against the attack.
    constexpr int kTargetRadius = 0;
    std::vector<Tensor> terms;
    for (const auto& [vz, vx] : view_pairs(views, cfg.independent_views)) {
        BranchCrops crops = render_and_crop(victim, object, texture, vz, vx, cfg.canvas);
        Tensor logits = rpn_cls_logits(victim, crops.exemplar, crops.search);
        const int k = logits.shape[0] / 2, M = logits.shape[1];
        const int64_t mm = static_cast<int64_t>(M) * M;
        std::vector<int64_t> idx;
        for (int a = 0; a < k; ++a)
            for (int dy = -kTargetRadius; dy <= kTargetRadius; ++dy)
                for (int dx = -kTargetRadius; dx <= kTargetRadius; ++dx) {
                    const int64_t cell = (static_cast<int64_t>(M / 2 + dy)) * M + (M / 2 + dx);
                    idx.push_back((2 * a) * mm + cell);
                    idx.push_back((2 * a + 1) * mm + cell);
                }
        const int rows = static_cast<int>(idx.size() / 2);
        Tensor pairs = gather(logits, idx, {rows, 2});
        terms.push_back(softmax_cross_entropy(pairs, std::vector<int>(rows, 0)));
    }
    return eot_mean_plus_l2(std::move(terms), texture, lambda, clean_texture);
}

Tensor pgd_step(const Tensor& texture, const Tensor& gradient, double step_size) {
    if (texture.shape != gradient.shape)
        throw std::invalid_argument("pgd_step: shape mismatch " + shape_str(texture.shape) +
                                    " vs " + shape_str(gradient.shape));
    Tensor out = Tensor::zeros(texture.shape);
    for (int64_t i = 0; i < texture.size(); ++i) {
        if (!std::isfinite(gradient.data[i]))
            throw std::runtime_error("pgd_step: non-finite gradient at index " + std::to_string(i));
        out.data[i] = std::clamp(texture.data[i] - step_size * gradient.data[i], 0.0, 1.0);
    }
    out.node = -1;
    return out;
}

AttackResult run_sta(const Victim& victim, const PlanarObject& object,
                     const Tensor& clean_texture, const Tensor& start_texture,
                     const EotDistribution& dist, const AttackConfig& cfg) {
    cfg.validate();
    object.validate();
    AttackResult res;
    res.texture = start_texture;
    res.texture.node = -1;
    Rng rng(cfg.seed);
    const int samples_per_iter = cfg.independent_views ? 2 * cfg.eot_k : cfg.eot_k;
    for (int it = 0; it < cfg.iters; ++it) {
        auto views = sample_views(dist, samples_per_iter, rng);
        Tape tape;
        TapeScope scope(tape);
        Tensor tex = tape.leaf(res.texture);
        Tensor loss = victim.head == HeadKind::kSymmetric
                          ? sta_loss_symmetric(victim, object, tex, views, cfg.lambda,
                                               clean_texture, cfg)
                          : sta_loss_rpn(victim, object, tex, views, cfg.lambda, clean_texture,
                                         cfg);
        tape.backward(loss);
        res.loss_trace.push_back(loss.value());
        // Normalize by the largest gradient entry so the step size measures
        // texel change directly and is insensitive to the victim's loss scale.
        Tensor grad = tape.grad(tex);
        double gmax = 0;
        for (double g : grad.data) gmax = std::max(gmax, std::abs(g));
        if (gmax > 0)
            for (double& g : grad.data) g /= gmax;
        res.texture = pgd_step(res.texture, grad, cfg.step);
    }
    res.l2_final = l2_distance(res.texture, clean_texture).value();
    return res;
}

uint64_t combined_segment_seed(uint64_t seed, int round, int victim_index) {
    return seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<uint64_t>(round) * 64 + victim_index + 1));
}

AttackResult run_combined(const std::vector<const Victim*>& victims, const PlanarObject& object,
                          const Tensor& clean_texture, const EotDistribution& dist,
                          const AttackConfig& cfg) {
    cfg.validate();
    if (victims.empty()) throw std::invalid_argument("run_combined: no victims");
    AttackResult res;
    res.texture = clean_texture;
    res.texture.node = -1;
    for (int round = 0; round < cfg.rounds; ++round) {
        AttackConfig seg = cfg;
        seg.step = cfg.step * std::pow(cfg.decay, round);
        for (size_t vi = 0; vi < victims.size(); ++vi) {
            seg.seed = combined_segment_seed(cfg.seed, round, static_cast<int>(vi));
            AttackResult part =
                run_sta(*victims[vi], object, clean_texture, res.texture, dist, seg);
            res.texture = part.texture;
            res.loss_trace.insert(res.loss_trace.end(), part.loss_trace.begin(),
                                  part.loss_trace.end());
        }
    }
    res.l2_final = l2_distance(res.texture, clean_texture).value();
    return res;
}

double mean_eot_score(const Victim& victim, const PlanarObject& object, const Tensor& texture,
                      const EotDistribution& dist, int samples, uint64_t seed, int canvas) {
    Rng rng(seed);
    auto views = sample_views(dist, samples, rng);
    double acc = 0;
    for (const auto& v : views) {
        BranchCrops crops = render_and_crop(victim, object, texture, v, v, canvas);
        if (victim.head == HeadKind::kSymmetric) {
            const int M = victim.geom.score_extent();
            Tensor map = symmetric_score(victim, crops.exemplar, crops.search);
            acc += map.data[(static_cast<int64_t>(M / 2)) * M + M / 2];
        } else {
            Tensor logits = rpn_cls_logits(victim, crops.exemplar, crops.search);
            const int k = logits.shape[0] / 2, M = logits.shape[1];
            const int64_t mm = static_cast<int64_t>(M) * M;
            const int64_t center = (static_cast<int64_t>(M / 2)) * M + M / 2;
            double cell = 0;
            for (int a = 0; a < k; ++a) {
                const double bg = logits.data[(2 * a) * mm + center];
                const double fg = logits.data[(2 * a + 1) * mm + center];
                cell += 1.0 / (1.0 + std::exp(bg - fg));
            }
            acc += cell / k;
        }
    }
    return acc / samples;
}

std::string AttackResult::loss_trace_csv() const {
    std::ostringstream ss;
    ss.precision(17);
    ss << "iteration,loss\n";
    for (size_t i = 0; i < loss_trace.size(); ++i) ss << i << "," << loss_trace[i] << "\n";
    return ss.str();
}

}  // namespace sta
