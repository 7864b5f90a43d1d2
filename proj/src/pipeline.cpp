#include "sta/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include "json.hpp"
#include "sta/image_io.hpp"
#include "sta/rng.hpp"

namespace sta {

namespace fs = std::filesystem;
using nlohmann::json;

Scene default_scene() {
    Scene s;
    s.width = 256;
    s.height = 96;
    s.frames = 60;
    s.background.type = Background::Type::kSolid;
    s.background.color = {0.92, 0.92, 0.96};
    s.target_w = 28;
    s.target_h = 28;
    const int n = 5;
    for (int i = 0; i < n; ++i)
        s.occluders.push_back({s.width * static_cast<double>(i + 1) / (n + 1), 10.0,
                               {0.72, 0.72, 0.78}});
    s.trajectory = {{0, 20, s.height / 2.0}, {s.frames - 1, s.width - 20.0, s.height / 2.0}};
    return s;
}

Scene occlusion_free_scene() {
    Scene s = default_scene();
    s.occluders.clear();
    return s;
}

Tensor make_clean_texture(int size, uint64_t seed) {
    Rng rng(seed ^ 0x544558434c45414eULL);
    const int blocks = 6;
    std::vector<std::array<double, 3>> palette(static_cast<size_t>(blocks) * blocks);
    for (auto& col : palette)
        for (auto& c : col) c = rng.uniform() < 0.5 ? 0.05 + 0.2 * rng.uniform()
                                                    : 0.75 + 0.2 * rng.uniform();
    Tensor tex = Tensor::zeros({3, size, size});
    const int64_t plane = static_cast<int64_t>(size) * size;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const int by = std::min(blocks - 1, y * blocks / size);
            const int bx = std::min(blocks - 1, x * blocks / size);
            for (int c = 0; c < 3; ++c)
                tex.data[c * plane + static_cast<int64_t>(y) * size + x] =
                    palette[static_cast<size_t>(by) * blocks + bx][c];
        }
    return tex;
}

Tensor make_random_texture(int size, uint64_t seed) {
    Rng rng(seed ^ 0x54455852414e444fULL);
    Tensor tex = Tensor::zeros({3, size, size});
    for (auto& v : tex.data) v = rng.uniform();
    return tex;
}

namespace {

Tensor quantize_like_png(const Tensor& t) {
    Tensor out = t;
    for (auto& v : out.data) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    out.node = -1;
    return out;
}

std::vector<TrainPair> build_finetune_pairs(const Victim& victim, const Tensor& texture,
                                            uint64_t seed) {
    const PlanarObject object = PlanarObject::for_texture(texture);
    const CropSpec spec = CropSpec::from_geometry(victim.geom);
    EotDistribution dist;
    Rng rng(seed ^ 0x46494e4554554e45ULL);
    auto views = sample_views(dist, 8, rng);
    std::vector<TrainPair> pairs;
    for (const auto& v : views) {
        Tensor img = render(object, texture, v, 160, 160);
        const GtBox b = target_extent(object, v, 160, 160);
        const BBox box{b.cx, b.cy, b.w, b.h};
        TrainPair pos;
        pos.exemplar = crop_and_scale(img, box, CropRole::kExemplar, spec);
        pos.search = crop_and_scale(img, box, CropRole::kSearch, spec);
        pos.label = 1;
        pairs.push_back(std::move(pos));
        // Negative: same exemplar against a target-free background image.
        Tensor bg = Tensor::zeros({3, 160, 160});
        for (int c = 0; c < 3; ++c)
            std::fill(bg.data.begin() + c * 160 * 160, bg.data.begin() + (c + 1) * 160 * 160,
                      v.background[c]);
        TrainPair neg;
        neg.exemplar = pairs.back().exemplar;
        neg.search = crop_and_scale(bg, box, CropRole::kSearch, spec);
        neg.label = -1;
        pairs.push_back(std::move(neg));
    }
    return pairs;
}

}  // namespace

Victim build_victim(const VictimSpec& spec) {
    Victim v = init_victim(spec.head, spec.geom, spec.seed);
    if (spec.finetune_iters > 0) {
        Tensor tex = make_clean_texture(48, spec.seed);
        auto pairs = build_finetune_pairs(v, tex, spec.seed);
        finetune_embedder(v, pairs, 0.01, spec.finetune_iters);
    }
    if (spec.head == HeadKind::kRpn && spec.rpn_train_iters > 0) {
        // Train the classification branch the way RPN trackers are trained:
        // discriminate the (clean-textured) target from target-free views.
        // This is what makes the branch confident on the clean texture and
        // correspondingly sensitive to texture perturbations.
        Tensor tex = make_clean_texture(48, spec.seed);
        auto pairs = build_finetune_pairs(v, tex, spec.seed);
        finetune_rpn(v, pairs, 0.0125 / v.rpn->logit_gain, spec.rpn_train_iters);
    }
    return v;
}

// ---- gradcheck ----

GradcheckReport gradcheck_full_pipeline(const Victim& victim, const EotDistribution& dist,
                                        int texture_size, int n_coords, uint64_t seed,
                                        double step_h, double tol) {
    Rng rng(seed ^ 0x4752414443484b21ULL);
    Tensor clean = make_clean_texture(texture_size, seed);
    Tensor start = make_random_texture(texture_size, seed + 1);
    for (int64_t i = 0; i < start.size(); ++i)
        start.data[i] = 0.15 + 0.7 * (0.6 * clean.data[i] + 0.4 * start.data[i]);
    const PlanarObject object = PlanarObject::for_texture(clean);
    auto views = sample_views(dist, 2, rng);
    AttackConfig cfg;
    cfg.canvas = 160;

    auto loss_of = [&](const Tensor& tex) {
        return victim.head == HeadKind::kSymmetric
                   ? sta_loss_symmetric(victim, object, tex, views, 1e-3, clean, cfg)
                   : sta_loss_rpn(victim, object, tex, views, 1e-3, clean, cfg);
    };

    Tape tape;
    Tensor analytic;
    {
        TapeScope scope(tape);
        Tensor tex = tape.leaf(start);
        Tensor loss = loss_of(tex);
        tape.backward(loss);
        analytic = tape.grad(tex);
    }

    GradcheckReport rep;
    for (int i = 0; i < n_coords; ++i) {
        const int64_t idx = static_cast<int64_t>(rng.uniform() * start.size());
        Tensor plus = start, minus = start;
        plus.data[idx] += step_h;
        minus.data[idx] -= step_h;
        const double fd = (loss_of(plus).value() - loss_of(minus).value()) / (2 * step_h);
        const double a = analytic.data[idx];
        const double denom = std::max({std::abs(a), std::abs(fd), 1e-8});
        const double rel = std::abs(a - fd) / denom;
        rep.checked++;
        rep.max_rel_err = std::max(rep.max_rel_err, rel);
        if (rel > tol) rep.failed++;
    }
    return rep;
}

// ---- config parsing ----

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& ctx) {
    if (!j.is_object()) throw ConfigError("config: '" + ctx + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "' in " + ctx);
}

EotRange range_from(const json& j, const std::string& ctx) {
    if (!j.is_array() || j.size() != 2) throw ConfigError("config: " + ctx + " must be [lo,hi]");
    EotRange r{j[0].get<double>(), j[1].get<double>()};
    if (r.lo > r.hi) throw ConfigError("config: " + ctx + " has lo > hi");
    return r;
}

Scene scene_from_config(const json& sj) {
    reject_unknown(sj,
                   {"path", "width", "height", "frames", "background", "occluders",
                    "occluder_width", "occluder_color", "target", "trajectory"},
                   "scene");
    Scene s = default_scene();
    if (sj.contains("width")) s.width = sj["width"].get<int>();
    if (sj.contains("height")) s.height = sj["height"].get<int>();
    if (sj.contains("frames")) s.frames = sj["frames"].get<int>();
    if (sj.contains("background")) {
        json full;
        full["width"] = s.width;
        full["height"] = s.height;
        full["frames"] = 2;
        full["background"] = sj["background"];
        full["trajectory"] = {{{"frame", 0}, {"cx", 0}, {"cy", 0}}, {{"frame", 1}, {"cx", 0}, {"cy", 0}}};
        s.background = Scene::from_json(full.dump()).background;
    }
    double oc_width = sj.value("occluder_width", 10.0);
    std::array<double, 3> oc_color = {0.72, 0.72, 0.78};
    if (sj.contains("occluder_color")) {
        const auto& c = sj["occluder_color"];
        oc_color = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
    }
    if (sj.contains("occluders")) {
        s.occluders.clear();
        if (sj["occluders"].is_number_integer()) {
            const int n = sj["occluders"].get<int>();
            if (n < 0) throw ConfigError("config: scene.occluders must be >= 0");
            for (int i = 0; i < n; ++i)
                s.occluders.push_back(
                    {s.width * static_cast<double>(i + 1) / (n + 1), oc_width, oc_color});
        } else if (sj["occluders"].is_array()) {
            for (const auto& oj : sj["occluders"]) {
                reject_unknown(oj, {"x", "width", "color"}, "scene.occluders[]");
                Occluder oc;
                oc.x = oj.at("x").get<double>();
                oc.width = oj.value("width", oc_width);
                oc.color = oc_color;
                if (oj.contains("color")) {
                    const auto& c = oj["color"];
                    oc.color = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>()};
                }
                s.occluders.push_back(oc);
            }
        } else {
            throw ConfigError("config: scene.occluders must be a count or a list");
        }
    }
    if (sj.contains("target")) {
        reject_unknown(sj["target"], {"width", "height"}, "scene.target");
        s.target_w = sj["target"].value("width", s.target_w);
        s.target_h = sj["target"].value("height", s.target_h);
    }
    if (sj.contains("trajectory")) {
        s.trajectory.clear();
        for (const auto& kj : sj["trajectory"]) {
            reject_unknown(kj, {"frame", "cx", "cy"}, "scene.trajectory[]");
            s.trajectory.push_back(
                {kj.at("frame").get<int>(), kj.at("cx").get<double>(), kj.at("cy").get<double>()});
        }
    } else {
        s.trajectory = {{0, 20, s.height / 2.0}, {s.frames - 1, s.width - 20.0, s.height / 2.0}};
    }
    s.validate();
    return s;
}

VictimSpec victim_from_config(const json& vj, const std::string& ctx) {
    reject_unknown(vj,
                   {"name", "head", "seed", "exemplar", "search", "channels", "strides", "kernel",
                    "anchors", "finetune_iters", "rpn_train_iters"},
                   ctx);
    VictimSpec v;
    v.name = vj.value("name", std::string("victim"));
    v.head = head_kind_from_name(vj.value("head", std::string("symmetric")));
    v.seed = vj.value("seed", 1ULL);
    v.geom.exemplar = vj.value("exemplar", v.geom.exemplar);
    v.geom.search = vj.value("search", v.geom.search);
    if (vj.contains("channels")) v.geom.channels = vj["channels"].get<std::vector<int>>();
    if (vj.contains("strides")) v.geom.strides = vj["strides"].get<std::vector<int>>();
    v.geom.kernel = vj.value("kernel", v.geom.kernel);
    v.geom.anchors = vj.value("anchors", v.geom.anchors);
    v.finetune_iters = vj.value("finetune_iters", 0);
    v.rpn_train_iters = vj.value("rpn_train_iters", v.rpn_train_iters);
    try {
        v.geom.validate();
    } catch (const std::exception& e) {
        throw ConfigError("config: " + ctx + ": " + e.what());
    }
    return v;
}

RunConfig parse_config(const json& j) {
    reject_unknown(j,
                   {"out", "seed", "texture_size", "scene", "victim", "victims", "tracker", "eot",
                    "attack", "write_frames", "paths"},
                   "top level");
    RunConfig c;
    c.out = j.value("out", std::string("out"));
    c.seed = j.value("seed", 1ULL);
    c.texture_size = j.value("texture_size", 48);
    if (c.texture_size < 8) throw ConfigError("config: texture_size too small");
    c.scene = j.contains("scene") ? scene_from_config(j["scene"]) : default_scene();
    if (j.contains("scene") && j["scene"].contains("path"))
        c.scene_path = j["scene"]["path"].get<std::string>();
    if (j.contains("victim")) c.victim = victim_from_config(j["victim"], "victim");
    if (j.contains("victims")) {
        for (const auto& vj : j["victims"]) c.victims.push_back(victim_from_config(vj, "victims[]"));
    } else {
        VictimSpec a;
        a.name = "sym-a";
        a.seed = 101;
        VictimSpec b;
        b.name = "sym-b";
        b.seed = 202;
        b.geom.channels = {10, 12, 16};
        c.victims = {a, b};
    }
    if (j.contains("tracker")) {
        reject_unknown(j["tracker"], {"cosine_weight", "drift_tau"}, "tracker");
        c.tracker.cosine_weight = j["tracker"].value("cosine_weight", 0.3);
        c.drift_tau = j["tracker"].value("drift_tau", 0.1);
        if (c.tracker.cosine_weight < 0 || c.tracker.cosine_weight > 1)
            throw ConfigError("config: tracker.cosine_weight must be in [0,1]");
    }
    if (j.contains("eot")) {
        const auto& e = j["eot"];
        reject_unknown(e,
                       {"scale", "rotation", "shear", "translation", "gain", "background",
                        "occluder_phase"},
                       "eot");
        if (e.contains("scale")) c.eot.scale = range_from(e["scale"], "eot.scale");
        if (e.contains("rotation")) c.eot.rotation = range_from(e["rotation"], "eot.rotation");
        if (e.contains("shear")) c.eot.shear = range_from(e["shear"], "eot.shear");
        if (e.contains("translation"))
            c.eot.translation = range_from(e["translation"], "eot.translation");
        if (e.contains("gain")) c.eot.gain = range_from(e["gain"], "eot.gain");
        if (e.contains("background")) c.eot.background = range_from(e["background"], "eot.background");
        if (e.contains("occluder_phase"))
            c.eot.occluder_phase = range_from(e["occluder_phase"], "eot.occluder_phase");
    }
    if (j.contains("attack")) {
        const auto& a = j["attack"];
        reject_unknown(a,
                       {"lambda", "step", "decay", "iters", "eot_k", "rounds",
                        "independent_views", "objective", "canvas"},
                       "attack");
        c.attack.lambda = a.value("lambda", c.attack.lambda);
        c.attack.step = a.value("step", c.attack.step);
        c.attack.decay = a.value("decay", c.attack.decay);
        c.attack.iters = a.value("iters", c.attack.iters);
        c.attack.eot_k = a.value("eot_k", c.attack.eot_k);
        c.attack.rounds = a.value("rounds", c.attack.rounds);
        c.attack.independent_views = a.value("independent_views", false);
        c.attack.canvas = a.value("canvas", c.attack.canvas);
        const std::string obj = a.value("objective", std::string("center"));
        if (obj == "center")
            c.attack.objective = AttackObjective::kCenter;
        else if (obj == "global_max")
            c.attack.objective = AttackObjective::kGlobalMax;
        else
            throw ConfigError("config: attack.objective must be center|global_max");
        try {
            c.attack.validate();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config: attack: ") + e.what());
        }
    }
    c.attack.seed = c.seed;
    c.write_frames = j.value("write_frames", false);
    if (j.contains("paths")) {
        const auto& p = j["paths"];
        reject_unknown(p, {"texture", "scene", "track_csv", "gt_csv", "baseline_csv"}, "paths");
        c.texture_path = p.value("texture", std::string());
        if (p.contains("scene")) c.scene_path = p["scene"].get<std::string>();
        c.track_csv_path = p.value("track_csv", std::string());
        c.gt_csv_path = p.value("gt_csv", std::string());
        c.baseline_csv_path = p.value("baseline_csv", std::string());
    }
    return c;
}

std::string gt_csv(const std::vector<GtBox>& gt) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "frame,cx,cy,w,h\n";
    for (size_t i = 0; i < gt.size(); ++i)
        ss << i << "," << gt[i].cx << "," << gt[i].cy << "," << gt[i].w << "," << gt[i].h << "\n";
    return ss.str();
}

std::vector<BBox> gt_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("ground truth csv: empty file");
    std::vector<BBox> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        BBox b;
        int frame;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &frame, &b.cx, &b.cy, &b.w, &b.h) != 5)
            throw ConfigError("ground truth csv: malformed line '" + line + "'");
        out.push_back(b);
    }
    return out;
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path))
        throw ConfigError(what + " not found: " + path +
                          " (run the producing command first or set paths." + what + ")");
}

std::string frame_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%03d.png", i);
    return buf;
}

}  // namespace

// ---- Pipeline ----

Pipeline::Pipeline() = default;

void Pipeline::load_config_text(const std::string& json_text) {
    try {
        json j = json::parse(json_text);
        parse_config(j);  // validate eagerly
        cfg_text_ = json_text;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

void Pipeline::load_config_file(const std::string& path) {
    require_file(path, "config file");
    load_config_text(read_text_file(path));
}

void Pipeline::set_override(const std::string& dotted_key, const std::string& value) {
    if (dotted_key.empty()) throw ConfigError("override: empty key");
    overrides_.emplace_back(dotted_key, value);
}

void Pipeline::set_seed(uint64_t seed) {
    seed_set_ = true;
    seed_ = seed;
}

void Pipeline::set_out(const std::string& dir) { out_ = dir; }

RunConfig Pipeline::config() const {
    json j;
    try {
        j = json::parse(cfg_text_.empty() ? "{}" : cfg_text_);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    for (const auto& [key, value] : overrides_) {
        json* cur = &j;
        size_t pos = 0;
        while (true) {
            const size_t dot = key.find('.', pos);
            const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
            if (part.empty()) throw ConfigError("override: bad key '" + key + "'");
            if (dot == std::string::npos) {
                json v;
                try {
                    v = json::parse(value);
                } catch (...) {
                    v = value;  // plain string
                }
                (*cur)[part] = v;
                break;
            }
            cur = &(*cur)[part];
            pos = dot + 1;
        }
    }
    if (seed_set_) j["seed"] = seed_;
    if (!out_.empty()) j["out"] = out_;
    try {
        return parse_config(j);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

void Pipeline::run_scene() {
    RunConfig c = config();
    fs::create_directories(c.out);
    Tensor texture = make_clean_texture(c.texture_size, c.seed);
    write_png(c.out + "/clean_texture.png", texture);
    write_f64(c.out + "/clean_texture.f64", texture);
    write_text_file(c.out + "/scene.json", c.scene.to_json());

    const PlanarObject object = PlanarObject::for_texture(texture);
    RenderedSequence seq = render_sequence(c.scene, object, texture);
    write_text_file(c.out + "/ground_truth.csv", gt_csv(seq.gt));
    if (c.write_frames) {
        for (int i = 0; i < static_cast<int>(seq.frames.size()); ++i)
            write_png(c.out + "/" + frame_name(i), seq.frames[i]);
    } else {
        const int n = static_cast<int>(seq.frames.size());
        for (int i : {0, n / 2, n - 1})
            write_png(c.out + "/preview_" + std::to_string(i) + ".png", seq.frames[i]);
    }
}

void Pipeline::run_attack() {
    RunConfig c = config();
    fs::create_directories(c.out);
    Tensor clean;
    if (!c.texture_path.empty()) {
        require_file(c.texture_path, "texture");
        clean = read_png(c.texture_path);
    } else if (fs::exists(c.out + "/clean_texture.png")) {
        clean = read_png(c.out + "/clean_texture.png");
    } else {
        clean = make_clean_texture(c.texture_size, c.seed);
        write_png(c.out + "/clean_texture.png", clean);
        clean = read_png(c.out + "/clean_texture.png");  // attack the quantized texture
    }
    Victim victim = build_victim(c.victim);
    save_victim(c.out + "/victim_" + c.victim.name + ".bin", victim);

    const PlanarObject object = PlanarObject::for_texture(clean);
    AttackResult res = run_sta(victim, object, clean, clean, c.eot, c.attack);
    write_png(c.out + "/adv_texture.png", res.texture);
    write_f64(c.out + "/adv_texture.f64", res.texture);
    write_text_file(c.out + "/loss_trace.csv", res.loss_trace_csv());

    const int kScoreSamples = 32;
    const uint64_t score_seed = c.seed ^ 0x53434f5245ULL;
    Tensor quantized = quantize_like_png(res.texture);
    json rep;
    rep["clean_score"] =
        mean_eot_score(victim, object, clean, c.eot, kScoreSamples, score_seed, c.attack.canvas);
    rep["adv_score_raw"] =
        mean_eot_score(victim, object, res.texture, c.eot, kScoreSamples, score_seed, c.attack.canvas);
    rep["adv_score_quantized"] = mean_eot_score(victim, object, quantized, c.eot, kScoreSamples,
                                                score_seed, c.attack.canvas);
    rep["l2_final"] = res.l2_final;
    rep["l2_quantized"] = l2_distance(quantized, clean).value();
    rep["iterations"] = c.attack.iters;
    write_text_file(c.out + "/attack_report.json", rep.dump(2));
}

void Pipeline::run_track() {
    RunConfig c = config();
    fs::create_directories(c.out);
    Scene scene = c.scene;
    if (!c.scene_path.empty()) {
        require_file(c.scene_path, "scene");
        scene = Scene::from_json(read_text_file(c.scene_path));
    } else if (fs::exists(c.out + "/scene.json")) {
        scene = Scene::from_json(read_text_file(c.out + "/scene.json"));
    }
    std::string tex_path = c.texture_path;
    if (tex_path.empty()) tex_path = c.out + "/clean_texture.png";
    require_file(tex_path, "texture");
    Tensor texture = read_png(tex_path);

    Victim victim = build_victim(c.victim);
    const PlanarObject object = PlanarObject::for_texture(texture);
    RenderedSequence seq = render_sequence(scene, object, texture);
    const BBox init{seq.gt[0].cx, seq.gt[0].cy, seq.gt[0].w, seq.gt[0].h};
    auto records = track(victim, seq.frames, init, c.tracker);
    write_text_file(c.out + "/track.csv", track_csv(records));
    write_text_file(c.out + "/track_gt.csv", gt_csv(seq.gt));
    if (c.write_frames)
        for (int i = 0; i < static_cast<int>(seq.frames.size()); ++i)
            write_png(c.out + "/" + frame_name(i), seq.frames[i]);

    std::vector<BBox> gt;
    for (const auto& g : seq.gt) gt.push_back({g.cx, g.cy, g.w, g.h});
    EvalReport rep = evaluate(records, gt, nullptr, c.drift_tau);
    json j;
    j["mean_iou"] = rep.mean_iou;
    j["calibration_pass"] = rep.mean_iou >= 0.5;
    if (rep.drift_frame)
        j["drift_frame"] = *rep.drift_frame;
    else
        j["drift_frame"] = nullptr;
    j["texture"] = tex_path;
    write_text_file(c.out + "/track_report.json", j.dump(2));
}

void Pipeline::run_eval() {
    RunConfig c = config();
    fs::create_directories(c.out);
    std::string track_path = c.track_csv_path.empty() ? c.out + "/track.csv" : c.track_csv_path;
    std::string gt_path = c.gt_csv_path.empty() ? c.out + "/track_gt.csv" : c.gt_csv_path;
    require_file(track_path, "track_csv");
    require_file(gt_path, "gt_csv");
    auto records = track_from_csv(read_text_file(track_path));
    auto gt = gt_from_csv(read_text_file(gt_path));
    std::vector<FrameScore> baseline;
    const std::vector<FrameScore>* baseline_ptr = nullptr;
    if (!c.baseline_csv_path.empty()) {
        require_file(c.baseline_csv_path, "baseline_csv");
        baseline = track_from_csv(read_text_file(c.baseline_csv_path));
        baseline_ptr = &baseline;
    }
    EvalReport rep = evaluate(records, gt, baseline_ptr, c.drift_tau);
    write_text_file(c.out + "/report.json", rep.to_json());
    write_text_file(c.out + "/curves.csv", rep.curves_csv());
}

void Pipeline::run_transfer() {
    RunConfig c = config();
    fs::create_directories(c.out);
    if (c.victims.size() < 2) throw ConfigError("transfer: need at least 2 victims");
    Tensor clean;
    if (!c.texture_path.empty()) {
        require_file(c.texture_path, "texture");
        clean = read_png(c.texture_path);
    } else {
        clean = quantize_like_png(make_clean_texture(c.texture_size, c.seed));
    }
    const PlanarObject object = PlanarObject::for_texture(clean);

    std::vector<Victim> victims;
    for (const auto& spec : c.victims) victims.push_back(build_victim(spec));

    TransferMatrix m;
    std::vector<Tensor> textures;
    for (size_t i = 0; i < victims.size(); ++i) {
        m.victims.push_back(c.victims[i].name);
        AttackConfig acfg = c.attack;
        acfg.seed = c.seed + i;
        AttackResult res = run_sta(victims[i], object, clean, clean, c.eot, acfg);
        Tensor q = quantize_like_png(res.texture);
        write_png(c.out + "/adv_" + c.victims[i].name + ".png", q);
        textures.push_back(q);
        m.textures.push_back("adv_" + c.victims[i].name);
    }
    {
        std::vector<const Victim*> vp;
        for (const auto& v : victims) vp.push_back(&v);
        AttackConfig acfg = c.attack;
        acfg.seed = c.seed;
        AttackResult res = run_combined(vp, object, clean, c.eot, acfg);
        Tensor q = quantize_like_png(res.texture);
        write_png(c.out + "/adv_combined.png", q);
        textures.push_back(q);
        m.textures.push_back("combined");
    }
    textures.push_back(clean);
    m.textures.push_back("clean");
    textures.push_back(quantize_like_png(make_random_texture(c.texture_size, c.seed)));
    m.textures.push_back("random");

    for (const auto& victim : victims) {
        for (const auto& tex : textures) {
            RenderedSequence seq = render_sequence(c.scene, PlanarObject::for_texture(tex), tex);
            const BBox init{seq.gt[0].cx, seq.gt[0].cy, seq.gt[0].w, seq.gt[0].h};
            auto records = track(victim, seq.frames, init, c.tracker);
            double sum = 0;
            for (size_t i = 0; i < records.size(); ++i)
                sum += iou(records[i].box, {seq.gt[i].cx, seq.gt[i].cy, seq.gt[i].w, seq.gt[i].h});
            m.miou_percent.push_back(100.0 * sum / records.size());
        }
    }
    write_text_file(c.out + "/transfer.csv", m.to_csv());
    write_text_file(c.out + "/transfer.json", m.to_json());
}

void Pipeline::run_gradcheck() {
    RunConfig c = config();
    fs::create_directories(c.out);
    VictimSpec sym = c.victim;
    sym.head = HeadKind::kSymmetric;
    VictimSpec rpn = c.victim;
    rpn.head = HeadKind::kRpn;
    Victim vs = build_victim(sym);
    Victim vr = build_victim(rpn);
    GradcheckReport rs =
        gradcheck_full_pipeline(vs, c.eot, c.texture_size, 60, c.seed, 1e-5, 1e-4);
    GradcheckReport rr =
        gradcheck_full_pipeline(vr, c.eot, c.texture_size, 60, c.seed + 1, 1e-5, 1e-4);
    json j;
    j["symmetric"] = {{"checked", rs.checked}, {"failed", rs.failed},
                      {"max_rel_err", rs.max_rel_err}};
    j["rpn"] = {{"checked", rr.checked}, {"failed", rr.failed}, {"max_rel_err", rr.max_rel_err}};
    write_text_file(c.out + "/gradcheck_report.json", j.dump(2));
    if (!rs.pass() || !rr.pass())
        throw NumericError("gradient check failed: symmetric max rel err " +
                           std::to_string(rs.max_rel_err) + ", rpn " +
                           std::to_string(rr.max_rel_err));
}

}  // namespace sta
