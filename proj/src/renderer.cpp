#include "sta/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "json.hpp"

namespace sta {

namespace {
constexpr double kInsideEps = 1e-9;
}

void ViewParams::validate() const {
    if (!(scale > 0)) throw std::invalid_argument("view: scale must be > 0");
    if (!(gain > 0) && gain != 0) throw std::invalid_argument("view: gain must be >= 0");
    for (double c : background)
        if (c < 0 || c > 1) throw std::invalid_argument("view: background color outside [0,1]");
    if (occluder_phase < 0 || occluder_phase > 1)
        throw std::invalid_argument("view: occluder_phase outside [0,1]");
}

PlanarObject PlanarObject::for_texture(const Tensor& texture) {
    if (texture.shape.size() != 3 || texture.shape[0] != 3)
        throw std::invalid_argument("texture must be 3xHxW, got " + shape_str(texture.shape));
    const double hw = (texture.shape[2] - 1) / 2.0;
    const double hh = (texture.shape[1] - 1) / 2.0;
    return {-hw, -hh, hw, hh};
}

void PlanarObject::validate() const {
    if (!(x1 > x0) || !(y1 > y0))
        throw std::invalid_argument("planar object quad is degenerate (non-positive area)");
}

namespace {

// Forward map: canvas = center + (tx,ty) + A * obj, A = scale * Shear * Rot.
struct Affine {
    double a, b, c, d;  // [[a,b],[c,d]]

    static Affine view_matrix(const ViewParams& v) {
        const double cs = std::cos(v.rotation), sn = std::sin(v.rotation);
        // Shear [[1,sh],[0,1]] * Rot [[cs,-sn],[sn,cs]], scaled.
        return {v.scale * (cs + v.shear * sn), v.scale * (-sn + v.shear * cs),
                v.scale * sn, v.scale * cs};
    }
    Affine inverse() const {
        const double det = a * d - b * c;
        if (std::abs(det) < 1e-12) throw std::invalid_argument("view transform is singular");
        return {d / det, -b / det, -c / det, a / det};
    }
    std::array<double, 2> apply(double x, double y) const { return {a * x + b * y, c * x + d * y}; }
};

std::vector<ResamplePoint> build_plan(const PlanarObject& object, const ViewParams& view,
                                      int canvas_w, int canvas_h) {
    const Affine inv = Affine::view_matrix(view).inverse();
    const double cx0 = (canvas_w - 1) / 2.0, cy0 = (canvas_h - 1) / 2.0;
    std::vector<ResamplePoint> plan(static_cast<size_t>(canvas_w) * canvas_h);
    for (int y = 0; y < canvas_h; ++y)
        for (int x = 0; x < canvas_w; ++x) {
            const auto obj = inv.apply(x - cx0 - view.tx, y - cy0 - view.ty);
            ResamplePoint& pt = plan[static_cast<size_t>(y) * canvas_w + x];
            if (obj[0] >= object.x0 - kInsideEps && obj[0] <= object.x1 + kInsideEps &&
                obj[1] >= object.y0 - kInsideEps && obj[1] <= object.y1 + kInsideEps) {
                pt.kind = ResamplePoint::kSample;
                pt.u = obj[0] - object.x0;
                pt.v = obj[1] - object.y0;
            } else {
                pt.kind = ResamplePoint::kConst;
            }
        }
    return plan;
}

Tensor render_with_fill(const PlanarObject& object, const Tensor& texture, const ViewParams& view,
                        int canvas_w, int canvas_h, const std::vector<double>& fill) {
    object.validate();
    view.validate();
    auto plan = build_plan(object, view, canvas_w, canvas_h);
    Tensor img = resample(texture, plan, canvas_h, canvas_w, view.gain, fill);
    return clamp01(img);
}

}  // namespace

Tensor render(const PlanarObject& object, const Tensor& texture, const ViewParams& view,
              int canvas_w, int canvas_h) {
    return render_with_fill(object, texture, view, canvas_w, canvas_h,
                            {view.background[0], view.background[1], view.background[2]});
}

GtBox target_extent(const PlanarObject& object, const ViewParams& view, int canvas_w,
                    int canvas_h) {
    const Affine A = Affine::view_matrix(view);
    const double cx0 = (canvas_w - 1) / 2.0, cy0 = (canvas_h - 1) / 2.0;
    double minx = 1e300, maxx = -1e300, miny = 1e300, maxy = -1e300;
    const double xs[2] = {object.x0, object.x1}, ys[2] = {object.y0, object.y1};
    for (double ox : xs)
        for (double oy : ys) {
            const auto p = A.apply(ox, oy);
            minx = std::min(minx, p[0]);
            maxx = std::max(maxx, p[0]);
            miny = std::min(miny, p[1]);
            maxy = std::max(maxy, p[1]);
        }
    return {cx0 + view.tx + (minx + maxx) / 2.0, cy0 + view.ty + (miny + maxy) / 2.0,
            maxx - minx, maxy - miny};
}

void Scene::validate() const {
    if (width < 1 || height < 1) throw std::invalid_argument("scene: bad extents");
    if (frames < 1) throw std::invalid_argument("scene: frame count must be >= 1");
    if (trajectory.empty()) throw std::invalid_argument("scene: empty trajectory");
    for (size_t i = 1; i < trajectory.size(); ++i)
        if (trajectory[i].frame <= trajectory[i - 1].frame)
            throw std::invalid_argument("scene: trajectory keyframes must be strictly increasing");
    if (trajectory.front().frame != 0 || trajectory.back().frame != frames - 1)
        throw std::invalid_argument("scene: trajectory must span frames 0.." +
                                    std::to_string(frames - 1));
    for (const auto& oc : occluders)
        if (oc.x - oc.width / 2 < 0 || oc.x + oc.width / 2 > width)
            throw std::invalid_argument("scene: occluder outside image bounds");
    if (!(target_w > 0) || !(target_h > 0)) throw std::invalid_argument("scene: bad target size");
}

std::array<double, 2> Scene::center_at(int frame) const {
    if (frame <= trajectory.front().frame)
        return {trajectory.front().cx, trajectory.front().cy};
    for (size_t i = 1; i < trajectory.size(); ++i) {
        const auto& k0 = trajectory[i - 1];
        const auto& k1 = trajectory[i];
        if (frame <= k1.frame) {
            const double t = static_cast<double>(frame - k0.frame) / (k1.frame - k0.frame);
            return {k0.cx + t * (k1.cx - k0.cx), k0.cy + t * (k1.cy - k0.cy)};
        }
    }
    return {trajectory.back().cx, trajectory.back().cy};
}

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& known, const std::string& ctx) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw std::invalid_argument("unknown key '" + it.key() + "' in " + ctx);
}

std::array<double, 3> color_from(const json& j) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("color must be [r,g,b]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

std::string Scene::to_json() const {
    json j;
    j["width"] = width;
    j["height"] = height;
    j["frames"] = frames;
    if (background.type == Background::Type::kSolid) {
        j["background"] = {{"type", "solid"},
                           {"color", {background.color[0], background.color[1], background.color[2]}}};
    } else {
        j["background"] = {{"type", "gradient"},
                           {"top", {background.top[0], background.top[1], background.top[2]}},
                           {"bottom", {background.bottom[0], background.bottom[1], background.bottom[2]}}};
    }
    j["occluders"] = json::array();
    for (const auto& oc : occluders)
        j["occluders"].push_back(
            {{"x", oc.x}, {"width", oc.width}, {"color", {oc.color[0], oc.color[1], oc.color[2]}}});
    j["trajectory"] = json::array();
    for (const auto& k : trajectory)
        j["trajectory"].push_back({{"frame", k.frame}, {"cx", k.cx}, {"cy", k.cy}});
    j["target"] = {{"width", target_w}, {"height", target_h}};
    return j.dump(2);
}

Scene Scene::from_json(const std::string& text) {
    json j = json::parse(text);
    reject_unknown_keys(
        j, {"width", "height", "frames", "background", "occluders", "trajectory", "target"},
        "scene");
    Scene s;
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.frames = j.at("frames").get<int>();
    if (j.contains("background")) {
        const auto& b = j["background"];
        reject_unknown_keys(b, {"type", "color", "top", "bottom"}, "scene.background");
        const std::string type = b.at("type").get<std::string>();
        if (type == "solid") {
            s.background.type = Background::Type::kSolid;
            s.background.color = color_from(b.at("color"));
        } else if (type == "gradient") {
            s.background.type = Background::Type::kGradient;
            s.background.top = color_from(b.at("top"));
            s.background.bottom = color_from(b.at("bottom"));
        } else {
            throw std::invalid_argument("scene: unknown background type '" + type + "'");
        }
    }
    for (const auto& oj : j.value("occluders", json::array())) {
        reject_unknown_keys(oj, {"x", "width", "color"}, "scene.occluders[]");
        Occluder oc;
        oc.x = oj.at("x").get<double>();
        oc.width = oj.at("width").get<double>();
        if (oj.contains("color")) oc.color = color_from(oj["color"]);
        s.occluders.push_back(oc);
    }
    for (const auto& kj : j.at("trajectory")) {
        reject_unknown_keys(kj, {"frame", "cx", "cy"}, "scene.trajectory[]");
        s.trajectory.push_back(
            {kj.at("frame").get<int>(), kj.at("cx").get<double>(), kj.at("cy").get<double>()});
    }
    if (j.contains("target")) {
        reject_unknown_keys(j["target"], {"width", "height"}, "scene.target");
        s.target_w = j["target"].at("width").get<double>();
        s.target_h = j["target"].at("height").get<double>();
    }
    s.validate();
    return s;
}

RenderedSequence render_sequence(const Scene& scene, const PlanarObject& object,
                                 const Tensor& texture) {
    scene.validate();
    object.validate();
    const int W = scene.width, H = scene.height;
    const int64_t npix = static_cast<int64_t>(W) * H;

    std::vector<double> fill(3 * npix);
    for (int y = 0; y < H; ++y) {
        std::array<double, 3> row;
        if (scene.background.type == Background::Type::kSolid) {
            row = scene.background.color;
        } else {
            const double t = H > 1 ? static_cast<double>(y) / (H - 1) : 0.0;
            for (int c = 0; c < 3; ++c)
                row[c] = scene.background.top[c] + t * (scene.background.bottom[c] -
                                                        scene.background.top[c]);
        }
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) fill[c * npix + static_cast<int64_t>(y) * W + x] = row[c];
    }

    RenderedSequence seq;
    seq.frames.reserve(scene.frames);
    seq.gt.reserve(scene.frames);
    const double scale = scene.target_w / object.width();
    for (int f = 0; f < scene.frames; ++f) {
        const auto center = scene.center_at(f);
        ViewParams view;
        view.scale = scale;
        view.tx = center[0] - (W - 1) / 2.0;
        view.ty = center[1] - (H - 1) / 2.0;
        Tensor frame = render_with_fill(object, texture, view, W, H, fill);
        // Occluders painted over the target.
        for (const auto& oc : scene.occluders) {
            const int lo = std::max(0, static_cast<int>(std::lround(oc.x - oc.width / 2)));
            const int hi = std::min(W, static_cast<int>(std::lround(oc.x + oc.width / 2)));
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < H; ++y)
                    for (int x = lo; x < hi; ++x)
                        frame.data[c * npix + static_cast<int64_t>(y) * W + x] = oc.color[c];
        }
        frame.node = -1;  // sequences are never differentiated
        seq.frames.push_back(std::move(frame));
        seq.gt.push_back(target_extent(object, view, W, H));
    }
    return seq;
}

}  // namespace sta
