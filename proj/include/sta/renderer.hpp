// Differentiable planar billboard renderer.
//
// A textured quad is placed on a canvas under an affine view transform
// (scale, in-plane rotation, horizontal shear, translation); target pixels
// are bilinear texture samples times a lighting gain, clamped to [0,1].
// Gradients flow to the texture only.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "sta/tensor.hpp"

namespace sta {

struct ViewParams {
    double scale = 1.0;      // camera-distance proxy, > 0
    double rotation = 0.0;   // radians, in-plane
    double shear = 0.0;      // horizontal shear, view-angle proxy
    double tx = 0.0;         // translation from canvas center, pixels
    double ty = 0.0;
    double gain = 1.0;       // lighting gain, > 0
    std::array<double, 3> background = {0.0, 0.0, 0.0};
    double occluder_phase = 0.0;  // in [0,1]; scene-level jitter, unused by render()

    void validate() const;
};

struct PlanarObject {
    // Object-space rectangle; texel centers span it exactly.
    double x0, y0, x1, y1;

    // Natural-size quad for a given texture (one texel per object unit).
    static PlanarObject for_texture(const Tensor& texture);
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    void validate() const;
};

struct Occluder {
    double x = 0;      // bar center, pixels
    double width = 0;  // pixels
    std::array<double, 3> color = {0.5, 0.5, 0.5};
};

struct TrajectoryKey {
    int frame = 0;
    double cx = 0, cy = 0;
};

struct Background {
    enum class Type { kSolid, kGradient };
    Type type = Type::kSolid;
    std::array<double, 3> color = {0.9, 0.9, 0.9};   // solid
    std::array<double, 3> top = {1, 1, 1};           // gradient endpoints
    std::array<double, 3> bottom = {0.7, 0.7, 0.7};
};

struct Scene {
    int width = 256, height = 96;
    int frames = 60;
    Background background;
    std::vector<Occluder> occluders;
    std::vector<TrajectoryKey> trajectory;  // linear interpolation between keys
    double target_w = 28, target_h = 28;

    void validate() const;
    // Interpolated target center at a frame index.
    std::array<double, 2> center_at(int frame) const;

    std::string to_json() const;
    static Scene from_json(const std::string& text);
};

struct GtBox {
    double cx, cy, w, h;
};

// Render the textured quad under a view onto a canvas. Differentiable w.r.t.
// texture. Background is the view's solid background color.
Tensor render(const PlanarObject& object, const Tensor& texture, const ViewParams& view,
              int canvas_w, int canvas_h);

// Axis-aligned extent of the transformed quad on the canvas.
GtBox target_extent(const PlanarObject& object, const ViewParams& view, int canvas_w,
                    int canvas_h);

// Render the scene's frame sequence (occluders composited over the target)
// plus per-frame ground-truth boxes. Not recorded on any tape.
struct RenderedSequence {
    std::vector<Tensor> frames;
    std::vector<GtBox> gt;
};
RenderedSequence render_sequence(const Scene& scene, const PlanarObject& object,
                                 const Tensor& texture);

}  // namespace sta
