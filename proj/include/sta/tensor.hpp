// Minimal reverse-mode autodiff over dense float64 tensors.
//
// A Tensor is a plain value (shape + row-major data). When a Tape is active
// (via TapeScope) every op records a backward rule; Tape::backward walks the
// record in reverse and accumulates gradients in recorded order, so results
// are bit-deterministic.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sta {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Tensor {
    Shape shape;
    std::vector<double> data;
    int node = -1;  // index into the active tape, -1 = constant

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    bool is_scalar() const { return data.size() == 1; }
    double value() const;  // scalar tensors only
};

class Tape {
  public:
    using BackFn = std::function<void(const std::vector<double>& gout, Tape&)>;

    // Registers t as a differentiable input; returns a copy carrying a node id.
    Tensor leaf(const Tensor& t);

    // Records an op output; fn scatters gout into the parents' buffers.
    int record(int64_t out_size, BackFn fn);

    // Gradient buffer for a node; nullptr when node < 0. Marks the node live.
    std::vector<double>* grad_buf(int node);

    // Reverse sweep from a scalar loss recorded on this tape. A second call
    // without reset() throws.
    void backward(const Tensor& loss);

    Tensor grad(const Tensor& t) const;
    void reset();
    size_t num_nodes() const { return nodes_.size(); }

  private:
    struct Node {
        int64_t size;
        BackFn back;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
    std::vector<char> live_;
    bool backward_done_ = false;
};

// RAII guard installing a thread-local active tape.
class TapeScope {
  public:
    explicit TapeScope(Tape& t);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

Tape* active_tape();

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double k);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp01(const Tensor& a);

// ---- reductions & indexing ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor pick(const Tensor& a, int64_t flat_index);                 // scalar
Tensor gather(const Tensor& a, const std::vector<int64_t>& idx, Shape out_shape);
// Subtract the per-channel spatial mean of a CxHxW tensor.
Tensor center_channels(const Tensor& a);
// Sliding-window cosine similarity between the exemplar and each search
// window; values in [-1, 1] irrespective of input magnitude.
Tensor cosine_correlate(const Tensor& exemplar, const Tensor& search);
// Sliding-window correlation divided by each window's L2 norm; bounded by
// the exemplar norm irrespective of the search image's magnitude.
Tensor normalized_correlate(const Tensor& exemplar, const Tensor& search);
Tensor concat_flat(const std::vector<Tensor>& parts);             // 1-D
Tensor reshape(const Tensor& a, Shape s);                         // same size

// Euclidean distance ||a-b||2; gradient defined as 0 at a == b.
Tensor l2_distance(const Tensor& a, const Tensor& b);

// ---- structured ops ----
// input CxHxW, kernels KxCxRxS, valid padding; out KxH'xW'.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride);
// exemplar CxhxW_z slid over search CxHxW_x, valid mode; out MhxMw.
Tensor cross_correlate(const Tensor& exemplar, const Tensor& search);
// logits Nx2, labels in {0,1}; mean over rows of -log softmax[label].
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// ---- differentiable resampling ----
// Per output pixel: bilinear-sample src at (u,v) texel-center coordinates
// (border clamp), or fill with the per-channel mean of src, or a constant.
// gain multiplies sampled pixels only.
struct ResamplePoint {
    enum Kind : uint8_t { kSample, kMean, kConst };
    double u = 0, v = 0;
    Kind kind = kConst;
};
Tensor resample(const Tensor& src, const std::vector<ResamplePoint>& plan,
                int out_h, int out_w, double gain, const std::vector<double>& fill);

// Convenience: backward on the active tape.
void backward(const Tensor& loss);

}  // namespace sta
