#include "sta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sta {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(Shape s) {
    auto n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape s, double v) {
    auto n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

double Tensor::value() const {
    if (!is_scalar()) throw std::logic_error("value() on non-scalar tensor " + shape_str(shape));
    return data[0];
}

// ---- tape ----

namespace {
thread_local Tape* g_active_tape = nullptr;
}

TapeScope::TapeScope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
TapeScope::~TapeScope() { g_active_tape = prev_; }
Tape* active_tape() { return g_active_tape; }

Tensor Tape::leaf(const Tensor& t) {
    Tensor out = t;
    out.node = record(t.size(), nullptr);
    return out;
}

int Tape::record(int64_t out_size, BackFn fn) {
    nodes_.push_back({out_size, std::move(fn)});
    grads_.emplace_back();
    live_.push_back(0);
    return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>* Tape::grad_buf(int node) {
    if (node < 0) return nullptr;
    if (grads_[node].empty()) grads_[node].assign(nodes_[node].size, 0.0);
    live_[node] = 1;
    return &grads_[node];
}

void Tape::backward(const Tensor& loss) {
    if (!loss.is_scalar()) throw std::invalid_argument("backward requires a scalar loss");
    if (loss.node < 0) throw std::invalid_argument("loss was not recorded on this tape");
    if (backward_done_) throw std::logic_error("backward already ran on this tape; call reset()");
    backward_done_ = true;
    *grad_buf(loss.node) = {1.0};
    for (int i = loss.node; i >= 0; --i) {
        if (!live_[i] || !nodes_[i].back) continue;
        nodes_[i].back(grads_[i], *this);
    }
}

Tensor Tape::grad(const Tensor& t) const {
    if (t.node < 0 || t.node >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("grad() of a tensor not on this tape");
    Tensor g = Tensor::zeros(t.shape);
    if (!grads_[t.node].empty()) g.data = grads_[t.node];
    return g;
}

void Tape::reset() {
    nodes_.clear();
    grads_.clear();
    live_.clear();
    backward_done_ = false;
}

void backward(const Tensor& loss) {
    Tape* t = active_tape();
    if (!t) throw std::logic_error("backward() with no active tape");
    t->backward(loss);
}

// ---- op helpers ----

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

bool recording(const Tensor& a) { return active_tape() && a.node >= 0; }
bool recording(const Tensor& a, const Tensor& b) {
    return active_tape() && (a.node >= 0 || b.node >= 0);
}

void axpy(std::vector<double>* g, const std::vector<double>& v, double k = 1.0) {
    if (!g) return;
    for (size_t i = 0; i < v.size(); ++i) (*g)[i] += k * v[i];
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    if (recording(a, b)) {
        int pa = a.node, pb = b.node;
        out.node = active_tape()->record(out.size(), [pa, pb](const std::vector<double>& g, Tape& t) {
            axpy(t.grad_buf(pa), g);
            axpy(t.grad_buf(pb), g);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] - b.data[i];
    if (recording(a, b)) {
        int pa = a.node, pb = b.node;
        out.node = active_tape()->record(out.size(), [pa, pb](const std::vector<double>& g, Tape& t) {
            axpy(t.grad_buf(pa), g);
            axpy(t.grad_buf(pb), g, -1.0);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    if (recording(a, b)) {
        int pa = a.node, pb = b.node;
        auto ad = a.data, bd = b.data;
        out.node = active_tape()->record(
            out.size(), [pa, pb, ad, bd](const std::vector<double>& g, Tape& t) {
                if (auto* ga = t.grad_buf(pa))
                    for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bd[i];
                if (auto* gb = t.grad_buf(pb))
                    for (size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * ad[i];
            });
    }
    return out;
}

Tensor scalar_mul(const Tensor& a, double k) {
    Tensor out = Tensor::zeros(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) out.data[i] = k * a.data[i];
    if (recording(a)) {
        int pa = a.node;
        out.node = active_tape()->record(out.size(), [pa, k](const std::vector<double>& g, Tape& t) {
            axpy(t.grad_buf(pa), g, k);
        });
    }
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] > 0 ? a.data[i] : 0.0;
    if (recording(a)) {
        int pa = a.node;
        auto ad = a.data;
        out.node = active_tape()->record(out.size(), [pa, ad](const std::vector<double>& g, Tape& t) {
            if (auto* ga = t.grad_buf(pa))
                for (size_t i = 0; i < g.size(); ++i)
                    if (ad[i] > 0) (*ga)[i] += g[i];
        });
    }
    return out;
}

Tensor square(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * a.data[i];
    if (recording(a)) {
        int pa = a.node;
        auto ad = a.data;
        out.node = active_tape()->record(out.size(), [pa, ad](const std::vector<double>& g, Tape& t) {
            if (auto* ga = t.grad_buf(pa))
                for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += 2.0 * ad[i] * g[i];
        });
    }
    return out;
}

Tensor clamp01(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape);
    for (int64_t i = 0; i < a.size(); ++i) out.data[i] = std::clamp(a.data[i], 0.0, 1.0);
    if (recording(a)) {
        int pa = a.node;
        auto ad = a.data;
        out.node = active_tape()->record(out.size(), [pa, ad](const std::vector<double>& g, Tape& t) {
            if (auto* ga = t.grad_buf(pa))
                for (size_t i = 0; i < g.size(); ++i)
                    if (ad[i] >= 0.0 && ad[i] <= 1.0) (*ga)[i] += g[i];
        });
    }
    return out;
}

// ---- reductions & indexing ----

Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.data.begin(), a.data.end(), 0.0);
    Tensor out = Tensor::scalar(s);
    if (recording(a)) {
        int pa = a.node;
        out.node = active_tape()->record(1, [pa](const std::vector<double>& g, Tape& t) {
            if (auto* ga = t.grad_buf(pa))
                for (auto& v : *ga) v += g[0];
        });
    }
    return out;
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
    return scalar_mul(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor pick(const Tensor& a, int64_t flat_index) {
    return gather(a, {flat_index}, Shape{});
}

Tensor gather(const Tensor& a, const std::vector<int64_t>& idx, Shape out_shape) {
    if (numel(out_shape) != static_cast<int64_t>(idx.size()))
        throw std::invalid_argument("gather: index count does not match output shape");
    Tensor out = Tensor::zeros(std::move(out_shape));
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= a.size())
            throw std::out_of_range("gather: index " + std::to_string(idx[i]) + " out of range");
        out.data[i] = a.data[idx[i]];
    }
    if (recording(a)) {
        int pa = a.node;
        out.node = active_tape()->record(out.size(), [pa, idx](const std::vector<double>& g, Tape& t) {
            if (auto* ga = t.grad_buf(pa))
                for (size_t i = 0; i < idx.size(); ++i) (*ga)[idx[i]] += g[i];
        });
    }
    return out;
}

Tensor center_channels(const Tensor& a) {
    if (a.shape.size() != 3)
        throw std::invalid_argument("center_channels: expected CxHxW, got " + shape_str(a.shape));
    const int C = a.shape[0];
    const int64_t plane = static_cast<int64_t>(a.shape[1]) * a.shape[2];
    Tensor out = Tensor::zeros(a.shape);
    for (int c = 0; c < C; ++c) {
        double m = 0;
        for (int64_t i = 0; i < plane; ++i) m += a.data[c * plane + i];
        m /= plane;
        for (int64_t i = 0; i < plane; ++i) out.data[c * plane + i] = a.data[c * plane + i] - m;
    }
    if (recording(a)) {
        int pa = a.node;
        out.node = active_tape()->record(
            out.size(), [pa, C, plane](const std::vector<double>& g, Tape& t) {
                if (auto* ga = t.grad_buf(pa))
                    for (int c = 0; c < C; ++c) {
                        double m = 0;
                        for (int64_t i = 0; i < plane; ++i) m += g[c * plane + i];
                        m /= plane;
                        for (int64_t i = 0; i < plane; ++i)
                            (*ga)[c * plane + i] += g[c * plane + i] - m;
                    }
            });
    }
    return out;
}

Tensor concat_flat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_flat: no inputs");
    int64_t total = 0;
    for (const auto& p : parts) total += p.size();
    Tensor out = Tensor::zeros({static_cast<int>(total)});
    int64_t off = 0;
    bool any_node = false;
    for (const auto& p : parts) {
        std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
        off += p.size();
        any_node = any_node || p.node >= 0;
    }
    if (active_tape() && any_node) {
        std::vector<std::pair<int, int64_t>> spans;  // (node, size)
        for (const auto& p : parts) spans.emplace_back(p.node, p.size());
        out.node = active_tape()->record(total, [spans](const std::vector<double>& g, Tape& t) {
            int64_t off = 0;
            for (auto [node, sz] : spans) {
                if (auto* gp = t.grad_buf(node))
                    for (int64_t i = 0; i < sz; ++i) (*gp)[i] += g[off + i];
                off += sz;
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape s) {
    if (numel(s) != a.size())
        throw std::invalid_argument("reshape: size mismatch " + shape_str(a.shape) + " -> " +
                                    shape_str(s));
    Tensor out = a;
    out.shape = std::move(s);
    return out;  // same node: gradient buffers are shape-agnostic
}

Tensor l2_distance(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "l2_distance");
    double ss = 0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d = a.data[i] - b.data[i];
        ss += d * d;
    }
    double norm = std::sqrt(ss);
    Tensor out = Tensor::scalar(norm);
    if (recording(a, b)) {
        int pa = a.node, pb = b.node;
        auto ad = a.data, bd = b.data;
        out.node = active_tape()->record(1, [pa, pb, ad, bd, norm](const std::vector<double>& g,
                                                                   Tape& t) {
            if (norm <= 0) return;  // subgradient 0 at the kink
            const double k = g[0] / norm;
            if (auto* ga = t.grad_buf(pa))
                for (size_t i = 0; i < ad.size(); ++i) (*ga)[i] += k * (ad[i] - bd[i]);
            if (auto* gb = t.grad_buf(pb))
                for (size_t i = 0; i < ad.size(); ++i) (*gb)[i] -= k * (ad[i] - bd[i]);
        });
    }
    return out;
}

// ---- conv2d ----

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride) {
    if (input.shape.size() != 3) throw std::invalid_argument("conv2d: input must be CxHxW");
    if (kernels.shape.size() != 4) throw std::invalid_argument("conv2d: kernels must be KxCxRxS");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    const int C = input.shape[0], H = input.shape[1], W = input.shape[2];
    const int K = kernels.shape[0], KC = kernels.shape[1], R = kernels.shape[2], S = kernels.shape[3];
    if (KC != C)
        throw std::invalid_argument("conv2d: channel mismatch input " + shape_str(input.shape) +
                                    " kernels " + shape_str(kernels.shape));
    if (R > H || S > W)
        throw std::invalid_argument("conv2d: kernel " + shape_str(kernels.shape) +
                                    " larger than input " + shape_str(input.shape));
    const int OH = (H - R) / stride + 1, OW = (W - S) / stride + 1;
    Tensor out = Tensor::zeros({K, OH, OW});
    for (int k = 0; k < K; ++k)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                double acc = 0;
                for (int c = 0; c < C; ++c)
                    for (int r = 0; r < R; ++r) {
                        const double* in = &input.data[(static_cast<int64_t>(c) * H + oy * stride + r) * W + ox * stride];
                        const double* kw = &kernels.data[((static_cast<int64_t>(k) * C + c) * R + r) * S];
                        for (int s = 0; s < S; ++s) acc += in[s] * kw[s];
                    }
                out.data[(static_cast<int64_t>(k) * OH + oy) * OW + ox] = acc;
            }
    if (recording(input, kernels)) {
        int pi = input.node, pk = kernels.node;
        auto id = input.data, kd = kernels.data;
        out.node = active_tape()->record(
            out.size(), [=](const std::vector<double>& g, Tape& t) {
                auto* gi = t.grad_buf(pi);
                auto* gk = t.grad_buf(pk);
                for (int k = 0; k < K; ++k)
                    for (int oy = 0; oy < OH; ++oy)
                        for (int ox = 0; ox < OW; ++ox) {
                            const double go = g[(static_cast<int64_t>(k) * OH + oy) * OW + ox];
                            if (go == 0) continue;
                            for (int c = 0; c < C; ++c)
                                for (int r = 0; r < R; ++r)
                                    for (int s = 0; s < S; ++s) {
                                        const int64_t ii =
                                            (static_cast<int64_t>(c) * H + oy * stride + r) * W +
                                            ox * stride + s;
                                        const int64_t ki =
                                            ((static_cast<int64_t>(k) * C + c) * R + r) * S + s;
                                        if (gi) (*gi)[ii] += go * kd[ki];
                                        if (gk) (*gk)[ki] += go * id[ii];
                                    }
                        }
            });
    }
    return out;
}

// ---- cross correlation ----

Tensor cross_correlate(const Tensor& exemplar, const Tensor& search) {
    if (exemplar.shape.size() != 3 || search.shape.size() != 3)
        throw std::invalid_argument("cross_correlate: inputs must be CxHxW");
    const int C = exemplar.shape[0], zh = exemplar.shape[1], zw = exemplar.shape[2];
    const int SC = search.shape[0], xh = search.shape[1], xw = search.shape[2];
    if (C != SC)
        throw std::invalid_argument("cross_correlate: channel mismatch " + shape_str(exemplar.shape) +
                                    " vs " + shape_str(search.shape));
    if (zh > xh || zw > xw)
        throw std::invalid_argument("cross_correlate: exemplar " + shape_str(exemplar.shape) +
                                    " larger than search " + shape_str(search.shape));
    const int MH = xh - zh + 1, MW = xw - zw + 1;
    Tensor out = Tensor::zeros({MH, MW});
    for (int oy = 0; oy < MH; ++oy)
        for (int ox = 0; ox < MW; ++ox) {
            double acc = 0;
            for (int c = 0; c < C; ++c)
                for (int r = 0; r < zh; ++r) {
                    const double* xs = &search.data[(static_cast<int64_t>(c) * xh + oy + r) * xw + ox];
                    const double* zs = &exemplar.data[(static_cast<int64_t>(c) * zh + r) * zw];
                    for (int s = 0; s < zw; ++s) acc += xs[s] * zs[s];
                }
            out.data[static_cast<int64_t>(oy) * MW + ox] = acc;
        }
    if (recording(exemplar, search)) {
        int pz = exemplar.node, px = search.node;
        auto zd = exemplar.data, xd = search.data;
        out.node = active_tape()->record(
            out.size(), [=](const std::vector<double>& g, Tape& t) {
                auto* gz = t.grad_buf(pz);
                auto* gx = t.grad_buf(px);
                for (int oy = 0; oy < MH; ++oy)
                    for (int ox = 0; ox < MW; ++ox) {
                        const double go = g[static_cast<int64_t>(oy) * MW + ox];
                        if (go == 0) continue;
                        for (int c = 0; c < C; ++c)
                            for (int r = 0; r < zh; ++r)
                                for (int s = 0; s < zw; ++s) {
                                    const int64_t xi =
                                        (static_cast<int64_t>(c) * xh + oy + r) * xw + ox + s;
                                    const int64_t zi =
                                        (static_cast<int64_t>(c) * zh + r) * zw + s;
                                    if (gz) (*gz)[zi] += go * xd[xi];
                                    if (gx) (*gx)[xi] += go * zd[zi];
                                }
                    }
            });
    }
    return out;
}

Tensor cosine_correlate(const Tensor& exemplar, const Tensor& search) {
    if (exemplar.shape.size() != 3 || search.shape.size() != 3)
        throw std::invalid_argument("cosine_correlate: inputs must be CxHxW");
    const int C = exemplar.shape[0], zh = exemplar.shape[1], zw = exemplar.shape[2];
    const int SC = search.shape[0], xh = search.shape[1], xw = search.shape[2];
    if (C != SC)
        throw std::invalid_argument("cosine_correlate: channel mismatch " +
                                    shape_str(exemplar.shape) + " vs " + shape_str(search.shape));
    if (zh > xh || zw > xw)
        throw std::invalid_argument("cosine_correlate: exemplar " + shape_str(exemplar.shape) +
                                    " larger than search " + shape_str(search.shape));
    const int MH = xh - zh + 1, MW = xw - zw + 1;
    constexpr double kEps = 1e-12;

    auto window_dot = [C, zh, zw, xh, xw](const std::vector<double>& zd,
                                          const std::vector<double>& xd, int oy, int ox,
                                          double& dot, double& wsq) {
        dot = 0;
        wsq = 0;
        for (int c = 0; c < C; ++c)
            for (int r = 0; r < zh; ++r) {
                const double* xs = &xd[(static_cast<int64_t>(c) * xh + oy + r) * xw + ox];
                const double* zs = &zd[(static_cast<int64_t>(c) * zh + r) * zw];
                for (int s = 0; s < zw; ++s) {
                    dot += xs[s] * zs[s];
                    wsq += xs[s] * xs[s];
                }
            }
    };

    double zsq = 0;
    for (double v : exemplar.data) zsq += v * v;
    const double znorm = std::sqrt(zsq);

    Tensor out = Tensor::zeros({MH, MW});
    for (int oy = 0; oy < MH; ++oy)
        for (int ox = 0; ox < MW; ++ox) {
            double dot, wsq;
            window_dot(exemplar.data, search.data, oy, ox, dot, wsq);
            out.data[static_cast<int64_t>(oy) * MW + ox] =
                dot / (znorm * std::sqrt(wsq) + kEps);
        }

    if (recording(exemplar, search)) {
        int pz = exemplar.node, px = search.node;
        auto zd = exemplar.data, xd = search.data;
        out.node = active_tape()->record(
            out.size(), [=](const std::vector<double>& g, Tape& t) {
                auto* gz = t.grad_buf(pz);
                auto* gx = t.grad_buf(px);
                double zsq2 = 0;
                for (double v : zd) zsq2 += v * v;
                const double a = std::sqrt(zsq2);
                for (int oy = 0; oy < MH; ++oy)
                    for (int ox = 0; ox < MW; ++ox) {
                        const double go = g[static_cast<int64_t>(oy) * MW + ox];
                        if (go == 0) continue;
                        double dot, wsq;
                        window_dot(zd, xd, oy, ox, dot, wsq);
                        const double b = std::sqrt(wsq);
                        const double D = a * b + kEps;
                        const double c_val = dot / D;
                        // d/dz = x/D - c*(b/a)*z/D ; d/dx = z/D - c*(a/b)*x/D
                        const double zcoef = (a > 0) ? go * c_val * b / (a * D) : 0.0;
                        const double xcoef = (b > 0) ? go * c_val * a / (b * D) : 0.0;
                        for (int c = 0; c < C; ++c)
                            for (int r = 0; r < zh; ++r)
                                for (int s = 0; s < zw; ++s) {
                                    const int64_t xi =
                                        (static_cast<int64_t>(c) * xh + oy + r) * xw + ox + s;
                                    const int64_t zi =
                                        (static_cast<int64_t>(c) * zh + r) * zw + s;
                                    if (gz) (*gz)[zi] += go * xd[xi] / D - zcoef * zd[zi];
                                    if (gx) (*gx)[xi] += go * zd[zi] / D - xcoef * xd[xi];
                                }
                    }
            });
    }
    return out;
}

Tensor normalized_correlate(const Tensor& exemplar, const Tensor& search) {
    if (exemplar.shape.size() != 3 || search.shape.size() != 3)
        throw std::invalid_argument("normalized_correlate: inputs must be CxHxW");
    const int C = exemplar.shape[0], zh = exemplar.shape[1], zw = exemplar.shape[2];
    const int SC = search.shape[0], xh = search.shape[1], xw = search.shape[2];
    if (C != SC)
        throw std::invalid_argument("normalized_correlate: channel mismatch " +
                                    shape_str(exemplar.shape) + " vs " + shape_str(search.shape));
    if (zh > xh || zw > xw)
        throw std::invalid_argument("normalized_correlate: exemplar " + shape_str(exemplar.shape) +
                                    " larger than search " + shape_str(search.shape));
    const int MH = xh - zh + 1, MW = xw - zw + 1;
    constexpr double kEps = 1e-12;

    auto window_dot = [C, zh, zw, xh, xw](const std::vector<double>& zd,
                                          const std::vector<double>& xd, int oy, int ox,
                                          double& dot, double& wsq) {
        dot = 0;
        wsq = 0;
        for (int c = 0; c < C; ++c)
            for (int r = 0; r < zh; ++r) {
                const double* xs = &xd[(static_cast<int64_t>(c) * xh + oy + r) * xw + ox];
                const double* zs = &zd[(static_cast<int64_t>(c) * zh + r) * zw];
                for (int s = 0; s < zw; ++s) {
                    dot += xs[s] * zs[s];
                    wsq += xs[s] * xs[s];
                }
            }
    };

    Tensor out = Tensor::zeros({MH, MW});
    for (int oy = 0; oy < MH; ++oy)
        for (int ox = 0; ox < MW; ++ox) {
            double dot, wsq;
            window_dot(exemplar.data, search.data, oy, ox, dot, wsq);
            out.data[static_cast<int64_t>(oy) * MW + ox] = dot / (std::sqrt(wsq) + kEps);
        }

    if (recording(exemplar, search)) {
        int pz = exemplar.node, px = search.node;
        auto zd = exemplar.data, xd = search.data;
        out.node = active_tape()->record(
            out.size(), [=](const std::vector<double>& g, Tape& t) {
                auto* gz = t.grad_buf(pz);
                auto* gx = t.grad_buf(px);
                for (int oy = 0; oy < MH; ++oy)
                    for (int ox = 0; ox < MW; ++ox) {
                        const double go = g[static_cast<int64_t>(oy) * MW + ox];
                        if (go == 0) continue;
                        double dot, wsq;
                        window_dot(zd, xd, oy, ox, dot, wsq);
                        const double b = std::sqrt(wsq);
                        const double D = b + kEps;
                        // c = dot/D ; dc/dz = x/D ; dc/dx = z/D - dot*x/(b*D^2)
                        const double xcoef = (b > 0) ? go * dot / (b * D * D) : 0.0;
                        for (int c = 0; c < C; ++c)
                            for (int r = 0; r < zh; ++r)
                                for (int s = 0; s < zw; ++s) {
                                    const int64_t xi =
                                        (static_cast<int64_t>(c) * xh + oy + r) * xw + ox + s;
                                    const int64_t zi =
                                        (static_cast<int64_t>(c) * zh + r) * zw + s;
                                    if (gz) (*gz)[zi] += go * xd[xi] / D;
                                    if (gx) (*gx)[xi] += go * zd[zi] / D - xcoef * xd[xi];
                                }
                    }
            });
    }
    return out;
}

// ---- softmax cross entropy ----

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape.size() != 2 || logits.shape[1] != 2)
        throw std::invalid_argument("softmax_cross_entropy: logits must be Nx2, got " +
                                    shape_str(logits.shape));
    const int N = logits.shape[0];
    if (static_cast<int>(labels.size()) != N)
        throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
    for (int lab : labels)
        if (lab != 0 && lab != 1) throw std::invalid_argument("softmax_cross_entropy: labels must be 0/1");
    double loss = 0;
    std::vector<double> prob(2 * N);
    for (int i = 0; i < N; ++i) {
        const double a = logits.data[2 * i], b = logits.data[2 * i + 1];
        const double m = std::max(a, b);
        const double ea = std::exp(a - m), eb = std::exp(b - m);
        const double z = ea + eb;
        prob[2 * i] = ea / z;
        prob[2 * i + 1] = eb / z;
        loss -= std::log(prob[2 * i + labels[i]]);
    }
    Tensor out = Tensor::scalar(loss / N);
    if (recording(logits)) {
        int pl = logits.node;
        out.node = active_tape()->record(1, [pl, prob, labels, N](const std::vector<double>& g, Tape& t) {
            if (auto* gl = t.grad_buf(pl)) {
                const double k = g[0] / N;
                for (int i = 0; i < N; ++i) {
                    (*gl)[2 * i] += k * (prob[2 * i] - (labels[i] == 0 ? 1.0 : 0.0));
                    (*gl)[2 * i + 1] += k * (prob[2 * i + 1] - (labels[i] == 1 ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

// ---- resample ----

namespace {

struct BilinearTap {
    int64_t i00, i01, i10, i11;
    double w00, w01, w10, w11;
};

BilinearTap bilinear_tap(double u, double v, int H, int W) {
    u = std::clamp(u, 0.0, static_cast<double>(W - 1));
    v = std::clamp(v, 0.0, static_cast<double>(H - 1));
    int x0 = static_cast<int>(std::floor(u));
    int y0 = static_cast<int>(std::floor(v));
    if (x0 >= W - 1) x0 = W - 2 >= 0 ? W - 2 : 0;
    if (y0 >= H - 1) y0 = H - 2 >= 0 ? H - 2 : 0;
    int x1 = std::min(x0 + 1, W - 1);
    int y1 = std::min(y0 + 1, H - 1);
    const double fx = u - x0, fy = v - y0;
    BilinearTap t;
    t.i00 = static_cast<int64_t>(y0) * W + x0;
    t.i01 = static_cast<int64_t>(y0) * W + x1;
    t.i10 = static_cast<int64_t>(y1) * W + x0;
    t.i11 = static_cast<int64_t>(y1) * W + x1;
    t.w00 = (1 - fx) * (1 - fy);
    t.w01 = fx * (1 - fy);
    t.w10 = (1 - fx) * fy;
    t.w11 = fx * fy;
    return t;
}

}  // namespace

Tensor resample(const Tensor& src, const std::vector<ResamplePoint>& plan,
                int out_h, int out_w, double gain, const std::vector<double>& fill) {
    if (src.shape.size() != 3) throw std::invalid_argument("resample: src must be CxHxW");
    const int C = src.shape[0], H = src.shape[1], W = src.shape[2];
    if (static_cast<int64_t>(plan.size()) != static_cast<int64_t>(out_h) * out_w)
        throw std::invalid_argument("resample: plan size does not match output extents");
    const int64_t plan_pix = static_cast<int64_t>(plan.size());
    const bool per_pixel_fill = static_cast<int64_t>(fill.size()) == C * plan_pix;
    if (!per_pixel_fill && static_cast<int>(fill.size()) != C)
        throw std::invalid_argument("resample: fill must have C or C*pixels values");

    const double inv_hw = 1.0 / (static_cast<double>(H) * W);
    std::vector<double> ch_mean(C, 0.0);
    for (int c = 0; c < C; ++c) {
        double s = 0;
        const double* p = &src.data[static_cast<int64_t>(c) * H * W];
        for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) s += p[i];
        ch_mean[c] = s * inv_hw;
    }

    Tensor out = Tensor::zeros({C, out_h, out_w});
    const int64_t npix = static_cast<int64_t>(out_h) * out_w;
    for (int64_t i = 0; i < npix; ++i) {
        const auto& pt = plan[i];
        for (int c = 0; c < C; ++c) {
            double v;
            if (pt.kind == ResamplePoint::kSample) {
                const auto tap = bilinear_tap(pt.u, pt.v, H, W);
                const double* p = &src.data[static_cast<int64_t>(c) * H * W];
                v = gain * (tap.w00 * p[tap.i00] + tap.w01 * p[tap.i01] +
                            tap.w10 * p[tap.i10] + tap.w11 * p[tap.i11]);
            } else if (pt.kind == ResamplePoint::kMean) {
                v = ch_mean[c];
            } else {
                v = per_pixel_fill ? fill[c * plan_pix + i] : fill[c];
            }
            out.data[static_cast<int64_t>(c) * npix + i] = v;
        }
    }

    if (recording(src)) {
        int ps = src.node;
        out.node = active_tape()->record(
            out.size(), [ps, plan, C, H, W, gain, npix, inv_hw](const std::vector<double>& g, Tape& t) {
                auto* gs = t.grad_buf(ps);
                if (!gs) return;
                for (int64_t i = 0; i < npix; ++i) {
                    const auto& pt = plan[i];
                    if (pt.kind == ResamplePoint::kConst) continue;
                    if (pt.kind == ResamplePoint::kSample) {
                        const auto tap = bilinear_tap(pt.u, pt.v, H, W);
                        for (int c = 0; c < C; ++c) {
                            const double go = gain * g[static_cast<int64_t>(c) * npix + i];
                            if (go == 0) continue;
                            double* gp = &(*gs)[static_cast<int64_t>(c) * H * W];
                            gp[tap.i00] += go * tap.w00;
                            gp[tap.i01] += go * tap.w01;
                            gp[tap.i10] += go * tap.w10;
                            gp[tap.i11] += go * tap.w11;
                        }
                    } else {  // mean fill: d mean / d pixel = 1/(H*W)
                        for (int c = 0; c < C; ++c) {
                            const double go = g[static_cast<int64_t>(c) * npix + i] * inv_hw;
                            if (go == 0) continue;
                            double* gp = &(*gs)[static_cast<int64_t>(c) * H * W];
                            for (int64_t j = 0; j < static_cast<int64_t>(H) * W; ++j) gp[j] += go;
                        }
                    }
                }
            });
    }
    return out;
}

}  // namespace sta
