#include "sta/siamese.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "sta/image_io.hpp"
#include "sta/rng.hpp"

namespace sta {

std::string head_kind_name(HeadKind k) { return k == HeadKind::kSymmetric ? "symmetric" : "rpn"; }

HeadKind head_kind_from_name(const std::string& name) {
    if (name == "symmetric") return HeadKind::kSymmetric;
    if (name == "rpn") return HeadKind::kRpn;
    throw std::invalid_argument("unknown head kind '" + name + "'");
}

void VictimGeometry::validate() const {
    if (channels.empty() || channels.size() != strides.size())
        throw std::invalid_argument("victim geometry: channels/strides mismatch");
    if (anchors < 1) throw std::invalid_argument("victim geometry: anchors must be >= 1");
    if (feature_extent(exemplar) < 1 || score_extent() < 1)
        throw std::invalid_argument("victim geometry: network does not fit the input extents");
}

int VictimGeometry::total_stride() const {
    int s = 1;
    for (int st : strides) s *= st;
    return s;
}

int VictimGeometry::feature_extent(int input_extent) const {
    int e = input_extent;
    for (size_t i = 0; i < strides.size(); ++i) e = (e - kernel) / strides[i] + 1;
    return e;
}

int VictimGeometry::score_extent() const {
    return feature_extent(search) - feature_extent(exemplar) + 1;
}

int VictimGeometry::rpn_score_extent() const {
    const int fz = feature_extent(exemplar) - adjust_kernel + 1;
    const int fx = feature_extent(search) - adjust_kernel + 1;
    return fx - fz + 1;
}

namespace {

Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = stddev * rng.normal();
    return t;
}

Tensor embed_with(const std::vector<Tensor>& kernels, const std::vector<int>& strides,
                  const Tensor& image) {
    Tensor x = image;
    for (size_t i = 0; i < kernels.size(); ++i) {
        if (i) x = relu(x);
        x = conv2d(x, kernels[i], strides[i]);
    }
    return x;
}

double rms(const Tensor& t) {
    double s = 0;
    for (double v : t.data) s += v * v;
    return std::sqrt(s / t.size());
}

void scale_in_place(Tensor& t, double k) {
    for (auto& v : t.data) v *= k;
}

Tensor random_image(int extent, Rng& rng) {
    Tensor img = Tensor::zeros({3, extent, extent});
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

}  // namespace

Victim init_victim(HeadKind head, const VictimGeometry& geom, uint64_t seed) {
    geom.validate();
    Victim v;
    v.head = head;
    v.geom = geom;
    v.seed = seed;
    Rng rng(seed ^ 0x5741434b5345454cULL);

    int cin = 3;
    for (size_t i = 0; i < geom.channels.size(); ++i) {
        const double fan_in = static_cast<double>(cin) * geom.kernel * geom.kernel;
        v.embedder.kernels.push_back(gaussian_tensor(
            {geom.channels[i], cin, geom.kernel, geom.kernel}, std::sqrt(2.0 / fan_in), rng));
        v.embedder.strides.push_back(geom.strides[i]);
        cin = geom.channels[i];
    }

    // Calibrate each layer so pre-relu activations have unit RMS on random
    // [0,1] images; this keeps scores in unit order regardless of depth.
    const int kCalibImages = 4;
    std::vector<Tensor> acts;
    for (int n = 0; n < kCalibImages; ++n) acts.push_back(random_image(geom.search, rng));
    for (size_t i = 0; i < v.embedder.kernels.size(); ++i) {
        double ss = 0;
        int64_t cnt = 0;
        std::vector<Tensor> outs;
        for (const auto& a : acts) {
            Tensor o = conv2d(i ? relu(a) : a, v.embedder.kernels[i], v.embedder.strides[i]);
            for (double x : o.data) ss += x * x;
            cnt += o.size();
            outs.push_back(std::move(o));
        }
        const double r = std::sqrt(ss / cnt);
        if (r > 0) {
            scale_in_place(v.embedder.kernels[i], 1.0 / r);
            for (auto& o : outs) scale_in_place(o, 1.0 / r);
        }
        acts = std::move(outs);
    }

    const int fz = geom.feature_extent(geom.exemplar);
    const int C = geom.channels.back();
    v.score_norm = 1.0 / (static_cast<double>(C) * fz * fz);

    if (head == HeadKind::kRpn) {
        RpnHead rpn;
        rpn.k = geom.anchors;
        const int a = geom.adjust_kernel;
        const double fan = static_cast<double>(C) * a * a;
        // Identity pass-through plus noise: the foreground kernels keep a
        // template-matching component so the head localizes out of the box,
        // the background kernels stay pure noise. The anchors differ by an
        // independent noise draw and a slightly different identity gain.
        const double noise = 0.6 * std::sqrt(1.0 / fan);
        rpn.template_adjust =
            gaussian_tensor({2 * rpn.k * C, C, a, a}, noise, rng);
        rpn.search_adjust = gaussian_tensor({C, C, a, a}, noise, rng);
        const int center = (a * a) / 2;
        const int64_t taps = static_cast<int64_t>(a) * a;
        for (int c = 0; c < C; ++c)
            rpn.search_adjust.data[(static_cast<int64_t>(c) * C + c) * taps + center] += 1.0;
        for (int anchor = 0; anchor < rpn.k; ++anchor) {
            const double id_gain = 1.0 + 0.1 * anchor;
            for (int c = 0; c < C; ++c) {
                const int64_t out_ch = (static_cast<int64_t>(2 * anchor + 1)) * C + c;
                rpn.template_adjust.data[(out_ch * C + c) * taps + center] += id_gain;
            }
        }
        v.rpn = std::move(rpn);

        // Keep the adjusted search features unit-order.
        Tensor xi = random_image(geom.search, rng);
        Tensor adj_x = conv2d(embed_with(v.embedder.kernels, v.embedder.strides, xi),
                              v.rpn->search_adjust, 1);
        const double rx = rms(adj_x);
        if (rx > 0) scale_in_place(v.rpn->search_adjust, 1.0 / rx);

        // Calibrate the logit gain so a matched exemplar/search pair peaks
        // near kRpnLogitScale: the exemplar is a center crop of the same
        // random image, so its template matches the search window exactly.
        const int e = geom.exemplar;
        const int off = (geom.search - e) / 2;
        Tensor zi = Tensor::zeros({3, e, e});
        for (int c = 0; c < 3; ++c)
            for (int r = 0; r < e; ++r)
                for (int s = 0; s < e; ++s)
                    zi.data[(static_cast<int64_t>(c) * e + r) * e + s] =
                        xi.data[(static_cast<int64_t>(c) * geom.search + off + r) * geom.search +
                                off + s];
        // Gain calibration uses the foreground channels; the background
        // channels are then rescaled so their strongest calibration response
        // sits well below the foreground peak and does not swamp it.
        const int M = v.geom.rpn_score_extent();
        const int64_t mm = static_cast<int64_t>(M) * M;
        Tensor logits = rpn_cls_logits(v, zi, xi);
        double fg_peak = 0, bg_peak = 0;
        for (int anchor = 0; anchor < v.rpn->k; ++anchor)
            for (int64_t i = 0; i < mm; ++i) {
                bg_peak = std::max(bg_peak, std::abs(logits.data[(2 * anchor) * mm + i]));
                fg_peak = std::max(fg_peak, std::abs(logits.data[(2 * anchor + 1) * mm + i]));
            }
        if (fg_peak > 0) v.rpn->logit_gain = kRpnLogitScale / fg_peak;
        const double bg_target = 0.5 / v.rpn->logit_gain;  // |bg logit| <= 0.5 after gain
        if (bg_peak > 0) {
            const double bg_scale = bg_target / bg_peak;
            const int64_t group = static_cast<int64_t>(C) * a * a * C;
            for (int anchor = 0; anchor < v.rpn->k; ++anchor) {
                double* base = v.rpn->template_adjust.data.data() +
                               static_cast<int64_t>(2 * anchor) * group;
                for (int64_t i = 0; i < group; ++i) base[i] *= bg_scale;
            }
        }
    }
    return v;
}

Tensor embed(const Victim& victim, const Tensor& image) {
    if (image.shape.size() != 3 || image.shape[0] != 3)
        throw std::invalid_argument("embed: image must be 3xHxW, got " + shape_str(image.shape));
    const int e = image.shape[1];
    if (image.shape[1] != image.shape[2] ||
        (e != victim.geom.exemplar && e != victim.geom.search))
        throw std::invalid_argument("embed: image extent " + shape_str(image.shape) +
                                    " is neither exemplar (" + std::to_string(victim.geom.exemplar) +
                                    ") nor search (" + std::to_string(victim.geom.search) + ") size");
    return embed_with(victim.embedder.kernels, victim.embedder.strides, image);
}

Tensor symmetric_score(const Victim& victim, const Tensor& z_img, const Tensor& x_img) {
    // The exemplar features are centered per channel so flat background
    // windows score near zero; the matched-window response stays the
    // (non-negative) centered-feature energy.
    Tensor fz = center_channels(embed(victim, z_img));
    Tensor fx = embed(victim, x_img);
    return scalar_mul(cross_correlate(fz, fx), victim.score_norm);
}

Tensor rpn_cls_logits(const Victim& victim, const Tensor& z_img, const Tensor& x_img) {
    if (!victim.rpn) throw std::logic_error("rpn_cls_logits: victim has no RPN head");
    const auto& rpn = *victim.rpn;
    Tensor fz = embed(victim, z_img);
    Tensor fx = embed(victim, x_img);
    Tensor t_adj = conv2d(fz, rpn.template_adjust, 1);  // (2kC) x h x w
    Tensor x_adj = conv2d(fx, rpn.search_adjust, 1);    // C x H x W
    const int C = x_adj.shape[0], h = t_adj.shape[1], w = t_adj.shape[2];
    const int64_t plane = static_cast<int64_t>(h) * w;
    std::vector<Tensor> maps;
    for (int j = 0; j < 2 * rpn.k; ++j) {
        std::vector<int64_t> idx(static_cast<size_t>(C) * plane);
        for (int64_t i = 0; i < static_cast<int64_t>(idx.size()); ++i)
            idx[i] = static_cast<int64_t>(j) * C * plane + i;
        // Foreground kernels are zero-mean per channel so flat background
        // windows give no response and localization is sharp. Background
        // kernels keep their DC component: their response also tracks the
        // window's mean feature activity, which is what lets them flag
        // texture-free regions. The window norm is divided out so logits are
        // independent of scene brightness.
        Tensor kernel = gather(t_adj, idx, {C, h, w});
        if (j % 2 == 1) kernel = center_channels(kernel);
        maps.push_back(scalar_mul(normalized_correlate(kernel, x_adj), rpn.logit_gain));
    }
    const int M = maps[0].shape[0];
    return reshape(concat_flat(maps), {2 * rpn.k, M, M});
}

Tensor rpn_logits_pairs(const Tensor& logits) {
    if (logits.shape.size() != 3 || logits.shape[0] % 2 != 0)
        throw std::invalid_argument("rpn_logits_pairs: expected 2k x M x M logits");
    const int k = logits.shape[0] / 2;
    const int64_t mm = static_cast<int64_t>(logits.shape[1]) * logits.shape[2];
    const int N = static_cast<int>(k * mm);
    std::vector<int64_t> idx;
    idx.reserve(2 * N);
    for (int a = 0; a < k; ++a)
        for (int64_t c = 0; c < mm; ++c) {
            idx.push_back((2 * a) * mm + c);      // background logit
            idx.push_back((2 * a + 1) * mm + c);  // foreground logit
        }
    return gather(logits, idx, {N, 2});
}

Tensor rpn_fg_prob_map(const Victim& victim, const Tensor& z_img, const Tensor& x_img) {
    Tensor logits = rpn_cls_logits(victim, z_img, x_img);
    const int k = logits.shape[0] / 2, M = logits.shape[1];
    const int64_t mm = static_cast<int64_t>(M) * M;
    Tensor map = Tensor::zeros({M, M});
    for (int64_t c = 0; c < mm; ++c) {
        double best = 0;
        for (int a = 0; a < k; ++a) {
            const double bg = logits.data[(2 * a) * mm + c];
            const double fg = logits.data[(2 * a + 1) * mm + c];
            const double p = 1.0 / (1.0 + std::exp(bg - fg));
            if (a == 0 || p > best) best = p;
        }
        map.data[c] = best;
    }
    return map;
}

void finetune_embedder(Victim& victim, const std::vector<TrainPair>& pairs, double lr, int iters) {
    if (pairs.empty()) throw std::invalid_argument("finetune_embedder: no training pairs");
    const int M = victim.geom.score_extent();
    const int64_t center = (static_cast<int64_t>(M / 2)) * M + M / 2;
    for (int it = 0; it < iters; ++it) {
        Tape tape;
        TapeScope scope(tape);
        Victim work = victim;
        for (auto& ker : work.embedder.kernels) ker = tape.leaf(ker);
        std::vector<Tensor> rows;
        std::vector<int> labels;
        for (const auto& p : pairs) {
            Tensor s = pick(symmetric_score(work, p.exemplar, p.search), center);
            rows.push_back(Tensor::scalar(0.0));
            rows.push_back(s);
            labels.push_back(p.label > 0 ? 1 : 0);
        }
        Tensor logits = reshape(concat_flat(rows), {static_cast<int>(labels.size()), 2});
        Tensor loss = softmax_cross_entropy(logits, labels);
        tape.backward(loss);
        for (size_t i = 0; i < victim.embedder.kernels.size(); ++i) {
            Tensor g = tape.grad(work.embedder.kernels[i]);
            for (int64_t j = 0; j < g.size(); ++j)
                victim.embedder.kernels[i].data[j] -= lr * g.data[j];
        }
    }
}

void finetune_rpn(Victim& victim, const std::vector<TrainPair>& pairs, double lr, int iters) {
    if (!victim.rpn) throw std::logic_error("finetune_rpn: victim has no RPN head");
    if (pairs.empty()) throw std::invalid_argument("finetune_rpn: no training pairs");
    const int M = victim.geom.rpn_score_extent();
    const int64_t mm = static_cast<int64_t>(M) * M;
    const int64_t center = (static_cast<int64_t>(M / 2)) * M + M / 2;
    for (int it = 0; it < iters; ++it) {
        Tape tape;
        TapeScope scope(tape);
        Victim work = victim;
        work.rpn->template_adjust = tape.leaf(victim.rpn->template_adjust);
        work.rpn->search_adjust = tape.leaf(victim.rpn->search_adjust);
        std::vector<Tensor> rows;
        std::vector<int> labels;
        // Distant cells of positive searches serve as additional background
        // rows, as in anchor-based training; without them confidence rises
        // across the whole map and localization contrast is lost.
        const int ring = 4;
        const std::vector<std::pair<int, int>> ring_offsets = {
            {-ring, 0}, {ring, 0}, {0, -ring}, {0, ring},
            {-ring, -ring}, {-ring, ring}, {ring, -ring}, {ring, ring}};
        for (const auto& p : pairs) {
            Tensor logits = rpn_cls_logits(work, p.exemplar, p.search);
            for (int a = 0; a < work.rpn->k; ++a) {
                rows.push_back(pick(logits, (2 * a) * mm + center));      // background
                rows.push_back(pick(logits, (2 * a + 1) * mm + center));  // foreground
                labels.push_back(p.label > 0 ? 1 : 0);
                if (p.label > 0)
                    for (const auto& [dy, dx] : ring_offsets) {
                        const int64_t cell =
                            (static_cast<int64_t>(M / 2 + dy)) * M + (M / 2 + dx);
                        rows.push_back(pick(logits, (2 * a) * mm + cell));
                        rows.push_back(pick(logits, (2 * a + 1) * mm + cell));
                        labels.push_back(0);
                    }
            }
        }
        Tensor lg = reshape(concat_flat(rows), {static_cast<int>(labels.size()), 2});
        Tensor loss = softmax_cross_entropy(lg, labels);
        tape.backward(loss);
        Tensor gt = tape.grad(work.rpn->template_adjust);
        Tensor gs = tape.grad(work.rpn->search_adjust);
        for (int64_t j = 0; j < gt.size(); ++j)
            victim.rpn->template_adjust.data[j] -= lr * gt.data[j];
        for (int64_t j = 0; j < gs.size(); ++j)
            victim.rpn->search_adjust.data[j] -= lr * gs.data[j];
    }
}

// ---- checkpoint ----

namespace {

constexpr char kWeightsMagic[8] = {'S', 'T', 'A', 'W', 'T', '0', '0', '1'};

void write_tensor_entry(std::ofstream& out, const std::string& name, const Tensor& t) {
    uint32_t nl = static_cast<uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&nl), sizeof(nl));
    out.write(name.data(), nl);
    uint32_t nd = static_cast<uint32_t>(t.shape.size());
    out.write(reinterpret_cast<const char*>(&nd), sizeof(nd));
    for (int e : t.shape) {
        uint32_t v = static_cast<uint32_t>(e);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

std::pair<std::string, Tensor> read_tensor_entry(std::ifstream& in) {
    uint32_t nl = 0;
    in.read(reinterpret_cast<char*>(&nl), sizeof(nl));
    std::string name(nl, '\0');
    in.read(name.data(), nl);
    uint32_t nd = 0;
    in.read(reinterpret_cast<char*>(&nd), sizeof(nd));
    Shape shape(nd);
    for (uint32_t i = 0; i < nd; ++i) {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        shape[i] = static_cast<int>(v);
    }
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("weights file truncated");
    return {name, t};
}

}  // namespace

void save_victim(const std::string& path, const Victim& victim) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_victim: cannot open " + path);
    out.write(kWeightsMagic, sizeof(kWeightsMagic));
    uint32_t count = static_cast<uint32_t>(victim.embedder.kernels.size()) +
                     (victim.rpn ? 2u : 0u);
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (size_t i = 0; i < victim.embedder.kernels.size(); ++i)
        write_tensor_entry(out, "embedder." + std::to_string(i), victim.embedder.kernels[i]);
    if (victim.rpn) {
        write_tensor_entry(out, "rpn.template_adjust", victim.rpn->template_adjust);
        write_tensor_entry(out, "rpn.search_adjust", victim.rpn->search_adjust);
    }
    if (!out) throw std::runtime_error("save_victim: write failed for " + path);

    nlohmann::json m;
    m["head"] = head_kind_name(victim.head);
    m["seed"] = victim.seed;
    m["score_norm"] = victim.score_norm;
    if (victim.rpn) m["rpn_logit_gain"] = victim.rpn->logit_gain;
    m["geometry"] = {{"exemplar", victim.geom.exemplar}, {"search", victim.geom.search},
                     {"channels", victim.geom.channels}, {"strides", victim.geom.strides},
                     {"kernel", victim.geom.kernel},     {"anchors", victim.geom.anchors},
                     {"adjust_kernel", victim.geom.adjust_kernel}};
    write_text_file(path + ".json", m.dump(2));
}

Victim load_victim(const std::string& path) {
    nlohmann::json m = nlohmann::json::parse(read_text_file(path + ".json"));
    Victim v;
    v.head = head_kind_from_name(m.at("head").get<std::string>());
    v.seed = m.at("seed").get<uint64_t>();
    v.score_norm = m.at("score_norm").get<double>();
    const auto& g = m.at("geometry");
    v.geom.exemplar = g.at("exemplar").get<int>();
    v.geom.search = g.at("search").get<int>();
    v.geom.channels = g.at("channels").get<std::vector<int>>();
    v.geom.strides = g.at("strides").get<std::vector<int>>();
    v.geom.kernel = g.at("kernel").get<int>();
    v.geom.anchors = g.at("anchors").get<int>();
    v.geom.adjust_kernel = g.at("adjust_kernel").get<int>();
    v.geom.validate();
    v.embedder.strides = v.geom.strides;

    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_victim: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kWeightsMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_victim: bad magic in " + path);
    uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    RpnHead rpn;
    rpn.k = v.geom.anchors;
    bool has_rpn = false;
    v.embedder.kernels.resize(v.geom.channels.size());
    for (uint32_t i = 0; i < count; ++i) {
        auto [name, t] = read_tensor_entry(in);
        if (name.rfind("embedder.", 0) == 0) {
            size_t li = std::stoul(name.substr(9));
            if (li >= v.embedder.kernels.size())
                throw std::runtime_error("load_victim: unexpected layer " + name);
            v.embedder.kernels[li] = std::move(t);
        } else if (name == "rpn.template_adjust") {
            rpn.template_adjust = std::move(t);
            has_rpn = true;
        } else if (name == "rpn.search_adjust") {
            rpn.search_adjust = std::move(t);
            has_rpn = true;
        } else {
            throw std::runtime_error("load_victim: unknown tensor '" + name + "'");
        }
    }
    if (has_rpn) {
        rpn.logit_gain = m.value("rpn_logit_gain", 1.0);
        v.rpn = std::move(rpn);
    }
    if (v.head == HeadKind::kRpn && !v.rpn)
        throw std::runtime_error("load_victim: RPN head declared but weights missing");
    return v;
}

}  // namespace sta
