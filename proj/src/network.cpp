#include "densefusion/network.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "densefusion/rng.hpp"

namespace df {

namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;

Tensor zeros_param(std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.requires_grad = true;
    return t;
}

void init_linear(Tensor& W, Tensor& b, int in, int out, Rng& rng) {
    W = Tensor::zeros({in, out});
    ad::glorot_init(W, in, out, rng);
    b = zeros_param({out});
}

void init_conv(Tensor& k, Tensor& b, int ksz, int cin, int cout, Rng& rng) {
    k = Tensor::zeros({ksz, ksz, cin, cout});
    ad::glorot_init(k, ksz * ksz * cin, ksz * ksz * cout, rng);
    b = zeros_param({cout});
}

// k distinct indices from [0,n) while k fits, otherwise k draws with
// replacement
std::vector<int> sample_indices(int n, int k, Rng& rng) {
    std::vector<int> out;
    out.reserve(std::size_t(k));
    if (k <= n) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < k; ++i) {
            const int j = i + int(rng.uniform_int(std::uint64_t(n - i)));
            std::swap(idx[std::size_t(i)], idx[std::size_t(j)]);
            out.push_back(idx[std::size_t(i)]);
        }
    } else {
        for (int i = 0; i < k; ++i) out.push_back(int(rng.uniform_int(std::uint64_t(n))));
    }
    return out;
}

}  // namespace

Network::Network(NetworkConfig config) : cfg(config) {
    if (!cfg.valid()) throw std::invalid_argument("network: invalid configuration");
    Rng rng(derive_seed(cfg.seed, "init"));

    init_conv(enc1_k, enc1_b, 3, 3, cfg.enc1, rng);
    init_conv(enc2_k, enc2_b, 3, cfg.enc1, cfg.enc2, rng);
    init_conv(enc3_k, enc3_b, 3, cfg.enc2, cfg.enc1, rng);
    init_conv(emb_k, emb_b, 1, cfg.enc1, cfg.d_rgb, rng);

    init_linear(g1_W, g1_b, 3, cfg.geo_h, rng);
    init_linear(g2_W, g2_b, cfg.geo_h, cfg.geo_h, rng);
    init_linear(g3_W, g3_b, 2 * cfg.geo_h, cfg.d_geo, rng);

    init_linear(f1_W, f1_b, cfg.d_rgb + cfg.d_geo, cfg.fuse_h, rng);
    init_linear(f2_W, f2_b, cfg.fuse_h, cfg.d_glob, rng);

    const int fused = cfg.d_rgb + cfg.d_geo + cfg.d_glob;
    init_linear(rot1_W, rot1_b, fused, cfg.head_h, rng);
    init_linear(rot2_W, rot2_b, cfg.head_h, 4, rng);
    init_linear(tr1_W, tr1_b, fused, cfg.head_h, rng);
    init_linear(tr2_W, tr2_b, cfg.head_h, 3, rng);
    init_linear(cf1_W, cf1_b, fused, cfg.head_h, rng);
    init_linear(cf2_W, cf2_b, cfg.head_h, 1, rng);

    init_linear(ref.rg1_W, ref.rg1_b, 3, cfg.geo_h, rng);
    // Canonical-frame coordinates are decimeter-scale, so the first refiner
    // geometry layer starts 10x larger to hand unit-scale activations onward.
    for (double& v : ref.rg1_W.data) v *= 10.0;
    init_linear(ref.rg2_W, ref.rg2_b, cfg.geo_h, cfg.geo_h, rng);
    init_linear(ref.rg3_W, ref.rg3_b, 2 * cfg.geo_h, cfg.d_geo, rng);
    init_linear(ref.rf1_W, ref.rf1_b, cfg.d_rgb + cfg.d_geo, cfg.fuse_h, rng);
    init_linear(ref.rf2_W, ref.rf2_b, cfg.fuse_h, cfg.d_glob, rng);
    init_linear(ref.W1, ref.b1, cfg.d_glob, cfg.refine_h, rng);
    init_linear(ref.W2, ref.b2, cfg.refine_h, cfg.refine_h, rng);
    init_linear(ref.W3, ref.b3, cfg.refine_h, cfg.refine_h, rng);
    ref.W4 = zeros_param({cfg.refine_h, 7});
    ref.b4 = zeros_param({7});
    ref.b4.data[0] = 1.0;  // identity residual before training
}

std::vector<std::pair<std::string, ad::Tensor*>> Network::main_params() {
    return {
        {"enc1_k", &enc1_k}, {"enc1_b", &enc1_b}, {"enc2_k", &enc2_k}, {"enc2_b", &enc2_b},
        {"enc3_k", &enc3_k}, {"enc3_b", &enc3_b}, {"emb_k", &emb_k},   {"emb_b", &emb_b},
        {"g1_W", &g1_W},     {"g1_b", &g1_b},     {"g2_W", &g2_W},     {"g2_b", &g2_b},
        {"g3_W", &g3_W},     {"g3_b", &g3_b},     {"f1_W", &f1_W},     {"f1_b", &f1_b},
        {"f2_W", &f2_W},     {"f2_b", &f2_b},     {"rot1_W", &rot1_W}, {"rot1_b", &rot1_b},
        {"rot2_W", &rot2_W}, {"rot2_b", &rot2_b}, {"tr1_W", &tr1_W},   {"tr1_b", &tr1_b},
        {"tr2_W", &tr2_W},   {"tr2_b", &tr2_b},   {"cf1_W", &cf1_W},   {"cf1_b", &cf1_b},
        {"cf2_W", &cf2_W},   {"cf2_b", &cf2_b},
    };
}

std::vector<std::pair<std::string, ad::Tensor*>> Network::refiner_params() {
    return {
        {"rg1_W", &ref.rg1_W}, {"rg1_b", &ref.rg1_b}, {"rg2_W", &ref.rg2_W},
        {"rg2_b", &ref.rg2_b}, {"rg3_W", &ref.rg3_W}, {"rg3_b", &ref.rg3_b},
        {"rf1_W", &ref.rf1_W}, {"rf1_b", &ref.rf1_b}, {"rf2_W", &ref.rf2_W},
        {"rf2_b", &ref.rf2_b}, {"W1", &ref.W1},       {"b1", &ref.b1},
        {"W2", &ref.W2},       {"b2", &ref.b2},       {"W3", &ref.W3},
        {"b3", &ref.b3},       {"W4", &ref.W4},       {"b4", &ref.b4},
    };
}

std::vector<ad::Tensor*> Network::main_param_ptrs() {
    std::vector<ad::Tensor*> out;
    for (auto& [name, t] : main_params()) out.push_back(t);
    return out;
}

std::vector<ad::Tensor*> Network::refiner_param_ptrs() {
    std::vector<ad::Tensor*> out;
    for (auto& [name, t] : refiner_params()) out.push_back(t);
    return out;
}

// ---- graph builders ----

ad::Var color_map_op(ad::Tape& tape, Network& net, ad::Var crop) {
    const int h = tape.val(crop).dim(0);
    const int w = tape.val(crop).dim(1);
    Var x = tape.relu(tape.conv_bias(tape.conv2d(crop, tape.leaf(net.enc1_k), 1),
                                     tape.leaf(net.enc1_b)));
    x = tape.relu(tape.conv_bias(tape.conv2d(x, tape.leaf(net.enc2_k), 2), tape.leaf(net.enc2_b)));
    x = tape.relu(tape.conv_bias(tape.conv2d(x, tape.leaf(net.enc3_k), 1), tape.leaf(net.enc3_b)));
    x = tape.crop_spatial(tape.upsample_nearest(x, 2), h, w);
    return tape.conv_bias(tape.conv2d(x, tape.leaf(net.emb_k), 1), tape.leaf(net.emb_b));
}

ad::Var geo_features_op(ad::Tape& tape, Network& net, ad::Var points) {
    const Tensor& p = tape.val(points);
    if (p.ndim() != 2 || p.dim(1) != 3)
        throw ad::ShapeMismatch("geometric embedding: points must be [n,3]");
    if (p.dim(0) < 1) throw EmptyCloud("geometric embedding: empty cloud");
    const int n = p.dim(0);

    Var h1 = tape.relu(tape.linear(points, tape.leaf(net.g1_W), tape.leaf(net.g1_b)));
    Var h2 = tape.relu(tape.linear(h1, tape.leaf(net.g2_W), tape.leaf(net.g2_b)));
    Var pooled = tape.tile_rows(tape.mean_over_rows(h2), n);
    Var cat = tape.concat(h2, pooled, 1);
    return tape.linear(cat, tape.leaf(net.g3_W), tape.leaf(net.g3_b));
}

FusedOps fuse_op(ad::Tape& tape, Network& net, ad::Var color_map, ad::Var geo,
                 const std::vector<std::array<int, 2>>& rowcol) {
    {
        const Tensor& cm = tape.val(color_map);
        const Tensor& g = tape.val(geo);
        if (cm.ndim() != 3) throw ad::ShapeMismatch("fuse: color map must be [h,w,c]");
        if (g.ndim() != 2 || g.dim(0) != int(rowcol.size()))
            throw ad::ShapeMismatch("fuse: one geometric feature row per pixel index");
        for (const auto& rc : rowcol)
            if (rc[0] < 0 || rc[0] >= cm.dim(0) || rc[1] < 0 || rc[1] >= cm.dim(1))
                throw IndexOutOfBounds("fuse: pixel index outside the color map");
    }
    const int n = int(rowcol.size());

    Var colors = tape.gather_pixels(color_map, rowcol);
    Var pair = tape.concat(colors, geo, 1);
    Var m1 = tape.relu(tape.linear(pair, tape.leaf(net.f1_W), tape.leaf(net.f1_b)));
    Var m2 = tape.linear(m1, tape.leaf(net.f2_W), tape.leaf(net.f2_b));
    Var global = tape.mean_over_rows(m2);
    Var per_pixel = tape.concat(pair, tape.tile_rows(global, n), 1);
    return {per_pixel, global};
}

HeadOps predict_op(ad::Tape& tape, Network& net, ad::Var per_pixel_fused) {
    Var r = tape.relu(tape.linear(per_pixel_fused, tape.leaf(net.rot1_W), tape.leaf(net.rot1_b)));
    Var quats = tape.normalize_quaternion(tape.linear(r, tape.leaf(net.rot2_W),
                                                      tape.leaf(net.rot2_b)));
    Var t = tape.relu(tape.linear(per_pixel_fused, tape.leaf(net.tr1_W), tape.leaf(net.tr1_b)));
    Var trans = tape.linear(t, tape.leaf(net.tr2_W), tape.leaf(net.tr2_b));
    Var c = tape.relu(tape.linear(per_pixel_fused, tape.leaf(net.cf1_W), tape.leaf(net.cf1_b)));
    Var conf = tape.clamp_min(
        tape.sigmoid(tape.linear(c, tape.leaf(net.cf2_W), tape.leaf(net.cf2_b))), 1e-6);
    return {quats, trans, conf};
}

ForwardResult forward_scene(ad::Tape& tape, Network& net, const Scene& scene,
                            const std::vector<std::uint8_t>& mask, Rng& sample_rng) {
    if (mask.size() != scene.pixel_count())
        throw ad::ShapeMismatch("forward: mask size does not match the scene");

    int x0 = scene.width, y0 = scene.height, x1 = -1, y1 = -1;
    for (int y = 0; y < scene.height; ++y)
        for (int x = 0; x < scene.width; ++x)
            if (mask[std::size_t(y) * std::size_t(scene.width) + std::size_t(x)]) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw EmptyMask("forward: mask has no pixels");

    const PointCloud full = masked_cloud(scene, mask);
    if (full.size() == 0) throw NoValidDepth("forward: no masked pixel has a depth return");

    const std::vector<int> picks = sample_indices(int(full.size()), net.cfg.P, sample_rng);

    ForwardResult r;
    r.x0 = x0;
    r.y0 = y0;
    r.cloud.points.reserve(picks.size());
    r.cloud.colors.reserve(picks.size());
    r.cloud.pixel_index.reserve(picks.size());
    r.rowcol.reserve(picks.size());
    for (int i : picks) {
        r.cloud.points.push_back(full.points[std::size_t(i)]);
        r.cloud.colors.push_back(full.colors[std::size_t(i)]);
        r.cloud.pixel_index.push_back(full.pixel_index[std::size_t(i)]);
        const Eigen::Vector2i px = full.pixel_index[std::size_t(i)];
        r.rowcol.push_back({px.x() - y0, px.y() - x0});  // pixel_index is (row, col)
    }

    const int bh = y1 - y0 + 1, bw = x1 - x0 + 1;
    Tensor crop = Tensor::zeros({bh, bw, 3});
    for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x)
            for (int c = 0; c < 3; ++c)
                crop.data[(std::size_t(y) * std::size_t(bw) + std::size_t(x)) * 3 +
                          std::size_t(c)] =
                    scene.rgb[(std::size_t(y0 + y) * std::size_t(scene.width) +
                               std::size_t(x0 + x)) * 3 + std::size_t(c)];

    Tensor pts = Tensor::zeros({int(r.cloud.size()), 3});
    for (std::size_t i = 0; i < r.cloud.size(); ++i)
        for (int a = 0; a < 3; ++a) pts.data[i * 3 + std::size_t(a)] = r.cloud.points[i][a];

    r.color_map = color_map_op(tape, net, tape.value(std::move(crop)));
    r.geo = geo_features_op(tape, net, tape.value(std::move(pts)));
    const FusedOps fused = fuse_op(tape, net, r.color_map, r.geo, r.rowcol);
    r.per_pixel_fused = fused.per_pixel;
    r.global_feat = fused.global;
    const HeadOps heads = predict_op(tape, net, r.per_pixel_fused);
    r.quats = heads.quats;
    r.trans = heads.trans;
    r.conf = heads.conf;
    return r;
}

// ---- value-level operations ----

ad::Tensor embed_color(Network& net, const ad::Tensor& crop) {
    if (crop.ndim() != 3 || crop.dim(2) != 3 || crop.dim(0) < 1 || crop.dim(1) < 1)
        throw ad::ShapeMismatch("embed_color: crop must be a nonempty [h,w,3] image");
    Tape tape(false);
    return tape.val(color_map_op(tape, net, tape.value(crop)));
}

ad::Tensor embed_geometry(Network& net, const PointCloud& cloud) {
    if (cloud.size() == 0) throw EmptyCloud("embed_geometry: empty cloud");
    Tensor pts = Tensor::zeros({int(cloud.size()), 3});
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (int a = 0; a < 3; ++a) pts.data[i * 3 + std::size_t(a)] = cloud.points[i][a];
    Tape tape(false);
    return tape.val(geo_features_op(tape, net, tape.value(std::move(pts))));
}

std::pair<ad::Tensor, ad::Tensor> fuse(Network& net, const ad::Tensor& color_map,
                                       const ad::Tensor& geo,
                                       const std::vector<std::array<int, 2>>& rowcol) {
    Tape tape(false);
    Var cm = tape.value(color_map);
    Var g = tape.value(geo);
    const FusedOps f = fuse_op(tape, net, cm, g, rowcol);
    return {tape.val(f.per_pixel), tape.val(f.global)};
}

namespace {

std::vector<PerPixelPrediction> extract_predictions(const Tensor& quats, const Tensor& trans,
                                                    const Tensor& conf) {
    std::vector<PerPixelPrediction> out(std::size_t(quats.dim(0)));
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double* q = quats.data.data() + i * 4;
        out[i].rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
        out[i].translation = Eigen::Vector3d(trans.data[i * 3], trans.data[i * 3 + 1],
                                             trans.data[i * 3 + 2]);
        out[i].confidence = conf.data[i];
    }
    return out;
}

}  // namespace

std::vector<PerPixelPrediction> predict(Network& net, const ad::Tensor& per_pixel_fused) {
    Tape tape(false);
    const HeadOps h = predict_op(tape, net, tape.value(per_pixel_fused));
    return extract_predictions(tape.val(h.quats), tape.val(h.trans), tape.val(h.conf));
}

Pose select_best(const std::vector<PerPixelPrediction>& predictions) {
    if (predictions.empty()) throw EmptyPredictionList("select_best: no predictions");
    std::size_t best = 0;
    for (std::size_t i = 1; i < predictions.size(); ++i)
        if (predictions[i].confidence > predictions[best].confidence) best = i;
    return Pose(predictions[best].rotation, predictions[best].translation);
}

EstimateResult estimate(Network& net, const Scene& scene,
                        const std::vector<std::uint8_t>& mask) {
    Tape tape(false);
    Rng rng(derive_seed(net.cfg.seed, "estimate"));
    ForwardResult f = forward_scene(tape, net, scene, mask, rng);

    EstimateResult r;
    r.predictions = extract_predictions(tape.val(f.quats), tape.val(f.trans), tape.val(f.conf));
    r.pose = select_best(r.predictions);
    r.color_map = tape.val(f.color_map);
    r.cloud = std::move(f.cloud);
    r.rowcol = std::move(f.rowcol);
    r.x0 = f.x0;
    r.y0 = f.y0;
    return r;
}

// ---- checkpointing ----

namespace {

void write_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              std::streamsize(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& in, std::size_t n, const std::string& what) {
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(double)));
    if (std::size_t(in.gcount()) != n * sizeof(double))
        throw MalformedFile("checkpoint: truncated data for " + what);
    return v;
}

struct ArrayEntry {
    std::string name;
    std::vector<int> shape;
};

}  // namespace

void save_checkpoint(const std::string& path, Network& net, const TrainState* train) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot open for writing: " + path);

    std::ostringstream head;
    head << "DFCP 1\n";
    head << "config " << net.cfg.d_rgb << ' ' << net.cfg.d_geo << ' ' << net.cfg.d_glob << ' '
         << net.cfg.P << ' ' << net.cfg.N << ' ' << net.cfg.enc1 << ' ' << net.cfg.enc2 << ' '
         << net.cfg.geo_h << ' ' << net.cfg.fuse_h << ' ' << net.cfg.head_h << ' '
         << net.cfg.refine_h << '\n';

    std::vector<const std::vector<double>*> arrays;
    const auto add = [&](const std::string& name, const ad::Tensor& t) {
        head << "param " << name;
        for (int d : t.shape) head << ' ' << d;
        head << '\n';
        arrays.push_back(&t.data);
    };
    for (auto& [name, t] : net.main_params()) add("main." + name, *t);
    for (auto& [name, t] : net.refiner_params()) add("refiner." + name, *t);

    if (train) {
        head << "meta epoch " << train->epoch << '\n';
        head << "meta refining " << (train->refining ? 1 : 0) << '\n';
        head << "meta adam_t " << train->adam.t << '\n';
        head << "meta refiner_adam_t " << train->refiner_adam.t << '\n';
        const auto add_flat = [&](const std::string& name, const std::vector<double>& v) {
            head << "array " << name << ' ' << v.size() << '\n';
            arrays.push_back(&v);
        };
        add_flat("val_history", train->val_history);
        for (std::size_t i = 0; i < train->adam.m.size(); ++i) {
            add_flat("adam_m." + std::to_string(i), train->adam.m[i]);
            add_flat("adam_v." + std::to_string(i), train->adam.v[i]);
        }
        for (std::size_t i = 0; i < train->refiner_adam.m.size(); ++i) {
            add_flat("refiner_adam_m." + std::to_string(i), train->refiner_adam.m[i]);
            add_flat("refiner_adam_v." + std::to_string(i), train->refiner_adam.v[i]);
        }
    }
    head << "end\n";

    out << head.str();
    for (const auto* a : arrays) write_doubles(out, *a);
    if (!out) throw IoError("checkpoint: write failed: " + path);
}

void load_checkpoint(const std::string& path, Network& net, TrainState* train) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingCheckpoint("checkpoint: cannot open: " + path);

    std::string line;
    if (!std::getline(in, line) || line != "DFCP 1")
        throw MalformedFile("checkpoint: bad signature line");

    std::vector<std::pair<std::string, ad::Tensor*>> registry;
    for (auto& [name, t] : net.main_params()) registry.emplace_back("main." + name, t);
    for (auto& [name, t] : net.refiner_params()) registry.emplace_back("refiner." + name, t);

    std::vector<ArrayEntry> order;       // params and flat arrays, in file order
    std::vector<bool> is_param;
    std::size_t seen_params = 0;
    if (train) *train = TrainState{};
    std::int64_t adam_t = 0, refiner_adam_t = 0;

    bool ended = false;
    while (std::getline(in, line)) {
        if (line == "end") {
            ended = true;
            break;
        }
        std::istringstream ls(line);
        std::string kind, name;
        ls >> kind >> name;
        if (kind == "config") {
            // validated below against the live configuration
            std::vector<int> c;
            int v = 0;
            std::istringstream cs(line.substr(7));
            while (cs >> v) c.push_back(v);
            const NetworkConfig& k = net.cfg;
            const std::vector<int> want = {k.d_rgb, k.d_geo, k.d_glob,  k.P,      k.N,     k.enc1,
                                           k.enc2,  k.geo_h, k.fuse_h, k.head_h, k.refine_h};
            if (c != want)
                throw ad::ShapeMismatch("checkpoint: saved for a different network configuration");
        } else if (kind == "param") {
            ArrayEntry e;
            e.name = name;
            int d = 0;
            while (ls >> d) e.shape.push_back(d);
            order.push_back(std::move(e));
            is_param.push_back(true);
            ++seen_params;
        } else if (kind == "array") {
            ArrayEntry e;
            e.name = name;
            std::size_t n = 0;
            if (!(ls >> n)) throw MalformedFile("checkpoint: bad array line: " + line);
            e.shape = {int(n)};
            order.push_back(std::move(e));
            is_param.push_back(false);
        } else if (kind == "meta") {
            std::int64_t v = 0;
            if (!(ls >> v)) throw MalformedFile("checkpoint: bad meta line: " + line);
            if (train) {
                if (name == "epoch") train->epoch = int(v);
                if (name == "refining") train->refining = v != 0;
                if (name == "adam_t") adam_t = v;
                if (name == "refiner_adam_t") refiner_adam_t = v;
            }
        } else {
            throw MalformedFile("checkpoint: unknown header line: " + line);
        }
    }
    if (!ended) throw MalformedFile("checkpoint: header never ends");
    if (seen_params != registry.size())
        throw MalformedFile("checkpoint: parameter count does not match the network");

    for (std::size_t i = 0; i < order.size(); ++i) {
        const ArrayEntry& e = order[i];
        std::size_t n = 1;
        for (int d : e.shape) n *= std::size_t(d);
        std::vector<double> data = read_doubles(in, n, e.name);
        if (is_param[i]) {
            const auto it = std::find_if(registry.begin(), registry.end(),
                                         [&](const auto& p) { return p.first == e.name; });
            if (it == registry.end())
                throw MalformedFile("checkpoint: unknown parameter " + e.name);
            if (it->second->shape != e.shape)
                throw ad::ShapeMismatch("checkpoint: shape mismatch for " + e.name);
            it->second->data = std::move(data);
        } else if (train) {
            const std::string& nm = e.name;
            const auto tail = [&](const std::string& prefix) {
                return std::stoul(nm.substr(prefix.size()));
            };
            const auto place = [&](std::vector<std::vector<double>>& dst, std::size_t idx) {
                if (dst.size() <= idx) dst.resize(idx + 1);
                dst[idx] = std::move(data);
            };
            if (nm == "val_history")
                train->val_history = std::move(data);
            else if (nm.rfind("adam_m.", 0) == 0)
                place(train->adam.m, tail("adam_m."));
            else if (nm.rfind("adam_v.", 0) == 0)
                place(train->adam.v, tail("adam_v."));
            else if (nm.rfind("refiner_adam_m.", 0) == 0)
                place(train->refiner_adam.m, tail("refiner_adam_m."));
            else if (nm.rfind("refiner_adam_v.", 0) == 0)
                place(train->refiner_adam.v, tail("refiner_adam_v."));
            else
                throw MalformedFile("checkpoint: unknown array " + nm);
        }
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw MalformedFile("checkpoint: trailing bytes after arrays");
    if (train) {
        train->adam.t = adam_t;
        train->refiner_adam.t = refiner_adam_t;
    }
}

}  // namespace df
