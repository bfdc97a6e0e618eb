#include "densefusion/autodiff.hpp"

#include "densefusion/rng.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace df::ad {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

const std::vector<std::string>& builtin_op_names() {
    static const std::vector<std::string> names = {
        "linear",       "relu",        "sigmoid",     "clamp_min",  "concat",
        "mean_over_rows", "tile_rows", "conv2d",      "conv_bias",  "upsample_nearest",
        "crop_spatial", "normalize_quaternion", "gather_pixels", "select_rows",
        "slice_cols",   "add",         "mul_const",   "scale",      "sum_all",
    };
    return names;
}

Var Tape::push(Tensor value, Tensor* external) {
    slots_.push_back(Slot{std::move(value), {}, external});
    return Var{int(slots_.size()) - 1};
}

Var Tape::leaf(Tensor& param) { return push(param, &param); }

Var Tape::value(Tensor v) { return push(std::move(v)); }

void Tape::accumulate(int slot_id, const std::vector<double>& g) {
    Slot& s = slots_[std::size_t(slot_id)];
    if (s.grad.empty()) s.grad.assign(s.value.data.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) s.grad[i] += g[i];
}

double* Tape::grad_ptr(int slot_id) {
    Slot& s = slots_[std::size_t(slot_id)];
    if (s.grad.empty()) s.grad.assign(s.value.data.size(), 0.0);
    return s.grad.data();
}

Var Tape::emplace(std::unique_ptr<OpNode> node, Tensor out_value, std::vector<int> inputs) {
    Var out = push(std::move(out_value));
    if (record_) {
        node->in = std::move(inputs);
        node->out = out.id;
        nodes_.push_back(std::move(node));
    }
    return out;
}

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeMismatch(msg);
}

std::string shape_str(const Tensor& t) {
    std::string s = "(";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + ")";
}

// ---- node types ----

struct LinearNode : OpNode {
    int n, in_dim, out_dim;
    const char* name() const override { return "linear"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        CMapM Gy(gy.data(), n, out_dim);
        CMapM X(t.value_of(in[0]).data.data(), n, in_dim);
        CMapM W(t.value_of(in[1]).data.data(), in_dim, out_dim);
        MapM Gx(t.grad_ptr(in[0]), n, in_dim);
        Gx.noalias() += Gy * W.transpose();
        MapM Gw(t.grad_ptr(in[1]), in_dim, out_dim);
        Gw.noalias() += X.transpose() * Gy;
        double* gb = t.grad_ptr(in[2]);
        for (int j = 0; j < out_dim; ++j) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += Gy(i, j);
            gb[j] += s;
        }
    }
};

struct ReluNode : OpNode {
    const char* name() const override { return "relu"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        const auto& x = t.value_of(in[0]).data;
        double* gx = t.grad_ptr(in[0]);
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] > 0.0) gx[i] += gy[i];
    }
};

struct SigmoidNode : OpNode {
    const char* name() const override { return "sigmoid"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        const auto& y = t.value_of(out).data;
        double* gx = t.grad_ptr(in[0]);
        for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
    }
};

struct ClampMinNode : OpNode {
    double lo;
    const char* name() const override { return "clamp_min"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        const auto& x = t.value_of(in[0]).data;
        double* gx = t.grad_ptr(in[0]);
        for (std::size_t i = 0; i < x.size(); ++i)
            if (x[i] > lo) gx[i] += gy[i];
    }
};

struct ConcatNode : OpNode {
    int axis, n0, d0, n1, d1;
    const char* name() const override { return "concat"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* ga = t.grad_ptr(in[0]);
        double* gb = t.grad_ptr(in[1]);
        if (axis == 0) {
            for (std::size_t i = 0; i < std::size_t(n0) * d0; ++i) ga[i] += gy[i];
            const double* g2 = gy.data() + std::size_t(n0) * d0;
            for (std::size_t i = 0; i < std::size_t(n1) * d1; ++i) gb[i] += g2[i];
        } else {
            int d = d0 + d1;
            for (int r = 0; r < n0; ++r) {
                const double* row = gy.data() + std::size_t(r) * d;
                for (int c = 0; c < d0; ++c) ga[std::size_t(r) * d0 + c] += row[c];
                for (int c = 0; c < d1; ++c) gb[std::size_t(r) * d1 + c] += row[d0 + c];
            }
        }
    }
};

struct MeanOverRowsNode : OpNode {
    int n, d;
    const char* name() const override { return "mean_over_rows"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        const double inv = 1.0 / double(n);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) gx[std::size_t(r) * d + c] += gy[c] * inv;
    }
};

struct TileRowsNode : OpNode {
    int n, d;
    const char* name() const override { return "tile_rows"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < d; ++c) gx[c] += gy[std::size_t(r) * d + c];
    }
};

// Same-zero-padded convolution on [h,w,cin] with odd square kernels.
// Forward keeps the im2col matrix for the backward GEMMs.
struct Conv2dNode : OpNode {
    int h, w, cin, ksz, cout, stride, oh, ow;
    std::vector<double> cols;  // [oh*ow, ksz*ksz*cin]
    const char* name() const override { return "conv2d"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        const int patch = ksz * ksz * cin;
        CMapM Gy(gy.data(), oh * ow, cout);
        CMapM Cols(cols.data(), oh * ow, patch);
        MapM Gk(t.grad_ptr(in[1]), patch, cout);
        Gk.noalias() += Cols.transpose() * Gy;

        CMapM K(t.value_of(in[1]).data.data(), patch, cout);
        MatRM gcols = Gy * K.transpose();  // [oh*ow, patch]
        double* gx = t.grad_ptr(in[0]);
        const int pad = ksz / 2;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const double* grow = gcols.data() + (std::size_t(oy) * ow + ox) * patch;
                int idx = 0;
                for (int ky = 0; ky < ksz; ++ky) {
                    int iy = oy * stride + ky - pad;
                    for (int kx = 0; kx < ksz; ++kx) {
                        int ix = ox * stride + kx - pad;
                        if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                            double* dst = gx + (std::size_t(iy) * w + ix) * cin;
                            for (int c = 0; c < cin; ++c) dst[c] += grow[idx + c];
                        }
                        idx += cin;
                    }
                }
            }
        }
    }
};

struct ConvBiasNode : OpNode {
    int hw, c;
    const char* name() const override { return "conv_bias"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        double* gb = t.grad_ptr(in[1]);
        for (int i = 0; i < hw; ++i)
            for (int j = 0; j < c; ++j) {
                gx[std::size_t(i) * c + j] += gy[std::size_t(i) * c + j];
                gb[j] += gy[std::size_t(i) * c + j];
            }
    }
};

struct UpsampleNode : OpNode {
    int h, w, c, f;
    const char* name() const override { return "upsample_nearest"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        const int ow = w * f;
        for (int y = 0; y < h * f; ++y)
            for (int x = 0; x < ow; ++x) {
                const double* src = gy.data() + (std::size_t(y) * ow + x) * c;
                double* dst = gx + (std::size_t(y / f) * w + (x / f)) * c;
                for (int j = 0; j < c; ++j) dst[j] += src[j];
            }
    }
};

struct CropSpatialNode : OpNode {
    int h, w, c, oh, ow;
    const char* name() const override { return "crop_spatial"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                const double* src = gy.data() + (std::size_t(y) * ow + x) * c;
                double* dst = gx + (std::size_t(y) * w + x) * c;
                for (int j = 0; j < c; ++j) dst[j] += src[j];
            }
    }
};

struct NormalizeQuatNode : OpNode {
    int n;
    std::vector<double> norms;
    const char* name() const override { return "normalize_quaternion"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        const auto& y = t.value_of(out).data;
        double* gx = t.grad_ptr(in[0]);
        for (int r = 0; r < n; ++r) {
            const double* yr = y.data() + std::size_t(r) * 4;
            const double* gr = gy.data() + std::size_t(r) * 4;
            double dot = 0.0;
            for (int j = 0; j < 4; ++j) dot += gr[j] * yr[j];
            const double inv = 1.0 / norms[std::size_t(r)];
            for (int j = 0; j < 4; ++j) gx[std::size_t(r) * 4 + j] += (gr[j] - dot * yr[j]) * inv;
        }
    }
};

struct GatherPixelsNode : OpNode {
    int w, c;
    std::vector<std::array<int, 2>> rowcol;
    const char* name() const override { return "gather_pixels"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        for (std::size_t p = 0; p < rowcol.size(); ++p) {
            double* dst = gx + (std::size_t(rowcol[p][0]) * w + rowcol[p][1]) * c;
            const double* src = gy.data() + p * c;
            for (int j = 0; j < c; ++j) dst[j] += src[j];
        }
    }
};

struct SelectRowsNode : OpNode {
    int d;
    std::vector<int> rows;
    const char* name() const override { return "select_rows"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (int j = 0; j < d; ++j)
                gx[std::size_t(rows[r]) * d + j] += gy[r * d + j];
    }
};

struct SliceColsNode : OpNode {
    int n, d, c0, c1;
    const char* name() const override { return "slice_cols"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        const int oc = c1 - c0;
        for (int r = 0; r < n; ++r)
            for (int j = 0; j < oc; ++j)
                gx[std::size_t(r) * d + c0 + j] += gy[std::size_t(r) * oc + j];
    }
};

struct AddNode : OpNode {
    const char* name() const override { return "add"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* ga = t.grad_ptr(in[0]);
        double* gb = t.grad_ptr(in[1]);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            ga[i] += gy[i];
            gb[i] += gy[i];
        }
    }
};

struct MulConstNode : OpNode {
    Tensor w;
    const char* name() const override { return "mul_const"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * w.data[i];
    }
};

struct ScaleNode : OpNode {
    double s;
    const char* name() const override { return "scale"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * s;
    }
};

struct SumAllNode : OpNode {
    const char* name() const override { return "sum_all"; }
    void backward(Tape& t) override {
        const auto& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        double* gx = t.grad_ptr(in[0]);
        const std::size_t n = t.value_of(in[0]).data.size();
        for (std::size_t i = 0; i < n; ++i) gx[i] += gy[0];
    }
};

}  // namespace

// ---- op builders ----

Var Tape::linear(Var xv, Var Wv, Var bv) {
    const Tensor& x = val(xv);
    const Tensor& W = val(Wv);
    const Tensor& b = val(bv);
    require(x.ndim() == 2 && W.ndim() == 2 && b.ndim() == 1,
            "linear: expected x[n,in], W[in,out], b[out], got " + shape_str(x) + " " +
                shape_str(W) + " " + shape_str(b));
    require(x.dim(1) == W.dim(0) && W.dim(1) == b.dim(0),
            "linear: inner dims disagree: " + shape_str(x) + " " + shape_str(W) + " " +
                shape_str(b));
    const int n = x.dim(0), in_dim = x.dim(1), out_dim = W.dim(1);
    Tensor y = Tensor::zeros({n, out_dim});
    CMapM X(x.data.data(), n, in_dim);
    CMapM Wm(W.data.data(), in_dim, out_dim);
    MapM Y(y.data.data(), n, out_dim);
    Y.noalias() = X * Wm;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_dim; ++j) y.data[std::size_t(i) * out_dim + j] += b.data[std::size_t(j)];
    auto node = std::make_unique<LinearNode>();
    node->n = n;
    node->in_dim = in_dim;
    node->out_dim = out_dim;
    return emplace(std::move(node), std::move(y), {xv.id, Wv.id, bv.id});
}

Var Tape::relu(Var xv) {
    const Tensor& x = val(xv);
    Tensor y = x;
    y.requires_grad = false;
    y.grad.clear();
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return emplace(std::make_unique<ReluNode>(), std::move(y), {xv.id});
}

Var Tape::sigmoid(Var xv) {
    const Tensor& x = val(xv);
    Tensor y = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        double v = x.data[i];
        y.data[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return emplace(std::make_unique<SigmoidNode>(), std::move(y), {xv.id});
}

Var Tape::clamp_min(Var xv, double lo) {
    const Tensor& x = val(xv);
    Tensor y = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = std::max(x.data[i], lo);
    auto node = std::make_unique<ClampMinNode>();
    node->lo = lo;
    return emplace(std::move(node), std::move(y), {xv.id});
}

Var Tape::concat(Var av, Var bv, int axis) {
    const Tensor& a = val(av);
    const Tensor& b = val(bv);
    require(a.ndim() == 2 && b.ndim() == 2, "concat: 2-D tensors required, got " + shape_str(a) +
                                                " " + shape_str(b));
    require(axis == 0 || axis == 1, "concat: axis must be 0 or 1");
    Tensor y;
    auto node = std::make_unique<ConcatNode>();
    node->axis = axis;
    node->n0 = a.dim(0);
    node->d0 = a.dim(1);
    node->n1 = b.dim(0);
    node->d1 = b.dim(1);
    if (axis == 0) {
        require(a.dim(1) == b.dim(1), "concat axis 0: column counts differ: " + shape_str(a) +
                                          " vs " + shape_str(b));
        y = Tensor::zeros({a.dim(0) + b.dim(0), a.dim(1)});
        std::copy(a.data.begin(), a.data.end(), y.data.begin());
        std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.data.size());
    } else {
        require(a.dim(0) == b.dim(0), "concat axis 1: row counts differ: " + shape_str(a) +
                                          " vs " + shape_str(b));
        const int n = a.dim(0), d0 = a.dim(1), d1 = b.dim(1);
        y = Tensor::zeros({n, d0 + d1});
        for (int r = 0; r < n; ++r) {
            std::copy_n(a.data.begin() + std::size_t(r) * d0, d0,
                        y.data.begin() + std::size_t(r) * (d0 + d1));
            std::copy_n(b.data.begin() + std::size_t(r) * d1, d1,
                        y.data.begin() + std::size_t(r) * (d0 + d1) + d0);
        }
    }
    return emplace(std::move(node), std::move(y), {av.id, bv.id});
}

Var Tape::mean_over_rows(Var xv) {
    const Tensor& x = val(xv);
    require(x.ndim() == 2, "mean_over_rows: 2-D tensor required, got " + shape_str(x));
    const int n = x.dim(0), d = x.dim(1);
    require(n >= 1, "mean_over_rows: empty input");
    Tensor y = Tensor::zeros({d});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) y.data[std::size_t(c)] += x.data[std::size_t(r) * d + c];
    for (double& v : y.data) v /= double(n);
    auto node = std::make_unique<MeanOverRowsNode>();
    node->n = n;
    node->d = d;
    return emplace(std::move(node), std::move(y), {xv.id});
}

Var Tape::tile_rows(Var xv, int n) {
    const Tensor& x = val(xv);
    require(x.ndim() == 1, "tile_rows: 1-D tensor required, got " + shape_str(x));
    require(n >= 1, "tile_rows: n must be >= 1");
    const int d = x.dim(0);
    Tensor y = Tensor::zeros({n, d});
    for (int r = 0; r < n; ++r)
        std::copy(x.data.begin(), x.data.end(), y.data.begin() + std::size_t(r) * d);
    auto node = std::make_unique<TileRowsNode>();
    node->n = n;
    node->d = d;
    return emplace(std::move(node), std::move(y), {xv.id});
}

Var Tape::conv2d(Var xv, Var kv, int stride) {
    const Tensor& x = val(xv);
    const Tensor& k = val(kv);
    require(x.ndim() == 3, "conv2d: input must be [h,w,cin], got " + shape_str(x));
    require(k.ndim() == 4 && k.dim(0) == k.dim(1), "conv2d: kernel must be [k,k,cin,cout], got " +
                                                       shape_str(k));
    require(k.dim(0) % 2 == 1, "conv2d: kernel size must be odd");
    require(k.dim(2) == x.dim(2), "conv2d: cin mismatch: " + shape_str(x) + " vs " + shape_str(k));
    require(stride >= 1, "conv2d: stride must be >= 1");
    const int h = x.dim(0), w = x.dim(1), cin = x.dim(2);
    const int ksz = k.dim(0), cout = k.dim(3);
    const int oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
    const int pad = ksz / 2;
    const int patch = ksz * ksz * cin;

    std::vector<double> cols(std::size_t(oh) * ow * patch, 0.0);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* dst = cols.data() + (std::size_t(oy) * ow + ox) * patch;
            int idx = 0;
            for (int ky = 0; ky < ksz; ++ky) {
                int iy = oy * stride + ky - pad;
                for (int kx = 0; kx < ksz; ++kx) {
                    int ix = ox * stride + kx - pad;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                        const double* src = x.data.data() + (std::size_t(iy) * w + ix) * cin;
                        for (int c = 0; c < cin; ++c) dst[idx + c] = src[c];
                    }
                    idx += cin;
                }
            }
        }
    }

    Tensor y = Tensor::zeros({oh, ow, cout});
    CMapM Cols(cols.data(), oh * ow, patch);
    CMapM K(k.data.data(), patch, cout);
    MapM Y(y.data.data(), oh * ow, cout);
    Y.noalias() = Cols * K;

    auto node = std::make_unique<Conv2dNode>();
    node->h = h;
    node->w = w;
    node->cin = cin;
    node->ksz = ksz;
    node->cout = cout;
    node->stride = stride;
    node->oh = oh;
    node->ow = ow;
    if (record_) node->cols = std::move(cols);
    return emplace(std::move(node), std::move(y), {xv.id, kv.id});
}

Var Tape::conv_bias(Var xv, Var bv) {
    const Tensor& x = val(xv);
    const Tensor& b = val(bv);
    require(x.ndim() == 3 && b.ndim() == 1 && b.dim(0) == x.dim(2),
            "conv_bias: need [h,w,c] and [c], got " + shape_str(x) + " " + shape_str(b));
    const int hw = x.dim(0) * x.dim(1), c = x.dim(2);
    Tensor y = x;
    y.requires_grad = false;
    y.grad.clear();
    for (int i = 0; i < hw; ++i)
        for (int j = 0; j < c; ++j) y.data[std::size_t(i) * c + j] += b.data[std::size_t(j)];
    auto node = std::make_unique<ConvBiasNode>();
    node->hw = hw;
    node->c = c;
    return emplace(std::move(node), std::move(y), {xv.id, bv.id});
}

Var Tape::upsample_nearest(Var xv, int factor) {
    const Tensor& x = val(xv);
    require(x.ndim() == 3, "upsample_nearest: input must be [h,w,c], got " + shape_str(x));
    require(factor >= 1, "upsample_nearest: factor must be >= 1");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    Tensor y = Tensor::zeros({h * factor, w * factor, c});
    const int ow = w * factor;
    for (int yy = 0; yy < h * factor; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
            const double* src = x.data.data() + (std::size_t(yy / factor) * w + xx / factor) * c;
            double* dst = y.data.data() + (std::size_t(yy) * ow + xx) * c;
            std::copy_n(src, c, dst);
        }
    auto node = std::make_unique<UpsampleNode>();
    node->h = h;
    node->w = w;
    node->c = c;
    node->f = factor;
    return emplace(std::move(node), std::move(y), {xv.id});
}

Var Tape::crop_spatial(Var xv, int h, int w) {
    const Tensor& x = val(xv);
    require(x.ndim() == 3, "crop_spatial: input must be [h,w,c], got " + shape_str(x));
    require(h >= 1 && w >= 1 && h <= x.dim(0) && w <= x.dim(1),
            "crop_spatial: target exceeds input " + shape_str(x));
    const int c = x.dim(2), iw = x.dim(1);
    Tensor y = Tensor::zeros({h, w, c});
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
            std::copy_n(x.data.data() + (std::size_t(yy) * iw + xx) * c, c,
                        y.data.data() + (std::size_t(yy) * w + xx) * c);
    auto node = std::make_unique<CropSpatialNode>();
    node->h = x.dim(0);
    node->w = iw;
    node->c = c;
    node->oh = h;
    node->ow = w;
    return emplace(std::move(node), std::move(y), {xv.id});
}

Var Tape::normalize_quaternion(Var xv) {
    const Tensor& x = val(xv);
    require(x.ndim() == 2 && x.dim(1) == 4,
            "normalize_quaternion: input must be [n,4], got " + shape_str(x));
    const int n = x.dim(0);
    Tensor y = Tensor::zeros({n, 4});
    auto node = std::make_unique<NormalizeQuatNode>();
    node->n = n;
    node->norms.resize(std::size_t(n));
    for (int r = 0; r < n; ++r) {
        const double* xr = x.data.data() + std::size_t(r) * 4;
        double norm = std::sqrt(xr[0] * xr[0] + xr[1] * xr[1] + xr[2] * xr[2] + xr[3] * xr[3]);
        if (norm < 1e-12) throw ShapeMismatch("normalize_quaternion: zero-norm row");
        node->norms[std::size_t(r)] = norm;
        for (int j = 0; j < 4; ++j) y.data[std::size_t(r) * 4 + j] = xr[j] / norm;
    }
    return emplace(std::move(node), std::move(y), {xv.id});
}

Var Tape::gather_pixels(Var mapv, const std::vector<std::array<int, 2>>& rowcol) {
    const Tensor& m = val(mapv);
    require(m.ndim() == 3, "gather_pixels: map must be [h,w,c], got " + shape_str(m));
    const int h = m.dim(0), w = m.dim(1), c = m.dim(2);
    for (const auto& rc : rowcol)
        if (rc[0] < 0 || rc[0] >= h || rc[1] < 0 || rc[1] >= w)
            throw std::out_of_range("gather_pixels: index (" + std::to_string(rc[0]) + "," +
                                    std::to_string(rc[1]) + ") outside map " + shape_str(m));
    Tensor y = Tensor::zeros({int(rowcol.size()), c});
    for (std::size_t p = 0; p < rowcol.size(); ++p)
        std::copy_n(m.data.data() + (std::size_t(rowcol[p][0]) * w + rowcol[p][1]) * c, c,
                    y.data.data() + p * c);
    auto node = std::make_unique<GatherPixelsNode>();
    node->w = w;
    node->c = c;
    node->rowcol = rowcol;
    return emplace(std::move(node), std::move(y), {mapv.id});
}

Var Tape::select_rows(Var xv, const std::vector<int>& rows) {
    const Tensor& x = val(xv);
    require(x.ndim() == 2, "select_rows: 2-D tensor required, got " + shape_str(x));
    const int n = x.dim(0), d = x.dim(1);
    for (int r : rows)
        if (r < 0 || r >= n) throw std::out_of_range("select_rows: row index out of range");
    Tensor y = Tensor::zeros({int(rows.size()), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.data.begin() + std::size_t(rows[i]) * d, d, y.data.begin() + i * d);
    auto node = std::make_unique<SelectRowsNode>();
    node->d = d;
    node->rows = rows;
    return emplace(std::move(node), std::move(y), {xv.id});
}

Var Tape::slice_cols(Var xv, int c0, int c1) {
    const Tensor& x = val(xv);
    require(x.ndim() == 2, "slice_cols: 2-D tensor required, got " + shape_str(x));
    require(0 <= c0 && c0 < c1 && c1 <= x.dim(1), "slice_cols: bad column range");
    const int n = x.dim(0), d = x.dim(1), oc = c1 - c0;
    Tensor y = Tensor::zeros({n, oc});
    for (int r = 0; r < n; ++r)
        std::copy_n(x.data.begin() + std::size_t(r) * d + c0, oc, y.data.begin() + std::size_t(r) * oc);
    auto node = std::make_unique<SliceColsNode>();
    node->n = n;
    node->d = d;
    node->c0 = c0;
    node->c1 = c1;
    return emplace(std::move(node), std::move(y), {xv.id});
}

Var Tape::add(Var av, Var bv) {
    const Tensor& a = val(av);
    const Tensor& b = val(bv);
    require(a.shape == b.shape, "add: shapes differ: " + shape_str(a) + " vs " + shape_str(b));
    Tensor y = Tensor::zeros(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    return emplace(std::make_unique<AddNode>(), std::move(y), {av.id, bv.id});
}

Var Tape::mul_const(Var xv, Tensor w) {
    const Tensor& x = val(xv);
    require(x.shape == w.shape, "mul_const: shapes differ: " + shape_str(x) + " vs " + shape_str(w));
    Tensor y = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] * w.data[i];
    auto node = std::make_unique<MulConstNode>();
    node->w = std::move(w);
    return emplace(std::move(node), std::move(y), {xv.id});
}

Var Tape::scale(Var xv, double s) {
    const Tensor& x = val(xv);
    Tensor y = Tensor::zeros(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] * s;
    auto node = std::make_unique<ScaleNode>();
    node->s = s;
    return emplace(std::move(node), std::move(y), {xv.id});
}

Var Tape::sum_all(Var xv) {
    const Tensor& x = val(xv);
    double s = 0.0;
    for (double v : x.data) s += v;
    return emplace(std::make_unique<SumAllNode>(), Tensor::scalar(s), {xv.id});
}

void Tape::backward(Var loss) {
    check(loss);
    if (backward_done_) throw DoubleBackward("backward already ran on this tape");
    const Tensor& l = val(loss);
    if (l.numel() != 1) throw NonScalarLoss("backward: loss must be scalar, has " +
                                            std::to_string(l.numel()) + " elements");
    bool produced = false;
    for (const auto& n : nodes_)
        if (n->out == loss.id) produced = true;
    if (!produced && slot(loss).external == nullptr && !nodes_.empty())
        throw DisconnectedGraph("backward: loss is not reachable from any tape operation");
    if (!record_) throw DisconnectedGraph("backward: tape was created in inference mode");
    backward_done_ = true;

    accumulate(loss.id, {1.0});
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)->backward(*this);

    // push leaf grads out to the externally owned parameters
    for (auto& s : slots_) {
        if (s.external && s.external->requires_grad && !s.grad.empty()) {
            s.external->ensure_grad();
            for (std::size_t i = 0; i < s.grad.size(); ++i) s.external->grad[i] += s.grad[i];
        }
    }
}

void sgd_step(const std::vector<Tensor*>& params, double lr) {
    for (Tensor* p : params) {
        if (p->grad.empty()) continue;
        if (p->grad.size() != p->data.size())
            throw ShapeMismatch("sgd_step: gradient/parameter size mismatch");
        for (std::size_t i = 0; i < p->data.size(); ++i) p->data[i] -= lr * p->grad[i];
    }
}

void adam_step(const std::vector<Tensor*>& params, AdamState& st, double lr, double beta1,
               double beta2, double eps) {
    if (!st.initialized_for(params)) st.init(params);
    st.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(st.t));
    const double bc2 = 1.0 - std::pow(beta2, double(st.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor* p = params[k];
        if (p->grad.empty()) continue;
        if (p->grad.size() != p->data.size())
            throw ShapeMismatch("adam_step: gradient/parameter size mismatch");
        auto& m = st.m[k];
        auto& v = st.v[k];
        for (std::size_t i = 0; i < p->data.size(); ++i) {
            const double g = p->grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            p->data[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
}

void glorot_init(Tensor& W, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
    for (double& v : W.data) v = rng.uniform(-bound, bound);
    W.requires_grad = true;
}

}  // namespace df::ad
