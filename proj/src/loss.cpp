#include "densefusion/loss.hpp"

#include <cmath>
#include <memory>
#include <numeric>

#include <Eigen/Geometry>

#include "densefusion/rng.hpp"

namespace df {

namespace {

using ad::OpNode;
using ad::Tape;
using ad::Tensor;
using ad::Var;

// L_i for one pose row; match indices are written when symmetric.
double loss_row(const std::vector<Eigen::Vector3d>& pts,
                const std::vector<Eigen::Vector3d>& gt_pts, const Eigen::Matrix3d& R,
                const Eigen::Vector3d& t, bool symmetric, int* match) {
    const int m = int(pts.size());
    double sum = 0.0;
    for (int j = 0; j < m; ++j) {
        const Eigen::Vector3d p = R * pts[std::size_t(j)] + t;
        if (!symmetric) {
            sum += (p - gt_pts[std::size_t(j)]).norm();
            continue;
        }
        double best = (p - gt_pts[0]).squaredNorm();
        int best_k = 0;
        for (int k = 1; k < m; ++k) {
            const double d2 = (p - gt_pts[std::size_t(k)]).squaredNorm();
            if (d2 < best) {
                best = d2;
                best_k = k;
            }
        }
        sum += std::sqrt(best);
        if (match) match[j] = best_k;
    }
    return sum / double(m);
}

Eigen::Matrix3d rotation_of_row(const Tensor& q, int row) {
    const double* p = q.data.data() + std::size_t(row) * 4;
    return Eigen::Quaterniond(p[0], p[1], p[2], p[3]).toRotationMatrix();
}

// Mean model-point distance under predicted vs ground-truth pose. The input
// quaternion rows are unit (produced by the normalization op); the backward
// pass differentiates the rotation polynomial R(q)x = x + 2w(v×x) + 2v×(v×x)
// exactly, and nearest-point match indices stay constant.
class PosePointLossNode final : public OpNode {
public:
    PosePointLossNode(std::vector<Eigen::Vector3d> pts, std::vector<Eigen::Vector3d> gt_pts,
                      bool symmetric, int n)
        : pts_(std::move(pts)), gt_pts_(std::move(gt_pts)), symmetric_(symmetric) {
        if (symmetric_) match_.assign(std::size_t(n) * pts_.size(), 0);
    }

    const char* name() const override { return "pose_point_losses"; }

    Tensor forward(const Tensor& quats, const Tensor& trans) {
        const int n = quats.dim(0);
        Tensor out = Tensor::zeros({n, 1});
        for (int i = 0; i < n; ++i) {
            const Eigen::Matrix3d R = rotation_of_row(quats, i);
            const Eigen::Vector3d t(trans.data[std::size_t(i) * 3],
                                    trans.data[std::size_t(i) * 3 + 1],
                                    trans.data[std::size_t(i) * 3 + 2]);
            int* match = symmetric_ ? match_.data() + std::size_t(i) * pts_.size() : nullptr;
            out.data[std::size_t(i)] = loss_row(pts_, gt_pts_, R, t, symmetric_, match);
        }
        return out;
    }

    void backward(Tape& t) override {
        const std::vector<double>& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        const Tensor& quats = t.value_of(in[0]);
        const Tensor& trans = t.value_of(in[1]);
        const int n = quats.dim(0);
        const int m = int(pts_.size());
        std::vector<double> gq(std::size_t(n) * 4, 0.0);
        std::vector<double> gt(std::size_t(n) * 3, 0.0);
        for (int i = 0; i < n; ++i) {
            const double g = gy[std::size_t(i)] / double(m);
            if (g == 0.0) continue;
            const double* qp = quats.data.data() + std::size_t(i) * 4;
            const double w = qp[0];
            const Eigen::Vector3d v(qp[1], qp[2], qp[3]);
            const Eigen::Matrix3d R = rotation_of_row(quats, i);
            const Eigen::Vector3d ti(trans.data[std::size_t(i) * 3],
                                     trans.data[std::size_t(i) * 3 + 1],
                                     trans.data[std::size_t(i) * 3 + 2]);
            Eigen::Vector3d g_t = Eigen::Vector3d::Zero();
            double g_w = 0.0;
            Eigen::Vector3d g_v = Eigen::Vector3d::Zero();
            for (int j = 0; j < m; ++j) {
                const Eigen::Vector3d& x = pts_[std::size_t(j)];
                const int k = symmetric_ ? match_[std::size_t(i) * std::size_t(m) + std::size_t(j)]
                                         : j;
                const Eigen::Vector3d u = R * x + ti - gt_pts_[std::size_t(k)];
                const double dist = u.norm();
                if (dist < 1e-12) continue;  // kink at zero distance
                const Eigen::Vector3d gp = (g / dist) * u;
                g_t += gp;
                g_w += 2.0 * gp.dot(v.cross(x));
                g_v += 2.0 * w * x.cross(gp) +
                       2.0 * (v.dot(x) * gp + x * v.dot(gp) - 2.0 * v * x.dot(gp));
            }
            gq[std::size_t(i) * 4] += g_w;
            for (int a = 0; a < 3; ++a) {
                gq[std::size_t(i) * 4 + 1 + std::size_t(a)] += g_v[a];
                gt[std::size_t(i) * 3 + std::size_t(a)] += g_t[a];
            }
        }
        t.accumulate(in[0], gq);
        t.accumulate(in[1], gt);
    }

private:
    std::vector<Eigen::Vector3d> pts_;
    std::vector<Eigen::Vector3d> gt_pts_;
    bool symmetric_;
    std::vector<int> match_;
};

// (1/N) sum_i (L_i c_i - w log c_i)
class TotalLossNode final : public OpNode {
public:
    explicit TotalLossNode(double w) : w_(w) {}

    const char* name() const override { return "total_loss"; }

    Tensor forward(const Tensor& losses, const Tensor& conf) {
        const std::size_t n = losses.data.size();
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            sum += losses.data[i] * conf.data[i] - w_ * std::log(conf.data[i]);
        return Tensor::scalar(sum / double(n));
    }

    void backward(Tape& t) override {
        const std::vector<double>& gy = t.slot_by_id(out).grad;
        if (gy.empty()) return;
        const Tensor& losses = t.value_of(in[0]);
        const Tensor& conf = t.value_of(in[1]);
        const std::size_t n = losses.data.size();
        const double g = gy[0] / double(n);
        std::vector<double> gl(n), gc(n);
        for (std::size_t i = 0; i < n; ++i) {
            gl[i] = g * conf.data[i];
            gc[i] = g * (losses.data[i] - w_ / conf.data[i]);
        }
        t.accumulate(in[0], gl);
        t.accumulate(in[1], gc);
    }

private:
    double w_;
};

}  // namespace

std::vector<Eigen::Vector3d> sample_loss_points(const ObjectModel& model, int m, Rng& rng) {
    if (m < 1) throw std::invalid_argument("sample_loss_points: need at least one point");
    const auto& src = model.surface_points;
    const int n = int(src.size());
    std::vector<Eigen::Vector3d> out;
    out.reserve(std::size_t(m));
    if (m <= n) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        for (int i = 0; i < m; ++i) {
            const int j = i + int(rng.uniform_int(std::uint64_t(n - i)));
            std::swap(idx[std::size_t(i)], idx[std::size_t(j)]);
            out.push_back(src[std::size_t(idx[std::size_t(i)])]);
        }
    } else {
        for (int i = 0; i < m; ++i) out.push_back(src[rng.uniform_int(std::uint64_t(n))]);
    }
    return out;
}

ad::Var pose_losses(ad::Tape& tape, ad::Var quats, ad::Var trans,
                    const std::vector<Eigen::Vector3d>& model_points, const Pose& gt,
                    bool symmetric) {
    {
        const Tensor& q = tape.val(quats);
        const Tensor& tr = tape.val(trans);
        if (q.ndim() != 2 || q.dim(1) != 4)
            throw ad::ShapeMismatch("pose_losses: quaternions must be [n,4]");
        if (tr.ndim() != 2 || tr.dim(1) != 3)
            throw ad::ShapeMismatch("pose_losses: translations must be [n,3]");
        if (q.dim(0) != tr.dim(0))
            throw ad::ShapeMismatch("pose_losses: row counts differ");
        if (model_points.empty())
            throw std::invalid_argument("pose_losses: empty model point list");
    }

    // normalize_quaternion grows the tape, so earlier val() references die here
    const ad::Var unit = tape.normalize_quaternion(quats);
    std::vector<Eigen::Vector3d> gt_pts;
    gt_pts.reserve(model_points.size());
    for (const Eigen::Vector3d& x : model_points) gt_pts.push_back(gt.apply(x));

    auto node = std::make_unique<PosePointLossNode>(model_points, std::move(gt_pts), symmetric,
                                                    tape.val(quats).dim(0));
    Tensor out = node->forward(tape.val(unit), tape.val(trans));
    return tape.emplace(std::move(node), std::move(out), {unit.id, trans.id});
}

ad::Var add_losses(ad::Tape& tape, ad::Var quats, ad::Var trans,
                   const std::vector<Eigen::Vector3d>& model_points, const Pose& gt) {
    return pose_losses(tape, quats, trans, model_points, gt, false);
}

ad::Var adds_losses(ad::Tape& tape, ad::Var quats, ad::Var trans,
                    const std::vector<Eigen::Vector3d>& model_points, const Pose& gt) {
    return pose_losses(tape, quats, trans, model_points, gt, true);
}

ad::Var total_loss(ad::Tape& tape, ad::Var losses, ad::Var confidences, double w) {
    const Tensor& l = tape.val(losses);
    const Tensor& c = tape.val(confidences);
    if (l.numel() != c.numel())
        throw LengthMismatch("total_loss: losses and confidences differ in length");
    if (l.numel() == 0) throw LengthMismatch("total_loss: empty inputs");
    for (double ci : c.data)
        if (!(ci > 0.0)) throw NonPositiveConfidence("total_loss: confidence must be positive");

    auto node = std::make_unique<TotalLossNode>(w);
    Tensor out = node->forward(l, c);
    return tape.emplace(std::move(node), std::move(out), {losses.id, confidences.id});
}

double pose_loss_value(const std::vector<Eigen::Vector3d>& model_points, const Pose& gt,
                       const Pose& pred, bool symmetric) {
    if (model_points.empty())
        throw std::invalid_argument("pose_loss_value: empty model point list");
    std::vector<Eigen::Vector3d> gt_pts;
    gt_pts.reserve(model_points.size());
    for (const Eigen::Vector3d& x : model_points) gt_pts.push_back(gt.apply(x));
    return loss_row(model_points, gt_pts, pred.rotation_matrix(), pred.translation, symmetric,
                    nullptr);
}

double training_step(Network& net, const std::vector<const Scene*>& batch,
                     const std::vector<ObjectModel>& models,
                     const std::vector<std::vector<Eigen::Vector3d>>& loss_points,
                     const LossConfig& cfg, ad::AdamState& adam, double lr, Rng& rng,
                     TrainingInstrumentation* instr) {
    if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
    if (!cfg.valid()) throw std::invalid_argument("training_step: invalid loss configuration");
    if (cfg.N > net.cfg.P)
        throw std::invalid_argument("training_step: more loss pixels than sampled pixels");
    if (models.size() != loss_points.size())
        throw LengthMismatch("training_step: models and loss_points differ in length");

    const std::vector<ad::Tensor*> params = net.main_param_ptrs();
    for (ad::Tensor* p : params) p->zero_grad();

    ad::Tape tape;
    ad::Var sum{};
    bool any = false;
    for (const Scene* scene : batch) {
        for (std::size_t o = 0; o < scene->object_ids.size(); ++o) {
            const int id = scene->object_ids[o];
            std::size_t mi = models.size();
            for (std::size_t i = 0; i < models.size(); ++i)
                if (models[i].id == id) mi = i;
            if (mi == models.size())
                throw std::invalid_argument("training_step: scene references unknown object id");

            ForwardResult fwd = forward_scene(tape, net, *scene, scene->masks[o], rng);
            std::vector<int> keep(static_cast<std::size_t>(net.cfg.P));
            for (int i = 0; i < net.cfg.P; ++i) keep[static_cast<std::size_t>(i)] = i;
            for (int i = 0; i < cfg.N; ++i) {
                const int j = i + static_cast<int>(rng.uniform_int(
                                      static_cast<std::uint64_t>(net.cfg.P - i)));
                std::swap(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]);
            }
            keep.resize(static_cast<std::size_t>(cfg.N));

            const bool sym = models[mi].symmetric;
            ad::Var losses = pose_losses(tape, tape.select_rows(fwd.quats, keep),
                                         tape.select_rows(fwd.trans, keep), loss_points[mi],
                                         scene->gt_poses[o], sym);
            ad::Var obj =
                total_loss(tape, losses, tape.select_rows(fwd.conf, keep), cfg.w);
            if (instr) instr->routed.emplace_back(id, sym);
            sum = any ? tape.add(sum, obj) : obj;
            any = true;
        }
    }
    if (!any) throw std::invalid_argument("training_step: batch has no objects");

    tape.backward(sum);
    const double value = tape.val(sum).data[0];
    ad::adam_step(params, adam, lr);
    return value;
}

}  // namespace df
