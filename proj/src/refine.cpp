#include "densefusion/refine.hpp"

#include <cmath>
#include <numbers>

#include "densefusion/loss.hpp"

namespace df {

using ad::Tape;
using ad::Tensor;
using ad::Var;

RefineStepOps refine_step_op(Tape& tape, Network& net, const PointCloud& cloud, Var color_map,
                             const std::vector<std::array<int, 2>>& rowcol, const Pose& current) {
    if (cloud.size() == 0) throw EmptyCloud("refine_step: empty cloud");
    if (cloud.size() != rowcol.size())
        throw ad::ShapeMismatch("refine_step: cloud and pixel list differ in length");

    {
        const Tensor& cm = tape.val(color_map);
        if (cm.ndim() != 3) throw ad::ShapeMismatch("refine_step: color map must be [h,w,c]");
        for (const auto& rc : rowcol)
            if (rc[0] < 0 || rc[0] >= cm.dim(0) || rc[1] < 0 || rc[1] >= cm.dim(1))
                throw IndexOutOfBounds("refine_step: pixel index outside the color map");
    }

    const PointCloud canonical = transform_points(inverse(current), cloud);
    const int n = int(canonical.size());
    Tensor pts = Tensor::zeros({n, 3});
    for (std::size_t i = 0; i < canonical.size(); ++i)
        for (int a = 0; a < 3; ++a) pts.data[i * 3 + std::size_t(a)] = canonical.points[i][a];

    RefinerParams& r = net.ref;

    // geometric re-embedding of the canonical cloud, refiner-owned weights
    Var h1 = tape.relu(tape.linear(tape.value(std::move(pts)), tape.leaf(r.rg1_W),
                                   tape.leaf(r.rg1_b)));
    Var h2 = tape.relu(tape.linear(h1, tape.leaf(r.rg2_W), tape.leaf(r.rg2_b)));
    Var cat = tape.concat(h2, tape.tile_rows(tape.mean_over_rows(h2), n), 1);
    Var geo = tape.linear(cat, tape.leaf(r.rg3_W), tape.leaf(r.rg3_b));

    // dense fusion against the stored color map, pooled to one global feature
    Var pair = tape.concat(tape.gather_pixels(color_map, rowcol), geo, 1);
    Var pf = tape.linear(tape.relu(tape.linear(pair, tape.leaf(r.rf1_W), tape.leaf(r.rf1_b))),
                         tape.leaf(r.rf2_W), tape.leaf(r.rf2_b));
    Var h = tape.tile_rows(tape.mean_over_rows(pf), 1);  // [1, d_glob]

    h = tape.relu(tape.linear(h, tape.leaf(r.W1), tape.leaf(r.b1)));
    h = tape.relu(tape.linear(h, tape.leaf(r.W2), tape.leaf(r.b2)));
    h = tape.relu(tape.linear(h, tape.leaf(r.W3), tape.leaf(r.b3)));
    Var out = tape.linear(h, tape.leaf(r.W4), tape.leaf(r.b4));  // [1,7]

    RefineStepOps ops;
    ops.quat = tape.normalize_quaternion(tape.slice_cols(out, 0, 4));
    ops.trans = tape.slice_cols(out, 4, 7);
    return ops;
}

Pose refine_step(Network& net, const PointCloud& cloud, const Tensor& color_map,
                 const std::vector<std::array<int, 2>>& rowcol, const Pose& current) {
    Tape tape(false);
    RefineStepOps ops = refine_step_op(tape, net, cloud, tape.value(color_map), rowcol, current);
    const Tensor& q = tape.val(ops.quat);
    const Tensor& t = tape.val(ops.trans);
    return Pose(Eigen::Quaterniond(q.data[0], q.data[1], q.data[2], q.data[3]),
                Eigen::Vector3d(t.data[0], t.data[1], t.data[2]));
}

std::pair<Pose, RefinementTrace> refine(Network& net, const Pose& initial, const PointCloud& cloud,
                                        const Tensor& color_map,
                                        const std::vector<std::array<int, 2>>& rowcol, int K) {
    if (K < 0) throw std::invalid_argument("refine: negative iteration count");
    RefinementTrace trace;
    trace.residuals.push_back(initial);
    trace.composed.push_back(initial);
    Pose current = initial;
    for (int k = 0; k < K; ++k) {
        const Pose residual = refine_step(net, cloud, color_map, rowcol, current);
        current = compose(current, residual);
        trace.residuals.push_back(residual);
        trace.composed.push_back(current);
    }
    return {current, trace};
}

bool refiner_gate(int epoch, int start_epoch, const std::vector<double>& val_history) {
    if (epoch >= start_epoch) return true;
    if (val_history.size() < 6) return false;
    const double before = val_history[val_history.size() - 6];
    const double now = val_history.back();
    if (!(before > 0.0)) return true;  // non-positive loss: nothing left to improve
    return (before - now) / before < 0.01;
}

namespace {

Pose random_perturbation(double max_angle, double max_trans, Rng& rng) {
    const double z = 2.0 * rng.uniform() - 1.0;
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Eigen::Vector3d axis(r * std::cos(phi), r * std::sin(phi), z);
    const Eigen::Vector3d t(rng.uniform(-max_trans, max_trans),
                            rng.uniform(-max_trans, max_trans),
                            rng.uniform(-max_trans, max_trans));
    return Pose::from_axis_angle(axis, rng.uniform() * max_angle, t);
}

}  // namespace

bool train_refiner(Network& net, TrainState& state, const std::vector<Scene>& scenes,
                   const std::vector<ObjectModel>& models, const RefinerTrainConfig& cfg,
                   const std::string& main_checkpoint, std::vector<double>* loss_log) {
    if (!cfg.valid()) throw std::invalid_argument("train_refiner: invalid configuration");
    if (scenes.empty()) throw std::invalid_argument("train_refiner: no training scenes");
    if (!main_checkpoint.empty()) load_checkpoint(main_checkpoint, net, nullptr);
    if (!refiner_gate(state.epoch, cfg.refine.start_epoch, state.val_history)) return false;

    Rng rng(derive_seed(cfg.seed, "refine-train"));
    if (loss_log) loss_log->clear();
    const std::vector<Tensor*> rparams = net.refiner_param_ptrs();
    const std::vector<Tensor*> mparams = net.main_param_ptrs();

    int pending = 0;  // residual losses accumulated since the last step
    auto zero_all = [&] {
        for (Tensor* p : mparams) p->zero_grad();
        for (Tensor* p : rparams) p->zero_grad();
        pending = 0;
    };
    auto step = [&] {
        if (pending == 0) return;
        const double inv = 1.0 / double(pending);
        for (Tensor* p : rparams)
            for (double& g : p->grad) g *= inv;
        ad::adam_step(rparams, state.refiner_adam, cfg.lr);
        if (!cfg.freeze_main) {
            for (Tensor* p : mparams)
                for (double& g : p->grad) g *= inv;
            ad::adam_step(mparams, state.adam, cfg.lr);
        }
        zero_all();
    };

    zero_all();
    for (int e = 0; e < cfg.epochs; ++e) {
        const double f = cfg.epochs > 1 ? double(e) / double(cfg.epochs - 1) : 1.0;
        const double angle = cfg.start_angle + f * (cfg.end_angle - cfg.start_angle);
        const double offset = cfg.start_trans + f * (cfg.end_trans - cfg.start_trans);

        std::vector<std::vector<Eigen::Vector3d>> pts(models.size());
        for (std::size_t i = 0; i < models.size(); ++i)
            pts[i] = sample_loss_points(models[i], cfg.M, rng);

        double sum = 0.0;
        int count = 0;
        for (const Scene& scene : scenes) {
            for (std::size_t o = 0; o < scene.object_ids.size(); ++o) {
                std::size_t mi = models.size();
                for (std::size_t i = 0; i < models.size(); ++i)
                    if (models[i].id == scene.object_ids[o]) mi = i;
                if (mi == models.size())
                    throw std::invalid_argument(
                        "train_refiner: scene references unknown object id");

                EstimateResult est = estimate(net, scene, scene.masks[o]);
                const Pose& gt = scene.gt_poses[o];
                Pose current = rng.uniform() < cfg.predicted_fraction
                                   ? est.pose
                                   : compose(gt, random_perturbation(angle, offset, rng));

                for (int k = 0; k < cfg.refine.K; ++k) {
                    Tape tape;
                    // joint mode recomputes the color map on the tape so the
                    // image-embedding weights receive refinement gradients
                    ForwardResult fwd;
                    if (!cfg.freeze_main)
                        fwd = forward_scene(tape, net, scene, scene.masks[o], rng);
                    const PointCloud& cl = cfg.freeze_main ? est.cloud : fwd.cloud;
                    const auto& rc = cfg.freeze_main ? est.rowcol : fwd.rowcol;
                    Var cmap = cfg.freeze_main ? tape.value(est.color_map) : fwd.color_map;
                    RefineStepOps ops = refine_step_op(tape, net, cl, cmap, rc, current);
                    // Rotations preserve distances, so the loss of the
                    // residual against the canonical-frame target equals the
                    // loss of the composed pose against the ground truth.
                    const Pose target = compose(inverse(current), gt);
                    Var losses = pose_losses(tape, ops.quat, ops.trans, pts[mi], target,
                                             models[mi].symmetric);
                    Var obj = tape.sum_all(losses);
                    tape.backward(obj);
                    sum += tape.val(obj).data[0];
                    ++count;
                    if (++pending >= cfg.batch_size) step();

                    const Tensor& qv = tape.val(ops.quat);
                    const Tensor& tv = tape.val(ops.trans);
                    current = compose(current,
                                      Pose(Eigen::Quaterniond(qv.data[0], qv.data[1], qv.data[2],
                                                              qv.data[3]),
                                           Eigen::Vector3d(tv.data[0], tv.data[1], tv.data[2])));
                }
            }
        }
        step();  // flush the epoch's remainder
        if (loss_log) loss_log->push_back(count > 0 ? sum / count : 0.0);
    }
    state.refining = true;
    return true;
}

}  // namespace df
