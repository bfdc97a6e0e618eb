#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "densefusion/autodiff.hpp"
#include "densefusion/data.hpp"
#include "densefusion/geometry.hpp"
#include "densefusion/network.hpp"

namespace df {

struct RefinerConfig {
    int K = 2;            // refinement iterations at inference time
    int start_epoch = 30; // earliest epoch at which refiner training may begin

    bool valid() const { return K >= 0 && start_epoch >= 0; }
};

// Step-by-step record of one refinement run. residuals[0] and composed[0]
// both hold the initial estimate; for k >= 1, composed[k] ==
// compose(composed[k-1], residuals[k]), so applying composed.back() to model
// points equals applying the residuals innermost-first and the initial
// estimate last.
struct RefinementTrace {
    std::vector<Pose> residuals;
    std::vector<Pose> composed;
};

struct RefineStepOps {
    ad::Var quat;   // [1,4] unit quaternion
    ad::Var trans;  // [1,3]
};

// One residual prediction on the tape. The observed cloud is moved into the
// canonical frame of `current` before re-embedding its geometry; the color
// map from the main forward pass is reused as-is.
RefineStepOps refine_step_op(ad::Tape& tape, Network& net, const PointCloud& cloud,
                             ad::Var color_map, const std::vector<std::array<int, 2>>& rowcol,
                             const Pose& current);

// Value-only single residual step.
Pose refine_step(Network& net, const PointCloud& cloud, const ad::Tensor& color_map,
                 const std::vector<std::array<int, 2>>& rowcol, const Pose& current);

// Runs K residual steps starting from `initial`, folding each residual into
// the running estimate. K == 0 returns the initial pose untouched.
std::pair<Pose, RefinementTrace> refine(Network& net, const Pose& initial,
                                        const PointCloud& cloud, const ad::Tensor& color_map,
                                        const std::vector<std::array<int, 2>>& rowcol, int K);

// Schedule gate for refiner training: opens at start_epoch, or earlier when
// the validation loss improved by less than 1% over the last five epochs
// (needs at least six recorded values).
bool refiner_gate(int epoch, int start_epoch, const std::vector<double>& val_history);

struct RefinerTrainConfig {
    RefinerConfig refine;
    int M = 60;           // model points in the refinement loss
    double lr = 1e-3;
    int epochs = 8;
    int batch_size = 8;   // gradient steps average this many residual losses
    bool freeze_main = true;       // false: geometry/fusion weights train jointly
    double start_angle = 0.349;    // initial perturbation bound, radians (~20 deg)
    double start_trans = 0.03;     // initial translation bound, meters
    double end_angle = 0.0873;     // final perturbation bound (~5 deg)
    double end_trans = 0.01;
    double predicted_fraction = 0.5;  // share of pairs seeded by the main net's estimate
    std::uint64_t seed = 0;

    bool valid() const {
        return refine.valid() && M >= 1 && lr >= 0.0 && epochs >= 1 && batch_size >= 1 &&
               start_angle >= 0.0 && start_trans >= 0.0 && end_angle >= 0.0 &&
               end_trans >= 0.0 && predicted_fraction >= 0.0 && predicted_fraction <= 1.0;
    }
};

// Trains the residual predictor on perturbed and self-estimated poses, with
// the perturbation magnitude annealed from the start to the end bounds.
// Returns false without touching any parameter while the schedule gate is
// closed. A nonempty main_checkpoint is loaded first and must exist.
bool train_refiner(Network& net, TrainState& state, const std::vector<Scene>& scenes,
                   const std::vector<ObjectModel>& models, const RefinerTrainConfig& cfg,
                   const std::string& main_checkpoint = "",
                   std::vector<double>* loss_log = nullptr);

}  // namespace df
