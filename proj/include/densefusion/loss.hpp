#pragma once

#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "densefusion/autodiff.hpp"
#include "densefusion/data.hpp"
#include "densefusion/geometry.hpp"
#include "densefusion/network.hpp"

namespace df {

struct LengthMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NonPositiveConfidence : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct LossConfig {
    double w = 0.01;  // confidence regularization weight
    int N = 500;      // dense pixels entering the objective
    int M = 200;      // model points per object, resampled each epoch

    bool valid() const { return w > 0.0 && N >= 1 && M >= 1; }
};

// Draws m model points for the loss: without replacement while m fits the
// model, with replacement beyond that.
std::vector<Eigen::Vector3d> sample_loss_points(const ObjectModel& model, int m, Rng& rng);

// Mean distance between the model under each predicted pose and under the
// ground truth. quats [N,4] raw (normalized on the tape), trans [N,3];
// returns [N,1]. symmetric=true matches each point to the nearest
// ground-truth point, with the match indices held constant under backprop.
ad::Var pose_losses(ad::Tape& tape, ad::Var quats, ad::Var trans,
                    const std::vector<Eigen::Vector3d>& model_points, const Pose& gt,
                    bool symmetric);

// distinguishable objects: point j is compared with point j
ad::Var add_losses(ad::Tape& tape, ad::Var quats, ad::Var trans,
                   const std::vector<Eigen::Vector3d>& model_points, const Pose& gt);

// symmetric objects: point j is compared with the nearest ground-truth point
ad::Var adds_losses(ad::Tape& tape, ad::Var quats, ad::Var trans,
                    const std::vector<Eigen::Vector3d>& model_points, const Pose& gt);

// (1/N) sum_i (L_i * c_i - w * log c_i); losses and confidences are [N] or
// [N,1] of equal length.
ad::Var total_loss(ad::Tape& tape, ad::Var losses, ad::Var confidences, double w);

// Value-only counterpart of pose_losses for a single pose, for validation
// passes that do not need gradients.
double pose_loss_value(const std::vector<Eigen::Vector3d>& model_points, const Pose& gt,
                       const Pose& pred, bool symmetric);

struct TrainingInstrumentation {
    std::vector<std::pair<int, bool>> routed;  // (object id, nearest-point loss used)
};

// One optimizer step on the confidence-weighted objective summed over every
// object in the batch. Each object routes through its model's symmetry flag;
// loss_points carries the per-epoch resampled model points, parallel to
// models. Returns the summed objective value before the step.
double training_step(Network& net, const std::vector<const Scene*>& batch,
                     const std::vector<ObjectModel>& models,
                     const std::vector<std::vector<Eigen::Vector3d>>& loss_points,
                     const LossConfig& cfg, ad::AdamState& adam, double lr, Rng& rng,
                     TrainingInstrumentation* instr = nullptr);

}  // namespace df
