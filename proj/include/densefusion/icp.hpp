#pragma once

#include "densefusion/data.hpp"

#include <stdexcept>
#include <vector>

namespace df {

struct DegenerateConfiguration : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IcpConfig {
    int max_iterations = 30;
    double convergence_tol = 1e-6;          // meters of mean-residual change
    double max_correspondence_dist = 0.05;  // pairs farther than this are dropped

    bool valid() const {
        return max_iterations > 0 && convergence_tol > 0.0 && max_correspondence_dist > 0.0;
    }
};

// Least-squares rigid transform carrying source onto target, matched by
// index: minimizes sum over i of |R s_i + t - t_i|^2 with det(R) = +1.
// Needs at least three non-collinear source points.
Pose best_rigid_align(const std::vector<Eigen::Vector3d>& source,
                      const std::vector<Eigen::Vector3d>& target);

struct IcpResult {
    Pose pose;
    int iterations = 0;  // alignment steps actually applied
    double residual = 0.0;  // final mean distance over accepted pairs, meters
    std::vector<double> residual_history;  // one entry per correspondence pass
};

// Point-to-point refinement: repeatedly matches each observed point to its
// nearest point on the posed model (exact brute force, pairs beyond the gate
// rejected) and applies the closed-form alignment, until the mean residual
// changes by less than the tolerance or the iteration budget runs out.
// Observed points query the model, not the reverse, so the parts of the
// surface the camera cannot see do not bias the fit.
IcpResult icp_refine(const PointCloud& observed, const ObjectModel& model, const Pose& init,
                     const IcpConfig& cfg = {});

}  // namespace df
