#include "densefusion/icp.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace df {

Pose best_rigid_align(const std::vector<Eigen::Vector3d>& source,
                      const std::vector<Eigen::Vector3d>& target) {
    if (source.size() != target.size())
        throw std::invalid_argument("best_rigid_align: source/target size mismatch");
    const int n = int(source.size());
    if (n < 3) throw DegenerateConfiguration("best_rigid_align: needs at least 3 pairs");

    Eigen::Vector3d s_mean = Eigen::Vector3d::Zero();
    Eigen::Vector3d t_mean = Eigen::Vector3d::Zero();
    for (int i = 0; i < n; ++i) {
        s_mean += source[std::size_t(i)];
        t_mean += target[std::size_t(i)];
    }
    s_mean /= double(n);
    t_mean /= double(n);

    Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d s_scatter = Eigen::Matrix3d::Zero();
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3d sc = source[std::size_t(i)] - s_mean;
        const Eigen::Vector3d tc = target[std::size_t(i)] - t_mean;
        cross += sc * tc.transpose();
        s_scatter += sc * sc.transpose();
    }

    // Collinear (or coincident) source points leave a rotation about the line
    // axis unconstrained.
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> spectrum(s_scatter);
    const Eigen::Vector3d ev = spectrum.eigenvalues();  // ascending
    if (ev[1] <= 1e-12 * std::max(ev[2], 1e-300))
        throw DegenerateConfiguration("best_rigid_align: source points are collinear");

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Eigen::Matrix3d R = svd.matrixV() * d * svd.matrixU().transpose();
    return Pose(Eigen::Quaterniond(R), t_mean - R * s_mean);
}

IcpResult icp_refine(const PointCloud& observed, const ObjectModel& model, const Pose& init,
                     const IcpConfig& cfg) {
    if (!cfg.valid()) throw std::invalid_argument("icp_refine: invalid configuration");
    if (observed.points.empty()) throw EmptyCloud("icp_refine: empty observed cloud");
    if (model.surface_points.empty()) throw EmptyCloud("icp_refine: model has no points");

    const double gate2 = cfg.max_correspondence_dist * cfg.max_correspondence_dist;
    IcpResult res;
    res.pose = init;
    std::vector<Eigen::Vector3d> src, dst;
    double prev = std::numeric_limits<double>::infinity();

    std::vector<Eigen::Vector3d> posed(model.surface_points.size());
    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        const Eigen::Matrix3d R = res.pose.rotation_matrix();
        for (std::size_t i = 0; i < model.surface_points.size(); ++i)
            posed[i] = R * model.surface_points[i] + res.pose.translation;
        src.clear();
        dst.clear();
        double sum = 0.0;
        // Each observed point queries the posed model: the camera sees only
        // part of the surface, so hidden model points must not vote, while
        // every observed point does lie on the model.
        for (const Eigen::Vector3d& o : observed.points) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_i = 0;
            for (std::size_t i = 0; i < posed.size(); ++i) {
                const double d2 = (posed[i] - o).squaredNorm();
                if (d2 < best) {
                    best = d2;
                    best_i = i;
                }
            }
            if (best > gate2) continue;
            src.push_back(posed[best_i]);
            dst.push_back(o);
            sum += std::sqrt(best);
        }
        if (src.size() < 3)
            throw DegenerateConfiguration("icp_refine: fewer than 3 gated correspondences");

        const double residual = sum / double(src.size());
        res.residual = residual;
        res.residual_history.push_back(residual);
        if (std::abs(prev - residual) < cfg.convergence_tol) break;
        prev = residual;

        const Pose delta = best_rigid_align(src, dst);
        res.pose = compose(delta, res.pose);  // delta acts on camera-frame points
        res.iterations = iter + 1;
    }
    return res;
}

}  // namespace df
