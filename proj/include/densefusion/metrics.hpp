#pragma once

#include "densefusion/data.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace df {

struct EmptyList : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Mean distance between corresponding model points under the two poses.
double add_metric(const ObjectModel& model, const Pose& gt, const Pose& est);

// Mean distance from each estimated-pose model point to its nearest neighbor
// among the ground-truth-pose points; exact brute force.
double adds_metric(const ObjectModel& model, const Pose& gt, const Pose& est);

// Area under the accuracy-vs-threshold curve over [0, max_threshold],
// normalized by max_threshold. Integrated exactly from the empirical step
// form: each distance contributes max(0, T - d) / (n * T).
double auc(const std::vector<double>& distances, double max_threshold = 0.1);

// 100 * |{d < threshold}| / n. Strictly below, so a distance exactly at the
// threshold does not count; golden files depend on this convention.
double pct_below(const std::vector<double>& distances, double threshold = 0.02);

// Percent of model points under gt_pose that are invisible in the depth map:
// behind the camera, projected (nearest pixel center) outside the image, onto
// a no-return pixel, or with |point depth - measured depth| > margin. Counts
// occlusion by other geometry and self-occlusion alike.
double invisible_surface_pct(const ObjectModel& model, const Pose& gt_pose,
                             const std::vector<double>& depth, const CameraIntrinsics& k,
                             double margin = 0.020);

// ---- dataset evaluation ----

struct StageTimings {
    double segmentation = 0.0;  // mask lookup surrogate, seconds
    double estimation = 0.0;    // dense prediction + confidence voting
    double refinement = 0.0;    // learned or ICP refinement
    double total() const { return segmentation + estimation + refinement; }
};

// One evaluated object instance.
struct EvalRecord {
    int scene_index = 0;
    int object_id = 0;
    double add = 0.0;            // meters
    double adds = 0.0;           // meters
    double invisible_pct = 0.0;  // [0, 100]
    StageTimings timings;
};

struct ObjectSummary {
    int object_id = 0;  // -1 for the all-instance row
    int instances = 0;
    double auc = 0.0;        // fraction of 1
    double accuracy = 0.0;   // percent strictly below the accuracy threshold
    double mean_add = 0.0;   // meters
    double mean_adds = 0.0;  // meters
    StageTimings mean_timings;
};

struct OcclusionBucket {
    double lower_pct = 0.0;
    double upper_pct = 0.0;
    int instances = 0;
    double accuracy = 0.0;  // percent of instances below the accuracy threshold
};

struct EvalConfig {
    double auc_max_threshold = 0.1;    // meters
    double accuracy_threshold = 0.02;  // meters, ignored when diameter_fraction > 0
    double diameter_fraction = 0.0;    // per-object threshold = fraction * diameter
    double invisible_margin = 0.020;   // meters
    double bucket_start_pct = 60.0;    // lowest occlusion bucket edge
    double bucket_width_pct = 10.0;
    int threads = 1;  // scene-level workers; results are index-ordered

    bool valid() const {
        return auc_max_threshold > 0.0 && accuracy_threshold > 0.0 && diameter_fraction >= 0.0 &&
               invisible_margin > 0.0 && bucket_start_pct >= 0.0 && bucket_start_pct < 100.0 &&
               bucket_width_pct > 0.0 && threads >= 1;
    }
};

struct EvalReport {
    std::vector<EvalRecord> records;        // dataset order: scene, then object
    std::vector<ObjectSummary> per_object;  // ascending object id
    ObjectSummary mean;                     // pooled over all instances
    std::vector<OcclusionBucket> occlusion;  // nonempty buckets, ascending
    EvalConfig config;
};

// Pose estimate for one masked object with the wall-clock its stages took.
struct TimedEstimate {
    Pose pose;
    StageTimings timings;
};

// Called with the scene and the object's index within it.
using Estimator = std::function<TimedEstimate(const Scene&, int)>;

// Runs the estimator over every object instance and aggregates metrics.
// Scene-level parallelism only; aggregation is index-ordered, so results are
// independent of thread count.
EvalReport evaluate(const std::vector<Scene>& dataset, const std::vector<ObjectModel>& models,
                    const Estimator& estimator, const EvalConfig& cfg = {});

// Aligned text table: one row per object plus a MEAN row; AUC and accuracy
// columns. Purely numeric fields, so identical runs render identical bytes.
std::string render_table(const EvalReport& r);

// Mean per-stage seconds per object row. Kept out of render_table so the
// numeric report stays reproducible bit-for-bit.
std::string render_timings(const EvalReport& r);

// Machine-readable mirror of the numeric report (no timings).
std::string render_json(const EvalReport& r);

// "bucket_lower_pct,accuracy_pct" rows for plotting the occlusion curve.
std::string render_occlusion_csv(const EvalReport& r);

// "scene_index,object_id,add,adds,invisible_pct" rows; feeding the adds
// column back through auc() must reproduce the table's MEAN AUC.
std::string render_instance_csv(const EvalReport& r);

}  // namespace df
