#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "densefusion/metrics.hpp"
#include "doctest.h"
#include "json.hpp"
#include "testutil.hpp"

using df::CameraIntrinsics;
using df::EvalConfig;
using df::EvalReport;
using df::ObjectModel;
using df::Pose;
using df::Scene;

namespace {

ObjectModel test_box(int id = 1, int points = 240) {
    df::ModelSpec spec;
    spec.id = id;
    spec.kind = df::ShapeKind::box;
    spec.a = 0.09;
    spec.b = 0.12;
    spec.c = 0.05;
    spec.points = points;
    spec.seed = 31;
    return df::make_model(spec);
}

ObjectModel test_sphere(int points = 1000) {
    df::ModelSpec spec;
    spec.id = 7;
    spec.kind = df::ShapeKind::sphere;
    spec.a = 0.05;
    spec.points = points;
    spec.seed = 32;
    return df::make_model(spec);
}

// Second implementation of both distance metrics, written against stacked
// Eigen matrices instead of per-point loops, used as the oracle.
std::pair<double, double> oracle_add_adds(const ObjectModel& m, const Pose& gt, const Pose& est) {
    const int n = int(m.surface_points.size());
    Eigen::MatrixXd G(n, 3), E(n, 3);
    for (int i = 0; i < n; ++i) {
        G.row(i) = (gt.rotation * m.surface_points[std::size_t(i)] + gt.translation).transpose();
        E.row(i) = (est.rotation * m.surface_points[std::size_t(i)] + est.translation).transpose();
    }
    const double add = (G - E).rowwise().norm().mean();
    double adds = 0.0;
    for (int i = 0; i < n; ++i)
        adds += (G.rowwise() - E.row(i)).rowwise().norm().minCoeff();
    return {add, adds / n};
}

Scene sphere_scene(double occluder_fraction = 0.0, std::uint64_t seed = 5) {
    CameraIntrinsics k;
    k.fx = k.fy = 120.0;
    k.cx = 40.0;
    k.cy = 30.0;
    k.width = 80;
    k.height = 60;
    df::RenderOptions opt;
    opt.depth_sigma = 0.0;
    opt.dropout_fraction = 0.0;
    opt.wall_depth = 1.3;
    opt.occluder_fraction = occluder_fraction;
    opt.seed = seed;
    return df::render_scene({test_sphere()}, {Pose::from_translation({0.0, 0.0, 0.5})}, k, opt);
}

}  // namespace

TEST_CASE("corresponding-point distance: exact values and an independent oracle") {
    const ObjectModel box = test_box();
    df::Rng rng(101);
    const Pose gt = dftest::random_pose(rng);

    CHECK(df::add_metric(box, gt, gt) == 0.0);

    // pure translation shifts every corresponding pair by exactly the offset
    Pose shifted = gt;
    shifted.translation += Eigen::Vector3d(0.01, 0.0, 0.0);
    CHECK(df::add_metric(box, gt, shifted) == doctest::Approx(0.01).epsilon(1e-12));
    shifted.translation = gt.translation + Eigen::Vector3d(0.003, -0.004, 0.012);
    const double expect = Eigen::Vector3d(0.003, -0.004, 0.012).norm();
    CHECK(std::abs(df::add_metric(box, gt, shifted) - expect) < 1e-15);

    for (int i = 0; i < 1000; ++i) {
        const Pose a = dftest::random_pose(rng);
        const Pose b = dftest::random_pose(rng);
        const auto [oracle_add, oracle_adds] = oracle_add_adds(box, a, b);
        CHECK(std::abs(df::add_metric(box, a, b) - oracle_add) < 1e-12);
        if (i % 25 == 0) CHECK(std::abs(df::adds_metric(box, a, b) - oracle_adds) < 1e-12);
    }
}

TEST_CASE("closest-point distance: rotations of a sphere look like a perfect fit") {
    const ObjectModel sphere = test_sphere();
    df::Rng rng(102);
    const Pose gt = dftest::random_pose(rng);

    CHECK(df::adds_metric(sphere, gt, gt) == 0.0);

    // the estimate rotates the sphere about its own center: every estimated
    // point stays on the surface, so the nearest sampled neighbor is within
    // the sampling resolution of the point set
    double resolution = 0.0;
    for (const Eigen::Vector3d& p : sphere.surface_points) {
        double nearest = std::numeric_limits<double>::infinity();
        for (const Eigen::Vector3d& q : sphere.surface_points)
            if (&p != &q) nearest = std::min(nearest, (p - q).norm());
        resolution = std::max(resolution, nearest);
    }
    for (int i = 0; i < 5; ++i) {
        Pose est = gt;
        est.rotation = gt.rotation * dftest::random_pose(rng).rotation;
        CHECK(df::adds_metric(sphere, gt, est) <= resolution);
        CHECK(df::add_metric(sphere, gt, est) > 0.0);
    }
}

TEST_CASE("closest-point distance never exceeds corresponding-point distance") {
    const ObjectModel box = test_box(1, 120);
    df::Rng rng(103);
    for (int i = 0; i < 1000; ++i) {
        const Pose a = dftest::random_pose(rng);
        const Pose b = dftest::random_pose(rng);
        CHECK(df::adds_metric(box, a, b) <= df::add_metric(box, a, b) + 1e-15);
    }
}

TEST_CASE("distance metrics ignore the order of model points") {
    ObjectModel box = test_box();
    df::Rng rng(104);
    const Pose a = dftest::random_pose(rng);
    const Pose b = dftest::random_pose(rng);
    const Scene scene = sphere_scene();

    ObjectModel shuffled = box;
    std::mt19937 shuffle_rng(7);
    std::shuffle(shuffled.surface_points.begin(), shuffled.surface_points.end(), shuffle_rng);

    CHECK(std::abs(df::add_metric(box, a, b) - df::add_metric(shuffled, a, b)) < 1e-13);
    CHECK(std::abs(df::adds_metric(box, a, b) - df::adds_metric(shuffled, a, b)) < 1e-13);

    ObjectModel sphere = test_sphere();
    ObjectModel sphere_shuffled = sphere;
    std::shuffle(sphere_shuffled.surface_points.begin(), sphere_shuffled.surface_points.end(),
                 shuffle_rng);
    const Pose at = Pose::from_translation({0.0, 0.0, 0.5});
    CHECK(df::invisible_surface_pct(sphere, at, scene.depth, scene.intrinsics) ==
          df::invisible_surface_pct(sphere_shuffled, at, scene.depth, scene.intrinsics));
}

TEST_CASE("area under the accuracy curve: hand-integrated cases") {
    CHECK(df::auc({0.0, 0.0, 0.0}) == 1.0);
    CHECK(df::auc({0.1, 0.25, 3.0}) == 0.0);
    // accuracy is 0 until 0.05 and 1 after, so half the area remains
    CHECK(df::auc({0.05}) == doctest::Approx(0.5).epsilon(1e-15));
    // per-distance headroom: (0.08 + 0.05 + 0) / (3 * 0.1)
    CHECK(df::auc({0.02, 0.05, 0.2}) == doctest::Approx(0.13 / 0.3).epsilon(1e-15));
    // custom threshold
    CHECK(df::auc({0.5}, 1.0) == doctest::Approx(0.5).epsilon(1e-15));

    CHECK_THROWS_AS(df::auc({}), df::EmptyList);
    CHECK_THROWS_AS(df::auc({0.1, -0.2}), std::invalid_argument);
    CHECK_THROWS_AS(df::auc({0.1}, 0.0), std::invalid_argument);
}

TEST_CASE("area under the accuracy curve: scale and monotonicity properties") {
    df::Rng rng(105);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> d;
        const int n = 1 + int(rng.uniform_int(20));
        for (int i = 0; i < n; ++i) d.push_back(rng.uniform(0.0, 0.3));
        const double T = rng.uniform(0.01, 0.5);
        const double alpha = rng.uniform(0.1, 10.0);

        std::vector<double> scaled = d;
        for (double& v : scaled) v *= alpha;
        CHECK(std::abs(df::auc(d, T) - df::auc(scaled, alpha * T)) < 1e-12);

        // growing any single distance cannot raise the area
        std::vector<double> worse = d;
        worse[std::size_t(rng.uniform_int(std::uint64_t(n)))] += rng.uniform(0.0, 0.2);
        CHECK(df::auc(worse, T) <= df::auc(d, T) + 1e-15);
    }
}

TEST_CASE("percent below threshold uses a strict inequality") {
    CHECK(df::pct_below({0.01, 0.03}) == 50.0);
    CHECK(df::pct_below({0.001, 0.01, 0.019}) == 100.0);
    CHECK(df::pct_below({0.02}) == 0.0);  // exactly at the threshold: excluded
    CHECK(df::pct_below({0.0199999, 0.02, 0.0200001}) == doctest::Approx(100.0 / 3.0));
    CHECK_THROWS_AS(df::pct_below({}), df::EmptyList);
}

TEST_CASE("invisible surface fraction: absent, self-occluded, and hidden objects") {
    const ObjectModel sphere = test_sphere();
    const Pose at = Pose::from_translation({0.0, 0.0, 0.5});
    const Scene scene = sphere_scene();

    // all no-return pixels: nothing is visible
    std::vector<double> empty_depth(scene.depth.size(), 0.0);
    CHECK(df::invisible_surface_pct(sphere, at, empty_depth, scene.intrinsics) == 100.0);

    // an unoccluded convex object hides roughly its back half from the camera
    const double self_occluded =
        df::invisible_surface_pct(sphere, at, scene.depth, scene.intrinsics);
    CHECK(self_occluded > 45.0);
    CHECK(self_occluded < 55.0);

    // a nearer plane across the whole frame hides everything
    std::vector<double> occluded_depth(scene.depth.size(), 0.2);
    CHECK(df::invisible_surface_pct(sphere, at, occluded_depth, scene.intrinsics) == 100.0);

    // behind the camera every point is invisible
    CHECK(df::invisible_surface_pct(sphere, Pose::from_translation({0.0, 0.0, -0.5}), scene.depth,
                                    scene.intrinsics) == 100.0);

    std::vector<double> short_depth(10, 0.5);
    CHECK_THROWS_AS(df::invisible_surface_pct(sphere, at, short_depth, scene.intrinsics),
                    std::invalid_argument);
}

TEST_CASE("invisible surface fraction grows with occluder coverage") {
    const ObjectModel sphere = test_sphere();
    const Pose at = Pose::from_translation({0.0, 0.0, 0.5});
    double previous = -1.0;
    for (double fraction : {0.0, 0.25, 0.5, 0.75}) {
        const Scene scene = sphere_scene(fraction, 5);
        const double pct = df::invisible_surface_pct(sphere, at, scene.depth, scene.intrinsics);
        CHECK(pct >= previous);
        previous = pct;
    }
    CHECK(previous > 80.0);  // 75% of the visible half plus the back half
}

TEST_CASE("dataset evaluation with an oracle estimator is perfect") {
    const ObjectModel box = test_box();
    CameraIntrinsics k;
    k.fx = k.fy = 120.0;
    k.cx = 40.0;
    k.cy = 30.0;
    k.width = 80;
    k.height = 60;
    df::RenderOptions opt;
    opt.depth_sigma = 0.0;
    opt.dropout_fraction = 0.0;
    opt.wall_depth = 1.3;

    std::vector<Scene> dataset;
    df::Rng rng(106);
    for (int i = 0; i < 4; ++i) {
        opt.seed = 50 + std::uint64_t(i);
        opt.occluder_fraction = i < 2 ? 0.0 : 0.6;
        Pose pose = dftest::random_pose(rng, 3.0, 0.0);
        pose.translation = {rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03),
                            rng.uniform(0.45, 0.55)};
        dataset.push_back(df::render_scene({box}, {pose}, k, opt));
    }

    df::StageTimings fixed{0.001, 0.002, 0.003};
    auto oracle = [&](const Scene& s, int oi) {
        return df::TimedEstimate{s.gt_poses[std::size_t(oi)], fixed};
    };

    const EvalReport r = df::evaluate(dataset, {box}, oracle);
    REQUIRE(r.records.size() == 4);
    REQUIRE(r.per_object.size() == 1);
    CHECK(r.per_object[0].object_id == 1);
    CHECK(r.per_object[0].instances == 4);
    CHECK(r.per_object[0].auc == 1.0);
    CHECK(r.per_object[0].accuracy == 100.0);
    CHECK(r.mean.auc == 1.0);
    CHECK(r.mean.accuracy == 100.0);
    for (const df::EvalRecord& rec : r.records) {
        CHECK(rec.add == 0.0);
        CHECK(rec.adds == 0.0);
        CHECK(rec.adds <= rec.add);
        CHECK(rec.invisible_pct >= 0.0);
        CHECK(rec.invisible_pct <= 100.0);
    }
    for (const df::OcclusionBucket& b : r.occlusion) CHECK(b.accuracy == 100.0);
    CHECK(r.mean.mean_timings.segmentation == doctest::Approx(0.001));
    CHECK(r.mean.mean_timings.total() == doctest::Approx(0.006));

    // closest-point distance forgives offsets the object can slide along, so
    // a guaranteed miss must exceed the diameter by more than the threshold
    auto offset = [&](const Scene& s, int oi) {
        Pose p = s.gt_poses[std::size_t(oi)];
        p.translation.x() += 0.02 + 1.05 * df::model_diameter(box);
        return df::TimedEstimate{p, fixed};
    };
    const EvalReport worse = df::evaluate(dataset, {box}, offset);
    CHECK(worse.mean.accuracy == 0.0);
    CHECK(worse.mean.auc < 1.0);
    CHECK(worse.mean.mean_adds <= worse.mean.mean_add + 1e-15);
}

TEST_CASE("dataset evaluation rejects malformed inputs") {
    const ObjectModel box = test_box();
    auto oracle = [](const Scene& s, int oi) {
        return df::TimedEstimate{s.gt_poses[std::size_t(oi)], {}};
    };
    CHECK_THROWS_AS(df::evaluate({}, {box}, oracle), df::EmptyList);

    const Scene scene = sphere_scene();  // contains object id 7
    CHECK_THROWS_AS(df::evaluate({scene}, {box}, oracle), std::invalid_argument);

    EvalConfig bad;
    bad.threads = 0;
    CHECK_THROWS_AS(df::evaluate({scene}, {test_sphere()}, oracle, bad), std::invalid_argument);
}

TEST_CASE("evaluation results do not depend on the worker count") {
    const ObjectModel sphere = test_sphere();
    std::vector<Scene> dataset;
    for (int i = 0; i < 6; ++i) dataset.push_back(sphere_scene(0.1 * i, 60 + std::uint64_t(i)));

    df::Rng rng(107);
    std::vector<Pose> noise;
    for (std::size_t i = 0; i < dataset.size(); ++i) noise.push_back(dftest::random_pose(rng, 0.1, 0.01));
    auto estimator = [&](const Scene& s, int oi) {
        const Pose& gt = s.gt_poses[std::size_t(oi)];
        // deterministic per-scene perturbation, independent of call order
        const std::size_t si = std::size_t(&s - dataset.data());
        return df::TimedEstimate{df::compose(gt, noise[si]), {}};
    };

    EvalConfig serial;
    EvalConfig parallel;
    parallel.threads = 4;
    const EvalReport a = df::evaluate(dataset, {sphere}, estimator, serial);
    const EvalReport b = df::evaluate(dataset, {sphere}, estimator, parallel);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].scene_index == b.records[i].scene_index);
        CHECK(a.records[i].add == b.records[i].add);
        CHECK(a.records[i].adds == b.records[i].adds);
        CHECK(a.records[i].invisible_pct == b.records[i].invisible_pct);
    }
    CHECK(a.mean.auc == b.mean.auc);
    CHECK(df::render_instance_csv(a) == df::render_instance_csv(b));
}

TEST_CASE("occlusion buckets split accuracy by invisible-surface bands") {
    const ObjectModel sphere = test_sphere();
    std::vector<Scene> dataset;
    // self-occlusion alone sits near 50%; heavy occluders push past 60%
    for (double f : {0.3, 0.5, 0.7, 0.9})
        dataset.push_back(sphere_scene(f, std::uint64_t(100.0 * f)));

    // accurate only when the object is mostly visible
    auto estimator = [&](const Scene& s, int oi) {
        Pose p = s.gt_poses[std::size_t(oi)];
        if (s.occluder_fraction > 0.6) p.translation.x() += 0.05;
        return df::TimedEstimate{p, {}};
    };
    const EvalReport r = df::evaluate(dataset, {sphere}, estimator);
    REQUIRE(!r.occlusion.empty());
    for (const df::OcclusionBucket& b : r.occlusion) {
        CHECK(b.lower_pct >= 60.0);
        CHECK(b.upper_pct <= 100.0);
        CHECK(b.instances > 0);
    }
    CHECK(r.occlusion.front().accuracy >= r.occlusion.back().accuracy);
    CHECK(r.occlusion.back().accuracy == 0.0);
}

TEST_CASE("report renderings are consistent and machine-checkable") {
    const ObjectModel box = test_box();
    const ObjectModel sphere = test_sphere();
    CameraIntrinsics k;
    k.fx = k.fy = 120.0;
    k.cx = 40.0;
    k.cy = 30.0;
    k.width = 80;
    k.height = 60;
    df::RenderOptions opt;
    opt.depth_sigma = 0.0;
    opt.dropout_fraction = 0.0;
    opt.wall_depth = 1.3;
    opt.seed = 77;

    df::Rng rng(108);
    std::vector<Scene> dataset;
    for (int i = 0; i < 3; ++i) {
        opt.seed = 77 + std::uint64_t(i);
        Pose bp = dftest::random_pose(rng, 3.0, 0.0);
        bp.translation = {-0.06, 0.0, 0.5};
        dataset.push_back(
            df::render_scene({box, sphere}, {bp, Pose::from_translation({0.07, 0.0, 0.55})}, k, opt));
    }
    df::Rng nrng(109);
    auto estimator = [&](const Scene& s, int oi) {
        Pose p = s.gt_poses[std::size_t(oi)];
        p.translation.z() += 0.001 * double(oi + 1);
        return df::TimedEstimate{p, {0.001, 0.002, 0.0005}};
    };
    const EvalReport r = df::evaluate(dataset, {box, sphere}, estimator);
    REQUIRE(r.per_object.size() == 2);
    CHECK(r.per_object[0].object_id < r.per_object[1].object_id);
    CHECK(r.records.size() == 6);

    // the instance CSV round-trips the exact closest-point distances, so the
    // table's pooled area-under-curve is recomputable from it
    const std::string csv = df::render_instance_csv(r);
    std::vector<double> adds;
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    CHECK(line == "scene_index,object_id,add,adds,invisible_pct");
    while (std::getline(lines, line)) {
        const auto first = line.find(',');
        const auto second = line.find(',', first + 1);
        const auto third = line.find(',', second + 1);
        const auto fourth = line.find(',', third + 1);
        adds.push_back(std::stod(line.substr(third + 1, fourth - third - 1)));
    }
    REQUIRE(adds.size() == 6);
    CHECK(std::abs(df::auc(adds, r.config.auc_max_threshold) - r.mean.auc) < 1e-15);

    // text table repeats the same numbers it was built from
    const std::string table = df::render_table(r);
    CHECK(table.find("MEAN") != std::string::npos);
    CHECK(table.find("<2.0cm") != std::string::npos);
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.12f", r.mean.auc);
        CHECK(table.find(buf) != std::string::npos);
    }

    // JSON parses and mirrors the summary numbers exactly
    const nlohmann::json j = nlohmann::json::parse(df::render_json(r));
    CHECK(j["mean"]["auc"].get<double>() == r.mean.auc);
    CHECK(j["per_object"].size() == 2);
    CHECK(j["instances"].size() == 6);
    CHECK(j["per_object"][0]["object_id"].get<int>() == r.per_object[0].object_id);
    CHECK(j["config"]["accuracy_threshold"].get<double>() == 0.02);

    // timings rendered separately so numeric reports stay byte-stable
    const std::string timings = df::render_timings(r);
    CHECK(timings.find("refine_ms") != std::string::npos);
    CHECK(table.find("ms") == std::string::npos);

    const std::string occ = df::render_occlusion_csv(r);
    CHECK(occ.rfind("bucket_lower_pct,accuracy_pct\n", 0) == 0);

    // per-object accuracy thresholds can follow object size instead
    EvalConfig rel;
    rel.diameter_fraction = 0.1;
    const EvalReport rr = df::evaluate(dataset, {box, sphere}, estimator, rel);
    CHECK(df::render_table(rr).find("<10%diam") != std::string::npos);
    CHECK(rr.mean.accuracy == 100.0);  // millimeter errors vs centimeter thresholds
}
