#include "densefusion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace df {

namespace {

std::vector<Eigen::Vector3d> apply_pose(const Pose& p, const std::vector<Eigen::Vector3d>& pts) {
    const Eigen::Matrix3d R = p.rotation_matrix();
    std::vector<Eigen::Vector3d> out;
    out.reserve(pts.size());
    for (const Eigen::Vector3d& x : pts) out.push_back(R * x + p.translation);
    return out;
}

void require_points(const ObjectModel& model, const char* what) {
    if (model.surface_points.empty())
        throw EmptyList(std::string(what) + ": model has no surface points");
}

void require_distances(const std::vector<double>& d, const char* what) {
    if (d.empty()) throw EmptyList(std::string(what) + ": empty distance list");
    for (double v : d)
        if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative distance");
}

std::string format(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[256];
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return buf;
}

}  // namespace

double add_metric(const ObjectModel& model, const Pose& gt, const Pose& est) {
    require_points(model, "add_metric");
    const Eigen::Matrix3d Rg = gt.rotation_matrix();
    const Eigen::Matrix3d Re = est.rotation_matrix();
    const Eigen::Vector3d dt = gt.translation - est.translation;
    double sum = 0.0;
    for (const Eigen::Vector3d& x : model.surface_points) sum += ((Rg - Re) * x + dt).norm();
    return sum / double(model.surface_points.size());
}

double adds_metric(const ObjectModel& model, const Pose& gt, const Pose& est) {
    require_points(model, "adds_metric");
    const std::vector<Eigen::Vector3d> gt_pts = apply_pose(gt, model.surface_points);
    const std::vector<Eigen::Vector3d> est_pts = apply_pose(est, model.surface_points);
    double sum = 0.0;
    for (const Eigen::Vector3d& e : est_pts) {
        double best = std::numeric_limits<double>::infinity();
        for (const Eigen::Vector3d& g : gt_pts) best = std::min(best, (e - g).squaredNorm());
        sum += std::sqrt(best);
    }
    return sum / double(est_pts.size());
}

double auc(const std::vector<double>& distances, double max_threshold) {
    require_distances(distances, "auc");
    if (!(max_threshold > 0.0)) throw std::invalid_argument("auc: max_threshold must be positive");
    // The empirical accuracy curve steps by 1/n at each distance, so the area
    // is the sum of each distance's clipped headroom below the threshold.
    double area = 0.0;
    for (double d : distances) area += std::max(0.0, max_threshold - d);
    return area / (max_threshold * double(distances.size()));
}

double pct_below(const std::vector<double>& distances, double threshold) {
    require_distances(distances, "pct_below");
    std::size_t hits = 0;
    for (double d : distances) hits += d < threshold ? 1 : 0;
    return 100.0 * double(hits) / double(distances.size());
}

double invisible_surface_pct(const ObjectModel& model, const Pose& gt_pose,
                             const std::vector<double>& depth, const CameraIntrinsics& k,
                             double margin) {
    require_points(model, "invisible_surface_pct");
    if (!k.valid()) throw std::invalid_argument("invisible_surface_pct: invalid intrinsics");
    if (depth.size() != std::size_t(k.width) * std::size_t(k.height))
        throw std::invalid_argument("invisible_surface_pct: depth size does not match intrinsics");
    if (!(margin > 0.0)) throw std::invalid_argument("invisible_surface_pct: margin must be positive");

    const Eigen::Matrix3d R = gt_pose.rotation_matrix();
    std::size_t invisible = 0;
    for (const Eigen::Vector3d& x : model.surface_points) {
        const Eigen::Vector3d pc = R * x + gt_pose.translation;
        if (pc.z() <= 0.0) {
            ++invisible;
            continue;
        }
        const int px = int(std::lround(k.fx * pc.x() / pc.z() + k.cx));
        const int py = int(std::lround(k.fy * pc.y() / pc.z() + k.cy));
        if (px < 0 || px >= k.width || py < 0 || py >= k.height) {
            ++invisible;
            continue;
        }
        const double measured = depth[std::size_t(py) * std::size_t(k.width) + std::size_t(px)];
        if (measured == 0.0 || std::abs(pc.z() - measured) > margin) ++invisible;
    }
    return 100.0 * double(invisible) / double(model.surface_points.size());
}

namespace {

double object_threshold(const EvalConfig& cfg, const ObjectModel& m, double diameter) {
    return cfg.diameter_fraction > 0.0 ? cfg.diameter_fraction * diameter
                                       : cfg.accuracy_threshold;
}

struct ModelEntry {
    const ObjectModel* model = nullptr;
    double diameter = 0.0;
};

ObjectSummary summarize(int object_id, const std::vector<const EvalRecord*>& recs,
                        const std::vector<double>& thresholds, double auc_max) {
    ObjectSummary s;
    s.object_id = object_id;
    s.instances = int(recs.size());
    std::vector<double> adds;
    adds.reserve(recs.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const EvalRecord& r = *recs[i];
        adds.push_back(r.adds);
        hits += r.adds < thresholds[i] ? 1 : 0;
        s.mean_add += r.add;
        s.mean_adds += r.adds;
        s.mean_timings.segmentation += r.timings.segmentation;
        s.mean_timings.estimation += r.timings.estimation;
        s.mean_timings.refinement += r.timings.refinement;
    }
    const double n = double(recs.size());
    s.auc = auc(adds, auc_max);
    s.accuracy = 100.0 * double(hits) / n;
    s.mean_add /= n;
    s.mean_adds /= n;
    s.mean_timings.segmentation /= n;
    s.mean_timings.estimation /= n;
    s.mean_timings.refinement /= n;
    return s;
}

}  // namespace

EvalReport evaluate(const std::vector<Scene>& dataset, const std::vector<ObjectModel>& models,
                    const Estimator& estimator, const EvalConfig& cfg) {
    if (!cfg.valid()) throw std::invalid_argument("evaluate: invalid configuration");
    if (dataset.empty()) throw EmptyList("evaluate: empty dataset");
    if (!estimator) throw std::invalid_argument("evaluate: null estimator");

    std::map<int, ModelEntry> by_id;
    for (const ObjectModel& m : models) by_id[m.id] = {&m, model_diameter(m)};
    for (const Scene& s : dataset) {
        if (s.object_ids.size() != s.gt_poses.size())
            throw std::invalid_argument("evaluate: scene object/pose count mismatch");
        for (int id : s.object_ids)
            if (!by_id.count(id))
                throw std::invalid_argument("evaluate: scene references unknown object id " +
                                            std::to_string(id));
    }

    // Per-scene result slots keep aggregation order fixed regardless of how
    // scenes are distributed over workers.
    std::vector<std::vector<EvalRecord>> per_scene(dataset.size());
    auto process = [&](std::size_t si) {
        const Scene& s = dataset[si];
        for (int oi = 0; oi < int(s.object_ids.size()); ++oi) {
            const ModelEntry& entry = by_id.at(s.object_ids[std::size_t(oi)]);
            const TimedEstimate te = estimator(s, oi);
            EvalRecord rec;
            rec.scene_index = int(si);
            rec.object_id = entry.model->id;
            rec.add = add_metric(*entry.model, s.gt_poses[std::size_t(oi)], te.pose);
            rec.adds = adds_metric(*entry.model, s.gt_poses[std::size_t(oi)], te.pose);
            rec.invisible_pct = invisible_surface_pct(*entry.model, s.gt_poses[std::size_t(oi)],
                                                      s.depth, s.intrinsics, cfg.invisible_margin);
            rec.timings = te.timings;
            per_scene[si].push_back(rec);
        }
    };

    const int workers = std::min<int>(cfg.threads, int(dataset.size()));
    if (workers <= 1) {
        for (std::size_t si = 0; si < dataset.size(); ++si) process(si);
    } else {
        std::exception_ptr first_error;
        std::mutex error_mutex;
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t si = std::size_t(w); si < dataset.size(); si += std::size_t(workers)) {
                    try {
                        process(si);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (!first_error) first_error = std::current_exception();
                        return;
                    }
                }
            });
        for (std::thread& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    EvalReport report;
    report.config = cfg;
    for (const auto& recs : per_scene)
        report.records.insert(report.records.end(), recs.begin(), recs.end());
    if (report.records.empty()) throw EmptyList("evaluate: dataset contains no object instances");

    std::map<int, std::vector<const EvalRecord*>> grouped;
    std::vector<const EvalRecord*> all;
    std::vector<double> all_thresholds;
    for (const EvalRecord& r : report.records) {
        grouped[r.object_id].push_back(&r);
        all.push_back(&r);
        const ModelEntry& entry = by_id.at(r.object_id);
        all_thresholds.push_back(object_threshold(cfg, *entry.model, entry.diameter));
    }
    for (const auto& [id, recs] : grouped) {
        const ModelEntry& entry = by_id.at(id);
        const std::vector<double> thr(recs.size(),
                                      object_threshold(cfg, *entry.model, entry.diameter));
        report.per_object.push_back(summarize(id, recs, thr, cfg.auc_max_threshold));
    }
    report.mean = summarize(-1, all, all_thresholds, cfg.auc_max_threshold);

    // Occlusion curve: accuracy within invisible-surface bands from the
    // configured start; the top band is closed at 100.
    const int n_buckets =
        std::max(1, int(std::ceil((100.0 - cfg.bucket_start_pct) / cfg.bucket_width_pct)));
    std::vector<int> bucket_total(std::size_t(n_buckets), 0);
    std::vector<int> bucket_hits(std::size_t(n_buckets), 0);
    for (std::size_t i = 0; i < all.size(); ++i) {
        const EvalRecord& r = *all[i];
        if (r.invisible_pct < cfg.bucket_start_pct) continue;
        int b = int((r.invisible_pct - cfg.bucket_start_pct) / cfg.bucket_width_pct);
        b = std::min(b, n_buckets - 1);
        bucket_total[std::size_t(b)] += 1;
        bucket_hits[std::size_t(b)] += r.adds < all_thresholds[i] ? 1 : 0;
    }
    for (int b = 0; b < n_buckets; ++b) {
        if (bucket_total[std::size_t(b)] == 0) continue;
        OcclusionBucket bucket;
        bucket.lower_pct = cfg.bucket_start_pct + double(b) * cfg.bucket_width_pct;
        bucket.upper_pct = std::min(100.0, bucket.lower_pct + cfg.bucket_width_pct);
        bucket.instances = bucket_total[std::size_t(b)];
        bucket.accuracy =
            100.0 * double(bucket_hits[std::size_t(b)]) / double(bucket_total[std::size_t(b)]);
        report.occlusion.push_back(bucket);
    }
    return report;
}

namespace {

std::string accuracy_header(const EvalConfig& cfg) {
    if (cfg.diameter_fraction > 0.0)
        return format("<%.0f%%diam", 100.0 * cfg.diameter_fraction);
    return format("<%.1fcm", 100.0 * cfg.accuracy_threshold);
}

void append_summary_row(std::string& out, const std::string& name, const ObjectSummary& s,
                        int name_width) {
    out += format("%-*s %10d   %.12f   %8.2f   %10.6f   %10.6f\n", name_width, name.c_str(),
                  s.instances, s.auc, s.accuracy, s.mean_add, s.mean_adds);
}

}  // namespace

std::string render_table(const EvalReport& r) {
    const int name_width = 10;
    std::string out;
    out += format("%-*s %10s   %-14s   %8s   %10s   %10s\n", name_width, "object", "instances",
                  "AUC", accuracy_header(r.config).c_str(), "mean ADD", "mean ADD-S");
    for (const ObjectSummary& s : r.per_object)
        append_summary_row(out, std::to_string(s.object_id), s, name_width);
    append_summary_row(out, "MEAN", r.mean, name_width);
    return out;
}

std::string render_timings(const EvalReport& r) {
    const int name_width = 10;
    std::string out;
    out += format("%-*s %10s   %10s   %10s   %10s   %10s\n", name_width, "object", "instances",
                  "seg_ms", "est_ms", "refine_ms", "all_ms");
    auto row = [&](const std::string& name, const ObjectSummary& s) {
        out += format("%-*s %10d   %10.3f   %10.3f   %10.3f   %10.3f\n", name_width, name.c_str(),
                      s.instances, 1e3 * s.mean_timings.segmentation,
                      1e3 * s.mean_timings.estimation, 1e3 * s.mean_timings.refinement,
                      1e3 * s.mean_timings.total());
    };
    for (const ObjectSummary& s : r.per_object) row(std::to_string(s.object_id), s);
    row("MEAN", r.mean);
    return out;
}

std::string render_json(const EvalReport& r) {
    using nlohmann::json;
    auto summary_json = [](const ObjectSummary& s) {
        return json{{"object_id", s.object_id}, {"instances", s.instances},
                    {"auc", s.auc},             {"accuracy_pct", s.accuracy},
                    {"mean_add", s.mean_add},   {"mean_adds", s.mean_adds}};
    };
    json j;
    j["config"] = {{"auc_max_threshold", r.config.auc_max_threshold},
                   {"accuracy_threshold", r.config.accuracy_threshold},
                   {"diameter_fraction", r.config.diameter_fraction},
                   {"invisible_margin", r.config.invisible_margin},
                   {"bucket_start_pct", r.config.bucket_start_pct},
                   {"bucket_width_pct", r.config.bucket_width_pct}};
    j["per_object"] = json::array();
    for (const ObjectSummary& s : r.per_object) j["per_object"].push_back(summary_json(s));
    j["mean"] = summary_json(r.mean);
    j["occlusion"] = json::array();
    for (const OcclusionBucket& b : r.occlusion)
        j["occlusion"].push_back(json{{"lower_pct", b.lower_pct},
                                      {"upper_pct", b.upper_pct},
                                      {"instances", b.instances},
                                      {"accuracy_pct", b.accuracy}});
    j["instances"] = json::array();
    for (const EvalRecord& rec : r.records)
        j["instances"].push_back(json{{"scene_index", rec.scene_index},
                                      {"object_id", rec.object_id},
                                      {"add", rec.add},
                                      {"adds", rec.adds},
                                      {"invisible_pct", rec.invisible_pct}});
    return j.dump(2) + "\n";
}

std::string render_occlusion_csv(const EvalReport& r) {
    std::string out = "bucket_lower_pct,accuracy_pct\n";
    for (const OcclusionBucket& b : r.occlusion)
        out += format("%.17g,%.17g\n", b.lower_pct, b.accuracy);
    return out;
}

std::string render_instance_csv(const EvalReport& r) {
    std::string out = "scene_index,object_id,add,adds,invisible_pct\n";
    for (const EvalRecord& rec : r.records)
        out += format("%d,%d,%.17g,%.17g,%.17g\n", rec.scene_index, rec.object_id, rec.add,
                      rec.adds, rec.invisible_pct);
    return out;
}

}  // namespace df
