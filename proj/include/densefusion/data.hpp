#pragma once

#include "densefusion/geometry.hpp"
#include "densefusion/rng.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace df {

struct UnknownShape : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct DegenerateSize : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ObjectBehindCamera : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct MalformedFile : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ShapeKind { box, lshape, cylinder, sphere };

ShapeKind shape_kind_from_string(const std::string& s);  // throws UnknownShape
std::string to_string(ShapeKind k);

// Size parameters in meters; each used parameter must lie in [0.02, 0.20].
// Meaning per kind:
//   box      a x b x c full extents
//   lshape   leg a along +x, leg b along +y, height c; arm thickness 0.4*min(a,b)
//   cylinder radius a, height b, axis z
//   sphere   radius a
struct ModelSpec {
    int id = 0;
    ShapeKind kind = ShapeKind::box;
    double a = 0.1, b = 0.1, c = 0.1;
    int points = 1000;  // rounded up to a multiple of four when sampling
    std::uint64_t seed = 0;
};

struct ObjectModel {
    int id = 0;
    std::vector<Eigen::Vector3d> surface_points;  // centroid at origin
    std::vector<Eigen::Vector3d> point_colors;    // unit RGB
    bool symmetric = false;
    ModelSpec spec;                // generating geometry, reused for dense splatting
    Eigen::Vector3d frame_offset;  // raw-geometry point = model point + frame_offset
    double bounding_radius = 0.0;
};

ObjectModel make_model(const ModelSpec& spec);

// Surface sampling shared by make_model and the renderer. n is rounded up to
// a multiple of four; points are emitted in centered pairs/quadruples so the
// sample mean vanishes up to allocation rounding, then live in raw geometry
// coordinates (see frame_offset).
std::vector<Eigen::Vector3d> sample_surface(const ModelSpec& spec, int n, Rng& rng);

// Deterministic per-point color as a function of raw-geometry position; the
// renderer colors its dense splats with the same function so scene pixels
// agree with model point colors.
Eigen::Vector3d surface_color(const ModelSpec& spec, const Eigen::Vector3d& raw_point);

// Exact (absolute) distance from a model-frame point to the object surface.
double surface_distance(const ObjectModel& m, const Eigen::Vector3d& p_model);

// Max pairwise distance between sampled surface points.
double model_diameter(const ObjectModel& m);

struct Scene {
    int width = 0, height = 0;
    std::vector<double> rgb;                       // h*w*3, unit range
    std::vector<double> depth;                     // h*w meters, 0 = no return
    std::vector<std::vector<std::uint8_t>> masks;  // per object, h*w, values 0/1
    std::vector<int> object_ids;
    std::vector<std::uint8_t> object_symmetric;
    std::vector<Pose> gt_poses;
    CameraIntrinsics intrinsics;
    double occluder_fraction = 0.0;

    std::size_t pixel_count() const { return std::size_t(width) * std::size_t(height); }
};

struct RenderOptions {
    double occluder_fraction = 0.0;
    double depth_sigma = 0.001;      // meters; 0 disables depth noise
    double dropout_fraction = 0.01;  // fraction of returns zeroed; 0 disables
    double wall_depth = 1.4;         // background plane distance; 0 = no return
    int splat_points = 60000;        // dense surface samples per object
    std::uint64_t seed = 0;
};

// Z-buffer point splatting. Each object's occluder (when occluder_fraction
// > 0) is a floating plane-like blob 8 cm in front of its surface that hides
// exactly round(fraction * visible) of that object's pixels.
Scene render_scene(const std::vector<ObjectModel>& models, const std::vector<Pose>& poses,
                   const CameraIntrinsics& k, const RenderOptions& opt);
Scene render_scene(const std::vector<ObjectModel>& models, const std::vector<Pose>& poses,
                   const CameraIntrinsics& k, double occluder_fraction, std::uint64_t seed);

// Dilation by dilation_px (8-neighborhood), then exactly
// round(leak_fraction * candidates) border-adjacent background pixels
// flipped on, chosen by seeded shuffle.
std::vector<std::uint8_t> corrupt_mask(const std::vector<std::uint8_t>& mask, int width,
                                       int height, int dilation_px, double leak_fraction,
                                       std::uint64_t seed);

// Backprojects pixels with mask on and depth > 0; fills points, colors from
// the scene image, and pixel_index as (row, col).
PointCloud masked_cloud(const Scene& s, const std::vector<std::uint8_t>& mask);

void save_scene(const Scene& s, const std::string& path);
Scene load_scene(const std::string& path);

// Dataset layout: directory of scene files plus a manifest text file listing
// one scene path per line, relative to the manifest's directory.
void write_manifest(const std::string& path, const std::vector<std::string>& lines);
std::vector<std::string> read_manifest(const std::string& path);

void save_model_specs(const std::vector<ModelSpec>& specs, const std::string& path);
std::vector<ModelSpec> load_model_specs(const std::string& path);

}  // namespace df
