#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "densefusion/autodiff.hpp"
#include "densefusion/data.hpp"
#include "densefusion/geometry.hpp"

namespace df {

struct EmptyMask : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NoValidDepth : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct EmptyPredictionList : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct IndexOutOfBounds : std::out_of_range {
    using std::out_of_range::out_of_range;
};
struct MissingCheckpoint : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NetworkConfig {
    int d_rgb = 128;  // per-pixel color feature width
    int d_geo = 128;  // per-point geometric feature width
    int d_glob = 256; // global fused feature width
    int P = 500;      // points sampled from the masked cloud
    int N = 500;      // dense pixels entering the training objective
    int enc1 = 16;    // encoder channel widths (enc1 -> enc2 -> enc1)
    int enc2 = 32;
    int geo_h = 64;   // per-point MLP hidden width
    int fuse_h = 128; // pair-MLP hidden width
    int head_h = 128; // pose/confidence head hidden width
    int refine_h = 128;  // residual-estimator hidden width
    std::uint64_t seed = 0;

    bool valid() const {
        return d_rgb > 0 && d_geo > 0 && d_glob > 0 && P >= 1 && N >= 1 && N <= P && enc1 > 0 &&
               enc2 > 0 && geo_h > 0 && fuse_h > 0 && head_h > 0 && refine_h > 0;
    }
};

struct PerPixelPrediction {
    Eigen::Quaterniond rotation;     // unit
    Eigen::Vector3d translation;     // meters, camera frame
    double confidence = 0.0;         // in (0,1], floored at 1e-6
};

// Residual predictor: its own geometric-embedding and fusion trunk (the
// canonical-frame cloud lives at object scale, so these layers train from
// scratch on that input range; the color map is reused as stored), then four
// stacked fully connected layers mapping the global fused feature to a
// 7-value pose residual. The last layer starts zeroed with bias (1,0,0,0,
// 0,0,0) so an untrained refiner is a no-op.
struct RefinerParams {
    ad::Tensor rg1_W, rg1_b;  // 3 -> geo_h
    ad::Tensor rg2_W, rg2_b;  // geo_h -> geo_h
    ad::Tensor rg3_W, rg3_b;  // 2*geo_h -> d_geo
    ad::Tensor rf1_W, rf1_b;  // d_rgb+d_geo -> fuse_h
    ad::Tensor rf2_W, rf2_b;  // fuse_h -> d_glob
    ad::Tensor W1, b1, W2, b2, W3, b3, W4, b4;
};

// All trainable state. The color branch is a small conv encoder-decoder that
// preserves spatial size; the geometric branch is a shared per-point MLP with
// an average-pooled summary concatenated before its final layer; fusion runs
// a pair MLP whose mean forms the global feature appended to every pixel.
struct Network {
    NetworkConfig cfg;

    ad::Tensor enc1_k, enc1_b;  // 3x3, 3 -> enc1
    ad::Tensor enc2_k, enc2_b;  // 3x3 stride 2, enc1 -> enc2
    ad::Tensor enc3_k, enc3_b;  // 3x3, enc2 -> enc1
    ad::Tensor emb_k, emb_b;    // 1x1, enc1 -> d_rgb

    ad::Tensor g1_W, g1_b;  // 3 -> geo_h
    ad::Tensor g2_W, g2_b;  // geo_h -> geo_h
    ad::Tensor g3_W, g3_b;  // 2*geo_h -> d_geo

    ad::Tensor f1_W, f1_b;  // d_rgb+d_geo -> fuse_h
    ad::Tensor f2_W, f2_b;  // fuse_h -> d_glob

    ad::Tensor rot1_W, rot1_b, rot2_W, rot2_b;  // fused -> head_h -> 4
    ad::Tensor tr1_W, tr1_b, tr2_W, tr2_b;      // fused -> head_h -> 3
    ad::Tensor cf1_W, cf1_b, cf2_W, cf2_b;      // fused -> head_h -> 1

    RefinerParams ref;

    explicit Network(NetworkConfig config);

    std::vector<std::pair<std::string, ad::Tensor*>> main_params();
    std::vector<std::pair<std::string, ad::Tensor*>> refiner_params();
    std::vector<ad::Tensor*> main_param_ptrs();
    std::vector<ad::Tensor*> refiner_param_ptrs();
};

// Optimizer and schedule state carried across checkpoint save/load.
struct TrainState {
    ad::AdamState adam;          // main parameters
    ad::AdamState refiner_adam;  // refiner parameters
    int epoch = 0;
    bool refining = false;
    std::vector<double> val_history;  // per-epoch validation loss
};

// ---- tape-level graph builders (shared by training, inference, refinement) ----

// [h,w,3] crop -> [h,w,d_rgb] feature map, spatial size preserved
ad::Var color_map_op(ad::Tape& tape, Network& net, ad::Var crop);
// [P,3] camera-frame points -> [P,d_geo]
ad::Var geo_features_op(ad::Tape& tape, Network& net, ad::Var points);

struct FusedOps {
    ad::Var per_pixel;  // [P, d_rgb+d_geo+d_glob]
    ad::Var global;     // [d_glob]
};
FusedOps fuse_op(ad::Tape& tape, Network& net, ad::Var color_map, ad::Var geo,
                 const std::vector<std::array<int, 2>>& rowcol);

struct HeadOps {
    ad::Var quats;  // [P,4] unit rows
    ad::Var trans;  // [P,3]
    ad::Var conf;   // [P,1] in [1e-6, 1)
};
HeadOps predict_op(ad::Tape& tape, Network& net, ad::Var per_pixel_fused);

// Full forward pass over one masked object: crops the mask's bounding box,
// backprojects masked depth, samples P cloud points, and runs the three
// stages above on the given tape.
struct ForwardResult {
    ad::Var color_map, geo, per_pixel_fused, global_feat;
    ad::Var quats, trans, conf;
    PointCloud cloud;                        // sampled points, camera frame
    std::vector<std::array<int, 2>> rowcol;  // crop-relative pixel of each point
    int x0 = 0, y0 = 0;                      // crop origin in the full image
};
ForwardResult forward_scene(ad::Tape& tape, Network& net, const Scene& scene,
                            const std::vector<std::uint8_t>& mask, Rng& sample_rng);

// ---- value-level operations ----

ad::Tensor embed_color(Network& net, const ad::Tensor& crop);
ad::Tensor embed_geometry(Network& net, const PointCloud& cloud);
std::pair<ad::Tensor, ad::Tensor> fuse(Network& net, const ad::Tensor& color_map,
                                       const ad::Tensor& geo,
                                       const std::vector<std::array<int, 2>>& rowcol);
std::vector<PerPixelPrediction> predict(Network& net, const ad::Tensor& per_pixel_fused);

Pose select_best(const std::vector<PerPixelPrediction>& predictions);

struct EstimateResult {
    Pose pose;
    std::vector<PerPixelPrediction> predictions;
    ad::Tensor color_map;                    // reused by the refiner
    PointCloud cloud;                        // sampled points, camera frame
    std::vector<std::array<int, 2>> rowcol;  // crop-relative pixel of each point
    int x0 = 0, y0 = 0;
};
EstimateResult estimate(Network& net, const Scene& scene, const std::vector<std::uint8_t>& mask);

// ---- checkpointing: textual header, then little-endian float64 arrays ----

void save_checkpoint(const std::string& path, Network& net, const TrainState* train = nullptr);
// Restores parameters by name into an identically configured network; fills
// *train when the file carries optimizer state, resets it otherwise.
void load_checkpoint(const std::string& path, Network& net, TrainState* train = nullptr);

}  // namespace df
