#include "densefusion/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace df {

namespace {

constexpr double kOccluderStandoff = 0.08;  // meters in front of the hidden surface
constexpr double kMinObjectDepth = 0.3;
constexpr double kMaxObjectDepth = 2.0;

Eigen::Vector3d occluder_color(int px, int py) {
    const double v = 0.30 + 0.08 * (((px / 3) + (py / 3)) % 2);
    return {v, v, 0.9 * v};
}

}  // namespace

Scene render_scene(const std::vector<ObjectModel>& models, const std::vector<Pose>& poses,
                   const CameraIntrinsics& k, const RenderOptions& opt) {
    if (models.size() != poses.size())
        throw std::invalid_argument("render_scene: models and poses differ in length");
    if (!k.valid()) throw std::invalid_argument("render_scene: invalid intrinsics");
    if (opt.occluder_fraction < 0.0 || opt.occluder_fraction > 1.0)
        throw std::invalid_argument("render_scene: occluder_fraction outside [0, 1]");

    const int w = k.width, h = k.height;
    Scene s;
    s.width = w;
    s.height = h;
    s.intrinsics = k;
    s.occluder_fraction = opt.occluder_fraction;
    const std::size_t npx = s.pixel_count();

    std::vector<double> zbuf(npx, std::numeric_limits<double>::infinity());
    std::vector<int> owner(npx, -1);  // object index, -1 background, -2 occluder
    std::vector<Eigen::Vector3d> color(npx, Eigen::Vector3d::Zero());

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::size_t i = std::size_t(y) * w + x;
            color[i] = {0.10 + 0.08 * double(x) / w, 0.10 + 0.05 * double(y) / h, 0.16};
            if (opt.wall_depth > 0.0) zbuf[i] = opt.wall_depth;
        }

    for (std::size_t o = 0; o < models.size(); ++o) {
        const ObjectModel& m = models[o];
        const double cz = poses[o].translation.z();
        if (cz <= 0.0)
            throw ObjectBehindCamera("render_scene: object " + std::to_string(m.id) +
                                     " centroid depth " + std::to_string(cz));
        if (cz < kMinObjectDepth || cz > kMaxObjectDepth)
            throw std::invalid_argument("render_scene: object " + std::to_string(m.id) +
                                        " depth " + std::to_string(cz) +
                                        " outside [0.3, 2.0] m");

        Rng srng(derive_seed(derive_seed(opt.seed, "splat"), std::uint64_t(o)));
        const auto raw = sample_surface(m.spec, opt.splat_points, srng);
        const Eigen::Matrix3d R = poses[o].rotation_matrix();
        const Eigen::Vector3d t = poses[o].translation;
        for (const auto& rp : raw) {
            const Eigen::Vector3d pc = R * (rp - m.frame_offset) + t;
            if (pc.z() <= 0.0)
                throw ObjectBehindCamera("render_scene: object " + std::to_string(m.id) +
                                         " has surface points behind the camera");
            const int px = int(std::lround(k.fx * pc.x() / pc.z() + k.cx));
            const int py = int(std::lround(k.fy * pc.y() / pc.z() + k.cy));
            if (px < 0 || px >= w || py < 0 || py >= h) continue;
            const std::size_t i = std::size_t(py) * w + px;
            if (pc.z() < zbuf[i]) {
                zbuf[i] = pc.z();
                owner[i] = int(o);
                color[i] = surface_color(m.spec, rp);
            }
        }
    }

    // Per-object occluding blob: a directional half-plane sweep over exactly
    // round(fraction * visible) of that object's pixels, floating 8 cm in
    // front of the surface it hides. Masks are disjoint, so sweeps do not
    // interact across objects.
    if (opt.occluder_fraction > 0.0) {
        Rng orng(derive_seed(opt.seed, "occluder"));
        for (std::size_t o = 0; o < models.size(); ++o) {
            const double theta = orng.uniform(0.0, 2.0 * M_PI);
            std::vector<std::pair<double, std::size_t>> visible;
            for (std::size_t i = 0; i < npx; ++i)
                if (owner[i] == int(o)) {
                    const double key = std::cos(theta) * double(i % std::size_t(w)) +
                                       std::sin(theta) * double(i / std::size_t(w));
                    visible.emplace_back(key, i);
                }
            const auto hide = std::size_t(std::llround(opt.occluder_fraction *
                                                       double(visible.size())));
            std::sort(visible.begin(), visible.end());
            for (std::size_t j = visible.size() - hide; j < visible.size(); ++j) {
                const std::size_t i = visible[j].second;
                zbuf[i] -= kOccluderStandoff;
                owner[i] = -2;
                color[i] = occluder_color(int(i % std::size_t(w)), int(i / std::size_t(w)));
            }
        }
    }

    s.rgb.resize(npx * 3);
    s.depth.assign(npx, 0.0);
    s.masks.assign(models.size(), std::vector<std::uint8_t>(npx, 0));
    for (std::size_t i = 0; i < npx; ++i) {
        for (int c = 0; c < 3; ++c) s.rgb[i * 3 + std::size_t(c)] = color[i][c];
        if (std::isfinite(zbuf[i])) s.depth[i] = zbuf[i];
        if (owner[i] >= 0) s.masks[std::size_t(owner[i])][i] = 1;
    }
    for (std::size_t o = 0; o < models.size(); ++o) {
        s.object_ids.push_back(models[o].id);
        s.object_symmetric.push_back(models[o].symmetric ? 1 : 0);
        s.gt_poses.push_back(poses[o]);
    }

    if (opt.depth_sigma > 0.0 || opt.dropout_fraction > 0.0) {
        Rng nrng(derive_seed(opt.seed, "noise"));
        for (std::size_t i = 0; i < npx; ++i) {
            if (s.depth[i] <= 0.0) continue;
            if (opt.depth_sigma > 0.0) s.depth[i] += nrng.normal(0.0, opt.depth_sigma);
            if (opt.dropout_fraction > 0.0 && nrng.uniform() < opt.dropout_fraction)
                s.depth[i] = 0.0;
        }
    }
    return s;
}

Scene render_scene(const std::vector<ObjectModel>& models, const std::vector<Pose>& poses,
                   const CameraIntrinsics& k, double occluder_fraction, std::uint64_t seed) {
    RenderOptions opt;
    opt.occluder_fraction = occluder_fraction;
    opt.seed = seed;
    return render_scene(models, poses, k, opt);
}

std::vector<std::uint8_t> corrupt_mask(const std::vector<std::uint8_t>& mask, int width,
                                       int height, int dilation_px, double leak_fraction,
                                       std::uint64_t seed) {
    if (int(mask.size()) != width * height)
        throw std::invalid_argument("corrupt_mask: mask size does not match dimensions");
    if (dilation_px < 0 || leak_fraction < 0.0 || leak_fraction > 1.0)
        throw std::invalid_argument("corrupt_mask: bad dilation or leak fraction");

    std::vector<std::uint8_t> out = mask;
    const auto at = [&](const std::vector<std::uint8_t>& m, int x, int y) -> std::uint8_t {
        return (x >= 0 && x < width && y >= 0 && y < height) ? m[std::size_t(y) * width + x] : 0;
    };
    for (int round = 0; round < dilation_px; ++round) {
        std::vector<std::uint8_t> next = out;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                if (out[std::size_t(y) * width + x]) continue;
                for (int dy = -1; dy <= 1 && !next[std::size_t(y) * width + x]; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        if (at(out, x + dx, y + dy)) {
                            next[std::size_t(y) * width + x] = 1;
                            break;
                        }
            }
        out.swap(next);
    }

    if (leak_fraction > 0.0) {
        std::vector<std::size_t> border;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                if (out[std::size_t(y) * width + x]) continue;
                bool adj = false;
                for (int dy = -1; dy <= 1 && !adj; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        if (at(out, x + dx, y + dy)) {
                            adj = true;
                            break;
                        }
                if (adj) border.push_back(std::size_t(y) * width + x);
            }
        Rng rng(derive_seed(seed, "leak"));
        rng.shuffle(border);
        const auto flips = std::size_t(std::llround(leak_fraction * double(border.size())));
        for (std::size_t i = 0; i < flips && i < border.size(); ++i) out[border[i]] = 1;
    }
    return out;
}

PointCloud masked_cloud(const Scene& s, const std::vector<std::uint8_t>& mask) {
    if (mask.size() != s.pixel_count())
        throw std::invalid_argument("masked_cloud: mask size does not match scene");
    PointCloud c;
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
            const std::size_t i = std::size_t(y) * s.width + x;
            if (!mask[i] || s.depth[i] <= 0.0) continue;
            c.points.push_back(backproject(s.intrinsics, double(x), double(y), s.depth[i]));
            c.colors.emplace_back(s.rgb[i * 3], s.rgb[i * 3 + 1], s.rgb[i * 3 + 2]);
            c.pixel_index.emplace_back(y, x);
        }
    return c;
}

}  // namespace df
