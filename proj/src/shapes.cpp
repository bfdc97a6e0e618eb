#include "densefusion/data.hpp"

#include <algorithm>
#include <cmath>

namespace df {

namespace {

constexpr double kMinSize = 0.02;
constexpr double kMaxSize = 0.20;

void require_size(double v, const char* what) {
    if (!(v >= kMinSize && v <= kMaxSize))
        throw DegenerateSize(std::string("make_model: ") + what + " = " + std::to_string(v) +
                             " outside [0.02, 0.20] m");
}

void validate_sizes(const ModelSpec& s) {
    switch (s.kind) {
        case ShapeKind::box:
            require_size(s.a, "box extent a");
            require_size(s.b, "box extent b");
            require_size(s.c, "box extent c");
            break;
        case ShapeKind::lshape:
            require_size(s.a, "lshape leg a");
            require_size(s.b, "lshape leg b");
            require_size(s.c, "lshape height c");
            break;
        case ShapeKind::cylinder:
            require_size(s.a, "cylinder radius a");
            require_size(s.b, "cylinder height b");
            break;
        case ShapeKind::sphere:
            require_size(s.a, "sphere radius a");
            break;
    }
}

// Axis-aligned rectangle in 3D: center, two in-plane half-extent vectors.
struct Rect {
    Eigen::Vector3d center, du, dv;
    double area() const { return 4.0 * du.norm() * dv.norm(); }
};

// The lshape solid is the extrusion of the polygon
// (0,0),(a,0),(a,T),(T,T),(T,b),(0,b) over z in [-c/2, c/2], T = 0.4*min(a,b).
// Faces: top and bottom L split into two rectangles each, plus six sides.
std::vector<Rect> lshape_faces(const ModelSpec& s) {
    const double a = s.a, b = s.b, c = s.c;
    const double T = 0.4 * std::min(a, b);
    const double hz = c / 2.0;
    const Eigen::Vector3d ex(1, 0, 0), ey(0, 1, 0), ez(0, 0, 1);
    std::vector<Rect> faces;
    for (double z : {-hz, hz}) {
        faces.push_back({{a / 2, T / 2, z}, ex * (a / 2), ey * (T / 2)});
        faces.push_back({{T / 2, (b + T) / 2, z}, ex * (T / 2), ey * ((b - T) / 2)});
    }
    faces.push_back({{a / 2, 0, 0}, ex * (a / 2), ez * hz});              // y = 0
    faces.push_back({{a, T / 2, 0}, ey * (T / 2), ez * hz});              // x = a
    faces.push_back({{(a + T) / 2, T, 0}, ex * ((a - T) / 2), ez * hz});  // y = T outer
    faces.push_back({{T, (b + T) / 2, 0}, ey * ((b - T) / 2), ez * hz});  // x = T inner
    faces.push_back({{T / 2, b, 0}, ex * (T / 2), ez * hz});              // y = b
    faces.push_back({{0, b / 2, 0}, ey * (b / 2), ez * hz});              // x = 0
    return faces;
}

// Largest-remainder allocation of n/4 quadruples across faces by area.
std::vector<int> allocate_quads(const std::vector<Rect>& faces, int quads) {
    double total = 0.0;
    for (const auto& f : faces) total += f.area();
    std::vector<int> n(faces.size(), 0);
    std::vector<std::pair<double, std::size_t>> rema;
    int assigned = 0;
    for (std::size_t i = 0; i < faces.size(); ++i) {
        const double exact = quads * faces[i].area() / total;
        n[i] = int(exact);
        assigned += n[i];
        rema.emplace_back(exact - double(n[i]), i);
    }
    std::sort(rema.begin(), rema.end(), [](const auto& l, const auto& r) {
        return l.first > r.first || (l.first == r.first && l.second < r.second);
    });
    for (int k = 0; k < quads - assigned; ++k) n[rema[std::size_t(k)].second] += 1;
    return n;
}

void append_antipodal(std::vector<Eigen::Vector3d>& out, const Eigen::Vector3d& p) {
    out.push_back(p);
    out.push_back(-p);
}

// box/cylinder/sphere surfaces are centrally symmetric: antipodal pairs keep
// the sample mean exactly zero while staying on the exact surface.
void sample_box(const ModelSpec& s, int n, Rng& rng, std::vector<Eigen::Vector3d>& out) {
    const Eigen::Vector3d h(s.a / 2, s.b / 2, s.c / 2);
    const double areas[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
    const double total = areas[0] + areas[1] + areas[2];
    for (int i = 0; i < n / 2; ++i) {
        const double r = rng.uniform(0.0, total);
        const int axis = r < areas[0] ? 0 : (r < areas[0] + areas[1] ? 1 : 2);
        Eigen::Vector3d p;
        p[axis] = h[axis];
        p[(axis + 1) % 3] = rng.uniform(-h[(axis + 1) % 3], h[(axis + 1) % 3]);
        p[(axis + 2) % 3] = rng.uniform(-h[(axis + 2) % 3], h[(axis + 2) % 3]);
        append_antipodal(out, p);
    }
}

void sample_cylinder(const ModelSpec& s, int n, Rng& rng, std::vector<Eigen::Vector3d>& out) {
    const double r = s.a, hh = s.b / 2;
    const double lateral = 2.0 * M_PI * r * s.b, caps = 2.0 * M_PI * r * r;
    for (int i = 0; i < n / 2; ++i) {
        const double theta = rng.uniform(0.0, 2.0 * M_PI);
        if (rng.uniform(0.0, lateral + caps) < lateral) {
            const double z = rng.uniform(-hh, hh);
            append_antipodal(out, {r * std::cos(theta), r * std::sin(theta), z});
        } else {
            const double rho = r * std::sqrt(rng.uniform());
            append_antipodal(out, {rho * std::cos(theta), rho * std::sin(theta), hh});
        }
    }
}

void sample_sphere(const ModelSpec& s, int n, Rng& rng, std::vector<Eigen::Vector3d>& out) {
    for (int i = 0; i < n / 2; ++i) {
        Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
        while (d.norm() < 1e-9) d = {rng.normal(), rng.normal(), rng.normal()};
        append_antipodal(out, s.a * d.normalized());
    }
}

// The lshape is not centrally symmetric; quadruples mirrored about each
// face's center zero the mean per face instead.
void sample_lshape(const ModelSpec& s, int n, Rng& rng, std::vector<Eigen::Vector3d>& out) {
    const auto faces = lshape_faces(s);
    const auto quads = allocate_quads(faces, n / 4);
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const Rect& r = faces[f];
        for (int q = 0; q < quads[f]; ++q) {
            const double u = rng.uniform(), v = rng.uniform();
            for (int su : {-1, 1})
                for (int sv : {-1, 1})
                    out.push_back(r.center + double(su) * u * r.du + double(sv) * v * r.dv);
        }
    }
}

double box_signed_distance(const Eigen::Vector3d& p, const Eigen::Vector3d& half) {
    const Eigen::Vector3d q = p.cwiseAbs() - half;
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    return outside + inside;
}

}  // namespace

ShapeKind shape_kind_from_string(const std::string& s) {
    if (s == "box") return ShapeKind::box;
    if (s == "lshape") return ShapeKind::lshape;
    if (s == "cylinder") return ShapeKind::cylinder;
    if (s == "sphere") return ShapeKind::sphere;
    throw UnknownShape("unknown shape kind '" + s + "' (expected box|lshape|cylinder|sphere)");
}

std::string to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::box: return "box";
        case ShapeKind::lshape: return "lshape";
        case ShapeKind::cylinder: return "cylinder";
        case ShapeKind::sphere: return "sphere";
    }
    throw UnknownShape("unknown shape kind value");
}

std::vector<Eigen::Vector3d> sample_surface(const ModelSpec& spec, int n, Rng& rng) {
    validate_sizes(spec);
    if (n < 4) n = 4;
    n = (n + 3) / 4 * 4;
    std::vector<Eigen::Vector3d> out;
    out.reserve(std::size_t(n));
    switch (spec.kind) {
        case ShapeKind::box: sample_box(spec, n, rng, out); break;
        case ShapeKind::lshape: sample_lshape(spec, n, rng, out); break;
        case ShapeKind::cylinder: sample_cylinder(spec, n, rng, out); break;
        case ShapeKind::sphere: sample_sphere(spec, n, rng, out); break;
    }
    return out;
}

Eigen::Vector3d surface_color(const ModelSpec& spec, const Eigen::Vector3d& raw_point) {
    // base hue from the id over a positional gradient, so different poses of
    // the same object produce visibly different pixels
    const double hue = std::fmod(0.61803398875 * double(spec.id + 1), 1.0) * 6.0;
    const Eigen::Vector3d base(std::clamp(std::abs(hue - 3.0) - 1.0, 0.0, 1.0),
                               std::clamp(2.0 - std::abs(hue - 2.0), 0.0, 1.0),
                               std::clamp(2.0 - std::abs(hue - 4.0), 0.0, 1.0));
    const double ext = std::max({spec.a, spec.b, spec.c});
    Eigen::Vector3d grad;
    for (int i = 0; i < 3; ++i)
        grad[i] = std::clamp(0.5 + 0.9 * raw_point[i] / ext, 0.05, 0.95);
    return 0.3 * base + 0.7 * grad;
}

ObjectModel make_model(const ModelSpec& spec) {
    validate_sizes(spec);
    Rng rng(derive_seed(spec.seed, "model"));
    ObjectModel m;
    m.id = spec.id;
    m.spec = spec;
    m.symmetric = spec.kind == ShapeKind::cylinder || spec.kind == ShapeKind::sphere;
    m.surface_points = sample_surface(spec, std::max(spec.points, 100), rng);

    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& p : m.surface_points) mean += p;
    mean /= double(m.surface_points.size());
    m.frame_offset = mean;

    m.point_colors.reserve(m.surface_points.size());
    for (auto& p : m.surface_points) {
        m.point_colors.push_back(surface_color(spec, p));
        p -= mean;
        m.bounding_radius = std::max(m.bounding_radius, p.norm());
    }
    return m;
}

double surface_distance(const ObjectModel& m, const Eigen::Vector3d& p_model) {
    const Eigen::Vector3d p = p_model + m.frame_offset;  // raw geometry coordinates
    const ModelSpec& s = m.spec;
    switch (s.kind) {
        case ShapeKind::box:
            return std::abs(box_signed_distance(p, {s.a / 2, s.b / 2, s.c / 2}));
        case ShapeKind::sphere:
            return std::abs(p.norm() - s.a);
        case ShapeKind::cylinder: {
            const double dr = std::hypot(p.x(), p.y()) - s.a;
            const double dz = std::abs(p.z()) - s.b / 2;
            const double outside = std::hypot(std::max(dr, 0.0), std::max(dz, 0.0));
            const double inside = std::min(std::max(dr, dz), 0.0);
            return std::abs(outside + inside);
        }
        case ShapeKind::lshape: {
            const double T = 0.4 * std::min(s.a, s.b);
            // union of the two leg boxes; the min of signed distances is
            // exact outside and a lower bound inside, enough for splat checks
            const double dA = box_signed_distance(
                p - Eigen::Vector3d(s.a / 2, T / 2, 0), {s.a / 2, T / 2, s.c / 2});
            const double dB = box_signed_distance(
                p - Eigen::Vector3d(T / 2, s.b / 2, 0), {T / 2, s.b / 2, s.c / 2});
            return std::abs(std::min(dA, dB));
        }
    }
    throw UnknownShape("surface_distance: unknown shape kind value");
}

double model_diameter(const ObjectModel& m) {
    double best = 0.0;
    for (std::size_t i = 0; i < m.surface_points.size(); ++i)
        for (std::size_t j = i + 1; j < m.surface_points.size(); ++j)
            best = std::max(best, (m.surface_points[i] - m.surface_points[j]).squaredNorm());
    return std::sqrt(best);
}

}  // namespace df
