#include "densefusion/data.hpp"

#include "json.hpp"

#include <cstring>
#include <fstream>

namespace df {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'D', 'F', 'S', 'C'};
constexpr std::uint16_t kVersion = 1;

void write_raw(std::ofstream& f, const void* data, std::size_t bytes) {
    f.write(reinterpret_cast<const char*>(data), std::streamsize(bytes));
}

void read_raw(std::ifstream& f, void* data, std::size_t bytes, std::size_t offset,
              const std::string& what) {
    f.read(reinterpret_cast<char*>(data), std::streamsize(bytes));
    if (std::size_t(f.gcount()) != bytes)
        throw MalformedFile("scene file truncated in " + what + " at byte " +
                            std::to_string(offset + std::size_t(f.gcount())));
}

json intrinsics_json(const CameraIntrinsics& k) {
    return {{"fx", k.fx},   {"fy", k.fy},        {"cx", k.cx},
            {"cy", k.cy},   {"width", k.width},  {"height", k.height}};
}

CameraIntrinsics intrinsics_from_json(const json& j) {
    CameraIntrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    return k;
}

}  // namespace

void save_scene(const Scene& s, const std::string& path) {
    json meta;
    meta["width"] = s.width;
    meta["height"] = s.height;
    meta["occluder_fraction"] = s.occluder_fraction;
    meta["intrinsics"] = intrinsics_json(s.intrinsics);
    meta["objects"] = json::array();
    for (std::size_t o = 0; o < s.object_ids.size(); ++o) {
        const auto p = pose_to_array(s.gt_poses[o]);
        meta["objects"].push_back({{"id", s.object_ids[o]},
                                   {"symmetric", int(s.object_symmetric[o])},
                                   {"pose", std::vector<double>(p.begin(), p.end())}});
    }
    meta["arrays"] = json::array();
    meta["arrays"].push_back(
        {{"name", "rgb"}, {"dtype", "f64"}, {"shape", {s.height, s.width, 3}}});
    meta["arrays"].push_back({{"name", "depth"}, {"dtype", "f64"}, {"shape", {s.height, s.width}}});
    for (std::size_t o = 0; o < s.masks.size(); ++o)
        meta["arrays"].push_back({{"name", "mask" + std::to_string(o)},
                                  {"dtype", "u8"},
                                  {"shape", {s.height, s.width}}});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    const std::string js = meta.dump();
    const std::uint32_t len = std::uint32_t(js.size());
    write_raw(f, kMagic, 4);
    write_raw(f, &kVersion, 2);
    write_raw(f, &len, 4);
    write_raw(f, js.data(), js.size());
    write_raw(f, s.rgb.data(), s.rgb.size() * sizeof(double));
    write_raw(f, s.depth.data(), s.depth.size() * sizeof(double));
    for (const auto& m : s.masks) write_raw(f, m.data(), m.size());
    if (!f) throw IoError("write failed: " + path);
}

Scene load_scene(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);

    char magic[4];
    read_raw(f, magic, 4, 0, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw MalformedFile("not a scene file (bad magic) at byte 0: " + path);
    std::uint16_t version = 0;
    read_raw(f, &version, 2, 4, "version");
    if (version != kVersion)
        throw MalformedFile("unsupported scene version " + std::to_string(version) +
                            " at byte 4");
    std::uint32_t len = 0;
    read_raw(f, &len, 4, 6, "metadata length");
    std::string js(len, '\0');
    read_raw(f, js.data(), len, 10, "metadata");

    json meta;
    try {
        meta = json::parse(js);
    } catch (const json::exception& e) {
        throw MalformedFile("invalid metadata JSON at byte 10: " + std::string(e.what()));
    }

    Scene s;
    std::size_t offset = 10 + len;
    try {
        s.width = meta.at("width").get<int>();
        s.height = meta.at("height").get<int>();
        s.occluder_fraction = meta.value("occluder_fraction", 0.0);
        s.intrinsics = intrinsics_from_json(meta.at("intrinsics"));
        for (const auto& obj : meta.at("objects")) {
            s.object_ids.push_back(obj.at("id").get<int>());
            s.object_symmetric.push_back(std::uint8_t(obj.at("symmetric").get<int>()));
            const auto pv = obj.at("pose").get<std::vector<double>>();
            if (pv.size() != 7) throw MalformedFile("pose must have 7 numbers");
            std::array<double, 7> pa;
            std::copy(pv.begin(), pv.end(), pa.begin());
            s.gt_poses.push_back(pose_from_array(pa));
        }

        if (s.width <= 0 || s.height <= 0)
            throw MalformedFile("nonpositive image dimensions in metadata");
        const std::size_t npx = s.pixel_count();
        for (const auto& arr : meta.at("arrays")) {
            const std::string name = arr.at("name").get<std::string>();
            const std::string dtype = arr.at("dtype").get<std::string>();
            const auto shape = arr.at("shape").get<std::vector<int>>();
            std::size_t count = 1;
            for (int d : shape) count *= std::size_t(std::max(d, 0));
            if (name == "rgb") {
                if (dtype != "f64" || count != npx * 3)
                    throw MalformedFile("rgb array metadata mismatch");
                s.rgb.resize(count);
                read_raw(f, s.rgb.data(), count * sizeof(double), offset, "rgb");
                offset += count * sizeof(double);
            } else if (name == "depth") {
                if (dtype != "f64" || count != npx)
                    throw MalformedFile("depth array metadata mismatch");
                s.depth.resize(count);
                read_raw(f, s.depth.data(), count * sizeof(double), offset, "depth");
                offset += count * sizeof(double);
            } else if (name.rfind("mask", 0) == 0) {
                if (dtype != "u8" || count != npx)
                    throw MalformedFile("mask array metadata mismatch");
                std::vector<std::uint8_t> m(count);
                read_raw(f, m.data(), count, offset, name);
                offset += count;
                s.masks.push_back(std::move(m));
            } else {
                throw MalformedFile("unknown array '" + name + "' in metadata");
            }
        }
    } catch (const json::exception& e) {
        throw MalformedFile("metadata field error at byte 10: " + std::string(e.what()));
    }

    if (s.rgb.empty() || s.depth.empty())
        throw MalformedFile("metadata lists no rgb/depth arrays");
    if (s.masks.size() != s.object_ids.size())
        throw MalformedFile("mask count does not match object count");
    f.peek();
    if (!f.eof())
        throw MalformedFile("trailing bytes after arrays at byte " + std::to_string(offset));
    return s;
}

void write_manifest(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (const auto& l : lines) f << l << '\n';
    if (!f) throw IoError("write failed: " + path);
}

std::vector<std::string> read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

void save_model_specs(const std::vector<ModelSpec>& specs, const std::string& path) {
    json arr = json::array();
    for (const auto& s : specs)
        arr.push_back({{"id", s.id},
                       {"kind", to_string(s.kind)},
                       {"a", s.a},
                       {"b", s.b},
                       {"c", s.c},
                       {"points", s.points},
                       {"seed", s.seed}});
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << arr.dump(2) << '\n';
    if (!f) throw IoError("write failed: " + path);
}

std::vector<ModelSpec> load_model_specs(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open: " + path);
    json arr;
    try {
        f >> arr;
        std::vector<ModelSpec> specs;
        for (const auto& j : arr) {
            ModelSpec s;
            s.id = j.at("id").get<int>();
            s.kind = shape_kind_from_string(j.at("kind").get<std::string>());
            s.a = j.at("a").get<double>();
            s.b = j.at("b").get<double>();
            s.c = j.at("c").get<double>();
            s.points = j.value("points", 1000);
            s.seed = j.value("seed", std::uint64_t(0));
            specs.push_back(s);
        }
        return specs;
    } catch (const json::exception& e) {
        throw MalformedFile("model spec file " + path + ": " + e.what());
    }
}

}  // namespace df
