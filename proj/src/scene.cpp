#include "freefix/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "freefix/rng.hpp"

namespace freefix {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr double kSh0 = 0.28209479177387814;

void require_finite(double v, const char* field, std::size_t idx) {
    if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "scene: non-finite value in field '" << field << "' of primitive " << idx;
        throw std::runtime_error(os.str());
    }
}

} // namespace

void GaussianPrimitive::enforce_invariants() {
    const double n = q.norm();
    if (n <= 0 || !std::isfinite(n))
        throw std::runtime_error("primitive: degenerate quaternion");
    q = {q.w / n, q.x / n, q.y / n, q.z / n};
    eta = std::clamp(eta, 0.0, 1.0);
    rgb = {std::clamp(rgb.x, 0.0, 1.0), std::clamp(rgb.y, 0.0, 1.0),
           std::clamp(rgb.z, 0.0, 1.0)};
    constexpr double s_min = 1e-6;
    s = {std::max(s.x, s_min), std::max(s.y, s_min), std::max(s.z, s_min)};
}

void CameraView::validate() const {
    if (width < 8 || height < 8) throw std::runtime_error("camera: width/height must be >= 8");
    if (fx <= 0 || fy <= 0) throw std::runtime_error("camera: focal lengths must be > 0");
    if (!(near > 0 && near < far)) throw std::runtime_error("camera: need 0 < near < far");
}

// ---- JSON I/O ----

namespace {

ordered_json vec3_json(const Vec3& v) { return ordered_json::array({v.x, v.y, v.z}); }
ordered_json quat_json(const Quat& q) { return ordered_json::array({q.w, q.x, q.y, q.z}); }

Vec3 vec3_from(const ordered_json& j, const char* field, std::size_t idx) {
    if (!j.is_array() || j.size() != 3)
        throw std::runtime_error(std::string("scene: field '") + field + "' must be a 3-array (primitive " + std::to_string(idx) + ")");
    Vec3 v{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
    require_finite(v.x, field, idx);
    require_finite(v.y, field, idx);
    require_finite(v.z, field, idx);
    return v;
}

Quat quat_from(const ordered_json& j, const char* field, std::size_t idx) {
    if (!j.is_array() || j.size() != 4)
        throw std::runtime_error(std::string("scene: field '") + field + "' must be a 4-array (primitive " + std::to_string(idx) + ")");
    Quat q{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    require_finite(q.w, field, idx);
    require_finite(q.x, field, idx);
    require_finite(q.y, field, idx);
    require_finite(q.z, field, idx);
    return q;
}

ordered_json parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    try {
        return ordered_json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

} // namespace

GaussianScene load_scene(const std::string& path) {
    const ordered_json j = parse_file(path);
    GaussianScene scene;
    if (j.contains("meta")) {
        const auto& m = j.at("meta");
        scene.meta.name = m.value("name", std::string());
        scene.meta.unit_scale = m.value("unit_scale", 1.0);
        scene.meta.seed = m.value("seed", std::uint64_t(0));
    }
    if (!j.contains("gaussians") || !j.at("gaussians").is_array())
        throw std::runtime_error(path + ": missing 'gaussians' array");
    std::size_t idx = 0;
    for (const auto& g : j.at("gaussians")) {
        GaussianPrimitive p;
        try {
            p.mu = vec3_from(g.at("mu"), "mu", idx);
            p.q = quat_from(g.at("q"), "q", idx);
            p.s = vec3_from(g.at("s"), "s", idx);
            p.eta = g.at("eta").get<double>();
            p.rgb = vec3_from(g.at("rgb"), "rgb", idx);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ": primitive " + std::to_string(idx) + ": " + e.what());
        }
        require_finite(p.eta, "eta", idx);
        if (p.s.x <= 0 || p.s.y <= 0 || p.s.z <= 0)
            throw std::runtime_error(path + ": primitive " + std::to_string(idx) + ": scale must be positive");
        if (p.q.norm() <= 0)
            throw std::runtime_error(path + ": primitive " + std::to_string(idx) + ": zero quaternion");
        p.enforce_invariants();
        scene.primitives.push_back(p);
        ++idx;
    }
    return scene;
}

void save_scene(const GaussianScene& scene, const std::string& path) {
    ordered_json j;
    j["meta"] = {{"name", scene.meta.name},
                 {"unit_scale", scene.meta.unit_scale},
                 {"seed", scene.meta.seed}};
    ordered_json arr = ordered_json::array();
    for (const auto& p : scene.primitives) {
        ordered_json g;
        g["mu"] = vec3_json(p.mu);
        g["q"] = quat_json(p.q);
        g["s"] = vec3_json(p.s);
        g["eta"] = p.eta;
        g["rgb"] = vec3_json(p.rgb);
        arr.push_back(std::move(g));
    }
    j["gaussians"] = std::move(arr);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_scene: cannot open " + path);
    f << j.dump(1) << "\n";
    if (!f) throw std::runtime_error("save_scene: write failed for " + path);
}

ViewSet load_views(const std::string& path) {
    const ordered_json j = parse_file(path);
    ViewSet set;
    const std::string kind = j.value("kind", std::string("training"));
    if (kind == "training") set.kind = ViewSetKind::Training;
    else if (kind == "extrapolated") set.kind = ViewSetKind::Extrapolated;
    else if (kind == "fixed") set.kind = ViewSetKind::Fixed;
    else throw std::runtime_error(path + ": unknown view-set kind '" + kind + "'");
    if (!j.contains("views") || !j.at("views").is_array())
        throw std::runtime_error(path + ": missing 'views' array");
    std::size_t idx = 0;
    for (const auto& v : j.at("views")) {
        CameraView cam;
        try {
            cam.fx = v.at("fx").get<double>();
            cam.fy = v.at("fy").get<double>();
            cam.cx = v.at("cx").get<double>();
            cam.cy = v.at("cy").get<double>();
            cam.width = v.at("width").get<int>();
            cam.height = v.at("height").get<int>();
            cam.rotation = quat_from(v.at("q"), "q", idx);
            cam.translation = vec3_from(v.at("t"), "t", idx);
            cam.near = v.at("near").get<double>();
            cam.far = v.at("far").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ": view " + std::to_string(idx) + ": " + e.what());
        }
        cam.rotation = cam.rotation.normalized();
        cam.validate();
        set.views.push_back(cam);
        ++idx;
    }
    return set;
}

void save_views(const ViewSet& set, const std::string& path) {
    ordered_json j;
    ordered_json arr = ordered_json::array();
    for (const auto& v : set.views) {
        ordered_json c;
        c["fx"] = v.fx;
        c["fy"] = v.fy;
        c["cx"] = v.cx;
        c["cy"] = v.cy;
        c["width"] = v.width;
        c["height"] = v.height;
        c["q"] = quat_json(v.rotation);
        c["t"] = vec3_json(v.translation);
        c["near"] = v.near;
        c["far"] = v.far;
        arr.push_back(std::move(c));
    }
    j["views"] = std::move(arr);
    switch (set.kind) {
        case ViewSetKind::Training: j["kind"] = "training"; break;
        case ViewSetKind::Extrapolated: j["kind"] = "extrapolated"; break;
        case ViewSetKind::Fixed: j["kind"] = "fixed"; break;
    }
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_views: cannot open " + path);
    f << j.dump(1) << "\n";
}

// ---- PLY import ----

namespace {

struct PlyProperty {
    std::string name;
    int byte_size = 0;
    bool is_float = false;
    bool is_double = false;
    int offset = 0;
};

double read_prop(const char* row, const PlyProperty& p) {
    if (p.is_float) {
        float v;
        std::memcpy(&v, row + p.offset, 4);
        return double(v);
    }
    if (p.is_double) {
        double v;
        std::memcpy(&v, row + p.offset, 8);
        return v;
    }
    throw std::runtime_error("ply: property '" + p.name + "' is not float/double");
}

} // namespace

GaussianScene import_ply_3dgs(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("import_ply: cannot open " + path);

    std::string line;
    if (!std::getline(f, line) || line.substr(0, 3) != "ply")
        throw std::runtime_error("import_ply: not a PLY file: " + path);

    std::size_t vertex_count = 0;
    std::vector<PlyProperty> props;
    int row_size = 0;
    bool in_vertex_element = false;
    bool format_ok = false;

    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "binary_little_endian")
                throw std::runtime_error("import_ply: unsupported encoding '" + fmt + "'");
            format_ok = true;
        } else if (tok == "element") {
            std::string name;
            std::size_t count;
            ls >> name >> count;
            in_vertex_element = (name == "vertex");
            if (in_vertex_element) vertex_count = count;
            else if (count > 0)
                throw std::runtime_error("import_ply: unsupported non-vertex element '" + name + "'");
        } else if (tok == "property" && in_vertex_element) {
            std::string type, name;
            ls >> type;
            if (type == "list")
                throw std::runtime_error("import_ply: list properties unsupported");
            ls >> name;
            PlyProperty p;
            p.name = name;
            p.offset = row_size;
            if (type == "float" || type == "float32") { p.byte_size = 4; p.is_float = true; }
            else if (type == "double" || type == "float64") { p.byte_size = 8; p.is_double = true; }
            else if (type == "uchar" || type == "uint8" || type == "char" || type == "int8") p.byte_size = 1;
            else if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") p.byte_size = 2;
            else if (type == "int" || type == "uint" || type == "int32" || type == "uint32") p.byte_size = 4;
            else throw std::runtime_error("import_ply: unknown property type '" + type + "'");
            row_size += p.byte_size;
            props.push_back(p);
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!format_ok) throw std::runtime_error("import_ply: missing format line");

    auto find_prop = [&](const std::string& name) -> const PlyProperty& {
        for (const auto& p : props)
            if (p.name == name) return p;
        throw std::runtime_error("import_ply: missing property '" + name + "' in " + path);
    };

    const PlyProperty& px = find_prop("x");
    const PlyProperty& py = find_prop("y");
    const PlyProperty& pz = find_prop("z");
    const PlyProperty& pop = find_prop("opacity");
    const PlyProperty* psc[3] = {&find_prop("scale_0"), &find_prop("scale_1"), &find_prop("scale_2")};
    const PlyProperty* prot[4] = {&find_prop("rot_0"), &find_prop("rot_1"), &find_prop("rot_2"), &find_prop("rot_3")};
    const PlyProperty* pdc[3] = {&find_prop("f_dc_0"), &find_prop("f_dc_1"), &find_prop("f_dc_2")};

    GaussianScene scene;
    scene.meta.name = path;
    std::vector<char> row(row_size);
    for (std::size_t i = 0; i < vertex_count; ++i) {
        f.read(row.data(), row_size);
        if (!f) throw std::runtime_error("import_ply: truncated vertex data in " + path);
        GaussianPrimitive g;
        g.mu = {read_prop(row.data(), px), read_prop(row.data(), py), read_prop(row.data(), pz)};
        g.eta = 1.0 / (1.0 + std::exp(-read_prop(row.data(), pop)));
        g.s = {std::exp(read_prop(row.data(), *psc[0])),
               std::exp(read_prop(row.data(), *psc[1])),
               std::exp(read_prop(row.data(), *psc[2]))};
        g.q = {read_prop(row.data(), *prot[0]), read_prop(row.data(), *prot[1]),
               read_prop(row.data(), *prot[2]), read_prop(row.data(), *prot[3])};
        g.rgb = {std::clamp(0.5 + kSh0 * read_prop(row.data(), *pdc[0]), 0.0, 1.0),
                 std::clamp(0.5 + kSh0 * read_prop(row.data(), *pdc[1]), 0.0, 1.0),
                 std::clamp(0.5 + kSh0 * read_prop(row.data(), *pdc[2]), 0.0, 1.0)};
        for (double v : {g.mu.x, g.mu.y, g.mu.z, g.eta, g.s.x, g.s.y, g.s.z})
            require_finite(v, "ply vertex", i);
        g.enforce_invariants();
        scene.primitives.push_back(g);
    }
    return scene;
}

// ---- synthetic scenes ----

SceneKind scene_kind_from_string(const std::string& s) {
    if (s == "textured-wall") return SceneKind::TexturedWall;
    if (s == "box-room") return SceneKind::BoxRoom;
    if (s == "random-blobs") return SceneKind::RandomBlobs;
    throw std::runtime_error("unknown scene kind '" + s + "' (expected textured-wall, box-room or random-blobs)");
}

std::string to_string(SceneKind k) {
    switch (k) {
        case SceneKind::TexturedWall: return "textured-wall";
        case SceneKind::BoxRoom: return "box-room";
        case SceneKind::RandomBlobs: return "random-blobs";
    }
    return "?";
}

namespace {

CameraView look_at(const Vec3& center, const Vec3& target, const SyntheticSpec& spec) {
    CameraView cam;
    cam.width = spec.image_width;
    cam.height = spec.image_height;
    cam.fx = cam.fy = 0.9 * spec.image_width;
    cam.cx = spec.image_width / 2.0;
    cam.cy = spec.image_height / 2.0;
    cam.near = 0.05;
    cam.far = 100.0;

    const Vec3 fwd = (target - center).normalized();
    Vec3 up{0, 1, 0};
    if (std::abs(fwd.dot(up)) > 0.98) up = {1, 0, 0};
    const Vec3 right = up.cross(fwd).normalized();
    const Vec3 down = fwd.cross(right);
    Mat3 r;
    for (int c = 0; c < 3; ++c) {
        r(0, c) = right[c];
        r(1, c) = down[c];
        r(2, c) = fwd[c];
    }
    cam.rotation = Quat::from_matrix(r);
    cam.translation = (r * center) * -1.0;
    return cam;
}

double texture_value(double u, double v, int band, Rng& rng) {
    // procedural color pattern; rng adds per-gaussian speckle
    const double base = 0.5 + 0.35 * std::sin(6.0 * u + 1.3 * band) * std::cos(4.5 * v - 0.7 * band);
    return std::clamp(base + 0.1 * (rng.uniform() - 0.5), 0.05, 0.95);
}

} // namespace

SyntheticScene make_synthetic_scene(const SyntheticSpec& spec) {
    Rng rng(spec.seed ^ (std::uint64_t(spec.kind) << 32));
    SyntheticScene out;
    out.scene.meta.name = to_string(spec.kind);
    out.scene.meta.seed = spec.seed;

    auto add_gaussian = [&](const Vec3& mu, const Vec3& s, const Vec3& rgb, double eta) {
        GaussianPrimitive g;
        g.mu = mu;
        g.s = s;
        g.rgb = rgb;
        g.eta = eta;
        const Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
        g.q = Quat::from_axis_angle(axis.norm() > 0 ? axis : Vec3{1, 0, 0}, rng.uniform(0, 3.1));
        g.enforce_invariants();
        out.scene.primitives.push_back(g);
    };

    switch (spec.kind) {
        case SceneKind::TexturedWall: {
            // gaussians scattered over the z=0 plane, thin in z
            for (int i = 0; i < spec.primitive_count; ++i) {
                const double u = rng.uniform(-2.0, 2.0);
                const double v = rng.uniform(-1.2, 1.2);
                const Vec3 mu{u, v, rng.uniform(-0.02, 0.02)};
                const Vec3 s{rng.uniform(0.08, 0.18), rng.uniform(0.08, 0.18), 0.02};
                const Vec3 rgb{texture_value(u, v, 0, rng), texture_value(u, v, 1, rng),
                               texture_value(u, v, 2, rng)};
                add_gaussian(mu, s, rgb, rng.uniform(0.55, 0.95));
            }
            break;
        }
        case SceneKind::BoxRoom: {
            // gaussians on the interior faces of a box, camera inside
            const double half = 2.0;
            for (int i = 0; i < spec.primitive_count; ++i) {
                const int face = int(rng.below(5)); // all but the -z face behind the cameras
                const double a = rng.uniform(-half, half), b = rng.uniform(-half, half);
                Vec3 mu;
                switch (face) {
                    case 0: mu = {a, b, half}; break;
                    case 1: mu = {-half, a, b + half}; break;
                    case 2: mu = {half, a, b + half}; break;
                    case 3: mu = {a, -half, b + half}; break;
                    default: mu = {a, half, b + half}; break;
                }
                const Vec3 s{rng.uniform(0.1, 0.25), rng.uniform(0.1, 0.25), 0.03};
                const Vec3 rgb{texture_value(mu.x + mu.z, mu.y, face, rng),
                               texture_value(mu.y - mu.z, mu.x, face + 1, rng),
                               texture_value(mu.x, mu.y + mu.z, face + 2, rng)};
                add_gaussian(mu, s, rgb, rng.uniform(0.5, 0.9));
            }
            break;
        }
        case SceneKind::RandomBlobs: {
            for (int i = 0; i < spec.primitive_count; ++i) {
                Vec3 mu{rng.normal() * 0.7, rng.normal() * 0.5, rng.normal() * 0.5};
                const Vec3 s{rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2)};
                const Vec3 rgb{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
                add_gaussian(mu, s, rgb, rng.uniform(0.4, 0.9));
            }
            break;
        }
    }

    // training arc: centers sweep a narrow arc in front of the scene
    const Vec3 target{0, 0, spec.kind == SceneKind::BoxRoom ? 1.0 : 0.0};
    const double radius = spec.kind == SceneKind::BoxRoom ? 1.4 : 4.0;
    const double arc_half = 0.35; // radians
    out.training.kind = ViewSetKind::Training;
    for (int i = 0; i < spec.train_views; ++i) {
        const double t = spec.train_views > 1 ? double(i) / (spec.train_views - 1) : 0.5;
        const double ang = -arc_half + 2 * arc_half * t;
        const Vec3 center{radius * std::sin(ang), 0.15 * std::sin(2.5 * ang),
                          target.z - radius * std::cos(ang)};
        out.training.views.push_back(look_at(center, target, spec));
    }

    // extrapolated trajectory: continue the arc past its end and lift the
    // camera, keeping every center at least d_min away from all training ones
    out.extrapolated.kind = ViewSetKind::Extrapolated;
    const double d_min = spec.min_extrapolation_distance;
    for (int i = 0; i < spec.extrapolated_views; ++i) {
        const double t = spec.extrapolated_views > 1 ? double(i) / (spec.extrapolated_views - 1) : 0.0;
        double extra = arc_half + d_min / radius + 0.25 + 0.4 * t;
        Vec3 center{radius * std::sin(extra), 0.3 + 0.25 * t,
                    target.z - radius * std::cos(extra)};
        // nudge outward until the distance floor holds
        for (int tries = 0; tries < 64; ++tries) {
            bool ok = true;
            for (const auto& v : out.training.views)
                if ((center - v.center()).norm() < d_min) ok = false;
            if (ok) break;
            extra += 0.05;
            center = {radius * std::sin(extra), center.y, target.z - radius * std::cos(extra)};
        }
        out.extrapolated.views.push_back(look_at(center, target, spec));
    }
    return out;
}

// ---- corruption ----

CorruptResult corrupt_scene(const GaussianScene& scene, const ViewSet& training,
                            const ViewSet& extrapolated, const CorruptSpec& spec) {
    CorruptResult result;
    result.scene = scene;
    result.requested = spec.floater_count;
    if (spec.floater_count == 0) return result;
    if (extrapolated.views.empty())
        throw std::runtime_error("corrupt_scene: need at least one extrapolated view");

    Rng rng(spec.seed ^ 0xf10a7e55ULL);

    auto in_frustum = [](const CameraView& v, const Vec3& p, double margin_px) {
        const Vec3 c = v.to_camera(p);
        if (c.z < v.near) return false;
        const double u = v.fx * c.x / c.z + v.cx;
        const double w = v.fy * c.y / c.z + v.cy;
        return u >= -margin_px && u < v.width + margin_px && w >= -margin_px &&
               w < v.height + margin_px;
    };

    for (int n = 0; n < spec.floater_count; ++n) {
        bool placed = false;
        for (int attempt = 0; attempt < spec.max_retries_per_floater && !placed; ++attempt) {
            const auto& ev = extrapolated.views[rng.below(extrapolated.views.size())];
            // unproject a pixel in the central region at a mid-range depth
            const double u = rng.uniform(0.2, 0.8) * ev.width;
            const double w = rng.uniform(0.2, 0.8) * ev.height;
            // shallow depths sit far off-axis from the training arc; small
            // scales keep one footprint well under 1% of the image
            const double z = rng.uniform(0.3, 0.55) * 4.0;
            const Vec3 cam_pt{(u - ev.cx) / ev.fx * z, (w - ev.cy) / ev.fy * z, z};
            const Vec3 world = ev.rotation.to_matrix().transposed() * (cam_pt - ev.translation);
            const Vec3 scale{rng.uniform(0.012, 0.025), rng.uniform(0.012, 0.025),
                             rng.uniform(0.012, 0.025)};
            const double max_scale = std::max({scale.x, scale.y, scale.z});

            // the entire splat footprint (renderer cutoff ~6.8 sigma) must stay
            // outside every training frustum so floaters gather no information
            bool hidden_from_training = true;
            for (const auto& tv : training.views) {
                const double z = tv.to_camera(world).z;
                if (z < tv.near) continue;
                const double radius_px = 6.8 * max_scale * std::max(tv.fx, tv.fy) / z;
                if (in_frustum(tv, world, 8.0 + radius_px)) {
                    hidden_from_training = false;
                    break;
                }
            }
            if (!hidden_from_training) continue;

            GaussianPrimitive g;
            g.mu = world;
            g.s = scale;
            g.eta = rng.uniform(spec.opacity_lo, spec.opacity_hi);
            g.rgb = {rng.uniform(0.6, 1.0), rng.uniform(0.0, 0.4), rng.uniform(0.4, 1.0)};
            const Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
            g.q = Quat::from_axis_angle(axis.norm() > 0 ? axis : Vec3{1, 0, 0}, rng.uniform(0, 3.1));
            g.enforce_invariants();
            result.floater_indices.push_back(result.scene.primitives.size());
            result.scene.primitives.push_back(g);
            placed = true;
        }
        if (!placed) break;
    }
    result.placed = int(result.floater_indices.size());
    if (result.placed < result.requested) {
        std::ostringstream os;
        os << "corrupt_scene: placed only " << result.placed << " of " << result.requested
           << " floaters within retry budget";
        throw std::runtime_error(os.str());
    }
    return result;
}

} // namespace freefix
