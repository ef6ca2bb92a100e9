#pragma once

// Gaussian scene and camera data model plus file I/O (scene/camera JSON,
// 3DGS binary PLY import) and the synthetic scene generators.
//
// Camera convention: right-handed, z-forward. world->camera is
// p_cam = R * p_world + t; a point projects to pixel
// (fx * x/z + cx, fy * y/z + cy) with z > 0 in front of the camera.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "freefix/image.hpp"
#include "freefix/math3.hpp"

namespace freefix {

struct GaussianPrimitive {
    Vec3 mu;                      // world position
    Quat q;                       // unit orientation quaternion
    Vec3 s{1, 1, 1};              // per-axis scale, > 0
    double eta = 1.0;             // opacity in [0,1]
    Vec3 rgb{1, 1, 1};            // color in [0,1]^3

    // renormalize q, clamp s/eta/rgb into their domains
    void enforce_invariants();
};

struct SceneMeta {
    std::string name;
    double unit_scale = 1.0;
    std::uint64_t seed = 0;
};

struct GaussianScene {
    std::vector<GaussianPrimitive> primitives;
    SceneMeta meta;

    std::size_t size() const { return primitives.size(); }
};

struct CameraView {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
    Quat rotation;        // world -> camera
    Vec3 translation;
    double near = 0.01, far = 1000.0;

    void validate() const; // throws on invariant violation

    Vec3 to_camera(const Vec3& p_world) const {
        return rotation.to_matrix() * p_world + translation;
    }
    Vec3 center() const { // camera position in world space
        return rotation.to_matrix().transposed() * (translation * -1.0);
    }
};

enum class ViewSetKind { Training, Extrapolated, Fixed };

struct ViewSet {
    std::vector<CameraView> views;
    std::optional<std::vector<AttributeImage>> images;
    ViewSetKind kind = ViewSetKind::Training;
};

// ---- JSON scene/camera I/O ----

GaussianScene load_scene(const std::string& path);
void save_scene(const GaussianScene& scene, const std::string& path);

ViewSet load_views(const std::string& path);
void save_views(const ViewSet& set, const std::string& path);

// ---- 3DGS PLY import ----
// binary little-endian, properties x,y,z, opacity, scale_0..2, rot_0..3,
// f_dc_0..2. Activations per the reference convention: eta = sigmoid(opacity),
// s = exp(scale), rgb = clamp(0.5 + SH0 * f_dc).
GaussianScene import_ply_3dgs(const std::string& path);

// ---- synthetic scenes ----

enum class SceneKind { TexturedWall, BoxRoom, RandomBlobs };

SceneKind scene_kind_from_string(const std::string& s);
std::string to_string(SceneKind k);

struct SyntheticSpec {
    SceneKind kind = SceneKind::TexturedWall;
    std::uint64_t seed = 0;
    int primitive_count = 200;
    int train_views = 8;
    int extrapolated_views = 4;
    int image_width = 48;
    int image_height = 32;
    double min_extrapolation_distance = 0.6; // d_min from every training center
};

struct SyntheticScene {
    GaussianScene scene;
    ViewSet training;
    ViewSet extrapolated;
};

SyntheticScene make_synthetic_scene(const SyntheticSpec& spec);

// ---- controlled corruption ----

struct CorruptSpec {
    int floater_count = 5;
    double opacity_lo = 0.6;
    double opacity_hi = 0.95;
    std::uint64_t seed = 0;
    int max_retries_per_floater = 200;
};

struct CorruptResult {
    GaussianScene scene;               // original + appended floaters
    std::vector<std::size_t> floater_indices;
    int requested = 0;
    int placed = 0;
};

// Appends floaters that project inside at least one extrapolated view but lie
// outside the frustum of every training view. The input scene is untouched.
CorruptResult corrupt_scene(const GaussianScene& scene, const ViewSet& training,
                            const ViewSet& extrapolated, const CorruptSpec& spec);

} // namespace freefix
