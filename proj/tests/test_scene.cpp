#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "freefix/scene.hpp"

using namespace freefix;
namespace fs = std::filesystem;

namespace {

// pixel position of a world point in a view, plus whether it is in front
struct Projection {
    double px, py, z;
    bool in_image(const CameraView& v) const {
        return z > v.near && z < v.far && px >= 0 && px < v.width && py >= 0 && py < v.height;
    }
};

Projection project_point(const CameraView& v, const Vec3& p) {
    const Vec3 c = v.to_camera(p);
    return {v.fx * c.x / c.z + v.cx, v.fy * c.y / c.z + v.cy, c.z};
}

} // namespace

TEST_CASE("primitive invariants clamp and renormalize") {
    GaussianPrimitive g;
    g.q = {2, 0, 0, 0};
    g.s = {-1, 0, 2};
    g.eta = 1.7;
    g.rgb = {-0.2, 0.5, 3.0};
    g.enforce_invariants();
    CHECK(g.q.norm() == doctest::Approx(1.0));
    CHECK(g.s.x > 0);
    CHECK(g.s.y > 0);
    CHECK(g.eta == 1.0);
    CHECK(g.rgb.x == 0.0);
    CHECK(g.rgb.z == 1.0);
}

TEST_CASE("scene json round trip preserves parameters") {
    const auto path = (fs::temp_directory_path() / "freefix_scene.json").string();
    GaussianScene scene;
    scene.meta.name = "roundtrip";
    scene.meta.seed = 42;
    for (int i = 0; i < 5; ++i) {
        GaussianPrimitive g;
        g.mu = {0.1 * i, -0.2 * i, 1.0 + i};
        g.q = Quat::from_axis_angle({0, 1, 0}, 0.3 * i);
        g.s = {0.1, 0.2, 0.3};
        g.eta = 0.1 + 0.15 * i;
        g.rgb = {0.2, 0.4, 0.6};
        scene.primitives.push_back(g);
    }
    save_scene(scene, path);
    const GaussianScene back = load_scene(path);
    REQUIRE(back.size() == scene.size());
    CHECK(back.meta.name == "roundtrip");
    CHECK(back.meta.seed == 42);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        CHECK(back.primitives[i].mu.x == doctest::Approx(scene.primitives[i].mu.x));
        CHECK(back.primitives[i].eta == doctest::Approx(scene.primitives[i].eta));
        CHECK(back.primitives[i].rgb.z == doctest::Approx(scene.primitives[i].rgb.z));
    }
    fs::remove(path);
}

TEST_CASE("view set json round trip") {
    const auto path = (fs::temp_directory_path() / "freefix_views.json").string();
    ViewSet set;
    set.kind = ViewSetKind::Extrapolated;
    CameraView v;
    v.fx = v.fy = 30;
    v.cx = 24;
    v.cy = 16;
    v.width = 48;
    v.height = 32;
    v.rotation = Quat::from_axis_angle({0, 0, 1}, 0.1);
    v.translation = {0.5, -0.5, 4.0};
    set.views.push_back(v);
    save_views(set, path);
    const ViewSet back = load_views(path);
    REQUIRE(back.views.size() == 1);
    CHECK(back.kind == ViewSetKind::Extrapolated);
    CHECK(back.views[0].fx == doctest::Approx(30));
    CHECK(back.views[0].translation.z == doctest::Approx(4.0));
    fs::remove(path);
}

TEST_CASE("camera validation rejects nonsense") {
    CameraView v;
    CHECK_THROWS(v.validate()); // zero dimensions
    v.fx = v.fy = 30;
    v.cx = v.cy = 16;
    v.width = v.height = 32;
    v.near = 10;
    v.far = 1;
    CHECK_THROWS(v.validate());
}

TEST_CASE("synthetic scenes honor their spec") {
    for (SceneKind kind : {SceneKind::TexturedWall, SceneKind::BoxRoom, SceneKind::RandomBlobs}) {
        SyntheticSpec spec;
        spec.kind = kind;
        spec.seed = 21;
        spec.primitive_count = 64;
        spec.train_views = 5;
        spec.extrapolated_views = 3;
        const SyntheticScene s = make_synthetic_scene(spec);
        CHECK(s.scene.size() == 64);
        CHECK(s.training.views.size() == 5);
        CHECK(s.extrapolated.views.size() == 3);
        CHECK(s.training.kind == ViewSetKind::Training);
        CHECK(s.extrapolated.kind == ViewSetKind::Extrapolated);
        for (const auto& g : s.scene.primitives) {
            CHECK(g.eta >= 0);
            CHECK(g.eta <= 1);
            CHECK(g.s.x > 0);
        }
        // every extrapolated view keeps its distance from all training centers
        for (const auto& e : s.extrapolated.views)
            for (const auto& t : s.training.views)
                CHECK((e.center() - t.center()).norm() >=
                      spec.min_extrapolation_distance - 1e-9);
    }
}

TEST_CASE("synthetic generation is deterministic per seed") {
    SyntheticSpec spec;
    spec.seed = 77;
    const SyntheticScene a = make_synthetic_scene(spec);
    const SyntheticScene b = make_synthetic_scene(spec);
    REQUIRE(a.scene.size() == b.scene.size());
    for (std::size_t i = 0; i < a.scene.size(); ++i) {
        CHECK(a.scene.primitives[i].mu.x == b.scene.primitives[i].mu.x);
        CHECK(a.scene.primitives[i].rgb.y == b.scene.primitives[i].rgb.y);
    }
    spec.seed = 78;
    const SyntheticScene c = make_synthetic_scene(spec);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.scene.size() && !any_diff; ++i)
        any_diff = a.scene.primitives[i].mu.x != c.scene.primitives[i].mu.x;
    CHECK(any_diff);
}

TEST_CASE("corrupt_scene plants floaters hidden from training views") {
    SyntheticSpec sspec;
    sspec.seed = 13;
    const SyntheticScene s = make_synthetic_scene(sspec);
    CorruptSpec cspec;
    cspec.floater_count = 6;
    cspec.seed = 99;
    const CorruptResult result = corrupt_scene(s.scene, s.training, s.extrapolated, cspec);

    CHECK(result.requested == 6);
    CHECK(result.placed == 6);
    REQUIRE(result.scene.size() == s.scene.size() + 6);
    REQUIRE(result.floater_indices.size() == 6);

    for (std::size_t idx : result.floater_indices) {
        const auto& g = result.scene.primitives[idx];
        CHECK(g.eta >= cspec.opacity_lo);
        CHECK(g.eta <= cspec.opacity_hi);
        // invisible to every training camera
        for (const auto& t : s.training.views)
            CHECK_FALSE(project_point(t, g.mu).in_image(t));
        // visible in at least one extrapolated camera
        bool seen = false;
        for (const auto& e : s.extrapolated.views)
            seen = seen || project_point(e, g.mu).in_image(e);
        CHECK(seen);
    }

    // input untouched, determinism
    CHECK(s.scene.size() == sspec.primitive_count);
    const CorruptResult again = corrupt_scene(s.scene, s.training, s.extrapolated, cspec);
    for (std::size_t i = 0; i < result.scene.size(); ++i)
        CHECK(again.scene.primitives[i].mu.x == result.scene.primitives[i].mu.x);
}

TEST_CASE("3dgs ply import applies the reference activations") {
    const auto path = (fs::temp_directory_path() / "freefix_test.ply").string();
    const char* props[] = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                           "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"};
    {
        std::ofstream f(path, std::ios::binary);
        f << "ply\nformat binary_little_endian 1.0\nelement vertex 2\n";
        for (const char* p : props) f << "property float " << p << "\n";
        f << "end_header\n";
        const float rows[2][14] = {
            {0.5f, -1.0f, 2.0f, 0.3f, -0.2f, 0.0f, 0.8f, -1.0f, 0.0f, 0.5f, 1, 0, 0, 0},
            {1.5f, 0.25f, -3.0f, 3.0f, 0.0f, -3.0f, -2.0f, -0.5f, -0.5f, -0.5f, 0, 1, 0, 0},
        };
        f.write(reinterpret_cast<const char*>(rows), sizeof(rows));
    }
    const GaussianScene scene = import_ply_3dgs(path);
    REQUIRE(scene.size() == 2);
    const auto& g = scene.primitives[0];
    CHECK(g.mu.x == doctest::Approx(0.5));
    CHECK(g.mu.y == doctest::Approx(-1.0));
    CHECK(g.eta == doctest::Approx(1.0 / (1.0 + std::exp(-0.8))));
    CHECK(g.s.x == doctest::Approx(std::exp(-1.0)));
    CHECK(g.s.z == doctest::Approx(std::exp(0.5)));
    CHECK(g.rgb.x == doctest::Approx(0.5 + 0.28209479177387814 * 0.3));
    CHECK(g.rgb.y == doctest::Approx(0.5 - 0.28209479177387814 * 0.2));
    const auto& h = scene.primitives[1];
    CHECK(h.eta == doctest::Approx(1.0 / (1.0 + std::exp(2.0))));
    CHECK(h.rgb.x == 1.0); // clamped
    CHECK(h.rgb.z == 0.0);
    CHECK(h.q.x == doctest::Approx(1.0)); // rot_1 is the quaternion x
    fs::remove(path);
}

TEST_CASE("ply import rejects ascii and missing properties") {
    const auto path = (fs::temp_directory_path() / "freefix_bad.ply").string();
    std::ofstream(path) << "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n";
    CHECK_THROWS(import_ply_3dgs(path));
    std::ofstream(path) << "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
                           "property float x\nend_header\n";
    CHECK_THROWS(import_ply_3dgs(path));
    fs::remove(path);
}

TEST_CASE("scene kind names round trip") {
    for (SceneKind kind : {SceneKind::TexturedWall, SceneKind::BoxRoom, SceneKind::RandomBlobs})
        CHECK(scene_kind_from_string(to_string(kind)) == kind);
    CHECK_THROWS(scene_kind_from_string("nope"));
}
