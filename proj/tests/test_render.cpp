#include <doctest.h>

#include <cmath>
#include <vector>

#include "freefix/render.hpp"
#include "freefix/rng.hpp"
#include "freefix/scene.hpp"

using namespace freefix;

namespace {

CameraView test_camera(int w = 32, int h = 32) {
    CameraView cam;
    cam.width = w;
    cam.height = h;
    cam.fx = cam.fy = 30.0;
    cam.cx = w / 2.0 + 0.5;
    cam.cy = h / 2.0 + 0.5;
    cam.near = 0.1;
    cam.far = 100.0;
    return cam;
}

// random scene in front of the camera, pairwise depth gaps enforced so FD
// perturbations cannot reorder the compositing
GaussianScene gradient_check_scene(std::uint64_t seed, int count = 10) {
    Rng rng(seed);
    GaussianScene scene;
    for (int i = 0; i < count; ++i) {
        GaussianPrimitive g;
        const double z = 2.5 + 0.2 * i + rng.uniform(0.0, 0.1);
        g.mu = {rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), z};
        g.s = {rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2)};
        g.eta = rng.uniform(0.2, 0.8);
        g.rgb = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
        const Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
        g.q = Quat::from_axis_angle(axis, rng.uniform(0.0, 3.0));
        g.enforce_invariants();
        scene.primitives.push_back(g);
    }
    return scene;
}

AttributeImage random_upstream(const CameraView& cam, std::uint64_t seed) {
    Rng rng(seed);
    AttributeImage u(cam.width, cam.height, 3);
    for (std::size_t i = 0; i < u.size(); ++i)
        u.data()[i] = float(rng.uniform(-1.0, 1.0));
    return u;
}

// finite-difference oracle over every parameter of every primitive
struct FdReport {
    double max_rel_err = 0;
    double grad_max = 0;
};

FdReport fd_check(const CameraView& cam, GaussianScene scene, const AttributeImage& u) {
    const double h = 1e-4;
    const ParamGradients analytic = backprop(cam, scene, u);
    REQUIRE(analytic.all_finite());

    std::vector<std::pair<double, double>> pairs; // (analytic, fd)
    auto probe = [&](double* slot, double a_grad) {
        const double orig = *slot;
        *slot = orig + h;
        const double lp = weighted_render_sum(cam, scene, u);
        *slot = orig - h;
        const double lm = weighted_render_sum(cam, scene, u);
        *slot = orig;
        pairs.emplace_back(a_grad, (lp - lm) / (2 * h));
    };

    for (std::size_t i = 0; i < scene.size(); ++i) {
        auto& g = scene.primitives[i];
        probe(&g.mu.x, analytic.mu[i][0]);
        probe(&g.mu.y, analytic.mu[i][1]);
        probe(&g.mu.z, analytic.mu[i][2]);
        probe(&g.q.w, analytic.q[i][0]);
        probe(&g.q.x, analytic.q[i][1]);
        probe(&g.q.y, analytic.q[i][2]);
        probe(&g.q.z, analytic.q[i][3]);
        probe(&g.s.x, analytic.s[i][0]);
        probe(&g.s.y, analytic.s[i][1]);
        probe(&g.s.z, analytic.s[i][2]);
        probe(&g.eta, analytic.eta[i]);
        probe(&g.rgb.x, analytic.rgb[i][0]);
        probe(&g.rgb.y, analytic.rgb[i][1]);
        probe(&g.rgb.z, analytic.rgb[i][2]);
    }

    // relative error of the full gradient: max abs deviation over the
    // gradient's own scale (per-partial ratios amplify FD truncation noise
    // on near-zero partials)
    FdReport rep;
    for (const auto& [a, f] : pairs) rep.grad_max = std::max(rep.grad_max, std::abs(f));
    for (const auto& [a, f] : pairs)
        rep.max_rel_err =
            std::max(rep.max_rel_err, std::abs(a - f) / std::max(rep.grad_max, 1e-12));
    return rep;
}

} // namespace

TEST_CASE("project culls Gaussians behind the camera") {
    auto cam = test_camera();
    GaussianScene scene;
    GaussianPrimitive g;
    g.mu = {0, 0, -2};
    g.s = {0.1, 0.1, 0.1};
    scene.primitives.push_back(g);
    CHECK(project(cam, scene).empty());
}

TEST_CASE("Gaussian on the optical axis projects to the principal point") {
    auto cam = test_camera();
    GaussianScene scene;
    GaussianPrimitive g;
    g.mu = {0, 0, 3.0};
    g.s = {0.1, 0.1, 0.1};
    scene.primitives.push_back(g);
    auto frags = project(cam, scene);
    REQUIRE(frags.size() == 1);
    CHECK(frags[0].mean_x == doctest::Approx(cam.cx).epsilon(1e-12));
    CHECK(frags[0].mean_y == doctest::Approx(cam.cy).epsilon(1e-12));
    CHECK(frags[0].depth == doctest::Approx(3.0));
}

TEST_CASE("isotropic Gaussian matches the closed-form pinhole covariance") {
    auto cam = test_camera();
    const double s = 0.15, z = 2.0;
    GaussianScene scene;
    GaussianPrimitive g;
    g.mu = {0, 0, z};
    g.s = {s, s, s};
    scene.primitives.push_back(g);
    auto frags = project(cam, scene);
    REQUIRE(frags.size() == 1);
    const double expect_x = std::pow(cam.fx * s / z, 2) + kAntiAliasFloor;
    const double expect_y = std::pow(cam.fy * s / z, 2) + kAntiAliasFloor;
    CHECK(frags[0].cov_a == doctest::Approx(expect_x).epsilon(1e-9));
    CHECK(frags[0].cov_c == doctest::Approx(expect_y).epsilon(1e-9));
    CHECK(std::abs(frags[0].cov_b) < 1e-9);
}

TEST_CASE("empty scene renders zeros") {
    auto cam = test_camera();
    GaussianScene scene;
    auto img = render_color(cam, scene);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(img.data()[i] == 0.0f);
    auto op = render_opacity(cam, scene);
    for (std::size_t i = 0; i < op.size(); ++i) CHECK(op.data()[i] == 0.0f);
}

TEST_CASE("peak pixel of a single opaque Gaussian") {
    auto cam = test_camera();
    GaussianScene scene;
    GaussianPrimitive g;
    g.mu = {0, 0, 3.0};
    g.s = {0.3, 0.3, 0.3};
    g.eta = 1.0;
    scene.primitives.push_back(g);
    auto img = render_attribute(cam, scene, {1.0}, 1);
    // principal point sits on a pixel center; eta=1 is clamped to kAlphaMax
    const int px = int(cam.cx - 0.5), py = int(cam.cy - 0.5);
    CHECK(img.at(px, py, 0) == doctest::Approx(kAlphaMax).epsilon(1e-6));
}

TEST_CASE("two coincident fragments composite front to back") {
    auto cam = test_camera();
    GaussianScene scene;
    GaussianPrimitive front;
    front.mu = {0, 0, 2.0};
    front.s = {0.5, 0.5, 0.5};
    front.eta = 0.6;
    front.rgb = {1, 0, 0};
    GaussianPrimitive back = front;
    back.mu = {0, 0, 3.0};
    back.eta = 0.5;
    back.rgb = {0, 1, 0};
    scene.primitives = {back, front}; // storage order deliberately reversed
    auto img = render_color(cam, scene);
    const int px = int(cam.cx - 0.5), py = int(cam.cy - 0.5);
    CHECK(img.at(px, py, 0) == doctest::Approx(0.6).epsilon(1e-5));
    CHECK(img.at(px, py, 1) == doctest::Approx(0.4 * 0.5).epsilon(1e-5));
    CHECK(img.at(px, py, 2) == doctest::Approx(0.0));
}

TEST_CASE("depth rendering equals depth times accumulated alpha") {
    auto cam = test_camera();
    GaussianScene scene;
    GaussianPrimitive g;
    g.mu = {0, 0, 2.0};
    g.s = {0.2, 0.2, 0.2};
    g.eta = 0.7;
    scene.primitives.push_back(g);
    auto depth = render_depth(cam, scene);
    auto opacity = render_opacity(cam, scene);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            CHECK(depth.at(x, y, 0) ==
                  doctest::Approx(2.0 * opacity.at(x, y, 0)).epsilon(1e-5));
}

TEST_CASE("rendered opacity stays in [0,1] and color in range") {
    auto cam = test_camera();
    auto scene = gradient_check_scene(99, 30);
    auto opacity = render_opacity(cam, scene);
    auto color = render_color(cam, scene);
    for (std::size_t i = 0; i < opacity.size(); ++i) {
        CHECK(opacity.data()[i] >= 0.0f);
        CHECK(opacity.data()[i] <= 1.0f);
    }
    for (std::size_t i = 0; i < color.size(); ++i) {
        CHECK(color.data()[i] >= 0.0f);
        CHECK(color.data()[i] <= 1.0f);
    }
}

TEST_CASE("rendering is invariant to primitive storage order") {
    auto cam = test_camera();
    auto scene = gradient_check_scene(7, 12);
    auto ref = render_color(cam, scene);

    GaussianScene shuffled = scene;
    Rng rng(123);
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled.primitives[i - 1], shuffled.primitives[rng.below(i)]);
    auto img = render_color(cam, shuffled);
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(img.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-6));
}

TEST_CASE("zero upstream gives zero gradients") {
    auto cam = test_camera();
    auto scene = gradient_check_scene(3);
    AttributeImage u(cam.width, cam.height, 3, 0.0f);
    auto g = backprop(cam, scene, u);
    for (std::size_t i = 0; i < scene.size(); ++i) {
        for (double v : g.mu[i]) CHECK(v == 0.0);
        for (double v : g.rgb[i]) CHECK(v == 0.0);
        CHECK(g.eta[i] == 0.0);
    }
}

TEST_CASE("Gaussian without pixel coverage gets zero rgb gradient") {
    auto cam = test_camera();
    GaussianScene scene = gradient_check_scene(4, 3);
    GaussianPrimitive far_off;
    far_off.mu = {50.0, 0, 3.0}; // projects far outside the image
    far_off.s = {0.05, 0.05, 0.05};
    scene.primitives.push_back(far_off);
    auto u = random_upstream(cam, 5);
    auto g = backprop(cam, scene, u);
    for (double v : g.rgb.back()) CHECK(v == 0.0);
    for (double v : g.mu.back()) CHECK(v == 0.0);
}

TEST_CASE("analytic gradients match finite differences over many seeds") {
    auto cam = test_camera();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto scene = gradient_check_scene(seed);
        auto u = random_upstream(cam, seed * 31 + 1);
        auto rep = fd_check(cam, scene, u);
        INFO("seed ", seed, " max_rel_err ", rep.max_rel_err);
        CHECK(rep.max_rel_err < 1e-4);
    }
}

TEST_CASE("squared Jacobian matches the finite-difference Jacobian") {
    auto cam = test_camera(24, 24);
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
        auto scene = gradient_check_scene(seed, 4);
        const ParamMask mask = ParamMask::full();
        auto fisher = per_gaussian_squared_jacobian(cam, scene, mask);

        // FD Jacobian: perturb one parameter, difference the whole image
        const double h = 1e-4;
        for (std::size_t gi = 0; gi < scene.size(); ++gi) {
            double fd_sum = 0;
            auto probe = [&](double* slot) {
                const double orig = *slot;
                *slot = orig + h;
                auto ip = render_color(cam, scene);
                *slot = orig - h;
                auto im = render_color(cam, scene);
                *slot = orig;
                for (std::size_t k = 0; k < ip.size(); ++k) {
                    const double d = (double(ip.data()[k]) - double(im.data()[k])) / (2 * h);
                    fd_sum += d * d;
                }
            };
            auto& g = scene.primitives[gi];
            for (double* p : {&g.mu.x, &g.mu.y, &g.mu.z, &g.q.w, &g.q.x, &g.q.y, &g.q.z,
                              &g.s.x, &g.s.y, &g.s.z, &g.eta, &g.rgb.x, &g.rgb.y, &g.rgb.z})
                probe(p);
            INFO("seed ", seed, " gaussian ", gi);
            CHECK(fisher[gi] == doctest::Approx(fd_sum).epsilon(1e-3));
        }
    }
}

TEST_CASE("squared Jacobian is zero outside the frustum and grows with resolution") {
    auto cam_small = test_camera(16, 16);
    auto cam_big = test_camera(32, 32);
    cam_big.fx = cam_big.fy = 2 * cam_small.fx;
    cam_big.cx = 2 * cam_small.cx;
    cam_big.cy = 2 * cam_small.cy;

    auto scene = gradient_check_scene(21, 5);
    GaussianPrimitive behind;
    behind.mu = {0, 0, -3};
    scene.primitives.push_back(behind);

    const ParamMask mask = ParamMask::full();
    auto f_small = per_gaussian_squared_jacobian(cam_small, scene, mask);
    auto f_big = per_gaussian_squared_jacobian(cam_big, scene, mask);
    CHECK(f_small.back() == 0.0);
    for (std::size_t i = 0; i < scene.size(); ++i)
        CHECK(f_big[i] >= f_small[i] * (1 - 1e-9));
}

TEST_CASE("empty parameter mask is rejected") {
    auto cam = test_camera();
    auto scene = gradient_check_scene(1, 2);
    ParamMask none{false, false, false, false, false};
    CHECK_THROWS(per_gaussian_squared_jacobian(cam, scene, none));
}
