#pragma once

// Forward splat rendering of color/depth/opacity/arbitrary attributes and
// exact analytic gradients of rendered pixels w.r.t. Gaussian parameters.
//
// Pixels are evaluated at (ix + 0.5, iy + 0.5). Compositing is front-to-back
// over depth-sorted fragments with transmittance cutoff kTransmittanceMin.

#include <array>
#include <vector>

#include "freefix/image.hpp"
#include "freefix/scene.hpp"

namespace freefix {

// projected-covariance stabilization floor, px^2
inline constexpr double kAntiAliasFloor = 0.3;
// per-fragment alpha clamp
inline constexpr double kAlphaMax = 0.999;
// front-to-back termination threshold
inline constexpr double kTransmittanceMin = 1e-4;
// Gaussian falloff below this weight is dropped. Chosen far below gradient
// test tolerances so the truncation boundary cannot perturb finite
// differences.
inline constexpr double kWeightCutoff = 1e-10;

struct SplatFragment {
    int gaussian_index = 0;
    double alpha = 0;        // peak compositing opacity (eta, clamped)
    double depth = 0;        // view-space z
    double mean_x = 0, mean_y = 0;            // projected 2D mean, pixels
    double cov_a = 0, cov_b = 0, cov_c = 0;   // 2D covariance [[a,b],[b,c]], px^2
    double inv_a = 0, inv_b = 0, inv_c = 0;   // its inverse
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;       // pixel bounding box (half-open)
};

struct ParamGradients {
    // one entry per primitive, zero for culled ones
    std::vector<std::array<double, 3>> mu;
    std::vector<std::array<double, 4>> q;
    std::vector<std::array<double, 3>> s;
    std::vector<double> eta;
    std::vector<std::array<double, 3>> rgb;

    explicit ParamGradients(std::size_t n = 0)
        : mu(n, {0, 0, 0}), q(n, {0, 0, 0, 0}), s(n, {0, 0, 0}), eta(n, 0.0),
          rgb(n, {0, 0, 0}) {}

    bool all_finite() const;
};

struct ParamMask {
    bool mu = true, q = false, s = false, eta = true, rgb = true;

    bool any() const { return mu || q || s || eta || rgb; }
    static ParamMask full() { return {true, true, true, true, true}; }
};

// Frustum-culled, depth-sorted fragments (ties broken by primitive index).
std::vector<SplatFragment> project(const CameraView& view, const GaussianScene& scene);

// General attribute rendering: per pixel sum_i alpha_i v_i prod_{j<i}(1-alpha_j).
// `values` is row-major per-Gaussian, `channels` wide.
AttributeImage render_attribute(const CameraView& view, const GaussianScene& scene,
                                const std::vector<double>& values, int channels);

AttributeImage render_color(const CameraView& view, const GaussianScene& scene);
AttributeImage render_depth(const CameraView& view, const GaussianScene& scene);
AttributeImage render_opacity(const CameraView& view, const GaussianScene& scene);

// Gradients of sum_pixels <upstream, render_color> w.r.t. all parameters.
ParamGradients backprop(const CameraView& view, const GaussianScene& scene,
                        const AttributeImage& upstream);

// sum_pixels <upstream, render_color>, double-precision forward path. The
// finite-difference harness differentiates this.
double weighted_render_sum(const CameraView& view, const GaussianScene& scene,
                           const AttributeImage& upstream);

// Per-Gaussian sum over pixels/channels/masked params of squared partials of
// the color rendering; the diagonal Fisher contribution of one view.
std::vector<double> per_gaussian_squared_jacobian(const CameraView& view,
                                                  const GaussianScene& scene,
                                                  const ParamMask& mask);

} // namespace freefix
