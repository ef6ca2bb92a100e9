#pragma once

// 3D refinement of a Gaussian scene against training photos plus fixed
// (generated) images: affine-corrected photometric loss, Adam-style updates
// per parameter group and the 3/5/8 view-sampling cadence.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "freefix/image.hpp"
#include "freefix/math3.hpp"
#include "freefix/render.hpp"
#include "freefix/rng.hpp"
#include "freefix/scene.hpp"

namespace freefix {

// per-view color correction applied to the render before comparing against a
// generated target, so the scene does not absorb the generator's color bias
struct AffineColor {
    Mat3 linear; // defaults to identity
    Vec3 bias{0, 0, 0};

    bool all_finite() const;
};

AttributeImage affine_apply(const AttributeImage& image, const AffineColor& aff);

struct RefineConfig {
    int steps = 300;            // iterations per pipeline stage
    double lambda_s = 0.2;      // SSIM share of the photometric loss
    double lr_mu = 2e-4;        // multiplied by the scene's bounding extent
    double lr_q = 1e-3;
    double lr_s = 5e-3;
    double lr_eta = 5e-2;
    double lr_rgb = 2.5e-2;
    double lr_affine = 1e-3;
    double w_g = 0.5;           // loss weight of generated (fixed) views
    double p_f = 0.25;          // sampling mass of previously fixed views
    std::uint64_t seed = 0;
    ParamMask mask;             // which scene parameter groups move
    bool optimize_affine = true; // off: generated views compared without color correction

    void validate() const;
};

struct FixedViewEntry {
    CameraView view;
    AttributeImage image;
    AffineColor affine;
};

// append-only across the pipeline; one affine per entry for its lifetime
struct FixedViewSet {
    std::vector<FixedViewEntry> entries;
};

// (1 - lambda_s) * mean|pred - target| + lambda_s * (1 - SSIM(pred, target)),
// with the exact gradient w.r.t. pred written into grad_pred when non-null
double photometric_loss(const AttributeImage& pred, const AttributeImage& target,
                        double lambda_s, AttributeImage* grad_pred);

enum class ViewRole { Train, Fixed, Current };

const char* to_string(ViewRole role);

struct ChosenView {
    ViewRole role = ViewRole::Train;
    int index = 0; // into train.views or fixed.entries; the current entry for Current
};

// Cadence over the stage, thirds split at floor(total/3) and floor(2*total/3):
// the current view every 3rd step in the first third, every 5th in the second,
// every 8th in the last. Other steps draw fixed views with mass p_f (current
// excluded, mass folded into train when no other fixed view exists) and
// training views with the rest.
ChosenView sample_view(int step, int total, const ViewSet& train,
                       const FixedViewSet& fixed, int current_index, double p_f,
                       Rng& rng);

struct RefineStepReport {
    int step = 0;
    ViewRole role = ViewRole::Train;
    int view_index = 0;
    double loss = 0;
    double grad_norm = 0;       // scene gradient, all groups
    double psnr_to_target = 0;  // raw render vs target, before affine
};

// Owns the scene and the fixed set's affines for the duration of one stage,
// together with the optimizer moments.
class Refiner {
public:
    Refiner(GaussianScene scene, const ViewSet& train, FixedViewSet fixed,
            int current_index, const RefineConfig& config);

    // one sample_view + render + loss + backprop + Adam update; on a
    // non-finite loss or gradient the scene is restored and the step throws
    RefineStepReport step();

    int steps_done() const { return step_index_; }
    const GaussianScene& scene() const { return scene_; }
    const FixedViewSet& fixed() const { return fixed_; }
    GaussianScene take_scene() { return std::move(scene_); }
    FixedViewSet take_fixed() { return std::move(fixed_); }

    // "step,role,view,loss,psnr" rows for every step so far
    const std::string& csv_log() const { return csv_; }

private:
    RefineStepReport apply_update(const ChosenView& chosen);

    GaussianScene scene_;
    const ViewSet& train_;
    FixedViewSet fixed_;
    int current_index_;
    RefineConfig config_;
    Rng rng_;
    int step_index_ = 0;
    double mu_rate_ = 0; // lr_mu scaled by scene extent
    std::string csv_;

    std::vector<std::array<double, 14>> m1_, m2_; // per-primitive moments
    std::vector<std::array<double, 12>> am1_, am2_; // per-fixed-entry affine moments
};

// Full stage: config.steps iterations. The fixed set's affines advance; the
// updated set is written back through `fixed`. Optional CSV log capture.
GaussianScene refine_3d(const GaussianScene& scene, const ViewSet& train,
                        FixedViewSet& fixed, int current_index,
                        const RefineConfig& config, std::string* csv_log = nullptr);

} // namespace freefix
