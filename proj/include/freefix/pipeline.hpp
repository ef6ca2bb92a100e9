#pragma once

// Interleaved 2D-3D orchestration: walk the extrapolated trajectory, fix each
// render with guided denoising, fold the result back through 3D refinement and
// grow the fixed-view set. Plus the module-toggle ablation harness.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "freefix/confidence.hpp"
#include "freefix/guidance.hpp"
#include "freefix/metrics.hpp"
#include "freefix/refine.hpp"
#include "freefix/scene.hpp"

namespace freefix {

enum class FisherRefresh { PerStage, Once };

struct PipelineConfig {
    GuidanceConfig guidance;
    RefineConfig refine;
    ParamMask fisher_mask;                 // parameter groups entering H
    UncertaintyMode uncertainty_mode = UncertaintyMode::InverseInformation;
    FisherRefresh fisher_refresh = FisherRefresh::PerStage;
    std::string output_dir;                // empty: keep everything in memory
    std::uint64_t seed = 0;
    double max_center_gap = 1.5;           // trajectory continuity warning threshold

    // ablation toggles; all on reproduces the full method
    bool use_confidence = true;            // off: guide with the opacity map alone
    bool interleave = true;                // off: fix every view first, then one joint refinement
    bool use_affine = true;                // off: no per-view color correction

    void validate() const;
};

struct StageRecord {
    int stage = 0;
    AttributeImage render;                 // pre-fix
    std::vector<ConfidenceMap> conf_maps;  // one per gamma level
    AttributeImage fixed;
    std::vector<double> prior_fixed_psnr;  // post-stage, entries 0..stage
};

struct PipelineResult {
    GaussianScene scene;
    std::vector<StageRecord> records;
    FixedViewSet fixed;
};

// Builds the per-stage denoiser; lets test doubles target the stage's view.
using DenoiserFactory = std::function<DenoiserContract(int stage, const CameraView& view)>;

PipelineResult run_freefix(const GaussianScene& initial, const ViewSet& train,
                           const ViewSet& trajectory, const PipelineConfig& config,
                           const DenoiserFactory& make_denoiser);

// same denoiser for every stage
PipelineResult run_freefix(const GaussianScene& initial, const ViewSet& train,
                           const ViewSet& trajectory, const PipelineConfig& config,
                           const DenoiserContract& denoiser);

struct AblationVariant {
    std::string name;
    bool use_confidence = true;
    bool interleave = true;
    bool overall_guidance = true; // off: beta forced to 0
    bool use_affine = true;
};

std::vector<AblationVariant> standard_ablation_variants();

struct AblationInputs {
    const GaussianScene& truth;      // evaluation targets and oracle centers
    const GaussianScene& initial;    // the scene under repair
    const ViewSet& train;            // with images
    const ViewSet& trajectory;
    double denoiser_noise = 0.05;    // oracle hallucination noise scale
    double render_leak = 0.5;        // input fraction surviving in the test denoiser
};

// One report per variant: per-trajectory-view PSNR/SSIM of the refined scene
// against renders of the truth scene.
std::vector<MetricReport> run_ablation(const AblationInputs& in,
                                       const PipelineConfig& base,
                                       const std::vector<AblationVariant>& variants);

} // namespace freefix
