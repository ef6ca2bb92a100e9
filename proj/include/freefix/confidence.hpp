#pragma once

// Fisher-information accumulation over training views, per-Gaussian
// uncertainty/certainty attributes, rendered confidence maps and the
// multi-level gamma schedule.

#include <vector>

#include "freefix/image.hpp"
#include "freefix/render.hpp"
#include "freefix/scene.hpp"

namespace freefix {

// absolute information regularizer; keeps 1/H finite for unobserved Gaussians
inline constexpr double kFisherEpsilon = 1e-12;

struct FisherAccumulator {
    std::vector<double> information; // H_i >= kFisherEpsilon
    int views_seen = 0;
    ParamMask mask;

    double median_information() const;
};

enum class UncertaintyMode { InverseInformation, LiteralAtView };

struct CertaintyAttributes {
    std::vector<double> uncertainty; // C-bar, >= 0
    std::vector<double> certainty;   // exp(-gamma * C-bar), in [0,1]
    double gamma = 0;
};

struct ConfidenceMap {
    AttributeImage map; // 1 channel, [0,1]
    double gamma = 0;
};

struct GammaLevels {
    double lo = 0.001;
    double mid = 0.01;
    double hi = 0.1;

    void validate() const; // lo <= mid <= hi, all > 0
};

// H_i = sum over training views of per_gaussian_squared_jacobian + epsilon
FisherAccumulator accumulate_training_fisher(const GaussianScene& scene,
                                             const ViewSet& train_views,
                                             const ParamMask& mask);

// inverse-information: C-bar_i = median(H)/H_i
// literal-at-view:     C-bar_i = squared_jacobian(view)/median(H)
std::vector<double> uncertainty_attribute(const FisherAccumulator& acc,
                                          UncertaintyMode mode,
                                          const CameraView* view,
                                          const GaussianScene& scene);

std::vector<double> certainty_attribute(const std::vector<double>& uncertainty,
                                        double gamma);

// attribute-rendered certainty times rendered opacity, clamped to [0,1]
ConfidenceMap render_confidence_map(const CameraView& view, const GaussianScene& scene,
                                    const std::vector<double>& certainty, double gamma);

// piecewise-constant schedule over denoising steps: thirds map to lo/mid/hi
double gamma_for_step(const GammaLevels& levels, int step, int total);

ConfidenceMap resize_to_latent(const ConfidenceMap& map, int latent_w, int latent_h);

} // namespace freefix
