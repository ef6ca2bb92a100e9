#pragma once

// Noise schedule, pluggable denoiser contract and the confidence-guided
// denoising loop. Latents are pixel-space images (identity encoder).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "freefix/confidence.hpp"
#include "freefix/image.hpp"

namespace freefix {

struct SigmaSchedule {
    // sigma[0] = sigma_start down to sigma[T] = 0, strictly decreasing;
    // sigma_at(t) with t = T..0 counts remaining noise
    std::vector<double> sigmas;

    int steps() const { return int(sigmas.size()) - 1; }
    double sigma_at(int t) const { return sigmas[std::size_t(steps() - t)]; }
};

// linear descent sigma_k = sigma_start * k / T
SigmaSchedule make_schedule(int total_steps, double sigma_start);

struct GuidanceConfig {
    int steps = 30;
    double sigma_start = 1.0;
    GammaLevels gamma;
    double beta = 0.5;         // overall-guidance strength
    double rho = 0.2;          // overall-guidance cutoff fraction of steps
    std::uint64_t seed = 0;
    int latent_width = 0;      // 0 = match the render
    int latent_height = 0;

    void validate() const;
};

// velocity field F(x_t, t, sigma_t); must preserve shape
using DenoiserContract =
    std::function<AttributeImage(const AttributeImage& x_t, int t, double sigma_t)>;

AttributeImage add_noise(const AttributeImage& x0, double sigma, std::uint64_t seed);

// x0_hat = x_t - sigma_t * F
AttributeImage predict_x0(const AttributeImage& x_t, const AttributeImage& velocity,
                          double sigma_t);

// confidence blend; in the overall phase the denoiser branch is additionally
// anchored by beta * alpha_mask
AttributeImage guided_x0(const AttributeImage& x0_hat, const AttributeImage& x0_render,
                         const AttributeImage& conf_map, const AttributeImage& alpha_map,
                         double beta, bool in_overall_phase);

// x_{t-1} = (s_{t-1}/s_t) x_t - ((s_{t-1}-s_t)/s_t) x0_guided
AttributeImage guided_step(const AttributeImage& x_t, const AttributeImage& x0_guided,
                           double sigma_t, double sigma_prev);

struct GuidedDenoiseInputs {
    const AttributeImage& render;                 // x_0^r
    const std::vector<ConfidenceMap>& conf_maps;  // one per gamma level, full res
    const AttributeImage& opacity;                // M^alpha, full res
};

// full loop: noise the render to sigma_start, then denoise with per-step
// gamma selection, confidence guidance and early-phase overall guidance;
// output clamped to [0,1]
AttributeImage denoise_with_guidance(const GuidedDenoiseInputs& in,
                                     const DenoiserContract& denoiser,
                                     const GuidanceConfig& config);

// test doubles standing in for real diffusion backbones
DenoiserContract oracle_denoiser(AttributeImage target);
DenoiserContract noisy_oracle_denoiser(AttributeImage target, double perturb_sigma,
                                       std::uint64_t seed);
// partial-faithfulness double: x0_hat keeps `leak` of the input signal, so
// the quality of the conditioning render matters as it does for a real model
DenoiserContract conditioned_oracle_denoiser(AttributeImage target, double leak,
                                             double perturb_sigma, std::uint64_t seed);
DenoiserContract identity_denoiser();

// file-exchange bridge: writes req_<n>.pfm/.json, waits for res_<n>.pfm
DenoiserContract external_denoiser_bridge(const std::string& exchange_dir,
                                          double timeout_seconds);

} // namespace freefix
