#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "freefix/image.hpp"

namespace freefix {

// identical images report this instead of infinity
inline constexpr double kPsnrSentinel = 99.0;

// 10*log10(1/MSE) on [0,1] images
double psnr(const AttributeImage& a, const AttributeImage& b);

// mean windowed SSIM, 11x11 Gaussian window sigma 1.5, C1=0.01^2, C2=0.03^2,
// valid windows only, channel-averaged
double ssim(const AttributeImage& a, const AttributeImage& b);

// SSIM plus d(mean SSIM)/d(a); shared with the photometric training loss
double ssim_with_gradient(const AttributeImage& a, const AttributeImage& b,
                          AttributeImage* grad_a);

struct MetricRow {
    std::string label;
    double psnr = 0;
    double ssim = 0;
};

struct MetricReport {
    std::string scene;
    std::string variant;
    std::uint64_t seed = 0;
    std::vector<MetricRow> rows;

    double mean_psnr() const;
    double median_psnr() const;
    double mean_ssim() const;
};

std::string to_csv(const std::vector<MetricReport>& reports);
std::string to_markdown(const std::vector<MetricReport>& reports);

} // namespace freefix
