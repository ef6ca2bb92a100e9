#include "freefix/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "freefix/kernels.hpp"

namespace freefix {

double FisherAccumulator::median_information() const {
    if (information.empty()) return kFisherEpsilon;
    std::vector<double> v = information;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void GammaLevels::validate() const {
    if (!(lo > 0) || !(lo <= mid) || !(mid <= hi))
        throw std::invalid_argument("gamma levels must satisfy 0 < lo <= mid <= hi");
}

FisherAccumulator accumulate_training_fisher(const GaussianScene& scene,
                                             const ViewSet& train_views,
                                             const ParamMask& mask) {
    if (train_views.views.empty())
        throw std::invalid_argument("accumulate_training_fisher: empty view set");
    FisherAccumulator acc;
    acc.mask = mask;
    acc.information.assign(scene.size(), 0.0);
    for (const auto& view : train_views.views) {
        const auto per_view = per_gaussian_squared_jacobian(view, scene, mask);
        for (std::size_t i = 0; i < scene.size(); ++i) acc.information[i] += per_view[i];
        ++acc.views_seen;
    }
    for (double& h : acc.information) h += kFisherEpsilon;
    return acc;
}

std::vector<double> uncertainty_attribute(const FisherAccumulator& acc,
                                          UncertaintyMode mode,
                                          const CameraView* view,
                                          const GaussianScene& scene) {
    if (acc.information.size() != scene.size())
        throw std::invalid_argument("uncertainty_attribute: accumulator/scene size mismatch");
    const double scale = acc.median_information();
    std::vector<double> out(scene.size());
    switch (mode) {
        case UncertaintyMode::InverseInformation:
            for (std::size_t i = 0; i < scene.size(); ++i)
                out[i] = scale / acc.information[i];
            break;
        case UncertaintyMode::LiteralAtView: {
            if (!view)
                throw std::invalid_argument("uncertainty_attribute: literal-at-view needs a view");
            const auto at_view = per_gaussian_squared_jacobian(*view, scene, acc.mask);
            for (std::size_t i = 0; i < scene.size(); ++i) out[i] = at_view[i] / scale;
            break;
        }
    }
    return out;
}

std::vector<double> certainty_attribute(const std::vector<double>& uncertainty,
                                        double gamma) {
    if (!(gamma > 0)) throw std::invalid_argument("certainty_attribute: gamma must be > 0");
    std::vector<double> out(uncertainty.size());
    for (std::size_t i = 0; i < uncertainty.size(); ++i) {
        if (uncertainty[i] < 0)
            throw std::invalid_argument("certainty_attribute: negative uncertainty");
        out[i] = std::exp(-gamma * uncertainty[i]);
    }
    return out;
}

ConfidenceMap render_confidence_map(const CameraView& view, const GaussianScene& scene,
                                    const std::vector<double>& certainty, double gamma) {
    if (certainty.size() != scene.size())
        throw std::invalid_argument("render_confidence_map: certainty size mismatch");
    for (double c : certainty)
        if (!(c >= 0.0 && c <= 1.0))
            throw std::invalid_argument("render_confidence_map: certainty out of [0,1]");

    const AttributeImage rendered = render_attribute(view, scene, certainty, 1);
    const AttributeImage opacity = render_opacity(view, scene);

    ConfidenceMap cm;
    cm.gamma = gamma;
    cm.map = AttributeImage(view.width, view.height, 1);
    kernels::hadamard(rendered.data(), opacity.data(), cm.map.data(), cm.map.size());
    kernels::clamp01(cm.map.data(), cm.map.data(), cm.map.size());
    return cm;
}

double gamma_for_step(const GammaLevels& levels, int step, int total) {
    levels.validate();
    if (step < 0 || step >= total)
        throw std::invalid_argument("gamma_for_step: step out of range");
    if (step < total / 3) return levels.lo;
    if (step < 2 * total / 3) return levels.mid;
    return levels.hi;
}

ConfidenceMap resize_to_latent(const ConfidenceMap& map, int latent_w, int latent_h) {
    ConfidenceMap out;
    out.gamma = map.gamma;
    out.map = resize_image(map.map, latent_w, latent_h);
    kernels::clamp01(out.map.data(), out.map.data(), out.map.size());
    return out;
}

} // namespace freefix
