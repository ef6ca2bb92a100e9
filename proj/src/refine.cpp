#include "freefix/refine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "freefix/metrics.hpp"

namespace freefix {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

double bbox_extent(const GaussianScene& scene) {
    if (scene.primitives.empty()) return 0.0;
    Vec3 lo = scene.primitives[0].mu, hi = lo;
    for (const auto& g : scene.primitives) {
        lo = {std::min(lo.x, g.mu.x), std::min(lo.y, g.mu.y), std::min(lo.z, g.mu.z)};
        hi = {std::max(hi.x, g.mu.x), std::max(hi.y, g.mu.y), std::max(hi.z, g.mu.z)};
    }
    return (hi - lo).norm();
}

double adam_delta(double g, double& m, double& v, double rate, int t) {
    m = kAdamBeta1 * m + (1 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1 - kAdamBeta2) * g * g;
    const double mh = m / (1 - std::pow(kAdamBeta1, t));
    const double vh = v / (1 - std::pow(kAdamBeta2, t));
    return -rate * mh / (std::sqrt(vh) + kAdamEps);
}

} // namespace

bool AffineColor::all_finite() const {
    for (double v : linear.m)
        if (!std::isfinite(v)) return false;
    return std::isfinite(bias.x) && std::isfinite(bias.y) && std::isfinite(bias.z);
}

AttributeImage affine_apply(const AttributeImage& image, const AffineColor& aff) {
    if (image.channels() != 3)
        throw std::invalid_argument("affine_apply: expected a 3-channel image");
    AttributeImage out(image.width(), image.height(), 3);
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) {
            const Vec3 p{image.at(x, y, 0), image.at(x, y, 1), image.at(x, y, 2)};
            const Vec3 q = aff.linear * p + aff.bias;
            out.at(x, y, 0) = float(q.x);
            out.at(x, y, 1) = float(q.y);
            out.at(x, y, 2) = float(q.z);
        }
    return out;
}

void RefineConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("refine: steps must be >= 0");
    if (!(lambda_s >= 0 && lambda_s <= 1))
        throw std::invalid_argument("refine: lambda_s must be in [0,1]");
    for (double r : {lr_mu, lr_q, lr_s, lr_eta, lr_rgb, lr_affine})
        if (!(r > 0)) throw std::invalid_argument("refine: learning rates must be > 0");
    if (!(w_g > 0 && w_g <= 1)) throw std::invalid_argument("refine: w_g must be in (0,1]");
    if (!(p_f > 0 && p_f < 1)) throw std::invalid_argument("refine: p_f must be in (0,1)");
    if (!mask.any()) throw std::invalid_argument("refine: empty parameter mask");
}

double photometric_loss(const AttributeImage& pred, const AttributeImage& target,
                        double lambda_s, AttributeImage* grad_pred) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("photometric_loss: shape mismatch");
    if (!(lambda_s >= 0 && lambda_s <= 1))
        throw std::invalid_argument("photometric_loss: lambda_s must be in [0,1]");

    const std::size_t n = pred.size();
    if (grad_pred) *grad_pred = AttributeImage(pred.width(), pred.height(), pred.channels());

    double l1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = double(pred.data()[i]) - double(target.data()[i]);
        l1 += std::abs(d);
        if (grad_pred)
            grad_pred->data()[i] = float((1 - lambda_s) * (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / double(n));
    }
    double loss = (1 - lambda_s) * l1 / double(n);

    if (lambda_s > 0) {
        AttributeImage ssim_grad;
        const double s = ssim_with_gradient(pred, target, grad_pred ? &ssim_grad : nullptr);
        loss += lambda_s * (1 - s);
        if (grad_pred)
            for (std::size_t i = 0; i < n; ++i)
                grad_pred->data()[i] -= float(lambda_s * ssim_grad.data()[i]);
    }
    return loss;
}

const char* to_string(ViewRole role) {
    switch (role) {
        case ViewRole::Train: return "train";
        case ViewRole::Fixed: return "fixed";
        case ViewRole::Current: return "current";
    }
    return "?";
}

ChosenView sample_view(int step, int total, const ViewSet& train,
                       const FixedViewSet& fixed, int current_index, double p_f,
                       Rng& rng) {
    const bool has_current =
        current_index >= 0 && current_index < int(fixed.entries.size());
    if (has_current) {
        const int cadence = step < total / 3 ? 3 : step < 2 * total / 3 ? 5 : 8;
        if (step % cadence == 0) return {ViewRole::Current, current_index};
    }
    const int n_other = int(fixed.entries.size()) - (has_current ? 1 : 0);
    if (n_other > 0 && rng.uniform() < p_f) {
        int k = int(rng.below(std::uint64_t(n_other)));
        if (has_current && k >= current_index) ++k;
        return {ViewRole::Fixed, k};
    }
    if (train.views.empty())
        throw std::invalid_argument("sample_view: no training views to draw from");
    return {ViewRole::Train, int(rng.below(train.views.size()))};
}

Refiner::Refiner(GaussianScene scene, const ViewSet& train, FixedViewSet fixed,
                 int current_index, const RefineConfig& config)
    : scene_(std::move(scene)), train_(train), fixed_(std::move(fixed)),
      current_index_(current_index), config_(config), rng_(config.seed) {
    config_.validate();
    if (!train_.images || train_.images->size() != train_.views.size())
        throw std::invalid_argument("refine: training views need target images");
    if (current_index_ >= int(fixed_.entries.size()))
        throw std::invalid_argument("refine: current index out of range");
    mu_rate_ = config_.lr_mu * std::max(bbox_extent(scene_), 1e-6);
    m1_.assign(scene_.size(), {});
    m2_.assign(scene_.size(), {});
    am1_.assign(fixed_.entries.size(), {});
    am2_.assign(fixed_.entries.size(), {});
    csv_ = "step,role,view,loss,psnr\n";
}

RefineStepReport Refiner::step() {
    const ChosenView chosen = sample_view(step_index_, config_.steps, train_, fixed_,
                                          current_index_, config_.p_f, rng_);
    return apply_update(chosen);
}

RefineStepReport Refiner::apply_update(const ChosenView& chosen) {
    const bool generated = chosen.role != ViewRole::Train;
    const CameraView& view =
        generated ? fixed_.entries[chosen.index].view : train_.views[chosen.index];
    const AttributeImage& target =
        generated ? fixed_.entries[chosen.index].image : (*train_.images)[chosen.index];
    AffineColor* aff =
        generated && config_.optimize_affine ? &fixed_.entries[chosen.index].affine : nullptr;
    const double weight = generated ? config_.w_g : 1.0;

    const AttributeImage render = render_color(view, scene_);
    const AttributeImage pred = aff ? affine_apply(render, *aff) : render;

    AttributeImage grad_pred;
    double loss = photometric_loss(pred, target, config_.lambda_s, &grad_pred);
    loss *= weight;

    // pull the loss gradient back through the per-view affine
    AttributeImage grad_render = grad_pred;
    Mat3 grad_a;
    grad_a.m.fill(0);
    Vec3 grad_b{0, 0, 0};
    if (aff) {
        const Mat3 at = aff->linear.transposed();
        for (int y = 0; y < render.height(); ++y)
            for (int x = 0; x < render.width(); ++x) {
                const Vec3 g{grad_pred.at(x, y, 0), grad_pred.at(x, y, 1),
                             grad_pred.at(x, y, 2)};
                const Vec3 p{render.at(x, y, 0), render.at(x, y, 1), render.at(x, y, 2)};
                const Vec3 gr = at * g;
                grad_render.at(x, y, 0) = float(gr.x);
                grad_render.at(x, y, 1) = float(gr.y);
                grad_render.at(x, y, 2) = float(gr.z);
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c) grad_a(r, c) += g[r] * p[c];
                grad_b = grad_b + g;
            }
    }
    for (std::size_t i = 0; i < grad_render.size(); ++i)
        grad_render.data()[i] *= float(weight);

    const ParamGradients grads = backprop(view, scene_, grad_render);

    bool finite = std::isfinite(loss) && grads.all_finite();
    if (aff && finite) {
        for (double v : grad_a.m) finite = finite && std::isfinite(v);
        finite = finite && std::isfinite(grad_b.x) && std::isfinite(grad_b.y) &&
                 std::isfinite(grad_b.z);
    }
    if (!finite) {
        std::ostringstream os;
        os << "refine step " << step_index_ << " on " << to_string(chosen.role) << " view "
           << chosen.index << ": non-finite loss or gradient, scene left unchanged";
        throw std::runtime_error(os.str());
    }

    const int t = step_index_ + 1;
    double grad_sq = 0;
    const ParamMask& mask = config_.mask;
    for (std::size_t i = 0; i < scene_.size(); ++i) {
        auto& p = scene_.primitives[i];
        auto& m1 = m1_[i];
        auto& m2 = m2_[i];
        // moment layout: mu[0..2] q[3..6] s[7..9] eta[10] rgb[11..13]
        if (mask.mu) {
            for (int k = 0; k < 3; ++k) grad_sq += grads.mu[i][k] * grads.mu[i][k];
            p.mu.x += adam_delta(grads.mu[i][0], m1[0], m2[0], mu_rate_, t);
            p.mu.y += adam_delta(grads.mu[i][1], m1[1], m2[1], mu_rate_, t);
            p.mu.z += adam_delta(grads.mu[i][2], m1[2], m2[2], mu_rate_, t);
        }
        if (mask.q) {
            double* qc[4] = {&p.q.w, &p.q.x, &p.q.y, &p.q.z};
            for (int k = 0; k < 4; ++k) {
                grad_sq += grads.q[i][k] * grads.q[i][k];
                *qc[k] += adam_delta(grads.q[i][k], m1[3 + k], m2[3 + k], config_.lr_q, t);
            }
        }
        if (mask.s) {
            double* sc[3] = {&p.s.x, &p.s.y, &p.s.z};
            for (int k = 0; k < 3; ++k) {
                grad_sq += grads.s[i][k] * grads.s[i][k];
                *sc[k] += adam_delta(grads.s[i][k], m1[7 + k], m2[7 + k], config_.lr_s, t);
            }
        }
        if (mask.eta) {
            grad_sq += grads.eta[i] * grads.eta[i];
            p.eta += adam_delta(grads.eta[i], m1[10], m2[10], config_.lr_eta, t);
        }
        if (mask.rgb) {
            double* cc[3] = {&p.rgb.x, &p.rgb.y, &p.rgb.z};
            for (int k = 0; k < 3; ++k) {
                grad_sq += grads.rgb[i][k] * grads.rgb[i][k];
                *cc[k] += adam_delta(grads.rgb[i][k], m1[11 + k], m2[11 + k],
                                     config_.lr_rgb, t);
            }
        }
        p.enforce_invariants();
    }

    if (aff) {
        auto& m1 = am1_[std::size_t(chosen.index)];
        auto& m2 = am2_[std::size_t(chosen.index)];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                const int k = r * 3 + c;
                aff->linear(r, c) +=
                    adam_delta(weight * grad_a(r, c), m1[k], m2[k], config_.lr_affine, t);
            }
        double* bc[3] = {&aff->bias.x, &aff->bias.y, &aff->bias.z};
        for (int k = 0; k < 3; ++k)
            *bc[k] += adam_delta(weight * grad_b[k], m1[9 + k], m2[9 + k],
                                 config_.lr_affine, t);
    }

    RefineStepReport report;
    report.step = step_index_;
    report.role = chosen.role;
    report.view_index = chosen.index;
    report.loss = loss;
    report.grad_norm = std::sqrt(grad_sq);
    report.psnr_to_target = psnr(render, target);

    std::ostringstream row;
    row << report.step << ',' << to_string(report.role) << ',' << report.view_index << ','
        << report.loss << ',' << report.psnr_to_target << '\n';
    csv_ += row.str();

    ++step_index_;
    return report;
}

GaussianScene refine_3d(const GaussianScene& scene, const ViewSet& train,
                        FixedViewSet& fixed, int current_index,
                        const RefineConfig& config, std::string* csv_log) {
    Refiner refiner(scene, train, std::move(fixed), current_index, config);
    for (int i = 0; i < config.steps; ++i) refiner.step();
    if (csv_log) *csv_log = refiner.csv_log();
    fixed = refiner.take_fixed();
    return refiner.take_scene();
}

} // namespace freefix
