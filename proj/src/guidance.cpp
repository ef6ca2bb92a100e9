#include "freefix/guidance.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "freefix/kernels.hpp"
#include "freefix/rng.hpp"

namespace freefix {

namespace fs = std::filesystem;

SigmaSchedule make_schedule(int total_steps, double sigma_start) {
    if (total_steps < 2) throw std::invalid_argument("make_schedule: need at least 2 steps");
    if (!(sigma_start > 0 && sigma_start <= 1))
        throw std::invalid_argument("make_schedule: sigma_start must be in (0,1]");
    SigmaSchedule s;
    s.sigmas.resize(std::size_t(total_steps) + 1);
    for (int k = total_steps; k >= 0; --k)
        s.sigmas[std::size_t(total_steps - k)] = sigma_start * double(k) / total_steps;
    s.sigmas.back() = 0.0;
    return s;
}

void GuidanceConfig::validate() const {
    if (steps < 2) throw std::invalid_argument("guidance: steps must be >= 2");
    if (!(sigma_start > 0 && sigma_start <= 1))
        throw std::invalid_argument("guidance: sigma_start must be in (0,1]");
    if (!(beta >= 0 && beta <= 1)) throw std::invalid_argument("guidance: beta must be in [0,1]");
    if (!(rho >= 0 && rho <= 1)) throw std::invalid_argument("guidance: rho must be in [0,1]");
    gamma.validate();
}

AttributeImage add_noise(const AttributeImage& x0, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0 && sigma <= 1)) throw std::invalid_argument("add_noise: sigma must be in [0,1]");
    Rng rng(seed);
    AttributeImage out(x0.width(), x0.height(), x0.channels());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data()[i] = float((1.0 - sigma) * x0.data()[i] + sigma * rng.normal());
    return out;
}

AttributeImage predict_x0(const AttributeImage& x_t, const AttributeImage& velocity,
                          double sigma_t) {
    if (!x_t.same_shape(velocity)) throw std::invalid_argument("predict_x0: shape mismatch");
    AttributeImage out(x_t.width(), x_t.height(), x_t.channels());
    kernels::axpby(x_t.data(), velocity.data(), out.data(), out.size(), 1.0f,
                   float(-sigma_t));
    return out;
}

namespace {

void check_mask_range(const AttributeImage& m, const char* name) {
    for (std::size_t i = 0; i < m.size(); ++i)
        if (!(m.data()[i] >= 0.0f && m.data()[i] <= 1.0f))
            throw std::invalid_argument(std::string(name) + ": mask values must be in [0,1]");
}

// replicate a 1-channel mask across image channels
std::vector<float> broadcast_mask(const AttributeImage& mask, int channels) {
    std::vector<float> out(mask.size() * std::size_t(channels));
    for (std::size_t i = 0; i < mask.size(); ++i)
        for (int c = 0; c < channels; ++c) out[i * channels + c] = mask.data()[i];
    return out;
}

} // namespace

AttributeImage guided_x0(const AttributeImage& x0_hat, const AttributeImage& x0_render,
                         const AttributeImage& conf_map, const AttributeImage& alpha_map,
                         double beta, bool in_overall_phase) {
    if (!x0_hat.same_shape(x0_render)) throw std::invalid_argument("guided_x0: shape mismatch");
    if (conf_map.width() != x0_hat.width() || conf_map.height() != x0_hat.height() ||
        conf_map.channels() != 1)
        throw std::invalid_argument("guided_x0: confidence map shape mismatch");
    if (alpha_map.width() != x0_hat.width() || alpha_map.height() != x0_hat.height() ||
        alpha_map.channels() != 1)
        throw std::invalid_argument("guided_x0: opacity map shape mismatch");
    check_mask_range(conf_map, "guided_x0 confidence");
    check_mask_range(alpha_map, "guided_x0 opacity");

    const int ch = x0_hat.channels();
    const auto m = broadcast_mask(conf_map, ch);
    AttributeImage out(x0_hat.width(), x0_hat.height(), ch);
    if (!in_overall_phase || beta == 0.0) {
        kernels::blend_masked(m.data(), x0_render.data(), x0_hat.data(), out.data(),
                              out.size());
    } else {
        auto bm = broadcast_mask(alpha_map, ch);
        kernels::scale_add(bm.data(), bm.data(), bm.size(), float(beta), 0.0f);
        kernels::blend_overall(m.data(), bm.data(), x0_render.data(), x0_hat.data(),
                               out.data(), out.size());
    }
    return out;
}

AttributeImage guided_step(const AttributeImage& x_t, const AttributeImage& x0_guided,
                           double sigma_t, double sigma_prev) {
    if (!x_t.same_shape(x0_guided)) throw std::invalid_argument("guided_step: shape mismatch");
    if (!(sigma_t > 0)) throw std::invalid_argument("guided_step: sigma_t must be > 0");
    if (!(sigma_prev < sigma_t))
        throw std::invalid_argument("guided_step: sigma_prev must be < sigma_t");
    AttributeImage out(x_t.width(), x_t.height(), x_t.channels());
    const float c1 = float(sigma_prev / sigma_t);
    const float c2 = float((sigma_t - sigma_prev) / sigma_t);
    kernels::axpby(x_t.data(), x0_guided.data(), out.data(), out.size(), c1, c2);
    return out;
}

AttributeImage denoise_with_guidance(const GuidedDenoiseInputs& in,
                                     const DenoiserContract& denoiser,
                                     const GuidanceConfig& config) {
    config.validate();
    const int render_w = in.render.width(), render_h = in.render.height();
    const int lw = config.latent_width > 0 ? config.latent_width : render_w;
    const int lh = config.latent_height > 0 ? config.latent_height : render_h;

    const AttributeImage x0_render =
        (lw == render_w && lh == render_h) ? in.render : resize_image(in.render, lw, lh);
    AttributeImage opacity =
        (lw == in.opacity.width() && lh == in.opacity.height())
            ? in.opacity
            : resize_image(in.opacity, lw, lh);
    kernels::clamp01(opacity.data(), opacity.data(), opacity.size());

    std::vector<ConfidenceMap> latent_maps;
    latent_maps.reserve(in.conf_maps.size());
    for (const auto& cm : in.conf_maps) latent_maps.push_back(resize_to_latent(cm, lw, lh));

    auto map_for_gamma = [&](double gamma) -> const AttributeImage& {
        for (const auto& cm : latent_maps)
            if (std::abs(cm.gamma - gamma) <= 1e-12 * std::max(1.0, gamma)) return cm.map;
        throw std::invalid_argument("denoise_with_guidance: no confidence map for requested gamma");
    };
    // fail early if any schedule level is missing
    map_for_gamma(config.gamma.lo);
    map_for_gamma(config.gamma.mid);
    map_for_gamma(config.gamma.hi);

    const SigmaSchedule schedule = make_schedule(config.steps, config.sigma_start);
    const int total = config.steps;
    const int overall_cutoff = int(std::ceil(config.rho * total));

    AttributeImage x_t = add_noise(x0_render, config.sigma_start, config.seed);
    AttributeImage x0_guided;

    for (int step = 0; step < total; ++step) {
        const int t = total - step;
        const double sigma_t = schedule.sigma_at(t);
        const double sigma_prev = schedule.sigma_at(t - 1);

        AttributeImage velocity;
        try {
            velocity = denoiser(x_t, t, sigma_t);
        } catch (const std::exception& e) {
            std::ostringstream os;
            os << "denoiser failed at step " << step << " (t=" << t << ", sigma=" << sigma_t
               << "): " << e.what();
            throw std::runtime_error(os.str());
        }
        if (!velocity.same_shape(x_t))
            throw std::runtime_error("denoiser returned a mismatched shape");

        const AttributeImage x0_hat = predict_x0(x_t, velocity, sigma_t);
        const double gamma = gamma_for_step(config.gamma, step, total);
        const bool overall = step < overall_cutoff;
        x0_guided = guided_x0(x0_hat, x0_render, map_for_gamma(gamma), opacity,
                              config.beta, overall);
        x_t = guided_step(x_t, x0_guided, sigma_t, sigma_prev);
    }

    kernels::clamp01(x_t.data(), x_t.data(), x_t.size());
    if (lw != render_w || lh != render_h) {
        AttributeImage out = resize_image(x_t, render_w, render_h);
        kernels::clamp01(out.data(), out.data(), out.size());
        return out;
    }
    return x_t;
}

DenoiserContract oracle_denoiser(AttributeImage target) {
    return [target = std::move(target)](const AttributeImage& x_t, int, double sigma_t) {
        if (!(sigma_t > 0)) throw std::invalid_argument("oracle_denoiser: sigma_t must be > 0");
        if (!x_t.same_shape(target)) throw std::invalid_argument("oracle_denoiser: shape mismatch");
        AttributeImage f(x_t.width(), x_t.height(), x_t.channels());
        kernels::axpby(x_t.data(), target.data(), f.data(), f.size(), float(1.0 / sigma_t),
                       float(-1.0 / sigma_t));
        return f;
    };
}

DenoiserContract noisy_oracle_denoiser(AttributeImage target, double perturb_sigma,
                                       std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(seed);
    return [target = std::move(target), perturb_sigma, rng](const AttributeImage& x_t, int,
                                                            double sigma_t) {
        if (!(sigma_t > 0))
            throw std::invalid_argument("noisy_oracle_denoiser: sigma_t must be > 0");
        if (!x_t.same_shape(target))
            throw std::invalid_argument("noisy_oracle_denoiser: shape mismatch");
        AttributeImage f(x_t.width(), x_t.height(), x_t.channels());
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double hallucinated = target.data()[i] + perturb_sigma * rng->normal();
            f.data()[i] = float((x_t.data()[i] - hallucinated) / sigma_t);
        }
        return f;
    };
}

DenoiserContract conditioned_oracle_denoiser(AttributeImage target, double leak,
                                             double perturb_sigma, std::uint64_t seed) {
    if (leak < 0.0 || leak > 1.0)
        throw std::invalid_argument("conditioned_oracle_denoiser: leak must be in [0,1]");
    auto rng = std::make_shared<Rng>(seed);
    return [target = std::move(target), leak, perturb_sigma,
            rng](const AttributeImage& x_t, int, double sigma_t) {
        if (!(sigma_t > 0))
            throw std::invalid_argument("conditioned_oracle_denoiser: sigma_t must be > 0");
        if (!x_t.same_shape(target))
            throw std::invalid_argument("conditioned_oracle_denoiser: shape mismatch");

        // a backbone keeps the conditioning image's structure, not its pixel
        // noise: leak a low-pass of the input so extended artifacts survive
        // while the injected sampling noise averages away
        const int w = x_t.width(), h = x_t.height(), ch = x_t.channels();
        constexpr int kBlurRadius = 2;
        AttributeImage low(w, h, ch);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < ch; ++c) {
                    double sum = 0;
                    int n = 0;
                    for (int dy = -kBlurRadius; dy <= kBlurRadius; ++dy)
                        for (int dx = -kBlurRadius; dx <= kBlurRadius; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                            sum += x_t.at(xx, yy, c);
                            ++n;
                        }
                    low.at(x, y, c) = float(sum / n);
                }

        AttributeImage f(w, h, ch);
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double hallucinated = target.data()[i] + perturb_sigma * rng->normal();
            const double x0_hat = (1.0 - leak) * hallucinated + leak * low.data()[i];
            f.data()[i] = float((x_t.data()[i] - x0_hat) / sigma_t);
        }
        return f;
    };
}

DenoiserContract identity_denoiser() {
    return [](const AttributeImage& x_t, int, double) {
        return AttributeImage(x_t.width(), x_t.height(), x_t.channels(), 0.0f);
    };
}

DenoiserContract external_denoiser_bridge(const std::string& exchange_dir,
                                          double timeout_seconds) {
    fs::create_directories(exchange_dir);
    auto counter = std::make_shared<int>(0);
    return [exchange_dir, timeout_seconds, counter](const AttributeImage& x_t, int t,
                                                    double sigma_t) {
        const int n = (*counter)++;
        const fs::path dir(exchange_dir);
        const fs::path req_pfm = dir / ("req_" + std::to_string(n) + ".pfm");
        const fs::path req_json = dir / ("req_" + std::to_string(n) + ".json");
        const fs::path res_pfm = dir / ("res_" + std::to_string(n) + ".pfm");

        write_pfm(x_t, req_pfm.string());
        nlohmann::ordered_json j;
        j["t"] = t;
        j["sigma_t"] = sigma_t;
        j["shape"] = {{"width", x_t.width()}, {"height", x_t.height()},
                      {"channels", x_t.channels()}};
        j["schedule_id"] = "linear";
        {
            std::ofstream f(req_json);
            f << j.dump() << "\n";
        } // json written last; responders key off its appearance

        const auto deadline = std::chrono::steady_clock::now() +
                              std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                  std::chrono::duration<double>(timeout_seconds));
        for (;;) {
            if (fs::exists(res_pfm)) {
                try {
                    AttributeImage f = read_pfm(res_pfm.string());
                    if (!f.same_shape(x_t))
                        throw std::runtime_error("bridge: response shape mismatch");
                    std::error_code ec;
                    fs::remove(req_pfm, ec);
                    fs::remove(req_json, ec);
                    fs::remove(res_pfm, ec);
                    return f;
                } catch (const std::runtime_error&) {
                    // possibly mid-write; retry until deadline
                }
            }
            if (std::chrono::steady_clock::now() > deadline)
                throw std::runtime_error("bridge: timed out waiting for " + res_pfm.string());
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
    };
}

} // namespace freefix
