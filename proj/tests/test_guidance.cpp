#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "freefix/guidance.hpp"
#include "freefix/kernels.hpp"
#include "freefix/rng.hpp"

using namespace freefix;
namespace fs = std::filesystem;

namespace {

AttributeImage random_image(Rng& rng, int w, int h, int c, float lo = 0.0f, float hi = 1.0f) {
    AttributeImage img(w, h, c);
    for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = float(rng.uniform(lo, hi));
    return img;
}

AttributeImage constant(int w, int h, int c, float v) { return AttributeImage(w, h, c, v); }

std::vector<ConfidenceMap> constant_maps(int w, int h, float v, const GammaLevels& g) {
    std::vector<ConfidenceMap> maps;
    for (double gamma : {g.lo, g.mid, g.hi})
        maps.push_back(ConfidenceMap{AttributeImage(w, h, 1, v), gamma});
    return maps;
}

double mean_abs_diff(const AttributeImage& a, const AttributeImage& b) {
    return kernels::sum_abs_diff(a.data(), b.data(), a.size()) / double(a.size());
}

} // namespace

TEST_CASE("linear schedule hits its endpoints and decreases") {
    const SigmaSchedule s = make_schedule(2, 1.0);
    REQUIRE(s.sigmas.size() == 3);
    CHECK(s.sigmas[0] == 1.0);
    CHECK(s.sigmas[1] == 0.5);
    CHECK(s.sigmas[2] == 0.0);
    CHECK(s.sigma_at(2) == 1.0);
    CHECK(s.sigma_at(0) == 0.0);

    const SigmaSchedule big = make_schedule(37, 0.8);
    CHECK(big.sigmas.back() == 0.0);
    for (std::size_t i = 1; i < big.sigmas.size(); ++i)
        CHECK(big.sigmas[i] < big.sigmas[i - 1]);

    CHECK_THROWS(make_schedule(1, 1.0));
    CHECK_THROWS(make_schedule(10, 0.0));
    CHECK_THROWS(make_schedule(10, 1.5));
}

TEST_CASE("add_noise endpoints and statistics") {
    Rng rng(1);
    const AttributeImage x0 = random_image(rng, 8, 8, 3);
    const AttributeImage clean = add_noise(x0, 0.0, 7);
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(clean.data()[i] == x0.data()[i]);

    // sigma = 1 ignores the input entirely
    const AttributeImage other = random_image(rng, 8, 8, 3);
    const AttributeImage n1 = add_noise(x0, 1.0, 7);
    const AttributeImage n2 = add_noise(other, 1.0, 7);
    for (std::size_t i = 0; i < n1.size(); ++i) CHECK(n1.data()[i] == n2.data()[i]);

    // sigma = 0.5 on zeros: mean near 0 within 4/sqrt(N)
    const AttributeImage zeros(40, 40, 1, 0.0f);
    const AttributeImage half = add_noise(zeros, 0.5, 11);
    const double mean = kernels::sum(half.data(), half.size()) / double(half.size());
    CHECK(std::abs(mean) < 4.0 * 0.5 / std::sqrt(double(half.size())));

    CHECK_THROWS(add_noise(x0, 1.5, 0));
}

TEST_CASE("predict_x0 arithmetic") {
    const AttributeImage x_t = constant(4, 4, 1, 2.0f);
    const AttributeImage f = constant(4, 4, 1, 1.25f);
    const AttributeImage out = predict_x0(x_t, f, 0.8);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(1.0f));

    const AttributeImage same = predict_x0(x_t, f, 0.0);
    for (std::size_t i = 0; i < same.size(); ++i) CHECK(same.data()[i] == 2.0f);
    const AttributeImage still = predict_x0(x_t, constant(4, 4, 1, 0.0f), 0.7);
    for (std::size_t i = 0; i < still.size(); ++i) CHECK(still.data()[i] == 2.0f);
    CHECK_THROWS(predict_x0(x_t, constant(3, 4, 1, 0.0f), 0.5));
}

TEST_CASE("guided_x0 blend endpoints and overall-phase arithmetic") {
    const int w = 6, h = 5;
    Rng rng(2);
    const AttributeImage x0_hat = random_image(rng, w, h, 3);
    const AttributeImage x0_r = random_image(rng, w, h, 3);
    const AttributeImage alpha = constant(w, h, 1, 0.5f);

    // full confidence returns the render exactly
    const AttributeImage full =
        guided_x0(x0_hat, x0_r, constant(w, h, 1, 1.0f), alpha, 0.5, true);
    for (std::size_t i = 0; i < full.size(); ++i) CHECK(full.data()[i] == x0_r.data()[i]);

    // zero confidence and beta = 0 returns the prediction
    const AttributeImage none =
        guided_x0(x0_hat, x0_r, constant(w, h, 1, 0.0f), alpha, 0.0, true);
    for (std::size_t i = 0; i < none.size(); ++i) CHECK(none.data()[i] == x0_hat.data()[i]);

    // overall phase: conf 0, beta*alpha = 0.5, render 1, prediction 0 -> 0.5
    const AttributeImage mid = guided_x0(constant(w, h, 3, 0.0f), constant(w, h, 3, 1.0f),
                                         constant(w, h, 1, 0.0f), constant(w, h, 1, 1.0f),
                                         0.5, true);
    for (std::size_t i = 0; i < mid.size(); ++i)
        CHECK(mid.data()[i] == doctest::Approx(0.5f));

    // outside the overall phase beta is inert
    const AttributeImage plain = guided_x0(x0_hat, x0_r, constant(w, h, 1, 0.3f), alpha,
                                           0.9, false);
    for (std::size_t i = 0; i < plain.size(); ++i) {
        const std::size_t px = i / 3;
        (void)px;
        const float expect = 0.3f * x0_r.data()[i] + 0.7f * x0_hat.data()[i];
        CHECK(plain.data()[i] == doctest::Approx(expect).epsilon(1e-6));
    }

    CHECK_THROWS(guided_x0(x0_hat, x0_r, constant(w, h, 1, 1.5f), alpha, 0.5, true));
    CHECK_THROWS(guided_x0(x0_hat, x0_r, constant(w, h, 1, 0.5f),
                           constant(w, h, 1, -0.1f), 0.5, true));
}

TEST_CASE("guided_step matches the euler form and its substitution rewrite") {
    const AttributeImage x_t = constant(3, 3, 1, 2.0f);
    const AttributeImage x0g = constant(3, 3, 1, 1.0f);
    const AttributeImage out = guided_step(x_t, x0g, 0.8, 0.4);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(1.5f));

    // final step returns the guided prediction
    const AttributeImage last = guided_step(x_t, x0g, 0.5, 0.0);
    for (std::size_t i = 0; i < last.size(); ++i)
        CHECK(last.data()[i] == doctest::Approx(1.0f));

    // fixpoint
    const AttributeImage fix = guided_step(x_t, x_t, 0.9, 0.3);
    for (std::size_t i = 0; i < fix.size(); ++i)
        CHECK(fix.data()[i] == doctest::Approx(2.0f));

    CHECK_THROWS(guided_step(x_t, x0g, 0.0, -0.1));
    CHECK_THROWS(guided_step(x_t, x0g, 0.4, 0.8));

    // random draws against x0 + s_prev*(x_t - x0)/s_t
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const AttributeImage a = random_image(rng, 5, 4, 3, -2.0f, 2.0f);
        const AttributeImage b = random_image(rng, 5, 4, 3, -2.0f, 2.0f);
        const double st = rng.uniform(0.05, 1.0);
        const double sp = rng.uniform(0.0, st * 0.999);
        const AttributeImage lhs = guided_step(a, b, st, sp);
        for (std::size_t i = 0; i < lhs.size(); ++i) {
            const double rhs = b.data()[i] + sp * (double(a.data()[i]) - b.data()[i]) / st;
            CHECK(lhs.data()[i] == doctest::Approx(rhs).epsilon(1e-6));
        }
    }
}

TEST_CASE("full-confidence loop is a fixpoint at the render") {
    Rng rng(4);
    const AttributeImage render = random_image(rng, 12, 10, 3);
    GuidanceConfig config;
    config.steps = 12;
    config.seed = 5;
    const auto maps = constant_maps(12, 10, 1.0f, config.gamma);
    const AttributeImage opacity = constant(12, 10, 1, 0.6f);

    const AttributeImage out = denoise_with_guidance({render, maps, opacity},
                                                     identity_denoiser(), config);
    CHECK(mean_abs_diff(out, render) < 1e-6);
}

TEST_CASE("oracle denoiser with zero confidence lands on its target") {
    Rng rng(5);
    const AttributeImage render = random_image(rng, 12, 10, 3);
    const AttributeImage target = random_image(rng, 12, 10, 3, 0.1f, 0.9f);
    GuidanceConfig config;
    config.steps = 20;
    config.beta = 0.0;
    config.seed = 6;
    const auto maps = constant_maps(12, 10, 0.0f, config.gamma);
    const AttributeImage opacity = constant(12, 10, 1, 0.5f);

    const AttributeImage out = denoise_with_guidance({render, maps, opacity},
                                                     oracle_denoiser(target), config);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(target.data()[i]).epsilon(1e-5));
}

TEST_CASE("oracle fixpoint holds for any confidence level") {
    Rng rng(6);
    const AttributeImage render = random_image(rng, 10, 8, 3, 0.1f, 0.9f);
    const AttributeImage opacity = constant(10, 8, 1, 0.4f);
    for (float conf : {0.0f, 0.2f, 0.7f, 1.0f}) {
        GuidanceConfig config;
        config.steps = 15;
        config.seed = 7;
        const auto maps = constant_maps(10, 8, conf, config.gamma);
        const AttributeImage out = denoise_with_guidance({render, maps, opacity},
                                                         oracle_denoiser(render), config);
        CAPTURE(conf);
        CHECK(mean_abs_diff(out, render) < 1e-5);
    }
}

TEST_CASE("identity denoiser with no guidance returns the initial noise") {
    Rng rng(7);
    const AttributeImage render = random_image(rng, 9, 7, 3);
    GuidanceConfig config;
    config.steps = 10;
    config.beta = 0.0;
    config.sigma_start = 1.0;
    config.seed = 8;
    const auto maps = constant_maps(9, 7, 0.0f, config.gamma);
    const AttributeImage out = denoise_with_guidance({render, maps, constant(9, 7, 1, 0.0f)},
                                                     identity_denoiser(), config);
    AttributeImage expect = add_noise(render, 1.0, config.seed);
    kernels::clamp01(expect.data(), expect.data(), expect.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-6));
}

TEST_CASE("loop output is bit-stable under a fixed seed") {
    Rng rng(8);
    const AttributeImage render = random_image(rng, 11, 9, 3);
    const AttributeImage target = random_image(rng, 11, 9, 3);
    GuidanceConfig config;
    config.steps = 18;
    config.seed = 9;
    const auto maps = constant_maps(11, 9, 0.5f, config.gamma);
    const AttributeImage opacity = constant(11, 9, 1, 0.5f);

    const auto run = [&] {
        return denoise_with_guidance({render, maps, opacity},
                                     noisy_oracle_denoiser(target, 0.1, 3), config);
    };
    const AttributeImage a = run();
    const AttributeImage b = run();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("noisy oracle deviates from the target by sigma_p on average") {
    const AttributeImage target(50, 40, 1, 0.5f);
    const double sigma_p = 0.2;
    auto denoiser = noisy_oracle_denoiser(target, sigma_p, 17);
    const AttributeImage x_t(50, 40, 1, 0.9f);
    const AttributeImage f = denoiser(x_t, 5, 0.7);
    const AttributeImage x0 = predict_x0(x_t, f, 0.7);
    double var = 0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        const double d = double(x0.data()[i]) - 0.5;
        var += d * d;
    }
    const double sd = std::sqrt(var / double(x0.size()));
    CHECK(sd == doctest::Approx(sigma_p).epsilon(0.05));

    // sigma_p = 0 reduces to the exact oracle
    auto exact = noisy_oracle_denoiser(target, 0.0, 17);
    const AttributeImage x0e = predict_x0(x_t, exact(x_t, 5, 0.7), 0.7);
    for (std::size_t i = 0; i < x0e.size(); ++i)
        CHECK(x0e.data()[i] == doctest::Approx(0.5f).epsilon(1e-6));

    CHECK_THROWS(denoiser(x_t, 0, 0.0));
}

TEST_CASE("output error is monotone in confidence when the render is the target") {
    // with x_0^r = target, more confidence means pulling harder toward the
    // truth, so error vs target should not increase
    int wins = 0;
    const int trials = 20;
    for (int s = 0; s < trials; ++s) {
        Rng rng(100 + std::uint64_t(s));
        const AttributeImage target = random_image(rng, 10, 8, 3, 0.1f, 0.9f);
        const AttributeImage opacity = constant(10, 8, 1, 0.5f);
        GuidanceConfig config;
        config.steps = 12;
        config.seed = 200 + std::uint64_t(s);

        auto error_at = [&](float conf) {
            const auto maps = constant_maps(10, 8, conf, config.gamma);
            const AttributeImage out = denoise_with_guidance(
                {target, maps, opacity},
                noisy_oracle_denoiser(target, 0.3, 300 + std::uint64_t(s)), config);
            return mean_abs_diff(out, target);
        };
        if (error_at(0.9f) <= error_at(0.1f)) ++wins;
    }
    CHECK(wins >= 15); // one-sided sign test, p < 0.05 for n = 20
}

TEST_CASE("latent-resolution loop still reconstructs the render shape") {
    AttributeImage render(24, 16, 3);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 24; ++x)
            for (int c = 0; c < 3; ++c)
                render.at(x, y, c) = float(x) / 23.0f * (c == 0 ? 1.0f : 0.5f);
    GuidanceConfig config;
    config.steps = 10;
    config.seed = 10;
    config.latent_width = 12;
    config.latent_height = 8;
    const auto maps = constant_maps(24, 16, 1.0f, config.gamma);
    const AttributeImage opacity = constant(24, 16, 1, 0.5f);
    const AttributeImage out = denoise_with_guidance({render, maps, opacity},
                                                     identity_denoiser(), config);
    REQUIRE(out.width() == 24);
    REQUIRE(out.height() == 16);
    CHECK(out.all_finite());
    // guidance at full confidence reproduces the render up to resampling loss
    CHECK(mean_abs_diff(out, render) < 0.05);
}

TEST_CASE("gamma coverage is validated up front") {
    Rng rng(10);
    const AttributeImage render = random_image(rng, 8, 8, 3);
    GuidanceConfig config;
    config.steps = 9;
    std::vector<ConfidenceMap> maps;
    maps.push_back(ConfidenceMap{AttributeImage(8, 8, 1, 0.5f), config.gamma.lo});
    // mid and hi maps missing
    CHECK_THROWS(denoise_with_guidance({render, maps, constant(8, 8, 1, 0.5f)},
                                       identity_denoiser(), config));
}

TEST_CASE("bridge loopback matches the in-process oracle") {
    Rng rng(11);
    const AttributeImage render = random_image(rng, 10, 8, 3);
    const AttributeImage target = random_image(rng, 10, 8, 3, 0.1f, 0.9f);
    const auto dir = fs::temp_directory_path() / "freefix_bridge_test";
    fs::remove_all(dir);

    GuidanceConfig config;
    config.steps = 8;
    config.beta = 0.0;
    config.seed = 12;
    const auto maps = constant_maps(10, 8, 0.0f, config.gamma);
    const AttributeImage opacity = constant(10, 8, 1, 0.5f);

    std::atomic<bool> stop{false};
    std::thread responder([&] {
        int n = 0;
        while (!stop.load()) {
            const fs::path req_json = dir / ("req_" + std::to_string(n) + ".json");
            const fs::path req_pfm = dir / ("req_" + std::to_string(n) + ".pfm");
            const fs::path res_pfm = dir / ("res_" + std::to_string(n) + ".pfm");
            if (fs::exists(req_json) && fs::exists(req_pfm)) {
                try {
                    std::ifstream jf(req_json);
                    std::string txt((std::istreambuf_iterator<char>(jf)),
                                    std::istreambuf_iterator<char>());
                    const auto pos = txt.find("\"sigma_t\":");
                    const double sigma = std::stod(txt.substr(pos + 10));
                    const AttributeImage x_t = read_pfm(req_pfm.string());
                    AttributeImage f(x_t.width(), x_t.height(), x_t.channels());
                    for (std::size_t i = 0; i < f.size(); ++i)
                        f.data()[i] =
                            float((double(x_t.data()[i]) - target.data()[i]) / sigma);
                    write_pfm(f, res_pfm.string());
                    ++n;
                } catch (...) {
                    // request mid-write; retry
                }
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(1));
        }
    });

    const AttributeImage via_bridge = denoise_with_guidance(
        {render, maps, opacity}, external_denoiser_bridge(dir.string(), 20.0), config);
    stop.store(true);
    responder.join();

    const AttributeImage in_process = denoise_with_guidance(
        {render, maps, opacity}, oracle_denoiser(target), config);
    for (std::size_t i = 0; i < via_bridge.size(); ++i)
        CHECK(via_bridge.data()[i] ==
              doctest::Approx(in_process.data()[i]).epsilon(1e-4));

    // consumed pairs were cleaned up
    std::size_t leftovers = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++leftovers;
    CHECK(leftovers == 0);
    fs::remove_all(dir);
}

TEST_CASE("bridge times out without a responder") {
    Rng rng(12);
    const AttributeImage render = random_image(rng, 6, 6, 3);
    const auto dir = fs::temp_directory_path() / "freefix_bridge_timeout";
    fs::remove_all(dir);
    GuidanceConfig config;
    config.steps = 5;
    config.seed = 13;
    const auto maps = constant_maps(6, 6, 0.5f, config.gamma);
    CHECK_THROWS_WITH_AS(
        denoise_with_guidance({render, maps, AttributeImage(6, 6, 1, 0.5f)},
                              external_denoiser_bridge(dir.string(), 0.2), config),
        doctest::Contains("timed out"), std::runtime_error);
    fs::remove_all(dir);
}
