// Single-executable front end: synthesize, corrupt, render, confidence,
// refine (full pipeline), ablate, eval. Every command reads an optional JSON
// config, lets flags override it, echoes the effective config into the output
// directory and fails with a machine-readable error JSON.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "freefix/confidence.hpp"
#include "freefix/guidance.hpp"
#include "freefix/metrics.hpp"
#include "freefix/pipeline.hpp"
#include "freefix/refine.hpp"
#include "freefix/render.hpp"
#include "freefix/scene.hpp"

namespace fs = std::filesystem;
using freefix::AttributeImage;
using json = nlohmann::ordered_json;

namespace {

// defaults < config file < explicit CLI flags; unknown config keys rejected
class Config {
public:
    explicit Config(json defaults) : cfg_(std::move(defaults)) {}

    void merge_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open config " + path);
        json loaded = json::parse(f);
        if (!loaded.is_object()) throw std::runtime_error(path + ": config must be an object");
        for (auto& [key, value] : loaded.items()) {
            if (!cfg_.contains(key))
                throw std::runtime_error(path + ": unknown config key '" + key + "'");
            cfg_[key] = value;
        }
    }

    template <class T>
    void override_if(const CLI::Option* opt, const std::string& key, const T& value) {
        if (opt && opt->count() > 0) cfg_[key] = value;
    }

    json& raw() { return cfg_; }
    const json& raw() const { return cfg_; }

    void echo(const std::string& out_dir) const {
        if (out_dir.empty()) return;
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "effective_config.json") << cfg_.dump(1) << "\n";
    }

private:
    json cfg_;
};

freefix::GammaLevels parse_gamma(const json& cfg) {
    const auto& g = cfg.at("gamma");
    if (!g.is_array() || g.size() != 3)
        throw std::runtime_error("gamma must be [lo, mid, hi]");
    freefix::GammaLevels levels{g[0].get<double>(), g[1].get<double>(), g[2].get<double>()};
    levels.validate();
    return levels;
}

std::vector<AttributeImage> load_image_dir(const std::string& dir, std::size_t count) {
    std::vector<AttributeImage> images;
    for (std::size_t i = 0; i < count; ++i) {
        const fs::path p = fs::path(dir) / ("view_" + std::to_string(i) + ".pfm");
        if (!fs::exists(p))
            throw std::runtime_error("missing image " + p.string());
        images.push_back(freefix::read_pfm(p.string()));
    }
    return images;
}

void write_view_renders(const std::string& dir, const std::vector<AttributeImage>& images,
                        bool with_png) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const fs::path base = fs::path(dir) / ("view_" + std::to_string(i));
        freefix::write_pfm(images[i], base.string() + ".pfm");
        if (with_png) freefix::write_png(images[i], base.string() + ".png");
    }
}

freefix::DenoiserFactory make_denoiser_factory(const json& cfg,
                                               const freefix::ViewSet& trajectory) {
    const std::string kind = cfg.at("denoiser").get<std::string>();
    const double noise = cfg.at("noise").get<double>();
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();

    if (kind == "identity")
        return [](int, const freefix::CameraView&) { return freefix::identity_denoiser(); };
    if (kind.rfind("bridge:", 0) == 0) {
        const std::string dir = kind.substr(7);
        const double timeout = cfg.at("bridge_timeout").get<double>();
        return [dir, timeout](int, const freefix::CameraView&) {
            return freefix::external_denoiser_bridge(dir, timeout);
        };
    }
    if (kind == "oracle" || kind == "noisy-oracle") {
        const std::string targets = cfg.at("targets").get<std::string>();
        if (targets.empty())
            throw std::runtime_error("denoiser '" + kind + "' needs --targets DIR");
        auto images = std::make_shared<std::vector<AttributeImage>>(
            load_image_dir(targets, trajectory.views.size()));
        if (kind == "oracle")
            return [images](int stage, const freefix::CameraView&) {
                return freefix::oracle_denoiser((*images)[std::size_t(stage)]);
            };
        return [images, noise, seed](int stage, const freefix::CameraView&) {
            return freefix::noisy_oracle_denoiser((*images)[std::size_t(stage)], noise,
                                                  seed * 7919 + std::uint64_t(stage));
        };
    }
    throw std::runtime_error("unknown denoiser '" + kind +
                             "' (expected oracle, noisy-oracle, identity or bridge:DIR)");
}

freefix::PipelineConfig pipeline_config_from(const json& cfg) {
    freefix::PipelineConfig pc;
    pc.guidance.steps = cfg.at("steps").get<int>();
    pc.guidance.sigma_start = cfg.at("sigma_start").get<double>();
    pc.guidance.gamma = parse_gamma(cfg);
    pc.guidance.beta = cfg.at("beta").get<double>();
    pc.guidance.rho = cfg.at("rho").get<double>();
    pc.refine.steps = cfg.at("refine_steps").get<int>();
    pc.seed = cfg.at("seed").get<std::uint64_t>();
    pc.output_dir = cfg.at("out").get<std::string>();
    return pc;
}

int cmd_synth(const Config& config) {
    const json& cfg = config.raw();
    freefix::SyntheticSpec spec;
    spec.kind = freefix::scene_kind_from_string(cfg.at("kind").get<std::string>());
    spec.seed = cfg.at("seed").get<std::uint64_t>();
    spec.primitive_count = cfg.at("count").get<int>();
    spec.train_views = cfg.at("train_views").get<int>();
    spec.extrapolated_views = cfg.at("extra_views").get<int>();
    spec.image_width = cfg.at("width").get<int>();
    spec.image_height = cfg.at("height").get<int>();

    const auto synth = freefix::make_synthetic_scene(spec);
    const std::string out = cfg.at("out").get<std::string>();
    fs::create_directories(out);
    freefix::save_scene(synth.scene, (fs::path(out) / "scene.json").string());
    freefix::save_views(synth.training, (fs::path(out) / "train_views.json").string());
    freefix::save_views(synth.extrapolated,
                        (fs::path(out) / "extrapolated_views.json").string());

    std::vector<AttributeImage> train_images, gt_images;
    for (const auto& v : synth.training.views)
        train_images.push_back(freefix::render_color(v, synth.scene));
    for (const auto& v : synth.extrapolated.views)
        gt_images.push_back(freefix::render_color(v, synth.scene));
    write_view_renders((fs::path(out) / "train").string(), train_images, true);
    write_view_renders((fs::path(out) / "gt").string(), gt_images, true);
    return 0;
}

int cmd_corrupt(const Config& config) {
    const json& cfg = config.raw();
    const auto scene = freefix::load_scene(cfg.at("scene").get<std::string>());
    const auto train = freefix::load_views(cfg.at("train").get<std::string>());
    const auto extra = freefix::load_views(cfg.at("extra").get<std::string>());
    freefix::CorruptSpec spec;
    spec.floater_count = cfg.at("floaters").get<int>();
    spec.seed = cfg.at("seed").get<std::uint64_t>();
    spec.opacity_lo = cfg.at("opacity_lo").get<double>();
    spec.opacity_hi = cfg.at("opacity_hi").get<double>();

    const auto result = freefix::corrupt_scene(scene, train, extra, spec);
    const std::string out = cfg.at("out").get<std::string>();
    fs::create_directories(out);
    freefix::save_scene(result.scene, (fs::path(out) / "corrupted.json").string());
    json report;
    report["requested"] = result.requested;
    report["placed"] = result.placed;
    report["floater_indices"] = result.floater_indices;
    std::ofstream(fs::path(out) / "corrupt_report.json") << report.dump(1) << "\n";
    return 0;
}

int cmd_render(const Config& config) {
    const json& cfg = config.raw();
    const auto scene = freefix::load_scene(cfg.at("scene").get<std::string>());
    const auto views = freefix::load_views(cfg.at("views").get<std::string>());
    const std::string what = cfg.at("what").get<std::string>();

    std::vector<AttributeImage> images;
    for (const auto& v : views.views) {
        if (what == "color") images.push_back(freefix::render_color(v, scene));
        else if (what == "depth") images.push_back(freefix::render_depth(v, scene));
        else if (what == "opacity") images.push_back(freefix::render_opacity(v, scene));
        else throw std::runtime_error("unknown render target '" + what + "'");
    }
    write_view_renders(cfg.at("out").get<std::string>(), images, what == "color");
    return 0;
}

int cmd_confidence(const Config& config) {
    const json& cfg = config.raw();
    const auto scene = freefix::load_scene(cfg.at("scene").get<std::string>());
    const auto train = freefix::load_views(cfg.at("train").get<std::string>());
    const auto views = freefix::load_views(cfg.at("views").get<std::string>());
    const auto gamma = parse_gamma(cfg);
    const std::string mode_str = cfg.at("mode").get<std::string>();
    freefix::UncertaintyMode mode;
    if (mode_str == "inverse") mode = freefix::UncertaintyMode::InverseInformation;
    else if (mode_str == "literal") mode = freefix::UncertaintyMode::LiteralAtView;
    else throw std::runtime_error("unknown uncertainty mode '" + mode_str + "'");

    const auto fisher =
        freefix::accumulate_training_fisher(scene, train, freefix::ParamMask{});
    const std::string out = cfg.at("out").get<std::string>();
    fs::create_directories(out);
    for (std::size_t i = 0; i < views.views.size(); ++i) {
        const auto& view = views.views[i];
        const auto unc = freefix::uncertainty_attribute(fisher, mode, &view, scene);
        for (double g : {gamma.lo, gamma.mid, gamma.hi}) {
            const auto cert = freefix::certainty_attribute(unc, g);
            const auto cm = freefix::render_confidence_map(view, scene, cert, g);
            std::ostringstream name;
            name << "conf_" << i << "_" << g;
            const fs::path base = fs::path(out) / name.str();
            freefix::write_pfm(cm.map, base.string() + ".pfm");
            freefix::write_png(cm.map, base.string() + ".png");
            double lo = 1e30, hi = -1e30, mean = 0;
            for (std::size_t p = 0; p < cm.map.size(); ++p) {
                lo = std::min(lo, double(cm.map.data()[p]));
                hi = std::max(hi, double(cm.map.data()[p]));
                mean += cm.map.data()[p];
            }
            mean /= double(cm.map.size());
            json side;
            side["gamma"] = g;
            side["min"] = lo;
            side["max"] = hi;
            side["mean"] = mean;
            std::ofstream(base.string() + ".json") << side.dump(1) << "\n";
        }
    }
    return 0;
}

int cmd_refine(const Config& config) {
    const json& cfg = config.raw();
    const auto scene = freefix::load_scene(cfg.at("scene").get<std::string>());
    auto train = freefix::load_views(cfg.at("train").get<std::string>());
    const auto trajectory = freefix::load_views(cfg.at("trajectory").get<std::string>());
    train.images =
        load_image_dir(cfg.at("train_images").get<std::string>(), train.views.size());

    const auto pc = pipeline_config_from(cfg);
    const auto factory = make_denoiser_factory(cfg, trajectory);
    freefix::run_freefix(scene, train, trajectory, pc, factory);
    return 0;
}

int cmd_ablate(const Config& config) {
    const json& cfg = config.raw();
    const auto truth = freefix::load_scene(cfg.at("truth").get<std::string>());
    const auto initial = freefix::load_scene(cfg.at("scene").get<std::string>());
    auto train = freefix::load_views(cfg.at("train").get<std::string>());
    const auto trajectory = freefix::load_views(cfg.at("trajectory").get<std::string>());
    train.images =
        load_image_dir(cfg.at("train_images").get<std::string>(), train.views.size());

    auto pc = pipeline_config_from(cfg);
    pc.output_dir.clear();
    freefix::AblationInputs inputs{truth, initial, train, trajectory,
                                   cfg.at("noise").get<double>(),
                                   cfg.at("leak").get<double>()};
    const auto reports =
        freefix::run_ablation(inputs, pc, freefix::standard_ablation_variants());

    const std::string out = cfg.at("out").get<std::string>();
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "ablation.csv") << freefix::to_csv(reports);
    std::ofstream(fs::path(out) / "ablation.md") << freefix::to_markdown(reports);
    std::cout << freefix::to_markdown(reports);
    return 0;
}

int cmd_eval(const Config& config) {
    const json& cfg = config.raw();
    const fs::path dir_a = cfg.at("a").get<std::string>();
    const fs::path dir_b = cfg.at("b").get<std::string>();

    std::set<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir_a))
        if (entry.path().extension() == ".pfm") names.insert(entry.path().filename().string());
    if (names.empty()) throw std::runtime_error("no .pfm files in " + dir_a.string());

    freefix::MetricReport report;
    report.scene = dir_a.string();
    report.variant = dir_b.string();
    for (const auto& name : names) {
        if (!fs::exists(dir_b / name))
            throw std::runtime_error("missing counterpart " + (dir_b / name).string());
        const auto a = freefix::read_pfm((dir_a / name).string());
        const auto b = freefix::read_pfm((dir_b / name).string());
        freefix::MetricRow row;
        row.label = name;
        row.psnr = freefix::psnr(a, b);
        row.ssim = freefix::ssim(a, b);
        report.rows.push_back(std::move(row));
    }
    const std::vector<freefix::MetricReport> reports{report};
    const std::string out = cfg.at("out").get<std::string>();
    if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream(fs::path(out) / "metrics.csv") << freefix::to_csv(reports);
        std::ofstream(fs::path(out) / "metrics.md") << freefix::to_markdown(reports);
    }
    std::cout << freefix::to_csv(reports);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"confidence-guided splat repair"};
    app.require_subcommand(1);

    struct Flags {
        std::string config_path, out, kind = "textured-wall", scene, train, extra, views,
            trajectory, train_images, targets, what = "color", mode = "inverse",
            denoiser = "oracle", truth, a, b;
        std::uint64_t seed = 0;
        int count = 200, train_views = 8, extra_views = 4, width = 48, height = 32;
        int floaters = 5, steps = 30, refine_steps = 300, threads = 1;
        double opacity_lo = 0.6, opacity_hi = 0.95, beta = 0.5, rho = 0.2,
               sigma_start = 1.0, noise = 0.05, leak = 0.5, bridge_timeout = 30.0;
        std::vector<double> gamma{0.001, 0.01, 0.1};
    } f;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", f.config_path, "JSON config; flags override its keys");
        cmd->add_option("--out", f.out, "output directory");
        cmd->add_option("--seed", f.seed, "RNG seed");
        cmd->add_option("--threads", f.threads, "worker cap (rendering is serial today)");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic scene and cameras");
    add_common(synth);
    synth->add_option("--kind", f.kind, "textured-wall | box-room | random-blobs");
    synth->add_option("--count", f.count, "primitive count");
    synth->add_option("--train-views", f.train_views);
    synth->add_option("--extra-views", f.extra_views);
    synth->add_option("--width", f.width);
    synth->add_option("--height", f.height);

    auto* corrupt = app.add_subcommand("corrupt", "plant floaters outside the training frusta");
    add_common(corrupt);
    corrupt->add_option("--scene", f.scene)->required();
    corrupt->add_option("--train", f.train)->required();
    corrupt->add_option("--extra", f.extra)->required();
    corrupt->add_option("--floaters", f.floaters);
    corrupt->add_option("--opacity-lo", f.opacity_lo);
    corrupt->add_option("--opacity-hi", f.opacity_hi);

    auto* render = app.add_subcommand("render", "render views of a scene");
    add_common(render);
    render->add_option("--scene", f.scene)->required();
    render->add_option("--views", f.views)->required();
    render->add_option("--what", f.what, "color | depth | opacity");

    auto* confidence = app.add_subcommand("confidence", "render per-view confidence maps");
    add_common(confidence);
    confidence->add_option("--scene", f.scene)->required();
    confidence->add_option("--train", f.train)->required();
    confidence->add_option("--views", f.views)->required();
    confidence->add_option("--gamma", f.gamma, "lo,mid,hi")->delimiter(',')->expected(3);
    confidence->add_option("--mode", f.mode, "inverse | literal");

    auto* refine = app.add_subcommand("refine", "full fix-and-refine pipeline");
    add_common(refine);
    refine->add_option("--scene", f.scene)->required();
    refine->add_option("--train", f.train)->required();
    refine->add_option("--train-images", f.train_images)->required();
    refine->add_option("--trajectory", f.trajectory)->required();
    refine->add_option("--denoiser", f.denoiser, "oracle | noisy-oracle | identity | bridge:DIR");
    refine->add_option("--targets", f.targets, "target images for oracle denoisers");
    refine->add_option("--noise", f.noise, "noisy-oracle perturbation");
    refine->add_option("--bridge-timeout", f.bridge_timeout);
    refine->add_option("--gamma", f.gamma, "lo,mid,hi")->delimiter(',')->expected(3);
    refine->add_option("--beta", f.beta);
    refine->add_option("--rho", f.rho);
    refine->add_option("--sigma-start", f.sigma_start);
    refine->add_option("--steps", f.steps, "denoising steps");
    refine->add_option("--refine-steps", f.refine_steps, "3D steps per stage");

    auto* ablate = app.add_subcommand("ablate", "module-toggle comparison table");
    add_common(ablate);
    ablate->add_option("--truth", f.truth)->required();
    ablate->add_option("--scene", f.scene)->required();
    ablate->add_option("--train", f.train)->required();
    ablate->add_option("--train-images", f.train_images)->required();
    ablate->add_option("--trajectory", f.trajectory)->required();
    ablate->add_option("--noise", f.noise);
    ablate->add_option("--leak", f.leak, "input fraction the test denoiser keeps");
    ablate->add_option("--gamma", f.gamma, "lo,mid,hi")->delimiter(',')->expected(3);
    ablate->add_option("--beta", f.beta);
    ablate->add_option("--rho", f.rho);
    ablate->add_option("--sigma-start", f.sigma_start);
    ablate->add_option("--steps", f.steps);
    ablate->add_option("--refine-steps", f.refine_steps);

    auto* eval = app.add_subcommand("eval", "PSNR/SSIM between two .pfm directories");
    add_common(eval);
    eval->add_option("--a", f.a)->required();
    eval->add_option("--b", f.b)->required();

    CLI11_PARSE(app, argc, argv);
    CLI::App* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();

    auto opt = [&](const std::string& flag) { return cmd->get_option_no_throw(flag); };

    try {
        json defaults;
        defaults["out"] = f.out;
        defaults["seed"] = f.seed;
        defaults["threads"] = f.threads;
        if (name == "synth") {
            defaults["kind"] = f.kind;
            defaults["count"] = f.count;
            defaults["train_views"] = f.train_views;
            defaults["extra_views"] = f.extra_views;
            defaults["width"] = f.width;
            defaults["height"] = f.height;
        } else if (name == "corrupt") {
            defaults["scene"] = f.scene;
            defaults["train"] = f.train;
            defaults["extra"] = f.extra;
            defaults["floaters"] = f.floaters;
            defaults["opacity_lo"] = f.opacity_lo;
            defaults["opacity_hi"] = f.opacity_hi;
        } else if (name == "render") {
            defaults["scene"] = f.scene;
            defaults["views"] = f.views;
            defaults["what"] = f.what;
        } else if (name == "confidence") {
            defaults["scene"] = f.scene;
            defaults["train"] = f.train;
            defaults["views"] = f.views;
            defaults["gamma"] = f.gamma;
            defaults["mode"] = f.mode;
        } else if (name == "refine" || name == "ablate") {
            defaults["scene"] = f.scene;
            defaults["train"] = f.train;
            defaults["train_images"] = f.train_images;
            defaults["trajectory"] = f.trajectory;
            defaults["noise"] = f.noise;
            defaults["gamma"] = f.gamma;
            defaults["beta"] = f.beta;
            defaults["rho"] = f.rho;
            defaults["sigma_start"] = f.sigma_start;
            defaults["steps"] = f.steps;
            defaults["refine_steps"] = f.refine_steps;
            if (name == "refine") {
                defaults["denoiser"] = f.denoiser;
                defaults["targets"] = f.targets;
                defaults["bridge_timeout"] = f.bridge_timeout;
            } else {
                defaults["truth"] = f.truth;
                defaults["leak"] = f.leak;
            }
        } else if (name == "eval") {
            defaults["a"] = f.a;
            defaults["b"] = f.b;
        }

        Config config(std::move(defaults));
        if (!f.config_path.empty()) config.merge_file(f.config_path);

        // explicit flags win over the config file
        config.override_if(opt("--out"), "out", f.out);
        config.override_if(opt("--seed"), "seed", f.seed);
        config.override_if(opt("--threads"), "threads", f.threads);
        config.override_if(opt("--kind"), "kind", f.kind);
        config.override_if(opt("--count"), "count", f.count);
        config.override_if(opt("--train-views"), "train_views", f.train_views);
        config.override_if(opt("--extra-views"), "extra_views", f.extra_views);
        config.override_if(opt("--width"), "width", f.width);
        config.override_if(opt("--height"), "height", f.height);
        config.override_if(opt("--scene"), "scene", f.scene);
        config.override_if(opt("--train"), "train", f.train);
        config.override_if(opt("--extra"), "extra", f.extra);
        config.override_if(opt("--floaters"), "floaters", f.floaters);
        config.override_if(opt("--opacity-lo"), "opacity_lo", f.opacity_lo);
        config.override_if(opt("--opacity-hi"), "opacity_hi", f.opacity_hi);
        config.override_if(opt("--views"), "views", f.views);
        config.override_if(opt("--what"), "what", f.what);
        config.override_if(opt("--gamma"), "gamma", f.gamma);
        config.override_if(opt("--mode"), "mode", f.mode);
        config.override_if(opt("--train-images"), "train_images", f.train_images);
        config.override_if(opt("--trajectory"), "trajectory", f.trajectory);
        config.override_if(opt("--denoiser"), "denoiser", f.denoiser);
        config.override_if(opt("--targets"), "targets", f.targets);
        config.override_if(opt("--noise"), "noise", f.noise);
        config.override_if(opt("--leak"), "leak", f.leak);
        config.override_if(opt("--bridge-timeout"), "bridge_timeout", f.bridge_timeout);
        config.override_if(opt("--beta"), "beta", f.beta);
        config.override_if(opt("--rho"), "rho", f.rho);
        config.override_if(opt("--sigma-start"), "sigma_start", f.sigma_start);
        config.override_if(opt("--steps"), "steps", f.steps);
        config.override_if(opt("--refine-steps"), "refine_steps", f.refine_steps);
        config.override_if(opt("--truth"), "truth", f.truth);
        config.override_if(opt("--a"), "a", f.a);
        config.override_if(opt("--b"), "b", f.b);

        config.echo(config.raw().value("out", std::string()));

        if (name == "synth") return cmd_synth(config);
        if (name == "corrupt") return cmd_corrupt(config);
        if (name == "render") return cmd_render(config);
        if (name == "confidence") return cmd_confidence(config);
        if (name == "refine") return cmd_refine(config);
        if (name == "ablate") return cmd_ablate(config);
        if (name == "eval") return cmd_eval(config);
        throw std::runtime_error("unhandled subcommand " + name);
    } catch (const std::exception& e) {
        json err;
        err["command"] = name;
        err["error"] = e.what();
        std::cerr << err.dump() << "\n";
        if (!f.out.empty()) {
            std::error_code ec;
            fs::create_directories(f.out, ec);
            std::ofstream(fs::path(f.out) / "error.json") << err.dump(1) << "\n";
        }
        return 1;
    }
}
