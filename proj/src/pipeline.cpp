#include "freefix/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "freefix/kernels.hpp"
#include "freefix/render.hpp"
#include "freefix/rng.hpp"

namespace freefix {

namespace fs = std::filesystem;

void PipelineConfig::validate() const {
    guidance.validate();
    refine.validate();
    if (!(max_center_gap > 0))
        throw std::invalid_argument("pipeline: max_center_gap must be > 0");
    if (!fisher_mask.any())
        throw std::invalid_argument("pipeline: empty fisher mask");
}

namespace {

std::string gamma_tag(double g) {
    std::ostringstream os;
    os << g;
    return os.str();
}

std::vector<ConfidenceMap> build_conf_maps(const GaussianScene& scene,
                                           const CameraView& view,
                                           const FisherAccumulator& fisher,
                                           const PipelineConfig& config) {
    const GammaLevels& levels = config.guidance.gamma;
    std::vector<ConfidenceMap> maps;
    if (config.use_confidence) {
        const auto unc =
            uncertainty_attribute(fisher, config.uncertainty_mode, &view, scene);
        for (double g : {levels.lo, levels.mid, levels.hi}) {
            const auto cert = certainty_attribute(unc, g);
            maps.push_back(render_confidence_map(view, scene, cert, g));
        }
    } else {
        // opacity-only guidance baseline: M^alpha stands in for every level
        AttributeImage op = render_opacity(view, scene);
        kernels::clamp01(op.data(), op.data(), op.size());
        for (double g : {levels.lo, levels.mid, levels.hi})
            maps.push_back(ConfidenceMap{op, g});
    }
    return maps;
}

void write_stage_outputs(const std::string& out_dir, int stage, const StageRecord& rec,
                         const std::string& refine_csv) {
    const fs::path dir = fs::path(out_dir) / ("stage_" + std::to_string(stage));
    fs::create_directories(dir);
    write_pfm(rec.render, (dir / "render.pfm").string());
    write_png(rec.render, (dir / "render.png").string());
    for (const auto& cm : rec.conf_maps)
        write_pfm(cm.map, (dir / ("conf_" + gamma_tag(cm.gamma) + ".pfm")).string());
    write_pfm(rec.fixed, (dir / "fixed.pfm").string());
    write_png(rec.fixed, (dir / "fixed.png").string());
    std::ofstream(dir / "refine_log.csv") << refine_csv;
}

void persist_results(const std::string& out_dir, const GaussianScene& scene,
                     const std::vector<StageRecord>& records, std::uint64_t seed) {
    if (out_dir.empty()) return;
    fs::create_directories(out_dir);
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["stages"] = nlohmann::ordered_json::array();
    for (const auto& rec : records) {
        nlohmann::ordered_json s;
        s["stage"] = rec.stage;
        s["gammas"] = nlohmann::ordered_json::array();
        for (const auto& cm : rec.conf_maps) s["gammas"].push_back(cm.gamma);
        s["prior_fixed_psnr"] = rec.prior_fixed_psnr;
        j["stages"].push_back(std::move(s));
    }
    std::ofstream((fs::path(out_dir) / "records.json")) << j.dump(1) << "\n";
    save_scene(scene, (fs::path(out_dir) / "scene_final.json").string());
}

void warn_on_gap(const ViewSet& trajectory, double max_gap) {
    for (std::size_t i = 1; i < trajectory.views.size(); ++i) {
        const double gap =
            (trajectory.views[i].center() - trajectory.views[i - 1].center()).norm();
        if (gap > max_gap)
            std::fprintf(stderr,
                         "warning: trajectory gap %.3f between views %zu and %zu "
                         "exceeds %.3f; fixes assume small camera motion\n",
                         gap, i - 1, i, max_gap);
    }
}

std::vector<double> fixed_set_psnr(const GaussianScene& scene, const FixedViewSet& fixed,
                                   std::size_t upto) {
    std::vector<double> out;
    for (std::size_t j = 0; j <= upto && j < fixed.entries.size(); ++j)
        out.push_back(psnr(render_color(fixed.entries[j].view, scene),
                           fixed.entries[j].image));
    return out;
}

AttributeImage clamped_opacity(const CameraView& view, const GaussianScene& scene) {
    AttributeImage op = render_opacity(view, scene);
    kernels::clamp01(op.data(), op.data(), op.size());
    return op;
}

} // namespace

PipelineResult run_freefix(const GaussianScene& initial, const ViewSet& train,
                           const ViewSet& trajectory, const PipelineConfig& config,
                           const DenoiserFactory& make_denoiser) {
    config.validate();
    warn_on_gap(trajectory, config.max_center_gap);

    PipelineResult result;
    result.scene = initial;
    Rng seed_seq(config.seed);
    std::optional<FisherAccumulator> fisher;

    auto refresh_fisher = [&](const GaussianScene& scene) -> const FisherAccumulator& {
        if (!fisher || config.fisher_refresh == FisherRefresh::PerStage)
            fisher = accumulate_training_fisher(scene, train, config.fisher_mask);
        return *fisher;
    };

    try {
        if (config.interleave) {
            for (std::size_t i = 0; i < trajectory.views.size(); ++i) {
                const CameraView& view = trajectory.views[i];
                const std::uint64_t gseed = seed_seq.next_u64();
                const std::uint64_t rseed = seed_seq.next_u64();

                StageRecord rec;
                rec.stage = int(i);
                rec.render = render_color(view, result.scene);
                rec.conf_maps =
                    build_conf_maps(result.scene, view, refresh_fisher(result.scene), config);

                GuidanceConfig g = config.guidance;
                g.seed = gseed;
                rec.fixed = denoise_with_guidance(
                    {rec.render, rec.conf_maps, clamped_opacity(view, result.scene)},
                    make_denoiser(int(i), view), g);

                result.fixed.entries.push_back({view, rec.fixed, {}});

                RefineConfig r = config.refine;
                r.seed = rseed;
                if (!config.use_affine) r.optimize_affine = false;
                std::string csv;
                result.scene = refine_3d(result.scene, train, result.fixed, int(i), r, &csv);

                rec.prior_fixed_psnr = fixed_set_psnr(result.scene, result.fixed, i);
                if (!config.output_dir.empty())
                    write_stage_outputs(config.output_dir, int(i), rec, csv);
                result.records.push_back(std::move(rec));
            }
        } else {
            // ablation path: fix every view against the initial scene, then one
            // joint refinement over the whole fixed set
            for (std::size_t i = 0; i < trajectory.views.size(); ++i) {
                const CameraView& view = trajectory.views[i];
                const std::uint64_t gseed = seed_seq.next_u64();
                seed_seq.next_u64(); // keep the stage seed stream aligned

                StageRecord rec;
                rec.stage = int(i);
                rec.render = render_color(view, initial);
                rec.conf_maps = build_conf_maps(initial, view, refresh_fisher(initial), config);

                GuidanceConfig g = config.guidance;
                g.seed = gseed;
                rec.fixed = denoise_with_guidance(
                    {rec.render, rec.conf_maps, clamped_opacity(view, initial)},
                    make_denoiser(int(i), view), g);

                result.fixed.entries.push_back({view, rec.fixed, {}});
                result.records.push_back(std::move(rec));
            }
            if (!trajectory.views.empty()) {
                RefineConfig r = config.refine;
                r.seed = seed_seq.next_u64();
                if (!config.use_affine) r.optimize_affine = false;
                std::string csv;
                result.scene = refine_3d(result.scene, train, result.fixed, -1, r, &csv);
                for (std::size_t i = 0; i < result.records.size(); ++i) {
                    result.records[i].prior_fixed_psnr =
                        fixed_set_psnr(result.scene, result.fixed, i);
                    if (!config.output_dir.empty())
                        write_stage_outputs(config.output_dir, int(i), result.records[i],
                                            i + 1 == result.records.size() ? csv : "");
                }
            }
        }
    } catch (...) {
        persist_results(config.output_dir, result.scene, result.records, config.seed);
        throw;
    }

    persist_results(config.output_dir, result.scene, result.records, config.seed);
    return result;
}

PipelineResult run_freefix(const GaussianScene& initial, const ViewSet& train,
                           const ViewSet& trajectory, const PipelineConfig& config,
                           const DenoiserContract& denoiser) {
    return run_freefix(initial, train, trajectory, config,
                       [&denoiser](int, const CameraView&) { return denoiser; });
}

std::vector<AblationVariant> standard_ablation_variants() {
    return {
        {"full", true, true, true, true},
        {"no_confidence", false, true, true, true},
        {"no_interleave", true, false, true, true},
        {"no_overall_guidance", true, true, false, true},
        {"no_affine", true, true, true, false},
        {"all_off", false, false, false, false},
    };
}

std::vector<MetricReport> run_ablation(const AblationInputs& in,
                                       const PipelineConfig& base,
                                       const std::vector<AblationVariant>& variants) {
    std::vector<AttributeImage> truth_renders;
    truth_renders.reserve(in.trajectory.views.size());
    for (const auto& v : in.trajectory.views)
        truth_renders.push_back(render_color(v, in.truth));

    std::vector<MetricReport> reports;
    for (const auto& variant : variants) {
        PipelineConfig config = base;
        config.use_confidence = variant.use_confidence;
        config.interleave = variant.interleave;
        config.use_affine = variant.use_affine;
        if (!variant.overall_guidance) config.guidance.beta = 0.0;
        config.output_dir.clear();

        DenoiserFactory factory = [&](int stage, const CameraView&) {
            return conditioned_oracle_denoiser(truth_renders[std::size_t(stage)],
                                               in.render_leak, in.denoiser_noise,
                                               base.seed * 7919 + std::uint64_t(stage));
        };
        const PipelineResult run =
            run_freefix(in.initial, in.train, in.trajectory, config, factory);

        MetricReport rep;
        rep.scene = in.initial.meta.name;
        rep.variant = variant.name;
        rep.seed = base.seed;
        for (std::size_t j = 0; j < in.trajectory.views.size(); ++j) {
            const AttributeImage render = render_color(in.trajectory.views[j], run.scene);
            MetricRow row;
            row.label = "view_" + std::to_string(j);
            row.psnr = psnr(render, truth_renders[j]);
            row.ssim = ssim(render, truth_renders[j]);
            rep.rows.push_back(std::move(row));
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

} // namespace freefix
