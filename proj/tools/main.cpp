#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "sida/config.hpp"
#include "sida/dataset.hpp"
#include "sida/eval.hpp"
#include "sida/gradcheck.hpp"
#include "sida/perturb.hpp"
#include "sida/version.hpp"

namespace fs = std::filesystem;
using namespace sida;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitExcessiveSkips = 3;

struct CommonFlags {
    std::string config_path;
    std::string out_dir = "out";
    std::string checkpoint;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string preset;
    int threads = 0;
};

RunConfig load_run_config(const CommonFlags& flags) {
    if (flags.config_path.empty()) throw ConfigError("--config is required");
    RunConfig cfg = RunConfig::from_file(flags.config_path);
    if (flags.seed_set) {
        cfg.seed = flags.seed;
        cfg.train.seed = flags.seed;
    }
    if (!flags.preset.empty()) {
        cfg.weights_preset = flags.preset;
        cfg.train.weights = LossWeights::preset(flags.preset);
    }
    if (flags.threads > 0) cfg.eval_threads = flags.threads;
    return cfg;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
}

nlohmann::ordered_json report_envelope(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["artifact_version"] = kArtifactVersion;
    j["config_hash"] = cfg.config_hash_hex();
    j["seed"] = cfg.seed;
    return j;
}

std::vector<Sample> load_split_samples(const RunConfig& cfg, const std::string& part) {
    if (cfg.paths.manifest.empty()) throw ConfigError("config paths.manifest is required");
    auto entries = load_manifest(cfg.paths.manifest);
    SplitAssignment assignment = split(entries, cfg.seed);
    std::vector<Sample> samples;
    for (const auto& e : entries) {
        const SplitPart p = assignment.at(e.path);
        const bool keep = part == "all" || part == split_part_name(p);
        if (keep) samples.push_back(load_sample(e, cfg.paths.data_dir));
    }
    if (samples.empty()) throw std::runtime_error("no samples in split '" + part + "'");
    return samples;
}

void write_loss_log(const std::vector<LossBreakdown>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    int step = 0;
    for (const auto& l : log) {
        nlohmann::ordered_json j;
        j["step"] = step++;
        j["det"] = l.det;
        j["bce"] = l.bce;
        j["dice"] = l.dice;
        j["mask"] = l.mask;
        if (l.txt) j["txt"] = *l.txt;
        j["total"] = l.total;
        out << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(double eps, double tol, std::uint64_t seed, bool inject_fault) {
    GradCheckReport report = run_gradcheck(eps, seed, inject_fault);
    std::printf("gradient check: eps=%g tol=%g seed=%llu%s\n", report.eps, tol,
                static_cast<unsigned long long>(seed), inject_fault ? " (fault injected)" : "");
    for (const auto& r : report.results) {
        std::printf("  %-28s max_rel_err=%.3e coords=%d\n", r.name.c_str(), r.max_rel_err,
                    r.coords);
    }
    std::printf("worst relative error: %.3e (%.2f s)\n", report.worst, report.seconds);
    if (!report.pass(tol)) {
        std::printf("FAIL: tolerance %g exceeded\n", tol);
        return kExitVerifyFail;
    }
    std::printf("PASS\n");
    return kExitOk;
}

int cmd_train(const CommonFlags& flags, const std::string& stage_sel) {
    RunConfig cfg = load_run_config(flags);
    fs::create_directories(flags.out_dir);
    write_text((fs::path(flags.out_dir) / "config.json").string(),
               cfg.to_json().dump(2) + "\n");
    write_text((fs::path(flags.out_dir) / "run_info.json").string(),
               report_envelope(cfg).dump(2) + "\n");
    std::printf("config hash: %s\n", cfg.config_hash_hex().c_str());

    Rng rng(cfg.seed);
    SidaModel model(cfg.model, rng);
    Trainer trainer(model, cfg.train);
    if (!flags.checkpoint.empty()) {
        if (cfg.train.lora) trainer.set_stage(1);  // attach adapters before loading
        load_checkpoint(flags.checkpoint, model, &trainer.optimizer());
        std::printf("resumed from %s\n", flags.checkpoint.c_str());
    }

    auto samples = load_split_samples(cfg, "train");
    std::printf("training on %zu samples\n", samples.size());

    const bool run1 = stage_sel == "1" || stage_sel == "both";
    const bool run2 = stage_sel == "2" || stage_sel == "both";
    if (run1) {
        auto log = trainer.run_stage(samples, 1);
        write_loss_log(log, (fs::path(flags.out_dir) / "loss_log_stage1.jsonl").string());
        save_checkpoint((fs::path(flags.out_dir) / "stage1.ckpt").string(), model,
                        &trainer.optimizer(), cfg.config_hash());
        std::printf("stage 1: %zu steps, final total loss %.6f\n", log.size(),
                    log.empty() ? 0.0 : log.back().total);
    }
    if (run2) {
        auto log = trainer.run_stage(samples, 2);
        write_loss_log(log, (fs::path(flags.out_dir) / "loss_log_stage2.jsonl").string());
        save_checkpoint((fs::path(flags.out_dir) / "stage2.ckpt").string(), model,
                        &trainer.optimizer(), cfg.config_hash());
        std::printf("stage 2: %zu steps, final total loss %.6f\n", log.size(),
                    log.empty() ? 0.0 : log.back().total);
    }
    return kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& part, bool oracle) {
    RunConfig cfg = load_run_config(flags);
    if (flags.checkpoint.empty() && !oracle) {
        throw ConfigError("eval requires --checkpoint (or --oracle for the metric stub)");
    }
    Rng rng(cfg.seed);
    SidaModel model(cfg.model, rng);
    if (!flags.checkpoint.empty()) {
        if (cfg.train.lora) {
            Rng lora_rng(0);
            model.vlm().attach_lora(cfg.train.lora->rank, cfg.train.lora->alpha,
                                    cfg.train.lora->dropout, lora_rng);
        }
        load_checkpoint(flags.checkpoint, model, nullptr);
    }
    auto samples = load_split_samples(cfg, part);
    EvalOptions opts;
    opts.threads = cfg.eval_threads;
    opts.oracle_stub = oracle;
    EvalReport report = evaluate_model(model, samples, opts);

    fs::create_directories(flags.out_dir);
    nlohmann::ordered_json j = report_envelope(cfg);
    j["split"] = part;
    j["samples"] = samples.size();
    j["report"] = report.to_json();
    write_text((fs::path(flags.out_dir) / "eval.json").string(), j.dump(2) + "\n");
    const std::string table = EvalReport::table_header() + "\n" + report.to_row(part) + "\n";
    write_text((fs::path(flags.out_dir) / "eval.txt").string(), table);
    std::printf("%s", table.c_str());
    std::printf("config hash: %s\n", cfg.config_hash_hex().c_str());
    return kExitOk;
}

int cmd_robustness(const CommonFlags& flags, const std::string& part) {
    RunConfig cfg = load_run_config(flags);
    if (flags.checkpoint.empty()) throw ConfigError("robustness requires --checkpoint");
    Rng rng(cfg.seed);
    SidaModel model(cfg.model, rng);
    if (cfg.train.lora) {
        Rng lora_rng(0);
        model.vlm().attach_lora(cfg.train.lora->rank, cfg.train.lora->alpha,
                                cfg.train.lora->dropout, lora_rng);
    }
    load_checkpoint(flags.checkpoint, model, nullptr);
    auto samples = load_split_samples(cfg, part);
    EvalOptions opts;
    opts.threads = cfg.eval_threads;
    RobustnessTable table = robustness_eval(model, samples, robustness_battery(), opts);

    fs::create_directories(flags.out_dir);
    nlohmann::ordered_json j = report_envelope(cfg);
    j["split"] = part;
    j["rows"] = table.to_json();
    write_text((fs::path(flags.out_dir) / "robustness.json").string(), j.dump(2) + "\n");
    write_text((fs::path(flags.out_dir) / "robustness.txt").string(), table.to_text());
    std::printf("%s", table.to_text().c_str());
    std::printf("config hash: %s\n", cfg.config_hash_hex().c_str());
    return kExitOk;
}

int cmd_datagen(const CommonFlags& flags, bool mock) {
    RunConfig cfg = load_run_config(flags);
    if (cfg.datagen.captions.empty()) throw ConfigError("config datagen.captions is required");
    auto inputs = load_pipeline_inputs(cfg.datagen.captions);

    PipelineConfig pc;
    pc.seed = cfg.seed;
    pc.object_ratio = cfg.datagen.object_ratio;
    pc.parallelism = cfg.datagen.parallelism;
    pc.inpaint_retries = cfg.datagen.inpaint_retries;
    pc.placeholder_size = cfg.datagen.placeholder_size;
    pc.out_dir = flags.out_dir;
    if (!cfg.datagen.dicts.empty()) pc.dicts = ReplacementDicts::load(cfg.datagen.dicts);

    std::unique_ptr<ObjectExtractor> extractor;
    std::unique_ptr<Segmenter> segmenter;
    std::unique_ptr<Inpainter> inpainter;
    if (mock) {
        extractor = std::make_unique<TokenMatchExtractor>();
        segmenter = std::make_unique<CenterRectSegmenter>();
        inpainter = std::make_unique<PatternInpainter>(cfg.seed);
    } else {
        for (const auto* ep : {&cfg.datagen.extract, &cfg.datagen.segment, &cfg.datagen.inpaint}) {
            if (ep->port <= 0) {
                throw ConfigError("datagen endpoints need ports (or run with --mock)");
            }
        }
        extractor = std::make_unique<HttpObjectExtractor>(cfg.datagen.extract);
        segmenter = std::make_unique<HttpSegmenter>(cfg.datagen.segment);
        inpainter = std::make_unique<HttpInpainter>(cfg.datagen.inpaint);
    }

    PipelineResult result = run_pipeline(inputs, *extractor, *segmenter, *inpainter, pc);
    save_caption_records(result.caption_records,
                         (fs::path(flags.out_dir) / "image_caption_object.json").string());
    save_tamper_records(result.records,
                        (fs::path(flags.out_dir) / "tamper_records.jsonl").string());
    {
        std::ofstream out((fs::path(flags.out_dir) / "skips.jsonl").string());
        for (const auto& s : result.skips) {
            out << nlohmann::ordered_json{
                       {"image_id", s.image_id}, {"stage", s.stage}, {"reason", s.reason}}
                       .dump()
                << "\n";
        }
    }
    const double skip_fraction =
        inputs.empty() ? 0.0 : static_cast<double>(result.skips.size()) / inputs.size();
    nlohmann::ordered_json summary = report_envelope(cfg);
    summary["inputs"] = inputs.size();
    summary["records"] = result.records.size();
    summary["skips"] = result.skips.size();
    summary["skip_fraction"] = skip_fraction;
    write_text((fs::path(flags.out_dir) / "summary.json").string(), summary.dump(2) + "\n");
    std::printf("datagen: %zu records, %zu skips (%.1f%%), outputs in %s\n",
                result.records.size(), result.skips.size(), 100.0 * skip_fraction,
                flags.out_dir.c_str());
    if (skip_fraction > cfg.datagen.skip_threshold) {
        std::fprintf(stderr, "skip fraction %.2f exceeds threshold %.2f\n", skip_fraction,
                     cfg.datagen.skip_threshold);
        return kExitExcessiveSkips;
    }
    return kExitOk;
}

int cmd_inspect(const std::string& checkpoint, const std::string& manifest) {
    if (!checkpoint.empty()) {
        CheckpointSummary s = inspect_checkpoint(checkpoint);
        std::printf("checkpoint %s\n", checkpoint.c_str());
        std::printf("  version: %u\n", s.version);
        std::printf("  config hash: %llx\n", static_cast<unsigned long long>(s.config_hash));
        std::printf("  parameters: %zu\n", s.params.size());
        long total = 0;
        for (const auto& [name, shape] : s.params) total += shape_numel(shape);
        std::printf("  total elements: %ld\n", total);
        for (const auto& [name, shape] : s.params) {
            std::printf("    %-28s %s\n", name.c_str(), shape_str(shape).c_str());
        }
        if (s.has_optimizer) std::printf("  optimizer steps: %ld\n", s.optimizer_steps);
        return kExitOk;
    }
    if (!manifest.empty()) {
        auto entries = load_manifest(manifest);
        long by_label[3] = {0, 0, 0};
        long masks = 0, descriptions = 0;
        for (const auto& e : entries) {
            ++by_label[static_cast<int>(e.label)];
            masks += e.mask_path.has_value();
            descriptions += e.description.has_value();
        }
        std::printf("manifest %s\n", manifest.c_str());
        std::printf("  entries: %zu (real %ld, synthetic %ld, tampered %ld)\n", entries.size(),
                    by_label[0], by_label[1], by_label[2]);
        std::printf("  masks: %ld, descriptions: %ld\n", masks, descriptions);
        return kExitOk;
    }
    throw ConfigError("inspect needs --checkpoint or --manifest");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SIDA: deepfake detection, localization and explanation at desk scale"};
    app.require_subcommand(1);

    CommonFlags flags;

    // gradcheck
    auto* gradcheck = app.add_subcommand(
        "gradcheck", "Verify analytic gradients against central finite differences");
    double eps = 1e-5, tol = 1e-4;
    std::uint64_t gc_seed = 0;
    bool inject_fault = false;
    gradcheck->add_option("--eps", eps, "finite-difference step")->capture_default_str();
    gradcheck->add_option("--tol", tol, "maximum relative error")->capture_default_str();
    gradcheck->add_option("--seed", gc_seed, "random seed")->capture_default_str();
    gradcheck->add_flag("--inject-fault", inject_fault,
                        "corrupt one gradient on purpose (harness negative control)");

    auto add_common = [&](CLI::App* cmd, bool with_checkpoint) {
        cmd->add_option("--config", flags.config_path, "run config JSON")->required();
        cmd->add_option("--out", flags.out_dir, "output directory")->capture_default_str();
        cmd->add_option("--seed", flags.seed, "seed override")
            ->each([&](const std::string&) { flags.seed_set = true; });
        cmd->add_option("--preset", flags.preset, "loss-weight preset (sec5 | sec56)")
            ->check(CLI::IsMember({"sec5", "sec56"}));
        cmd->add_option("--threads", flags.threads, "evaluation threads");
        if (with_checkpoint) cmd->add_option("--checkpoint", flags.checkpoint, "checkpoint path");
    };

    // train
    auto* train = app.add_subcommand("train", "Two-stage training run");
    std::string stage_sel = "both";
    add_common(train, true);
    train->add_option("--stage", stage_sel, "1 | 2 | both")
        ->check(CLI::IsMember({"1", "2", "both"}))
        ->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    std::string split_part = "test";
    bool oracle = false;
    add_common(eval, true);
    eval->add_option("--split", split_part, "train | val | test | all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}))
        ->capture_default_str();
    eval->add_flag("--oracle", oracle, "echo ground truth (metric plumbing check)");

    // robustness
    auto* robust = app.add_subcommand("robustness", "Seven-row degradation battery");
    std::string robust_split = "test";
    add_common(robust, true);
    robust->add_option("--split", robust_split, "train | val | test | all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}))
        ->capture_default_str();

    // datagen
    auto* datagen = app.add_subcommand("datagen", "Four-stage tampered-image pipeline");
    bool mock = false;
    add_common(datagen, false);
    datagen->add_flag("--mock", mock, "use in-process deterministic mock backends");

    // inspect
    auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint or manifest");
    std::string inspect_ckpt, inspect_manifest;
    inspect->add_option("--checkpoint", inspect_ckpt, "checkpoint path");
    inspect->add_option("--manifest", inspect_manifest, "manifest path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gradcheck->parsed()) return cmd_gradcheck(eps, tol, gc_seed, inject_fault);
        if (train->parsed()) return cmd_train(flags, stage_sel);
        if (eval->parsed()) return cmd_eval(flags, split_part, oracle);
        if (robust->parsed()) return cmd_robustness(flags, robust_split);
        if (datagen->parsed()) return cmd_datagen(flags, mock);
        if (inspect->parsed()) return cmd_inspect(inspect_ckpt, inspect_manifest);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
