#include "ichseq/app.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "ichseq/config.hpp"
#include "ichseq/errors.hpp"
#include "ichseq/ingest.hpp"
#include "ichseq/synth.hpp"
#include "ichseq/tensor_io.hpp"
#include "ichseq/training.hpp"

namespace ichseq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
    std::string config;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void reject_config_flags(const Globals& g, const char* command) {
    if (!g.config.empty() || !g.overrides.empty()) {
        throw ConfigError(std::string("--config/--set do not apply to '") + command +
                          "'; the checkpoint carries its configuration");
    }
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw IoError(std::string(what) + " does not exist", p.string());
}

int cmd_ingest(const Globals& g, const std::string& root, const std::string& labels, const std::string& exclude,
               std::ostream& out) {
    if (g.out.empty()) throw ConfigError("ingest needs --out <manifest.csv>");
    if (!fs::is_directory(root)) throw IoError("ingest root is not a directory", root);
    ingest::ManifestOptions opts;
    if (!labels.empty()) {
        require_file(labels, "label file");
        opts.labels_csv = labels;
    }
    if (!exclude.empty()) {
        require_file(exclude, "exclusion list");
        opts.exclusion_list = exclude;
    }
    const auto result = ingest::build_manifest(root, opts);
    if (result.rows.empty()) throw DataError("no readable slices under " + root);
    const fs::path manifest(g.out);
    if (manifest.has_parent_path()) fs::create_directories(manifest.parent_path());
    ingest::write_manifest_file(manifest, result.rows);
    const fs::path report = fs::path(manifest).concat(".exclusions.json");
    io::write_text_file(report, ingest::exclusion_report_json(result));
    out << "ingest: " << result.rows.size() << " slices, " << ingest::group_by_study(result.rows).size()
        << " studies, " << result.exclusions.size() << " exclusions -> " << manifest.string() << "\n";
    return 0;
}

int cmd_synth(const Globals& g, synth::SynthConfig cfg, std::ostream& out) {
    reject_config_flags(g, "synth");
    if (g.out.empty()) throw ConfigError("synth needs --out <directory>");
    if (g.seed) cfg.seed = *g.seed;
    const auto res = synth::generate(cfg, g.out);
    out << "synth: " << cfg.n_studies << " studies, " << res.n_slices << " slices (" << res.n_positive_slices
        << " positive) -> " << res.manifest.string() << "\n";
    return 0;
}

RunConfig resolve_config(const Globals& g) {
    if (g.config.empty()) throw ConfigError("train needs --config <file>");
    require_file(g.config, "config file");
    RunConfig cfg = load_config(g.config);
    apply_overrides(cfg, g.overrides);
    if (g.seed) cfg.set_seed(*g.seed);
    cfg.validate();
    return cfg;
}

std::vector<Scan> scans_for(const std::string& manifest, const RunConfig& cfg, bool require_labels) {
    if (manifest.empty()) throw ConfigError("manifest path is empty");
    require_file(manifest, "manifest");
    const auto rows = ingest::read_manifest_file(manifest);
    if (rows.empty()) throw DataError("manifest has no rows: " + manifest);
    return load_scans(rows, cfg.windows, cfg.model.input_height, cfg.model.input_width, require_labels);
}

int cmd_train(const Globals& g, std::ostream& out) {
    const RunConfig cfg = resolve_config(g);
    const fs::path run_dir = fs::path(g.out.empty() ? "runs" : g.out) / cfg.name;
    fs::create_directories(run_dir);
    io::write_text_file(run_dir / "config.resolved", to_text(cfg));

    const auto train_scans = scans_for(cfg.data.train_manifest, cfg, true);
    const auto val_scans = scans_for(cfg.data.val_manifest, cfg, true);
    TrainOptions opts;
    opts.run_dir = run_dir;
    auto result = train(cfg, train_scans, val_scans, opts);

    const metrics::LossWeights weights;
    auto best = load_checkpoint(result.checkpoint);
    const auto best_val = validate(*best.model, val_scans, weights, cfg.train.clip_eps);
    const auto final_train = validate(*result.model, train_scans, weights, cfg.train.clip_eps);
    const auto final_val = validate(*result.model, val_scans, weights, cfg.train.clip_eps);
    json report;
    report["best_epoch"] = best.state.epoch;
    report["checkpoint_val"] = json::parse(best_val.to_json());
    report["final_train"] = json::parse(final_train.to_json());
    report["final_val"] = json::parse(final_val.to_json());
    io::write_text_file(run_dir / "report.json", report.dump(2) + "\n");

    out << "train: " << cfg.train.epochs << " epochs, best val loss " << result.state.best_val_loss << " at epoch "
        << best.state.epoch << ", final train loss " << final_train.weighted_log_loss << " -> " << run_dir.string()
        << "\n";
    return 0;
}

fs::path run_dir_for(const Globals& g, const fs::path& checkpoint) {
    if (!g.out.empty()) return g.out;
    return checkpoint.has_parent_path() ? checkpoint.parent_path() : fs::path(".");
}

int cmd_validate(const Globals& g, const std::string& checkpoint, const std::string& manifest, std::ostream& out) {
    reject_config_flags(g, "validate");
    require_file(checkpoint, "checkpoint");
    auto ck = load_checkpoint(checkpoint);
    const auto scans = scans_for(manifest, ck.config, true);
    const auto report = validate(*ck.model, scans, {}, ck.config.train.clip_eps);
    const fs::path dir = run_dir_for(g, checkpoint);
    fs::create_directories(dir);
    io::write_text_file(dir / "report.json", report.to_json() + "\n");
    std::ostringstream auc;
    if (report.per_class_auc[kAnyClass]) {
        auc << *report.per_class_auc[kAnyClass];
    } else {
        auc << "absent";
    }
    out << "validate: " << report.n_slices << " slices, " << report.n_scans << " scans, weighted log loss "
        << report.weighted_log_loss << ", any AUC " << auc.str() << " -> " << (dir / "report.json").string() << "\n";
    return 0;
}

int cmd_predict(const Globals& g, const std::string& checkpoint, const std::string& manifest, const std::string& level,
                std::ostream& out) {
    reject_config_flags(g, "predict");
    require_file(checkpoint, "checkpoint");
    const PredictLevel lv = level == "scan" ? PredictLevel::kScan : PredictLevel::kSlice;
    auto ck = load_checkpoint(checkpoint);
    const auto scans = scans_for(manifest, ck.config, false);
    const auto probs = predict_scans(*ck.model, scans);
    const fs::path dir = run_dir_for(g, checkpoint) / "predictions";
    const fs::path file = dir / (fs::path(manifest).stem().string() + "_" + level + ".csv");
    fs::create_directories(dir);
    io::atomic_write(file, [&](std::ostream& os) { write_predictions(os, scans, probs, lv); });
    std::size_t n_slices = 0;
    for (const auto& p : probs) n_slices += p.dim(0);
    const std::size_t rows = lv == PredictLevel::kScan ? scans.size() : n_slices * kNumClasses;
    out << "predict: " << scans.size() << " scans, " << n_slices << " slices, " << rows << " rows -> " << file.string()
        << "\n";
    return 0;
}

void report_error(std::ostream& err, const char* kind, const std::string& message, int code,
                  const std::string& path = {}) {
    json j{{"error", kind}, {"message", message}, {"exit_code", code}};
    if (!path.empty()) j["path"] = path;
    err << j.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Slice-sequence hemorrhage classifier: ingest, synth, train, validate, predict"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "Run config file");
    app.add_option("--set", g.overrides, "Config override key=value (repeatable)")->allow_extra_args(false);
    app.add_option("--seed", g.seed, "Seed for every random stream");
    app.add_option("--out", g.out, "Output location (manifest file, dataset dir or run dir)");

    std::string root, labels, exclude;
    auto* ingest_cmd = app.add_subcommand("ingest", "Scan a directory tree and write a manifest");
    ingest_cmd->add_option("--root", root, "Input directory")->required();
    ingest_cmd->add_option("--labels", labels, "Label CSV");
    ingest_cmd->add_option("--exclude", exclude, "Study exclusion list, one id per line");

    synth::SynthConfig scfg;
    std::size_t size = 64;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic labelled dataset");
    synth_cmd->add_option("--n-studies", scfg.n_studies, "Number of studies")->capture_default_str();
    synth_cmd->add_option("--slices", scfg.slices_per_study, "Slices per study")->capture_default_str();
    synth_cmd->add_option("--size", size, "Image height and width")->capture_default_str();
    synth_cmd->add_option("--val-fraction", scfg.val_fraction, "Held-out study fraction")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "Train a model; writes runs/<name>/");

    std::string checkpoint, manifest, level = "slice";
    auto* validate_cmd = app.add_subcommand("validate", "Score a checkpoint on a labelled manifest");
    validate_cmd->add_option("--checkpoint", checkpoint, "checkpoint.bin")->required();
    validate_cmd->add_option("--manifest", manifest, "Labelled manifest")->required();
    auto* predict_cmd = app.add_subcommand("predict", "Write slice or scan predictions");
    predict_cmd->add_option("--checkpoint", checkpoint, "checkpoint.bin")->required();
    predict_cmd->add_option("--manifest", manifest, "Manifest")->required();
    predict_cmd->add_option("--level", level, "slice or scan")->check(CLI::IsMember({"slice", "scan"}));

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        report_error(err, "usage", e.what(), static_cast<int>(ExitCode::kConfig));
        return static_cast<int>(ExitCode::kConfig);
    }

    try {
        if (*ingest_cmd) return cmd_ingest(g, root, labels, exclude, out);
        if (*synth_cmd) {
            scfg.height = scfg.width = size;
            return cmd_synth(g, scfg, out);
        }
        if (*train_cmd) return cmd_train(g, out);
        if (*validate_cmd) return cmd_validate(g, checkpoint, manifest, out);
        if (*predict_cmd) return cmd_predict(g, checkpoint, manifest, level, out);
    } catch (const IoError& e) {
        report_error(err, e.kind(), e.what(), static_cast<int>(e.exit_code()), e.path());
        return static_cast<int>(e.exit_code());
    } catch (const Error& e) {
        report_error(err, e.kind(), e.what(), static_cast<int>(e.exit_code()));
        return static_cast<int>(e.exit_code());
    } catch (const std::exception& e) {
        report_error(err, "internal", e.what(), static_cast<int>(ExitCode::kRuntime));
        return static_cast<int>(ExitCode::kRuntime);
    }
    return static_cast<int>(ExitCode::kConfig);
}

}  // namespace ichseq
