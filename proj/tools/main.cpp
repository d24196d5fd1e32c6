#include <ctime>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pathcons/checkpoint.hpp"
#include "pathcons/experiments.hpp"

namespace {

using namespace pathcons;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int parallel = 1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "experiment config (JSON; a manifest also works)");
    if (config_required) opt->required();
    cmd->add_option("--out", args.out_dir, "output directory (overrides config out_dir)");
    cmd->add_option("--seed", args.seed, "override the config seed list with a single seed")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_option("--parallel", args.parallel, "worker threads for grid cells")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve_config(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args.config_path);
    if (args.seed_set) cfg.seeds = {args.seed};
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

RunManifest start_manifest(const std::string& command, const ExperimentConfig& cfg) {
    RunManifest m;
    m.command = command;
    m.config = cfg;
    m.config_hash = cfg.config_hash();
    m.seeds = cfg.seeds;
    m.started_unix = static_cast<std::int64_t>(std::time(nullptr));
    return m;
}

void finish_manifest(RunManifest& m, const std::filesystem::path& dir, std::vector<std::string> outputs) {
    m.outputs = std::move(outputs);
    m.finished_unix = static_cast<std::int64_t>(std::time(nullptr));
    m.write(dir / "manifest.json");
}

std::filesystem::path ensure_out_dir(const ExperimentConfig& cfg) {
    const std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw UsageError("failed to write " + path.string());
}

int cmd_gen_data(const CommonArgs& args) {
    const ExperimentConfig cfg = resolve_config(args);
    const auto dir = ensure_out_dir(cfg);
    RunManifest m = start_manifest("gen-data", cfg);
    const Dataset dataset = build_dataset(cfg.dataset);
    write_dataset(dataset, dir);
    m.dataset_sha256 = dataset.sha256;
    finish_manifest(m, dir, {"index.txt", "samples/"});
    std::cout << "dataset sha256 " << dataset.sha256 << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const ExperimentConfig cfg = resolve_config(args);
    const auto dir = ensure_out_dir(cfg);
    RunManifest m = start_manifest("train", cfg);
    const ExperimentContext ctx = prepare_context(cfg);
    m.dataset_sha256 = ctx.dataset.sha256;

    const std::uint64_t seed = cfg.seeds.front();
    const TrainResult result = train_run(cfg, seed, ctx.train_plans, ctx.val_plans);
    write_checkpoint(result.params, dir / "checkpoint.bin");

    CsvWriter metrics(metrics_csv_header(cfg.dataset.n_classes));
    metrics.add_row(metrics_csv_row("train", seed, result.report, cfg.dataset.n_classes));
    metrics.write(dir / "metrics.csv");

    CsvWriter losses({"epoch", "l3d", "lcons", "total"});
    for (std::size_t e = 0; e < result.report.l3d_per_epoch.size(); ++e) {
        losses.add_row({std::to_string(e), format_double(result.report.l3d_per_epoch[e]),
                        format_double(result.report.lcons_per_epoch[e]),
                        format_double(result.report.total_per_epoch[e])});
    }
    losses.write(dir / "losses.csv");

    finish_manifest(m, dir, {"checkpoint.bin", "metrics.csv", "losses.csv"});
    std::cout << "mean_iou " << format_double(result.report.mean_iou) << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint) {
    const ExperimentConfig cfg = resolve_config(args);
    const auto dir = ensure_out_dir(cfg);
    RunManifest m = start_manifest("eval", cfg);
    if (checkpoint.empty()) throw UsageError("eval needs --checkpoint");
    const Parameters params = read_checkpoint(checkpoint);
    const ExperimentContext ctx = prepare_context(cfg);
    m.dataset_sha256 = ctx.dataset.sha256;

    const MetricsReport report = evaluate_params(cfg, params, ctx.val_plans);
    CsvWriter metrics(metrics_csv_header(cfg.dataset.n_classes));
    metrics.add_row(metrics_csv_row("eval", cfg.seeds.front(), report, cfg.dataset.n_classes));
    metrics.write(dir / "metrics.csv");
    finish_manifest(m, dir, {"metrics.csv"});
    std::cout << "mean_iou " << format_double(report.mean_iou) << "\n";
    return 0;
}

int cmd_grid_fusion(const CommonArgs& args) {
    const ExperimentConfig cfg = resolve_config(args);
    const auto dir = ensure_out_dir(cfg);
    RunManifest m = start_manifest("grid-fusion", cfg);
    const ExperimentContext ctx = prepare_context(cfg);
    m.dataset_sha256 = ctx.dataset.sha256;
    const GridResult grid = run_fusion_grid(cfg, ctx, args.parallel);
    grid.csv.write(dir / "metrics.csv");
    finish_manifest(m, dir, {"metrics.csv"});
    return 0;
}

int cmd_grid_loss(const CommonArgs& args) {
    const ExperimentConfig cfg = resolve_config(args);
    const auto dir = ensure_out_dir(cfg);
    RunManifest m = start_manifest("grid-loss", cfg);
    const ExperimentContext ctx = prepare_context(cfg);
    m.dataset_sha256 = ctx.dataset.sha256;
    const GridResult grid = run_loss_ablation(cfg, ctx, args.parallel);
    grid.csv.write(dir / "metrics.csv");
    finish_manifest(m, dir, {"metrics.csv"});
    return 0;
}

int cmd_sweep_seeds(const CommonArgs& args, int n_seeds) {
    const ExperimentConfig cfg = resolve_config(args);
    const auto dir = ensure_out_dir(cfg);
    RunManifest m = start_manifest("sweep-seeds", cfg);
    const ExperimentContext ctx = prepare_context(cfg);
    m.dataset_sha256 = ctx.dataset.sha256;
    const SweepResult sweep = run_seed_sweep(cfg, ctx, n_seeds, args.parallel);
    sweep.runs.write(dir / "metrics.csv");
    sweep.summary.write(dir / "summary.csv");
    finish_manifest(m, dir, {"metrics.csv", "summary.csv"});
    std::cout << "with_consistency std " << format_double(sweep.with_consistency.stddev)
              << " without_consistency std " << format_double(sweep.without_consistency.stddev) << "\n";
    return 0;
}

int cmd_ablate_gradstop(const CommonArgs& args) {
    const ExperimentConfig cfg = resolve_config(args);
    const auto dir = ensure_out_dir(cfg);
    RunManifest m = start_manifest("ablate-gradstop", cfg);
    const ExperimentContext ctx = prepare_context(cfg);
    m.dataset_sha256 = ctx.dataset.sha256;
    const GridResult grid = run_gradstop_ablation(cfg, ctx, args.parallel);
    grid.csv.write(dir / "metrics.csv");
    finish_manifest(m, dir, {"metrics.csv"});
    return 0;
}

int cmd_plot(const CommonArgs& args, const std::string& csv_path) {
    const ExperimentConfig cfg = resolve_config(args);
    const auto dir = ensure_out_dir(cfg);
    RunManifest m = start_manifest("plot", cfg);
    const std::string input = csv_path.empty() ? (dir / "metrics.csv").string() : csv_path;
    const PlotData plot = emit_plotdata(read_csv(input));
    write_text(dir / "fusion_grid.svg", plot.svg);
    plot.csv.write(dir / "plotdata.csv");
    finish_manifest(m, dir, {"fusion_grid.svg", "plotdata.csv"});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-path 2D->3D lifting laboratory with path-consistency regularization"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, gf_args, gl_args, sweep_args, ablate_args, plot_args;
    std::string checkpoint, plot_csv;
    int n_seeds = 10;

    add_common(app.add_subcommand("gen-data", "generate and write the synthetic dataset"), gen_args);
    add_common(app.add_subcommand("train", "train one run and write checkpoint + metrics"), train_args);
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
    add_common(eval_cmd, eval_args);
    eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    add_common(app.add_subcommand("grid-fusion", "fusion-configuration grid"), gf_args);
    add_common(app.add_subcommand("grid-loss", "loss-type x alpha ablation grid"), gl_args);
    auto* sweep_cmd = app.add_subcommand("sweep-seeds", "paired robustness sweep over seeds");
    add_common(sweep_cmd, sweep_args);
    sweep_cmd->add_option("--n-seeds", n_seeds, "number of trials")->check(CLI::PositiveNumber);
    add_common(app.add_subcommand("ablate-gradstop", "gradient-stopping ablation"), ablate_args);
    auto* plot_cmd = app.add_subcommand("plot", "render fusion-grid bar chart + plot data");
    add_common(plot_cmd, plot_args);
    plot_cmd->add_option("--csv", plot_csv, "input metrics CSV (defaults to <out>/metrics.csv)");

    try {
        app.parse(argc, argv);
        if (app.got_subcommand("gen-data")) return cmd_gen_data(gen_args);
        if (app.got_subcommand("train")) return cmd_train(train_args);
        if (app.got_subcommand("eval")) return cmd_eval(eval_args, checkpoint);
        if (app.got_subcommand("grid-fusion")) return cmd_grid_fusion(gf_args);
        if (app.got_subcommand("grid-loss")) return cmd_grid_loss(gl_args);
        if (app.got_subcommand("sweep-seeds")) return cmd_sweep_seeds(sweep_args, n_seeds);
        if (app.got_subcommand("ablate-gradstop")) return cmd_ablate_gradstop(ablate_args);
        if (app.got_subcommand("plot")) return cmd_plot(plot_args, plot_csv);
        return 1;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
