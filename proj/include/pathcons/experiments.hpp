#pragma once

#include "pathcons/csvio.hpp"
#include "pathcons/svg.hpp"
#include "pathcons/trainer.hpp"

namespace pathcons {

/// Dataset and per-sample plans shared read-only by every cell of a grid,
/// so comparisons are paired and occupancy work is done once.
struct ExperimentContext {
    Dataset dataset;
    std::vector<SamplePlan> train_plans;
    std::vector<SamplePlan> val_plans;
};

ExperimentContext prepare_context(const ExperimentConfig& cfg);

struct CellOutcome {
    std::string label;
    std::uint64_t seed = 0;
    MetricsReport report;
    bool failed = false;
    std::string error;
};

/// Runs cells with up to `parallel` workers; each failure is recorded in
/// its outcome and the grid continues. Result order matches job order.
std::vector<CellOutcome> run_cells(std::vector<std::function<CellOutcome()>> jobs, int parallel);

struct GridResult {
    CsvWriter csv;
    std::vector<CellOutcome> cells;
    GridResult() : csv({"placeholder"}) {}
    explicit GridResult(CsvWriter c) : csv(std::move(c)) {}
};

/// Table-3 analog: fusion configurations {none, stage1..stage4, 1&2, 1&3,
/// 1&4, all}, each without path consistency, plus a consistency row for
/// every configuration that fuses a deep stage (>= 2). One CSV row per
/// (config, seed).
GridResult run_fusion_grid(const ExperimentConfig& base, const ExperimentContext& ctx, int parallel = 1);
const std::vector<std::pair<std::string, std::set<int>>>& fusion_grid_configs();

/// Table-5 analog: {cosine, l1} x alpha in {0.1, 0.01, 0.001} over the base
/// config's fusion stages, identical seeds across cells.
GridResult run_loss_ablation(const ExperimentConfig& base, const ExperimentContext& ctx, int parallel = 1);

struct SweepResult {
    CsvWriter runs;
    CsvWriter summary;
    SummaryStats with_consistency;
    SummaryStats without_consistency;
    SweepResult() : runs({"placeholder"}), summary({"placeholder"}) {}
};

/// Table-4 analog: n_seeds paired trials of the given config against the
/// shallow stage-1 baseline without consistency; reports mean, std, min,
/// max of mean IoU per variant.
SweepResult run_seed_sweep(const ExperimentConfig& cfg, const ExperimentContext& ctx, int n_seeds = 10,
                           int parallel = 1);

/// Gradient-stop ablation: paired runs with stop_3d_gradients on and off,
/// logging per-epoch 3D activation norms and the per-epoch max consistency
/// gradient reaching any 3D parameter.
GridResult run_gradstop_ablation(const ExperimentConfig& cfg, const ExperimentContext& ctx, int parallel = 1);

struct PlotData {
    std::string svg;
    CsvWriter csv;
    PlotData() : csv({"placeholder"}) {}
};

/// Fig. 3(a) analog from a fusion-grid CSV: per-configuration mean IoU bars
/// for both regimes, plus the plotted numbers as CSV.
PlotData emit_plotdata(const std::vector<std::vector<std::string>>& fusion_csv_rows);

/// Per-voxel linear softmax probe on stage-0 voxel features, optionally
/// augmented with the pixel color at the voxel's projected center. Used to
/// validate that color carries class information geometry lacks.
double linear_probe_accuracy(const Dataset& dataset, bool use_color, int max_train_voxels = 20000,
                             std::uint64_t seed = 17);

struct RunManifest {
    std::string command;
    ExperimentConfig config;
    std::string config_hash;
    std::string dataset_sha256;
    std::string code_version = kCodeVersion;
    std::vector<std::uint64_t> seeds;
    std::int64_t started_unix = 0;
    std::int64_t finished_unix = 0;
    std::vector<std::string> outputs;
    std::string status = "ok";

    std::string json_text() const;
    void write(const std::filesystem::path& path) const;
};

/// Shared CSV row schema for grid outputs.
std::vector<std::string> metrics_csv_header(int n_classes);
std::vector<std::string> metrics_csv_row(const std::string& label, std::uint64_t seed, const MetricsReport& r,
                                         int n_classes);

}  // namespace pathcons
