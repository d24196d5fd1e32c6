#include "pathcons/experiments.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <thread>

#include <json.hpp>

#include "pathcons/rng.hpp"

namespace pathcons {

ExperimentContext prepare_context(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentContext ctx;
    ctx.dataset = build_dataset(cfg.dataset);
    const Model geometry = init_model(cfg, 0);  // tables only; parameters unused
    ctx.train_plans = build_plans(ctx.dataset.train, geometry);
    ctx.val_plans = build_plans(ctx.dataset.val, geometry);
    return ctx;
}

std::vector<CellOutcome> run_cells(std::vector<std::function<CellOutcome()>> jobs, int parallel) {
    std::vector<CellOutcome> results(jobs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                results[i] = jobs[i]();
            } catch (const std::exception& e) {
                results[i].failed = true;
                results[i].error = e.what();
            }
        }
    };
    const int workers = std::max(1, std::min<int>(parallel, static_cast<int>(jobs.size())));
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }
    return results;
}

std::vector<std::string> metrics_csv_header(int n_classes) {
    std::vector<std::string> header = {"config", "seed", "mean_iou"};
    for (int c = 0; c <= n_classes; ++c) header.push_back("iou_class" + std::to_string(c));
    header.push_back("l3d_final");
    header.push_back("lcons_final");
    return header;
}

std::vector<std::string> metrics_csv_row(const std::string& label, std::uint64_t seed, const MetricsReport& r,
                                         int n_classes) {
    std::vector<std::string> row = {label, std::to_string(seed), format_double(r.mean_iou)};
    for (int c = 0; c <= n_classes; ++c) {
        row.push_back(c < static_cast<int>(r.per_class_iou.size()) ? format_double(r.per_class_iou[c]) : "nan");
    }
    row.push_back(r.l3d_per_epoch.empty() ? "nan" : format_double(r.l3d_per_epoch.back()));
    row.push_back(r.lcons_per_epoch.empty() ? "nan" : format_double(r.lcons_per_epoch.back()));
    return row;
}

const std::vector<std::pair<std::string, std::set<int>>>& fusion_grid_configs() {
    static const std::vector<std::pair<std::string, std::set<int>>> configs = {
        {"none", {}},          {"stage1", {1}},       {"stage2", {2}},        {"stage3", {3}},
        {"stage4", {4}},       {"stage1&2", {1, 2}},  {"stage1&3", {1, 3}},   {"stage1&4", {1, 4}},
        {"all", {1, 2, 3, 4}},
    };
    return configs;
}

namespace {

bool has_deep_stage(const std::set<int>& stages) {
    for (const int s : stages) {
        if (s >= 2) return true;
    }
    return false;
}

CellOutcome train_cell(const ExperimentConfig& cfg, const std::string& label, std::uint64_t seed,
                       const ExperimentContext& ctx, const TrainHooks& hooks = {}) {
    CellOutcome out;
    out.label = label;
    out.seed = seed;
    const TrainResult r = train_run(cfg, seed, ctx.train_plans, ctx.val_plans, hooks);
    out.report = r.report;
    return out;
}

void failed_row(CsvWriter& csv, const CellOutcome& cell, int n_classes) {
    MetricsReport empty;
    std::vector<std::string> row = metrics_csv_row(cell.label + " [failed: " + cell.error + "]", cell.seed,
                                                   empty, n_classes);
    csv.add_row(std::move(row));
}

}  // namespace

GridResult run_fusion_grid(const ExperimentConfig& base, const ExperimentContext& ctx, int parallel) {
    const int n_classes = base.dataset.n_classes;
    std::vector<std::function<CellOutcome()>> jobs;
    for (const auto& [label, stages] : fusion_grid_configs()) {
        for (const bool with_pc : {false, true}) {
            // Table 3 leaves consistency rows blank without a deep fused stage.
            if (with_pc && !has_deep_stage(stages)) continue;
            for (const std::uint64_t seed : base.seeds) {
                ExperimentConfig cfg = base;
                cfg.fusion_stages = stages;
                if (!with_pc) cfg.consistency.alpha = 0.0;
                const std::string label_full = with_pc ? label + "+pc" : label;
                jobs.push_back([cfg, label_full, seed, &ctx] { return train_cell(cfg, label_full, seed, ctx); });
            }
        }
    }

    GridResult result{CsvWriter(metrics_csv_header(n_classes))};
    result.cells = run_cells(std::move(jobs), parallel);
    for (const CellOutcome& cell : result.cells) {
        if (cell.failed) {
            failed_row(result.csv, cell, n_classes);
        } else {
            result.csv.add_row(metrics_csv_row(cell.label, cell.seed, cell.report, n_classes));
        }
    }
    return result;
}

GridResult run_loss_ablation(const ExperimentConfig& base, const ExperimentContext& ctx, int parallel) {
    const int n_classes = base.dataset.n_classes;
    static const double kAlphas[3] = {0.1, 0.01, 0.001};

    std::vector<std::string> header = {"loss_type", "alpha"};
    const std::vector<std::string> tail = metrics_csv_header(n_classes);
    header.insert(header.end(), tail.begin() + 1, tail.end());  // seed onwards

    std::vector<std::function<CellOutcome()>> jobs;
    std::vector<std::pair<std::string, double>> cells_meta;
    for (const ConsistencyLossType type : {ConsistencyLossType::Cosine, ConsistencyLossType::L1}) {
        for (const double alpha : kAlphas) {
            for (const std::uint64_t seed : base.seeds) {
                ExperimentConfig cfg = base;
                cfg.consistency.loss_type = type;
                cfg.consistency.alpha = alpha;
                const std::string label = type == ConsistencyLossType::Cosine ? "cosine" : "l1";
                cells_meta.emplace_back(label, alpha);
                jobs.push_back([cfg, label, seed, &ctx] { return train_cell(cfg, label, seed, ctx); });
            }
        }
    }

    GridResult result{CsvWriter(std::move(header))};
    result.cells = run_cells(std::move(jobs), parallel);
    for (std::size_t i = 0; i < result.cells.size(); ++i) {
        const CellOutcome& cell = result.cells[i];
        std::vector<std::string> row = {cells_meta[i].first, format_double(cells_meta[i].second)};
        MetricsReport blank;
        const MetricsReport& rep = cell.failed ? blank : cell.report;
        std::vector<std::string> tail_row = metrics_csv_row(cell.failed ? "failed: " + cell.error : "", cell.seed,
                                                            rep, n_classes);
        row.insert(row.end(), tail_row.begin() + 1, tail_row.end());
        result.csv.add_row(std::move(row));
    }
    return result;
}

SweepResult run_seed_sweep(const ExperimentConfig& cfg, const ExperimentContext& ctx, int n_seeds, int parallel) {
    if (n_seeds < 1) throw ConfigError("sweep needs at least one seed");
    const int n_classes = cfg.dataset.n_classes;

    ExperimentConfig baseline = cfg;
    baseline.fusion_stages = {1};
    baseline.consistency.alpha = 0.0;

    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n_seeds));
    for (int i = 0; i < n_seeds; ++i) {
        seeds[i] = cfg.seeds.empty() ? static_cast<std::uint64_t>(i + 1)
                                     : derive_seed(cfg.seeds[0], "sweep", static_cast<std::uint64_t>(i));
    }

    std::vector<std::function<CellOutcome()>> jobs;
    for (const std::uint64_t seed : seeds) {
        jobs.push_back([cfg, seed, &ctx] { return train_cell(cfg, "with_consistency", seed, ctx); });
    }
    for (const std::uint64_t seed : seeds) {
        jobs.push_back(
            [baseline, seed, &ctx] { return train_cell(baseline, "without_consistency", seed, ctx); });
    }
    const std::vector<CellOutcome> cells = run_cells(std::move(jobs), parallel);

    SweepResult result;
    result.runs = CsvWriter(metrics_csv_header(n_classes));
    std::vector<double> with_vals, without_vals;
    for (const CellOutcome& cell : cells) {
        if (cell.failed) {
            failed_row(result.runs, cell, n_classes);
            continue;
        }
        result.runs.add_row(metrics_csv_row(cell.label, cell.seed, cell.report, n_classes));
        (cell.label == "with_consistency" ? with_vals : without_vals).push_back(cell.report.mean_iou);
    }
    result.with_consistency = summarize(with_vals);
    result.without_consistency = summarize(without_vals);

    result.summary = CsvWriter({"variant", "n_seeds", "mean", "std", "min", "max"});
    auto add_summary = [&](const char* name, const SummaryStats& s) {
        result.summary.add_row({name, std::to_string(s.count), format_double(s.mean), format_double(s.stddev),
                                format_double(s.min), format_double(s.max)});
    };
    add_summary("with_consistency", result.with_consistency);
    add_summary("without_consistency", result.without_consistency);
    return result;
}

GridResult run_gradstop_ablation(const ExperimentConfig& cfg, const ExperimentContext& ctx, int parallel) {
    const int n_classes = cfg.dataset.n_classes;
    if (!cfg.uses_consistency()) {
        throw ConfigError("gradient-stop ablation needs an active consistency loss (alpha > 0)");
    }

    std::vector<std::string> header = metrics_csv_header(n_classes);
    for (int e = 0; e < cfg.optimizer.epochs; ++e) header.push_back("act_norm_3d_e" + std::to_string(e));
    for (int e = 0; e < cfg.optimizer.epochs; ++e) header.push_back("cons_grad3d_max_e" + std::to_string(e));

    TrainHooks hooks;
    hooks.log_activation_norms = true;
    hooks.log_gradstop_check = true;

    std::vector<std::function<CellOutcome()>> jobs;
    for (const bool stop : {true, false}) {
        for (const std::uint64_t seed : cfg.seeds) {
            ExperimentConfig cell_cfg = cfg;
            cell_cfg.consistency.stop_3d_gradients = stop;
            const std::string label = stop ? "stop_on" : "stop_off";
            jobs.push_back([cell_cfg, label, seed, &ctx, hooks] {
                return train_cell(cell_cfg, label, seed, ctx, hooks);
            });
        }
    }

    GridResult result{CsvWriter(std::move(header))};
    result.cells = run_cells(std::move(jobs), parallel);
    for (const CellOutcome& cell : result.cells) {
        std::vector<std::string> row =
            metrics_csv_row(cell.failed ? cell.label + " [failed: " + cell.error + "]" : cell.label, cell.seed,
                            cell.report, n_classes);
        for (int e = 0; e < cfg.optimizer.epochs; ++e) {
            row.push_back(e < static_cast<int>(cell.report.act_norm_3d_per_epoch.size())
                              ? format_double(cell.report.act_norm_3d_per_epoch[e])
                              : "nan");
        }
        for (int e = 0; e < cfg.optimizer.epochs; ++e) {
            row.push_back(e < static_cast<int>(cell.report.cons_grad3d_max_per_epoch.size())
                              ? format_double(cell.report.cons_grad3d_max_per_epoch[e])
                              : "nan");
        }
        result.csv.add_row(std::move(row));
    }
    return result;
}

PlotData emit_plotdata(const std::vector<std::vector<std::string>>& fusion_csv_rows) {
    if (fusion_csv_rows.size() < 2) throw UsageError("plot input CSV has no data rows");
    const std::vector<std::string>& header = fusion_csv_rows[0];
    std::size_t config_col = 0, iou_col = std::string::npos;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == "config") config_col = c;
        if (header[c] == "mean_iou") iou_col = c;
    }
    if (iou_col == std::string::npos) throw UsageError("plot input CSV is missing a mean_iou column");

    // Mean over seeds per (config, regime); regime encoded by the +pc suffix.
    std::map<std::string, std::pair<double, int>> plain, withpc;
    for (std::size_t r = 1; r < fusion_csv_rows.size(); ++r) {
        const auto& row = fusion_csv_rows[r];
        if (row.size() <= std::max(config_col, iou_col)) continue;
        std::string label = row[config_col];
        if (label.find("[failed") != std::string::npos) continue;
        const double iou = std::strtod(row[iou_col].c_str(), nullptr);
        const bool pc = label.size() > 3 && label.rfind("+pc") == label.size() - 3;
        if (pc) label = label.substr(0, label.size() - 3);
        auto& slot = (pc ? withpc : plain)[label];
        slot.first += iou;
        slot.second += 1;
    }

    std::vector<std::string> categories;
    for (const auto& [label, stages] : fusion_grid_configs()) categories.push_back(label);

    ChartSeries s_plain{"w/o path consistency", {}};
    ChartSeries s_pc{"w/ path consistency", {}};
    PlotData out;
    out.csv = CsvWriter({"config", "regime", "mean_iou"});
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const std::string& cat : categories) {
        const auto p = plain.find(cat);
        const double pv = p == plain.end() || p->second.second == 0 ? nan : p->second.first / p->second.second;
        s_plain.values.push_back(pv);
        if (!std::isnan(pv)) out.csv.add_row({cat, "plain", format_double(pv)});
        const auto q = withpc.find(cat);
        const double qv = q == withpc.end() || q->second.second == 0 ? nan : q->second.first / q->second.second;
        s_pc.values.push_back(qv);
        if (!std::isnan(qv)) out.csv.add_row({cat, "consistency", format_double(qv)});
    }
    out.svg = render_bar_chart("Mean voxel IoU by fusion configuration", "mean IoU", categories,
                               {s_plain, s_pc});
    return out;
}

double linear_probe_accuracy(const Dataset& dataset, bool use_color, int max_train_voxels, std::uint64_t seed) {
    const int n_classes = dataset.spec.n_classes;
    const ProjectionTable table = project_voxel_centers(dataset.spec.camera, dataset.spec.grid, 0);
    const int geo_dim = kVoxelFeatureChannels;
    const int dim = geo_dim + (use_color ? 3 : 0);

    auto collect = [&](const std::vector<SceneSample>& samples, int cap, std::vector<Eigen::VectorXd>& xs,
                       std::vector<int>& ys) {
        for (const SceneSample& s : samples) {
            const SparseVoxelTensor occ = voxelize(s.cloud, s.grid);
            const std::int64_t plane = static_cast<std::int64_t>(s.camera.image_h) * s.camera.image_w;
            for (std::size_t i = 0; i < occ.indices.size(); ++i) {
                if (cap > 0 && static_cast<int>(xs.size()) >= cap) return;
                Eigen::VectorXd x(dim);
                for (int c = 0; c < geo_dim; ++c) x[c] = occ.features(static_cast<Eigen::Index>(i), c);
                if (use_color) {
                    const std::int64_t at = table.index(occ.indices[i]);
                    if (table.valid[at]) {
                        const int pi = std::min(static_cast<int>(std::floor(table.v[at])), s.camera.image_h - 1);
                        const int pj = std::min(static_cast<int>(std::floor(table.u[at])), s.camera.image_w - 1);
                        for (int c = 0; c < 3; ++c) x[geo_dim + c] = s.image[c * plane + pi * s.camera.image_w + pj];
                    } else {
                        for (int c = 0; c < 3; ++c) x[geo_dim + c] = 0.0;
                    }
                }
                xs.push_back(std::move(x));
                ys.push_back(s.voxel_labels[linear_voxel_key(occ.indices[i], s.grid.dims)]);
            }
        }
    };

    std::vector<Eigen::VectorXd> train_x, val_x;
    std::vector<int> train_y, val_y;
    collect(dataset.train, max_train_voxels, train_x, train_y);
    collect(dataset.val, 0, val_x, val_y);
    if (train_x.empty() || val_x.empty()) throw UsageError("linear probe has no voxels to fit");

    // Standardize features on training statistics.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim), var = Eigen::VectorXd::Zero(dim);
    for (const auto& x : train_x) mean += x;
    mean /= static_cast<double>(train_x.size());
    for (const auto& x : train_x) var += (x - mean).cwiseAbs2();
    var /= static_cast<double>(train_x.size());
    const Eigen::VectorXd inv_std = (var.array() + 1e-8).rsqrt().matrix();

    const int k = n_classes + 1;
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(k, dim);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
    const double lr = 0.5;
    const int iters = 250;
    const double inv_n = 1.0 / static_cast<double>(train_x.size());
    (void)seed;
    for (int it = 0; it < iters; ++it) {
        Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(k, dim);
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(k);
        for (std::size_t i = 0; i < train_x.size(); ++i) {
            const Eigen::VectorXd x = (train_x[i] - mean).cwiseProduct(inv_std);
            Eigen::VectorXd z = w * x + b;
            z.array() -= z.maxCoeff();
            Eigen::VectorXd p = z.array().exp();
            p /= p.sum();
            p[train_y[i]] -= 1.0;
            gw += p * x.transpose();
            gb += p;
        }
        w -= lr * inv_n * gw;
        b -= lr * inv_n * gb;
    }

    int correct = 0;
    for (std::size_t i = 0; i < val_x.size(); ++i) {
        const Eigen::VectorXd x = (val_x[i] - mean).cwiseProduct(inv_std);
        Eigen::Index best;
        (w * x + b).maxCoeff(&best);
        correct += static_cast<int>(best) == val_y[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(val_x.size());
}

std::string RunManifest::json_text() const {
    nlohmann::json j;
    j["command"] = command;
    j["config"] = nlohmann::json::parse(config.canonical_json());
    j["config_hash"] = config_hash;
    j["dataset_sha256"] = dataset_sha256;
    j["code_version"] = code_version;
    j["seeds"] = seeds;
    j["started_unix"] = started_unix;
    j["finished_unix"] = finished_unix;
    j["outputs"] = outputs;
    j["status"] = status;
    j["schema_version"] = kConfigSchemaVersion;
    return j.dump(2);
}

void RunManifest::write(const std::filesystem::path& path) const {
    std::ofstream f(path);
    f << json_text() << "\n";
    if (!f) throw UsageError("failed to write manifest " + path.string());
}

}  // namespace pathcons
