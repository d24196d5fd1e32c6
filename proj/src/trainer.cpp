#include "pathcons/trainer.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <unordered_map>

#include "pathcons/checkpoint.hpp"
#include "pathcons/rng.hpp"

namespace pathcons {

namespace {

DenseTensor head_init(int rows, int cols, std::uint64_t seed) {
    const double bound = std::sqrt(6.0 / cols);
    Rng rng(seed);
    Eigen::ArrayXd data(static_cast<std::int64_t>(rows) * cols);
    for (std::int64_t i = 0; i < data.size(); ++i) data[i] = rng.uniform(-bound, bound);
    return DenseTensor({rows, cols}, std::move(data));
}

}  // namespace

Model init_model(const ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.spec = cfg.backbone;
    m.n_classes = cfg.dataset.n_classes;
    m.fuse_mode = cfg.fuse_mode;
    m.query_mode = cfg.query_mode;

    std::vector<int> extra_in_3d;
    if (cfg.fuse_mode == FuseMode::Concat) {
        // Concat fusion at stage t widens stage t+1's input.
        extra_in_3d.assign(cfg.backbone.n_stages, 0);
        for (const int s : cfg.fusion_stages) {
            if (s + 1 <= cfg.backbone.n_stages) extra_in_3d[s] += cfg.backbone.channels_3d[s - 1];
        }
    }
    m.nets = init_backbones(cfg.backbone, seed, m.params, extra_in_3d);

    const int n = cfg.backbone.n_stages;
    m.lifts.reserve(n + 1);
    for (int s = 0; s <= n; ++s) {
        const int level = cfg.backbone.level_of_stage(s);
        const int in_ch = cfg.backbone.channels_2d_at(s);
        const int out_ch = s == 0 ? cfg.backbone.image_channels : cfg.backbone.channels_3d_at(s);
        const int res_h = cfg.dataset.camera.image_h >> level;
        const int res_w = cfg.dataset.camera.image_w >> level;
        m.lifts.push_back(build_lifting_operator(cfg.dataset.camera, cfg.dataset.grid, s, level, in_ch, out_ch,
                                                 res_h, res_w, seed, m.params, cfg.query_mode));
    }

    m.head_in_channels = cfg.backbone.channels_3d.back();
    if (cfg.fuse_mode == FuseMode::Concat && cfg.fusion_stages.count(n)) {
        m.head_in_channels += cfg.backbone.channels_3d.back();
    }
    const int k = m.n_classes + 1;
    m.params.add(m.head_weight, head_init(k, m.head_in_channels, derive_seed(seed, m.head_weight)));
    m.params.add(m.head_bias, DenseTensor::zeros({k}));
    return m;
}

SamplePlan build_plan(const SceneSample& sample, const Model& model) {
    SamplePlan plan;
    plan.image = sample.image;
    plan.y0 = voxelize(sample.cloud, sample.grid);
    const int n = model.spec.n_stages;
    const int top_level = n - 1;

    plan.occupancy.resize(top_level + 1);
    plan.occupancy[0] = std::make_shared<const std::vector<VoxelIndex>>(plan.y0.indices);
    for (int level = 1; level <= top_level; ++level) {
        std::vector<VoxelIndex> coarse;
        coarse.reserve(plan.occupancy[level - 1]->size());
        for (const VoxelIndex& v : *plan.occupancy[level - 1]) {
            coarse.push_back({v[0] / 2, v[1] / 2, v[2] / 2});
        }
        std::sort(coarse.begin(), coarse.end(), lex_less);
        coarse.erase(std::unique(coarse.begin(), coarse.end()), coarse.end());
        plan.occupancy[level] = std::make_shared<const std::vector<VoxelIndex>>(std::move(coarse));
    }
    plan.empty = plan.occupancy[0]->empty();

    plan.stage_ctx.resize(n);
    for (int t = 1; t <= n; ++t) {
        const int in_level = model.spec.level_of_stage(t - 1);
        const GridSpec level_grid = sample.grid.at_level(in_level);
        plan.stage_ctx[t - 1].rulebook =
            build_rulebook(*plan.occupancy[in_level], level_grid.dims, model.spec.kernel_3d, 1);
    }

    plan.gathers.resize(n + 1);
    for (int s = 0; s <= n; ++s) {
        const int level = model.spec.level_of_stage(s);
        plan.gathers[s] = make_pixel_gather(*model.lifts[s].table, *plan.occupancy[level]);
    }

    plan.cons_masks.resize(n - 1);
    for (int t = 1; t <= n - 1; ++t) {
        const int next_level = model.spec.level_of_stage(t + 1);
        const int prev_level = model.spec.level_of_stage(t);
        plan.cons_masks[t - 1] =
            joint_validity_mask(*model.lifts[t + 1].table, *plan.occupancy[next_level], *model.lifts[t].table,
                                *plan.occupancy[prev_level], next_level != prev_level);
    }

    // Final-resolution labels: foreground majority over the labeled stage-0
    // voxels inside each coarse cell (ties to the smaller class id), else 0.
    const auto& final_occ = *plan.occupancy[top_level];
    auto labels = std::make_shared<std::vector<int>>(final_occ.size(), 0);
    std::unordered_map<std::int64_t, int> final_row;
    final_row.reserve(final_occ.size() * 2);
    const std::array<int, 3> final_dims = sample.grid.at_level(top_level).dims;
    for (std::size_t i = 0; i < final_occ.size(); ++i) {
        final_row[linear_voxel_key(final_occ[i], final_dims)] = static_cast<int>(i);
    }
    std::vector<std::map<int, int>> votes(final_occ.size());
    for (const VoxelIndex& v : *plan.occupancy[0]) {
        const std::uint16_t label = sample.voxel_labels[linear_voxel_key(v, sample.grid.dims)];
        if (label == 0) continue;
        const VoxelIndex coarse{v[0] >> top_level, v[1] >> top_level, v[2] >> top_level};
        votes[final_row.at(linear_voxel_key(coarse, final_dims))][label] += 1;
    }
    for (std::size_t i = 0; i < votes.size(); ++i) {
        int best_class = 0, best_count = 0;
        for (const auto& [cls, count] : votes[i]) {
            if (count > best_count) {
                best_count = count;
                best_class = cls;
            }
        }
        (*labels)[i] = best_class;
    }
    plan.final_labels = std::move(labels);
    return plan;
}

std::vector<SamplePlan> build_plans(const std::vector<SceneSample>& samples, const Model& model) {
    std::vector<SamplePlan> plans;
    plans.reserve(samples.size());
    for (const SceneSample& s : samples) plans.push_back(build_plan(s, model));
    return plans;
}

ForwardOptions forward_options(const ExperimentConfig& cfg) {
    ForwardOptions opt;
    opt.fusion_stages = cfg.fusion_stages;
    opt.fuse_mode = cfg.fuse_mode;
    opt.consistency = cfg.consistency;
    opt.build_consistency = cfg.uses_consistency();
    return opt;
}

ForwardBuild build_forward(Graph& g, const Model& model, const SamplePlan& plan, const ForwardOptions& opt) {
    if (plan.empty) throw UsageError("build_forward: sample has no occupied voxels");
    const int n = model.spec.n_stages;
    const ParamBinder bind{&g, &model.params, false};

    ForwardBuild out;
    const bool need_2d = opt.force_run_2d || !opt.fusion_stages.empty() || opt.build_consistency;

    std::vector<NodeId> xs(static_cast<std::size_t>(n) + 1, kNoNode);
    xs[0] = g.input(plan.image);
    if (need_2d) {
        for (int t = 1; t <= n; ++t) xs[t] = run_stage_2d(g, model.nets.net2d.stages[t - 1], bind, xs[t - 1]);
    }

    std::map<int, NodeId> lifted;
    auto lifted_at = [&](int s) {
        auto it = lifted.find(s);
        if (it != lifted.end()) return it->second;
        const int level = model.spec.level_of_stage(s);
        const NodeId node = lift(g, model.lifts[s], bind, xs[s], plan.occupancy[level], plan.gathers[s]);
        lifted.emplace(s, node);
        return node;
    };

    NodeId y_prev = g.input(plan.y0);
    out.y_stage.resize(n, kNoNode);
    for (int t = 1; t <= n; ++t) {
        std::optional<NodeId> fused_in;
        if (t - 1 >= 1 && opt.fusion_stages.count(t - 1)) fused_in = lifted_at(t - 1);
        y_prev = run_stage_3d(g, model.nets.net3d.stages[t - 1], bind, y_prev, fused_in, opt.fuse_mode,
                              &plan.stage_ctx[t - 1]);
        out.y_stage[t - 1] = y_prev;
    }

    NodeId head_in = y_prev;
    if (opt.fusion_stages.count(n)) head_in = fuse(g, head_in, lifted_at(n), opt.fuse_mode);
    out.logits = sparse_linear(g, head_in, bind(model.head_weight), bind(model.head_bias));
    out.l3d = softmax_cross_entropy(g, out.logits, plan.final_labels);

    if (opt.build_consistency) {
        for (const int t : opt.consistency.active_stages) {
            const NodeId x_in = opt.consistency.stagewise_scope ? g.stop_gradient(xs[t]) : xs[t];
            const int next_level = model.spec.level_of_stage(t + 1);
            const NodeId y2d = compute_path_2d(g, model.lifts[t + 1], model.nets.net2d.stages[t], bind, x_in,
                                               plan.occupancy[next_level], plan.gathers[t + 1]);
            LossResult lr;
            if (opt.consistency.variant == ConsistencyVariant::Dense) {
                const int prev_level = model.spec.level_of_stage(t);
                const NodeId y3d =
                    compute_path_3d(g, model.nets.net3d.stages[t], model.lifts[t], bind, x_in,
                                    plan.occupancy[prev_level], opt.consistency, plan.gathers[t],
                                    &plan.stage_ctx[t]);
                lr = stage_consistency_loss(g, PathPair{y2d, y3d, plan.cons_masks[t - 1]},
                                            opt.consistency.loss_type);
            } else {
                ParamBinder frozen = bind;
                frozen.stop = opt.consistency.stop_3d_gradients;
                const NodeId y_t_frozen = g.stop_gradient(out.y_stage[t - 1]);
                const NodeId evolved = run_stage_3d(g, model.nets.net3d.stages[t], frozen, y_t_frozen,
                                                    std::nullopt, FuseMode::Sum, &plan.stage_ctx[t]);
                lr = sparse_anchored_loss(g, y2d, evolved, opt.consistency.loss_type, plan.cons_masks[t - 1]);
            }
            out.stage_losses.push_back(lr.node);
            out.degenerate = out.degenerate || lr.degenerate;
        }
        out.lcons = total_consistency_loss(g, out.stage_losses);
        out.total = combined_loss(g, out.l3d, out.lcons, opt.consistency.alpha);
    } else {
        out.total = out.l3d;
    }
    return out;
}

std::vector<int> argmax_rows(const DenseTensor& logits) {
    if (logits.rank() != 2) throw UsageError("argmax_rows: logits must be (N, K)");
    const int n = logits.shape()[0], k = logits.shape()[1];
    std::vector<int> out(n, 0);
    for (int r = 0; r < n; ++r) {
        int best = 0;
        double bv = logits[static_cast<std::int64_t>(r) * k];
        for (int j = 1; j < k; ++j) {
            const double v = logits[static_cast<std::int64_t>(r) * k + j];
            if (v > bv) {
                bv = v;
                best = j;
            }
        }
        out[r] = best;
    }
    return out;
}

namespace {

double cosine_lr(const OptimizerConfig& opt, int epoch) {
    if (opt.epochs <= 1) return opt.lr;
    const double t = static_cast<double>(epoch) / static_cast<double>(opt.epochs - 1);
    return opt.lr_final + 0.5 * (opt.lr - opt.lr_final) * (1.0 + std::cos(M_PI * t));
}

void accumulate(GradientMap& into, const GradientMap& delta) {
    for (const auto& [name, g] : delta.entries()) {
        auto& slot = into.mutable_entries();
        auto it = slot.find(name);
        if (it == slot.end()) {
            slot.emplace(name, g);
        } else {
            it->second.mutable_data() += g.data();
        }
    }
}

double mean_abs_activation(const Graph& g, const std::vector<NodeId>& y_stage) {
    double sum = 0.0;
    std::int64_t count = 0;
    for (const NodeId id : y_stage) {
        const SparseVoxelTensor& y = g.sparse(id);
        sum += y.features.cwiseAbs().sum();
        count += y.features.size();
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace

TrainResult train_run(const ExperimentConfig& cfg, std::uint64_t seed, const std::vector<SamplePlan>& train_plans,
                      const std::vector<SamplePlan>& val_plans, const TrainHooks& hooks) {
    const auto start = std::chrono::steady_clock::now();
    Model model = init_model(cfg, seed);
    ForwardOptions opt = forward_options(cfg);
    opt.force_run_2d = hooks.force_run_2d;

    AdamConfig adam_cfg;
    adam_cfg.beta1 = cfg.optimizer.beta1;
    adam_cfg.beta2 = cfg.optimizer.beta2;
    adam_cfg.eps = cfg.optimizer.eps;
    AdamState adam_state;

    std::vector<std::size_t> order(train_plans.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainResult result;
    result.report.seed = seed;
    for (int epoch = 0; epoch < cfg.optimizer.epochs; ++epoch) {
        adam_cfg.lr = cosine_lr(cfg.optimizer, epoch);
        {
            Rng rng(derive_seed(seed, "order", static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = order.size(); i > 1; --i) {
                const std::size_t j = static_cast<std::size_t>(rng.below(i));
                std::swap(order[i - 1], order[j]);
            }
        }

        double epoch_l3d = 0.0, epoch_lcons = 0.0, epoch_total = 0.0, epoch_act = 0.0;
        int seen = 0;
        std::size_t at = 0;
        while (at < order.size()) {
            GradientMap accum;
            int batch_count = 0;
            for (int b = 0; b < cfg.optimizer.batch_size && at < order.size(); ++b, ++at) {
                const SamplePlan& plan = train_plans[order[at]];
                if (plan.empty) continue;
                Graph g;
                const ForwardBuild fb = build_forward(g, model, plan, opt);
                const double total = g.scalar(fb.total);
                if (!std::isfinite(total)) throw NumericError("training loss diverged (non-finite)");
                epoch_total += total;
                epoch_l3d += g.scalar(fb.l3d);
                if (fb.lcons != kNoNode) epoch_lcons += g.scalar(fb.lcons);
                result.report.consistency_degenerate_seen |= fb.degenerate;
                if (hooks.log_activation_norms) epoch_act += mean_abs_activation(g, fb.y_stage);
                accumulate(accum, g.backward(fb.total));
                ++batch_count;
                ++seen;
            }
            if (batch_count > 0) {
                for (auto& [name, grad] : accum.mutable_entries()) {
                    grad.mutable_data() /= static_cast<double>(batch_count);
                }
                adam_step(model.params, accum, adam_state, adam_cfg);
            }
        }
        const double denom = seen > 0 ? static_cast<double>(seen) : 1.0;
        result.report.l3d_per_epoch.push_back(epoch_l3d / denom);
        result.report.lcons_per_epoch.push_back(epoch_lcons / denom);
        result.report.total_per_epoch.push_back(epoch_total / denom);
        if (hooks.log_activation_norms) result.report.act_norm_3d_per_epoch.push_back(epoch_act / denom);

        if (hooks.log_gradstop_check && opt.build_consistency) {
            double max_abs = 0.0;
            for (const SamplePlan& plan : train_plans) {
                if (plan.empty) continue;
                Graph g;
                const ForwardBuild fb = build_forward(g, model, plan, opt);
                const GradientMap grads = g.backward(scale(g, fb.lcons, opt.consistency.alpha));
                for (const auto& [name, grad] : grads.entries()) {
                    if (name.rfind("3d.", 0) == 0) {
                        max_abs = std::max(max_abs, grad.data().cwiseAbs().maxCoeff());
                    }
                }
                break;
            }
            result.report.cons_grad3d_max_per_epoch.push_back(max_abs);
        }
    }

    result.report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    MetricsReport eval = evaluate_params(cfg, model.params, val_plans);
    result.report.per_class_iou = std::move(eval.per_class_iou);
    result.report.mean_iou = eval.mean_iou;
    result.params = std::move(model.params);
    return result;
}

MetricsReport evaluate_params(const ExperimentConfig& cfg, const Parameters& params,
                              const std::vector<SamplePlan>& val_plans) {
    Model model = init_model(cfg, 0);
    for (const auto& [name, value] : model.params.values) {
        const DenseTensor& loaded = params.at(name);
        if (!loaded.same_shape(value)) {
            throw ConfigError("checkpoint parameter '" + name + "' has wrong shape");
        }
    }
    model.params = params;

    ForwardOptions opt = forward_options(cfg);
    opt.build_consistency = false;

    ConfusionMatrix confusion(model.n_classes + 1);
    for (const SamplePlan& plan : val_plans) {
        if (plan.empty) continue;
        Graph g;
        const ForwardBuild fb = build_forward(g, model, plan, opt);
        const std::vector<int> pred = argmax_rows(g.dense(fb.logits));
        const std::vector<int>& truth = *plan.final_labels;
        for (std::size_t i = 0; i < pred.size(); ++i) confusion.add(truth[i], pred[i]);
    }

    MetricsReport report;
    report.per_class_iou.resize(model.n_classes + 1);
    for (int c = 0; c <= model.n_classes; ++c) report.per_class_iou[c] = confusion.iou(c);
    report.mean_iou = confusion.macro_foreground_iou();
    return report;
}

}  // namespace pathcons
