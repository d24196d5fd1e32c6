#pragma once

#include "pathcons/config.hpp"
#include "pathcons/dataset_io.hpp"
#include "pathcons/metrics.hpp"

namespace pathcons {

/// Both backbones, one lifting operator per stage (0..n), and the per-voxel
/// detection head, all over one parameter store.
struct Model {
    BackboneSpec spec;
    BackbonePair nets;
    std::vector<LiftingOperator> lifts;  // indexed by stage
    int n_classes = 0;                   // foreground classes
    int head_in_channels = 0;
    std::string head_weight = "head.weight";
    std::string head_bias = "head.bias";
    FuseMode fuse_mode = FuseMode::Sum;
    QueryMode query_mode = QueryMode::Nearest;
    Parameters params;
};

Model init_model(const ExperimentConfig& cfg, std::uint64_t seed);

/// Occupancy-derived state for one sample, reusable across every training
/// step and every run that shares the dataset and grid geometry: stage
/// occupancies, sparse-conv rulebooks, pixel gathers, consistency masks and
/// final-resolution labels.
struct SamplePlan {
    DenseTensor image;
    SparseVoxelTensor y0;
    std::vector<std::shared_ptr<const std::vector<VoxelIndex>>> occupancy;  // per level 0..n-1
    std::vector<Stage3DContext> stage_ctx;                                  // per stage t (index t-1)
    std::vector<std::shared_ptr<const PixelGather>> gathers;                // per stage 0..n
    std::vector<std::shared_ptr<const std::vector<std::uint8_t>>> cons_masks;  // per t (index t-1)
    std::shared_ptr<const std::vector<int>> final_labels;  // aligned with occupancy[n-1]
    bool empty = false;
};

SamplePlan build_plan(const SceneSample& sample, const Model& model);
std::vector<SamplePlan> build_plans(const std::vector<SceneSample>& samples, const Model& model);

struct ForwardOptions {
    std::set<int> fusion_stages;
    FuseMode fuse_mode = FuseMode::Sum;
    ConsistencyConfig consistency;
    bool build_consistency = false;
    bool force_run_2d = false;  // run the 2D branch even when nothing consumes it
};

ForwardOptions forward_options(const ExperimentConfig& cfg);

struct ForwardBuild {
    NodeId logits = kNoNode;
    NodeId l3d = kNoNode;
    NodeId lcons = kNoNode;  // kNoNode when consistency is not built
    NodeId total = kNoNode;
    std::vector<NodeId> stage_losses;  // per active stage, ascending t
    std::vector<NodeId> y_stage;       // 3D stage outputs, per stage
    bool degenerate = false;
};

/// Builds the full per-sample graph: both branches, configured fusion, the
/// detection head loss and (optionally) the consistency terms.
ForwardBuild build_forward(Graph& g, const Model& model, const SamplePlan& plan, const ForwardOptions& opt);

struct TrainHooks {
    bool log_activation_norms = false;
    bool log_gradstop_check = false;
    /// Runs the 2D branch even when no fusion or consistency consumes it;
    /// exercises the reduction property (unused branches change nothing).
    bool force_run_2d = false;
};

struct TrainResult {
    Parameters params;
    MetricsReport report;
};

/// Deterministic minibatch Adam on L = L_3D + alpha * L_consistency with a
/// cosine learning-rate schedule; evaluates on the validation plans at the
/// end. Bit-identical for identical (config, seed, dataset).
TrainResult train_run(const ExperimentConfig& cfg, std::uint64_t seed, const std::vector<SamplePlan>& train_plans,
                      const std::vector<SamplePlan>& val_plans, const TrainHooks& hooks = {});

/// Voxel-IoU evaluation of explicit parameters (e.g. a loaded checkpoint).
MetricsReport evaluate_params(const ExperimentConfig& cfg, const Parameters& params,
                              const std::vector<SamplePlan>& val_plans);

/// Argmax class per logits row; ties resolve to the lower class id.
std::vector<int> argmax_rows(const DenseTensor& logits);

}  // namespace pathcons
