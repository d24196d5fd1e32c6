#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pathcons/adam.hpp"
#include "pathcons/ops.hpp"

namespace pathcons {

enum class FuseMode { Sum, Concat };

/// Dispatches to fuse_sum / fuse_concat over identical occupancy.
NodeId fuse(Graph& g, NodeId y, NodeId lifted, FuseMode mode);

struct BackboneSpec {
    int n_stages = 4;
    std::vector<int> channels_2d = {16, 32, 64, 64};
    std::vector<int> channels_3d = {16, 32, 64, 64};
    int convs_per_stage = 2;
    int kernel_2d = 3;
    int kernel_3d = 3;
    int image_channels = 3;
    int voxel_channels = 4;

    void validate() const;
    int channels_2d_at(int stage) const { return stage == 0 ? image_channels : channels_2d[stage - 1]; }
    int channels_3d_at(int stage) const { return stage == 0 ? voxel_channels : channels_3d[stage - 1]; }
    /// Grid/resolution level of stage-t features; the last stage keeps the
    /// previous stage's resolution (downsampling sits between stages).
    int level_of_stage(int stage) const { return std::min(stage, n_stages - 1); }
};

struct Conv2DLayer {
    std::string weight, bias;
    int in_ch = 0, out_ch = 0, kernel = 3;
};

struct Stage2D {
    int index = 0;
    bool downsample = true;
    std::vector<Conv2DLayer> convs;
    int out_channels = 0;
};

struct Conv3DLayer {
    std::string weight, bias;
    int in_ch = 0, out_ch = 0, kernel = 3;
};

struct Stage3D {
    int index = 0;
    bool downsample = true;
    std::vector<Conv3DLayer> convs;
    int out_channels = 0;
};

struct Backbone2D {
    std::vector<Stage2D> stages;  // stages[t-1] maps stage t-1 -> t
};

struct Backbone3D {
    std::vector<Stage3D> stages;
};

struct BackbonePair {
    Backbone2D net2d;
    Backbone3D net3d;
};

/// Builds both branches and registers Kaiming-uniform weights (zero biases)
/// into `params` under "2d.stage{t}.*" / "3d.stage{t}.*". Each parameter
/// draws from its own name-derived stream, so the draw for one parameter
/// never depends on which other parameters exist.
///
/// `extra_in_3d[t-1]`, when given, widens stage t's first 3D convolution by
/// that many input channels (concat fusion at the stage input).
BackbonePair init_backbones(const BackboneSpec& spec, std::uint64_t seed, Parameters& params,
                            const std::vector<int>& extra_in_3d = {});

/// Number of scalars init_backbones registers for this spec.
std::size_t backbone_parameter_count(const BackboneSpec& spec);

/// Binds named parameters into a graph, optionally behind stop_gradient.
struct ParamBinder {
    Graph* graph = nullptr;
    const Parameters* store = nullptr;
    bool stop = false;

    NodeId operator()(const std::string& name) const {
        const NodeId p = graph->parameter(name, store->at(name));
        return stop ? graph->stop_gradient(p) : p;
    }
};

/// conv -> bias -> relu per layer, then factor-2 max pool when the stage
/// downsamples. Convolutions are stride 1 with resolution-preserving padding.
NodeId run_stage_2d(Graph& g, const Stage2D& stage, const ParamBinder& bind, NodeId x);

/// Occupancy-dependent state reusable across calls with the same input
/// occupancy (the rulebook for this stage's stride-1 convolutions).
struct Stage3DContext {
    std::shared_ptr<const Rulebook> rulebook;
};

/// Optional fusion at stage input, then sparse conv -> bias -> relu per
/// layer, then factor-2 voxel downsampling when the stage downsamples.
NodeId run_stage_3d(Graph& g, const Stage3D& stage, const ParamBinder& bind, NodeId y,
                    std::optional<NodeId> fused_in = std::nullopt, FuseMode mode = FuseMode::Sum,
                    const Stage3DContext* ctx = nullptr);

}  // namespace pathcons
