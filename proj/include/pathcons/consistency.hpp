#pragma once

#include <set>

#include "pathcons/lifting.hpp"

namespace pathcons {

enum class ConsistencyLossType { Cosine, L1 };
enum class ConsistencyVariant { Dense, SparseAnchored };

struct ConsistencyConfig {
    ConsistencyLossType loss_type = ConsistencyLossType::Cosine;
    double alpha = 0.01;
    /// Values of t in {1 .. n_stages-1}; the stage-t term compares the two
    /// paths from x_t into stage t+1, so loss terms live at stages 2..n.
    std::set<int> active_stages = {1, 2, 3};
    ConsistencyVariant variant = ConsistencyVariant::Dense;
    bool stop_3d_gradients = true;
    bool stagewise_scope = true;
    /// Whether P_t (inside the 3D path) receives gradient; off restricts
    /// the stage-t term to P_{t+1} only.
    bool route_prev_lifting = true;

    void validate(int n_stages) const;
};

/// The two path outputs on the stage-(t+1) grid plus the joint validity
/// mask (valid projection in both paths), aligned with their occupancy.
struct PathPair {
    NodeId y2d = kNoNode;
    NodeId y3d = kNoNode;
    std::shared_ptr<const std::vector<std::uint8_t>> mask;
};

/// Mask of voxels whose projection is valid in both paths. `occ_next` is
/// the stage-(t+1) occupancy; when the stage downsamples, a voxel's 3D-path
/// validity is inherited from any valid occupied child in `occ_prev`.
std::shared_ptr<const std::vector<std::uint8_t>> joint_validity_mask(
    const ProjectionTable& next_table, const std::vector<VoxelIndex>& occ_next,
    const ProjectionTable& prev_table, const std::vector<VoxelIndex>& occ_prev, bool downsampled);

/// 2D path: P_{t+1} o f_{t+1} o x_t on the stage-(t+1) grid.
NodeId compute_path_2d(Graph& g, const LiftingOperator& p_next, const Stage2D& f_next, const ParamBinder& bind,
                       NodeId x_t, std::shared_ptr<const std::vector<VoxelIndex>> occ_next,
                       std::shared_ptr<const PixelGather> gather_next = nullptr);

/// 3D path: F_{t+1} o P_t o x_t. With stop_3d_gradients the convolution
/// parameters are bound behind stop_gradient for this path only; with
/// route_prev_lifting off, P_t's parameters are stopped as well.
NodeId compute_path_3d(Graph& g, const Stage3D& f3_next, const LiftingOperator& p_t, const ParamBinder& bind,
                       NodeId x_t, std::shared_ptr<const std::vector<VoxelIndex>> occ_t,
                       const ConsistencyConfig& cfg,
                       std::shared_ptr<const PixelGather> gather_t = nullptr,
                       const Stage3DContext* ctx = nullptr);

/// Per-stage consistency loss over masked-valid voxels: mean negative
/// cosine similarity, or mean absolute difference. Degenerate (empty)
/// domains yield a zero loss with the warning flag set.
LossResult stage_consistency_loss(Graph& g, const PathPair& pair, ConsistencyLossType type);

/// Exact sum of the active stage losses; empty input yields zero.
NodeId total_consistency_loss(Graph& g, const std::vector<NodeId>& stage_losses);

/// L = L_3D + alpha * L_consistency.
NodeId combined_loss(Graph& g, NodeId l3d, NodeId lcons, double alpha);

/// Ablation-only alternative: loss between the lifted 2D path and the
/// evolved 3D features F_{t+1} o y_t, restricted to the intersection of
/// the two occupancies (optionally masked by 2D-path validity).
LossResult sparse_anchored_loss(Graph& g, NodeId y2d_path, NodeId y_t_evolved, ConsistencyLossType type,
                                std::shared_ptr<const std::vector<std::uint8_t>> mask2d = nullptr);

}  // namespace pathcons
