#include "pathcons/consistency.hpp"

#include <cmath>
#include <unordered_map>

namespace pathcons {

void ConsistencyConfig::validate(int n_stages) const {
    if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("consistency alpha must be finite and nonnegative");
    for (const int t : active_stages) {
        if (t < 1 || t > n_stages - 1) {
            throw ConfigError("consistency stage t must lie in 1..n_stages-1 (got " + std::to_string(t) + ")");
        }
    }
}

std::shared_ptr<const std::vector<std::uint8_t>> joint_validity_mask(
    const ProjectionTable& next_table, const std::vector<VoxelIndex>& occ_next,
    const ProjectionTable& prev_table, const std::vector<VoxelIndex>& occ_prev, bool downsampled) {
    auto mask = std::make_shared<std::vector<std::uint8_t>>(occ_next.size(), 0);
    if (!downsampled) {
        for (std::size_t i = 0; i < occ_next.size(); ++i) {
            const std::int64_t at = next_table.index(occ_next[i]);
            (*mask)[i] = next_table.valid[at] && prev_table.valid[prev_table.index(occ_next[i])];
        }
        return mask;
    }
    // A coarse voxel inherits 3D-path validity from any valid occupied child.
    std::unordered_map<std::int64_t, std::uint8_t> parent_valid;
    parent_valid.reserve(occ_prev.size() * 2);
    for (const VoxelIndex& u : occ_prev) {
        const VoxelIndex p{u[0] / 2, u[1] / 2, u[2] / 2};
        const std::int64_t key = (static_cast<std::int64_t>(p[0]) * next_table.dims[1] + p[1]) * next_table.dims[2] + p[2];
        parent_valid[key] |= prev_table.valid[prev_table.index(u)];
    }
    for (std::size_t i = 0; i < occ_next.size(); ++i) {
        const std::int64_t key = next_table.index(occ_next[i]);
        auto it = parent_valid.find(key);
        (*mask)[i] = next_table.valid[key] && it != parent_valid.end() && it->second;
    }
    return mask;
}

NodeId compute_path_2d(Graph& g, const LiftingOperator& p_next, const Stage2D& f_next, const ParamBinder& bind,
                       NodeId x_t, std::shared_ptr<const std::vector<VoxelIndex>> occ_next,
                       std::shared_ptr<const PixelGather> gather_next) {
    if (p_next.stage != f_next.index) {
        throw ConfigError("compute_path_2d: lifting operator stage " + std::to_string(p_next.stage) +
                          " does not match 2D stage " + std::to_string(f_next.index));
    }
    const NodeId x_next = run_stage_2d(g, f_next, bind, x_t);
    return lift(g, p_next, bind, x_next, std::move(occ_next), std::move(gather_next));
}

NodeId compute_path_3d(Graph& g, const Stage3D& f3_next, const LiftingOperator& p_t, const ParamBinder& bind,
                       NodeId x_t, std::shared_ptr<const std::vector<VoxelIndex>> occ_t,
                       const ConsistencyConfig& cfg, std::shared_ptr<const PixelGather> gather_t,
                       const Stage3DContext* ctx) {
    if (f3_next.index != p_t.stage + 1) {
        throw ConfigError("compute_path_3d: 3D stage " + std::to_string(f3_next.index) +
                          " does not follow lifting operator stage " + std::to_string(p_t.stage));
    }
    ParamBinder lift_bind = bind;
    lift_bind.stop = bind.stop || !cfg.route_prev_lifting;
    const NodeId lifted = lift(g, p_t, lift_bind, x_t, std::move(occ_t), std::move(gather_t));
    ParamBinder conv_bind = bind;
    conv_bind.stop = bind.stop || cfg.stop_3d_gradients;
    return run_stage_3d(g, f3_next, conv_bind, lifted, std::nullopt, FuseMode::Sum, ctx);
}

LossResult stage_consistency_loss(Graph& g, const PathPair& pair, ConsistencyLossType type) {
    if (type == ConsistencyLossType::Cosine) {
        return cosine_consistency_loss(g, pair.y2d, pair.y3d, pair.mask);
    }
    return l1_consistency_loss(g, pair.y2d, pair.y3d, pair.mask);
}

NodeId total_consistency_loss(Graph& g, const std::vector<NodeId>& stage_losses) {
    return add_n(g, stage_losses);
}

NodeId combined_loss(Graph& g, NodeId l3d, NodeId lcons, double alpha) {
    return add_scaled(g, l3d, lcons, alpha);
}

LossResult sparse_anchored_loss(Graph& g, NodeId y2d_path, NodeId y_t_evolved, ConsistencyLossType type,
                                std::shared_ptr<const std::vector<std::uint8_t>> mask2d) {
    const SparseVoxelTensor& a = g.sparse(y2d_path);
    const SparseVoxelTensor& b = g.sparse(y_t_evolved);
    if (a.grid_shape != b.grid_shape) throw ConfigError("sparse_anchored_loss: grids must match");
    if (a.channels != b.channels) throw ConfigError("sparse_anchored_loss: channel counts must match");
    if (mask2d && mask2d->size() != a.indices.size()) {
        throw ConfigError("sparse_anchored_loss: mask length must match 2D-path occupancy");
    }

    // Merge walk over the two canonical index lists.
    auto rows_a = std::make_shared<std::vector<int>>();
    auto rows_b = std::make_shared<std::vector<int>>();
    auto common = std::make_shared<std::vector<VoxelIndex>>();
    auto mask = std::make_shared<std::vector<std::uint8_t>>();
    std::size_t i = 0, j = 0;
    while (i < a.indices.size() && j < b.indices.size()) {
        if (lex_less(a.indices[i], b.indices[j])) {
            ++i;
        } else if (lex_less(b.indices[j], a.indices[i])) {
            ++j;
        } else {
            rows_a->push_back(static_cast<int>(i));
            rows_b->push_back(static_cast<int>(j));
            common->push_back(a.indices[i]);
            mask->push_back(mask2d ? (*mask2d)[i] : 1);
            ++i;
            ++j;
        }
    }
    if (common->empty()) {
        return {g.input(DenseTensor::scalar(0.0)), true};
    }
    const NodeId sel_a = sparse_select_rows(g, y2d_path, rows_a, common);
    const NodeId sel_b = sparse_select_rows(g, y_t_evolved, rows_b, common);
    if (type == ConsistencyLossType::Cosine) {
        return cosine_consistency_loss(g, sel_a, sel_b, mask);
    }
    return l1_consistency_loss(g, sel_a, sel_b, mask);
}

}  // namespace pathcons
