#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "pathcons/graph.hpp"

namespace pathcons {

// ---------------------------------------------------------------------------
// Dense ops (feature maps are (C, H, W) row-major; scalars are rank-0)
// ---------------------------------------------------------------------------

/// Cross-correlation with kernel (C_out, C_in, k, k), zero padding.
/// Output spatial dims: floor((H + 2*padding - k) / stride) + 1.
NodeId conv2d(Graph& g, NodeId x, NodeId kernel, int stride, int padding);

/// Adds bias[c] to every spatial position of channel c.
NodeId channel_bias(Graph& g, NodeId x, NodeId bias);

/// Elementwise max(x, 0); dense or sparse input.
NodeId relu(Graph& g, NodeId x);

/// 2x2 stride-2 max pooling; spatial dims must be even.
NodeId maxpool2(Graph& g, NodeId x);

/// Nearest-neighbor upsampling by 2^times per spatial axis.
NodeId upsample_nearest(Graph& g, NodeId x, int times);

/// Factor-2 downsampling: strided max-pool (dense) or index halving with
/// per-channel max-merge of colliding voxels (sparse).
NodeId downsample(Graph& g, NodeId x, int factor = 2);

NodeId add(Graph& g, NodeId x, NodeId y);
NodeId mul(Graph& g, NodeId x, NodeId y);
NodeId scale(Graph& g, NodeId x, double a);
/// x + a * y.
NodeId add_scaled(Graph& g, NodeId x, NodeId y, double a);
/// Sum of scalar nodes; empty list yields a constant zero.
NodeId add_n(Graph& g, const std::vector<NodeId>& xs);
NodeId sum_all(Graph& g, NodeId x);
NodeId mean_all(Graph& g, NodeId x);

// ---------------------------------------------------------------------------
// Sparse voxel ops
// ---------------------------------------------------------------------------

/// Gather/scatter map for one sparse convolution: for every kernel offset,
/// the (input row, output row) pairs it connects. Depends only on the
/// occupancy, so it can be built once per sample and reused across steps.
struct Rulebook {
    std::array<int, 3> in_grid{0, 0, 0};
    std::array<int, 3> out_grid{0, 0, 0};
    int kernel = 3;
    int stride = 1;
    std::vector<VoxelIndex> out_indices;                    // canonical order
    std::vector<std::vector<std::pair<int, int>>> pairs;    // per offset
};

/// Builds the rulebook for a submanifold-style convolution. stride == 1
/// keeps the input voxel set; stride > 1 maps it through floor(v/stride)
/// and requires stride to divide every grid dimension. Kernel windows are
/// anchored at out_voxel * stride with offsets in [-k/2, k/2].
std::shared_ptr<const Rulebook> build_rulebook(const std::vector<VoxelIndex>& in_indices,
                                               std::array<int, 3> grid, int kernel, int stride);

/// Sparse 3D convolution with kernel (C_out, C_in, k, k, k); empty
/// neighbors contribute zero. Passing a prebuilt rulebook skips the
/// occupancy hashing; it must match the input's occupancy.
NodeId sparse_conv3d(Graph& g, NodeId x, NodeId kernel, int stride,
                     std::shared_ptr<const Rulebook> rulebook = nullptr);

NodeId sparse_bias(Graph& g, NodeId x, NodeId bias);

/// Element-wise sum of two sparse tensors with identical occupancy.
NodeId fuse_sum(Graph& g, NodeId a, NodeId b);
/// Channel concatenation over identical occupancy.
NodeId fuse_concat(Graph& g, NodeId a, NodeId b);

/// Per-voxel linear map: weight (K, C), bias (K); yields dense (N, K) rows.
NodeId sparse_linear(Graph& g, NodeId x, NodeId weight, NodeId bias);

/// Restricts a sparse tensor to a row subset (rows ascending, sub_indices
/// the matching canonical index list). Backward scatters into the kept rows.
NodeId sparse_select_rows(Graph& g, NodeId x, std::shared_ptr<const std::vector<int>> rows,
                          std::shared_ptr<const std::vector<VoxelIndex>> sub_indices);

// ---------------------------------------------------------------------------
// Pixel queries (2D -> 3D feature transfer)
// ---------------------------------------------------------------------------

enum class QueryMode { Nearest, Bilinear };

/// Per-voxel pixel coordinates at full image resolution, aligned with a
/// fixed occupancy list. Invalid voxels receive zero features.
struct PixelGather {
    std::vector<double> u;  // column coordinate
    std::vector<double> v;  // row coordinate
    std::vector<std::uint8_t> valid;
};

/// Samples image features (C, H, W) at projected voxel centers, producing a
/// sparse tensor over `occupancy` on `grid`. Differentiable w.r.t. x;
/// masked voxels contribute exactly zero gradient.
NodeId gather_pixels(Graph& g, NodeId x, std::shared_ptr<const PixelGather> query,
                     std::array<int, 3> grid, std::shared_ptr<const std::vector<VoxelIndex>> occupancy,
                     QueryMode mode);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Scalar loss node plus a degeneracy warning (empty valid domain).
struct LossResult {
    NodeId node = kNoNode;
    bool degenerate = false;
};

/// Mean over rows of softmax cross-entropy against integer labels.
NodeId softmax_cross_entropy(Graph& g, NodeId logits, std::shared_ptr<const std::vector<int>> labels);

/// Mean over masked voxels of the negative cosine similarity between the
/// two feature fields (identical occupancy). Voxels where either vector
/// norm falls below `norm_guard` are excluded from the mean.
LossResult cosine_consistency_loss(Graph& g, NodeId a, NodeId b,
                                   std::shared_ptr<const std::vector<std::uint8_t>> mask,
                                   double norm_guard = 1e-12);

/// Mean absolute difference over masked voxels and channels.
LossResult l1_consistency_loss(Graph& g, NodeId a, NodeId b,
                               std::shared_ptr<const std::vector<std::uint8_t>> mask);

}  // namespace pathcons
