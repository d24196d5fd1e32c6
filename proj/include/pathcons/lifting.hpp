#pragma once

#include <memory>

#include "pathcons/backbones.hpp"
#include "pathcons/geometry.hpp"
#include "pathcons/ops.hpp"

namespace pathcons {

/// 2D -> 3D lifting operator P_t: a small learned pyramid (1x1 conv +
/// nearest upsampling per level) back to input pixel resolution, followed
/// by a per-voxel-center pixel query on the stage-t grid. Stage 0 is the
/// exact geometric map and carries no learned parameters.
struct LiftingOperator {
    int stage = 0;
    int level = 0;  // grid level the output lives on
    int in_channels = 0, out_channels = 0;
    int in_h = 0, in_w = 0;  // expected feature-map resolution
    QueryMode query = QueryMode::Nearest;
    bool nonlinear = true;  // ReLU after each pyramid conv; off in linear mode

    struct PyramidLevel {
        std::string weight, bias;
        int in_ch = 0, out_ch = 0;
        int upsample_steps = 0;  // factor 2^steps
    };
    std::vector<PyramidLevel> levels;  // empty when stage == 0

    std::shared_ptr<const ProjectionTable> table;
    std::array<int, 3> grid_dims{0, 0, 0};

    std::size_t parameter_count() const;
};

/// Builds P_t for the given stage-t grid level and registers its pyramid
/// parameters under "lift.s{t}.*". stage == 0 requires matching channel
/// counts and full input resolution, and registers nothing.
LiftingOperator build_lifting_operator(const CameraModel& camera, const GridSpec& grid, int stage, int level,
                                       int in_channels, int out_channels, int in_h, int in_w,
                                       std::uint64_t seed, Parameters& params,
                                       QueryMode query = QueryMode::Nearest, bool nonlinear = true);

/// Pixel coordinates and validity for a fixed occupancy, extracted from the
/// operator's projection table. Cacheable per (operator, occupancy).
std::shared_ptr<const PixelGather> make_pixel_gather(const ProjectionTable& table,
                                                     const std::vector<VoxelIndex>& occupancy);

/// Upsamples x through the operator's pyramid and samples the projected
/// center of every occupied voxel. Invalid-projection voxels receive zero
/// features and contribute zero gradient.
NodeId lift(Graph& g, const LiftingOperator& op, const ParamBinder& bind, NodeId x,
            std::shared_ptr<const std::vector<VoxelIndex>> occupancy,
            std::shared_ptr<const PixelGather> gather = nullptr);

}  // namespace pathcons
