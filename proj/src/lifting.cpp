#include "pathcons/lifting.hpp"

#include <cmath>

#include "pathcons/rng.hpp"

namespace pathcons {

namespace {

int exact_log2(int num, int den, const char* what) {
    if (num % den != 0) throw ConfigError(std::string(what) + ": resolution must divide image size");
    const int ratio = num / den;
    if ((ratio & (ratio - 1)) != 0) throw ConfigError(std::string(what) + ": resolution ratio must be a power of 2");
    int steps = 0;
    for (int r = ratio; r > 1; r >>= 1) ++steps;
    return steps;
}

DenseTensor pyramid_init(int out_ch, int in_ch, std::uint64_t seed) {
    const double bound = std::sqrt(6.0 / in_ch);
    Rng rng(seed);
    Eigen::ArrayXd data(static_cast<std::int64_t>(out_ch) * in_ch);
    for (std::int64_t i = 0; i < data.size(); ++i) data[i] = rng.uniform(-bound, bound);
    return DenseTensor({out_ch, in_ch, 1, 1}, std::move(data));
}

}  // namespace

std::size_t LiftingOperator::parameter_count() const {
    std::size_t n = 0;
    for (const PyramidLevel& l : levels) n += static_cast<std::size_t>(l.out_ch) * l.in_ch + l.out_ch;
    return n;
}

LiftingOperator build_lifting_operator(const CameraModel& camera, const GridSpec& grid, int stage, int level,
                                       int in_channels, int out_channels, int in_h, int in_w,
                                       std::uint64_t seed, Parameters& params, QueryMode query, bool nonlinear) {
    camera.validate();
    if (stage < 0) throw ConfigError("lifting stage must be nonnegative");
    LiftingOperator op;
    op.stage = stage;
    op.level = level;
    op.in_channels = in_channels;
    op.out_channels = out_channels;
    op.in_h = in_h;
    op.in_w = in_w;
    op.query = query;
    op.nonlinear = nonlinear;
    op.table = std::make_shared<ProjectionTable>(project_voxel_centers(camera, grid, level));
    op.grid_dims = grid.at_level(level).dims;

    if (stage == 0) {
        if (in_channels != out_channels) {
            throw ConfigError("stage-0 lifting is parameter-free and cannot change channel count");
        }
        if (in_h != camera.image_h || in_w != camera.image_w) {
            throw ConfigError("stage-0 lifting expects full-resolution input");
        }
        return op;
    }

    const int total_h = exact_log2(camera.image_h, in_h, "lift");
    const int total_w = exact_log2(camera.image_w, in_w, "lift");
    if (total_h != total_w) throw ConfigError("lift: anisotropic upsampling is not supported");
    const int first = (total_h + 1) / 2;
    const int second = total_h - first;

    const std::string base = "lift.s" + std::to_string(stage);
    const int chans[3] = {in_channels, out_channels, out_channels};
    const int steps[2] = {first, second};
    for (int l = 0; l < 2; ++l) {
        LiftingOperator::PyramidLevel pl;
        pl.in_ch = chans[l];
        pl.out_ch = chans[l + 1];
        pl.upsample_steps = steps[l];
        pl.weight = base + ".l" + std::to_string(l + 1) + ".weight";
        pl.bias = base + ".l" + std::to_string(l + 1) + ".bias";
        if (!params.has(pl.weight)) {
            params.add(pl.weight, pyramid_init(pl.out_ch, pl.in_ch, derive_seed(seed, pl.weight)));
            params.add(pl.bias, DenseTensor::zeros({pl.out_ch}));
        }
        op.levels.push_back(std::move(pl));
    }
    return op;
}

std::shared_ptr<const PixelGather> make_pixel_gather(const ProjectionTable& table,
                                                     const std::vector<VoxelIndex>& occupancy) {
    auto out = std::make_shared<PixelGather>();
    out->u.reserve(occupancy.size());
    out->v.reserve(occupancy.size());
    out->valid.reserve(occupancy.size());
    for (const VoxelIndex& vox : occupancy) {
        const std::int64_t at = table.index(vox);
        out->u.push_back(table.u[at]);
        out->v.push_back(table.v[at]);
        out->valid.push_back(table.valid[at]);
    }
    return out;
}

NodeId lift(Graph& g, const LiftingOperator& op, const ParamBinder& bind, NodeId x,
            std::shared_ptr<const std::vector<VoxelIndex>> occupancy,
            std::shared_ptr<const PixelGather> gather) {
    const DenseTensor& xv = g.dense(x);
    if (xv.rank() != 3 || xv.shape()[0] != op.in_channels || xv.shape()[1] != op.in_h ||
        xv.shape()[2] != op.in_w) {
        throw ConfigError("lift: input resolution does not match operator (expected (" +
                          std::to_string(op.in_channels) + "," + std::to_string(op.in_h) + "," +
                          std::to_string(op.in_w) + "), got " + shape_to_string(xv.shape()) + ")");
    }
    if (!gather) gather = make_pixel_gather(*op.table, *occupancy);

    NodeId h = x;
    for (const LiftingOperator::PyramidLevel& l : op.levels) {
        h = conv2d(g, h, bind(l.weight), 1, 0);
        h = channel_bias(g, h, bind(l.bias));
        if (op.nonlinear) h = relu(g, h);
        h = upsample_nearest(g, h, l.upsample_steps);
    }
    return gather_pixels(g, h, gather, op.grid_dims, occupancy, op.query);
}

}  // namespace pathcons
