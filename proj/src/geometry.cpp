#include "pathcons/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace pathcons {

void CameraModel::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("camera focal lengths must be positive");
    if (image_h <= 0 || image_w <= 0) throw ConfigError("camera image size must be positive");
    const Eigen::Matrix3d gram = rotation.transpose() * rotation;
    if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
        throw ConfigError("camera rotation is not orthonormal within 1e-9");
    }
}

void GridSpec::validate(int n_stages) const {
    if (!(voxel_size > 0.0)) throw ConfigError("voxel_size must be positive");
    const int div = 1 << std::max(0, n_stages - 1);
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0) throw ConfigError("grid dims must be positive");
        if (dims[a] % div != 0) {
            throw ConfigError("grid dims must be divisible by 2^(n_stages-1) = " + std::to_string(div));
        }
    }
}

GridSpec GridSpec::at_level(int level) const {
    if (level < 0) throw ConfigError("grid level must be nonnegative");
    const int f = 1 << level;
    for (int a = 0; a < 3; ++a) {
        if (dims[a] % f != 0) throw ConfigError("grid dims not divisible by 2^level");
    }
    GridSpec out;
    out.origin = origin;
    out.voxel_size = voxel_size * f;
    out.dims = {dims[0] / f, dims[1] / f, dims[2] / f};
    return out;
}

VoxelIndex GridSpec::voxel_of(const Eigen::Vector3d& p) const {
    VoxelIndex v;
    for (int a = 0; a < 3; ++a) {
        v[a] = static_cast<int>(std::floor((p[a] - origin[a]) / voxel_size));
    }
    return v;
}

Projection world_to_image(const CameraModel& camera, const Eigen::Vector3d& point) {
    const Eigen::Vector3d p = camera.rotation * point + camera.translation;
    Projection out;
    out.depth = p.z();
    if (!(p.z() > 0.0)) return out;
    out.u = camera.fx * (p.x() / p.z()) + camera.cx;
    out.v = camera.fy * (p.y() / p.z()) + camera.cy;
    out.valid = out.u >= 0.0 && out.u < camera.image_w && out.v >= 0.0 && out.v < camera.image_h;
    return out;
}

ProjectionTable project_voxel_centers(const CameraModel& camera, const GridSpec& grid, int stage) {
    const GridSpec level = grid.at_level(stage);
    ProjectionTable table;
    table.dims = level.dims;
    const std::int64_t n = static_cast<std::int64_t>(level.dims[0]) * level.dims[1] * level.dims[2];
    table.u.assign(n, 0.0);
    table.v.assign(n, 0.0);
    table.valid.assign(n, 0);
    std::int64_t at = 0;
    for (int i = 0; i < level.dims[0]; ++i) {
        for (int j = 0; j < level.dims[1]; ++j) {
            for (int k = 0; k < level.dims[2]; ++k, ++at) {
                const Projection p = world_to_image(camera, level.voxel_center({i, j, k}));
                table.u[at] = p.u;
                table.v[at] = p.v;
                table.valid[at] = p.valid ? 1 : 0;
            }
        }
    }
    return table;
}

SparseVoxelTensor voxelize(const PointCloud& cloud, const GridSpec& grid) {
    struct Accum {
        Eigen::Vector3d sum = Eigen::Vector3d::Zero();
        int count = 0;
    };
    std::map<std::int64_t, Accum> cells;  // ordered: canonical output for free
    for (const Eigen::Vector3d& p : cloud.points) {
        if (!p.allFinite()) throw NumericError("voxelize: non-finite point coordinate");
        const VoxelIndex v = grid.voxel_of(p);
        if (!grid.contains(v)) continue;
        Accum& acc = cells[linear_voxel_key(v, grid.dims)];
        acc.sum += p - grid.voxel_center(v);
        acc.count += 1;
    }

    SparseVoxelTensor out;
    out.grid_shape = grid.dims;
    out.channels = kVoxelFeatureChannels;
    out.indices.reserve(cells.size());
    out.features.resize(static_cast<Eigen::Index>(cells.size()), kVoxelFeatureChannels);
    Eigen::Index row = 0;
    for (const auto& [key, acc] : cells) {
        const int k = static_cast<int>(key % grid.dims[2]);
        const int j = static_cast<int>((key / grid.dims[2]) % grid.dims[1]);
        const int i = static_cast<int>(key / (static_cast<std::int64_t>(grid.dims[1]) * grid.dims[2]));
        out.indices.push_back({i, j, k});
        const Eigen::Vector3d mean = acc.sum / acc.count;
        out.features(row, 0) = mean.x();
        out.features(row, 1) = mean.y();
        out.features(row, 2) = mean.z();
        out.features(row, 3) = static_cast<double>(acc.count);
        ++row;
    }
    out.validate();
    return out;
}

}  // namespace pathcons
