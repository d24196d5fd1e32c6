#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pathcons/tensor.hpp"

namespace pathcons {

/// Pinhole camera: world -> camera via p_cam = R p + t, then
/// u = fx x/z + cx, v = fy y/z + cy. Image is (image_h x image_w) pixels.
struct CameraModel {
    double fx = 0.0, fy = 0.0;
    double cx = 0.0, cy = 0.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    int image_h = 0, image_w = 0;

    /// Throws ConfigError unless R is orthonormal within 1e-9, focal
    /// lengths are positive and the image size is positive.
    void validate() const;
};

/// Axis-aligned voxel grid. Index axis a spans
/// [origin[a], origin[a] + dims[a] * voxel_size).
struct GridSpec {
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    double voxel_size = 0.0;
    std::array<int, 3> dims{0, 0, 0};

    void validate(int n_stages = 1) const;

    /// Grid of stage t: dims / 2^t, voxel size * 2^t, same origin.
    GridSpec at_level(int level) const;

    Eigen::Vector3d voxel_center(const VoxelIndex& v) const {
        return origin + voxel_size * Eigen::Vector3d(v[0] + 0.5, v[1] + 0.5, v[2] + 0.5);
    }
    /// floor((p - origin) / voxel_size) per axis, without bounds check.
    VoxelIndex voxel_of(const Eigen::Vector3d& p) const;
    bool contains(const VoxelIndex& v) const {
        return v[0] >= 0 && v[1] >= 0 && v[2] >= 0 && v[0] < dims[0] && v[1] < dims[1] && v[2] < dims[2];
    }
};

struct PointCloud {
    std::vector<Eigen::Vector3d> points;
};

struct Projection {
    double u = 0.0, v = 0.0, depth = 0.0;
    bool valid = false;
};

/// Projects a world point; valid iff depth > 0 and (u, v) lies inside
/// [0, W) x [0, H).
Projection world_to_image(const CameraModel& camera, const Eigen::Vector3d& point);

/// Per-voxel projected pixel coordinates for an entire grid level, indexed
/// row-major by (i, j, k).
struct ProjectionTable {
    std::array<int, 3> dims{0, 0, 0};
    std::vector<double> u, v;
    std::vector<std::uint8_t> valid;

    std::int64_t index(const VoxelIndex& w) const {
        return (static_cast<std::int64_t>(w[0]) * dims[1] + w[1]) * dims[2] + w[2];
    }
    std::int64_t size() const { return static_cast<std::int64_t>(u.size()); }
};

/// Projects every stage-t voxel center to input pixel resolution.
ProjectionTable project_voxel_centers(const CameraModel& camera, const GridSpec& grid, int stage);

/// Points binned by floor((p - origin) / voxel_size); out-of-bounds points
/// dropped. Per-voxel feature: mean offset from the voxel center (3) plus
/// point count (1). Output is canonical-sorted.
SparseVoxelTensor voxelize(const PointCloud& cloud, const GridSpec& grid);

inline constexpr int kVoxelFeatureChannels = 4;

}  // namespace pathcons
