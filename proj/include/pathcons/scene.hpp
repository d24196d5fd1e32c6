#pragma once

#include <cstdint>
#include <vector>

#include "pathcons/geometry.hpp"

namespace pathcons {

enum class ShapeKind { Box, Sphere };

struct SceneObject {
    ShapeKind shape = ShapeKind::Box;
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    /// Box half extents; spheres use half_extent.x() as the radius.
    Eigen::Vector3d half_extent = Eigen::Vector3d::Zero();
    int class_id = 1;
    Eigen::Vector3d albedo = Eigen::Vector3d::Zero();

    double surface_area() const;
};

struct Scene {
    std::vector<SceneObject> objects;
};

struct DatasetSpec {
    int n_train = 200;
    int n_val = 50;
    std::uint64_t seed = 7;
    int lidar_points = 4096;
    double lidar_noise_sigma = 0.02;  // meters
    double color_noise_sigma = 0.05;
    int n_classes = 3;
    int min_objects = 1;
    int max_objects = 8;
    GridSpec grid;
    CameraModel camera;

    void validate() const;
    /// Desk-scale defaults: 32x32x16 grid of 0.2 m voxels in front of a
    /// fixed 64x64 camera at the origin.
    static DatasetSpec defaults();
};

/// One paired LiDAR/camera observation with dense stage-0 voxel labels
/// (0 = background, row-major over the grid). Labels are restricted to
/// voxels the cloud actually occupies.
struct SceneSample {
    PointCloud cloud;
    DenseTensor image;  // (3, H', W'), values in [0, 1]
    std::vector<std::uint16_t> voxel_labels;
    CameraModel camera;
    GridSpec grid;
};

/// Deterministic scene draw: 1..8 objects, classes color-coded (injective
/// class -> color family) with mildly class-correlated sizes.
Scene generate_scene(std::uint64_t seed, const DatasetSpec& spec);

/// Splat rendering: dense surface samples projected with nearest-depth-wins,
/// gaps filled by one 3x3 dilation pass, then additive color noise clamped
/// to [0, 1]. Background is constant gray.
DenseTensor render_image(const Scene& scene, const CameraModel& camera, double color_noise_sigma,
                         std::uint64_t seed);

/// Area-weighted uniform surface sampling plus isotropic Gaussian noise.
PointCloud sample_lidar(const Scene& scene, int n_points, double noise_sigma, std::uint64_t seed);

/// Dense per-voxel class labels: a voxel is labeled with the class of the
/// object whose surface intersects it (nearest surface on ties), else 0.
std::vector<std::uint16_t> label_voxels(const Scene& scene, const GridSpec& grid);

/// Assembles the sample for dataset index `index` (train indices first,
/// then validation), masking labels to cloud-occupied voxels.
SceneSample make_sample(const DatasetSpec& spec, int index);

/// |signed distance| from a point to the object's surface.
double surface_distance(const SceneObject& obj, const Eigen::Vector3d& p);

}  // namespace pathcons
