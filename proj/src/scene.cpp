#include "pathcons/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pathcons/rng.hpp"

namespace pathcons {

double SceneObject::surface_area() const {
    if (shape == ShapeKind::Sphere) {
        const double r = half_extent.x();
        return 4.0 * M_PI * r * r;
    }
    const Eigen::Vector3d f = 2.0 * half_extent;
    return 2.0 * (f.x() * f.y() + f.y() * f.z() + f.z() * f.x());
}

void DatasetSpec::validate() const {
    if (n_train <= 0 || n_val <= 0) throw ConfigError("dataset sizes must be positive");
    if (lidar_points <= 0) throw ConfigError("lidar point count must be positive");
    if (lidar_noise_sigma < 0.0 || color_noise_sigma < 0.0) throw ConfigError("noise sigmas must be nonnegative");
    if (n_classes < 1 || n_classes > 6) throw ConfigError("n_classes must lie in 1..6");
    if (min_objects < 1 || max_objects < min_objects) throw ConfigError("invalid object count range");
    grid.validate();
    camera.validate();
}

DatasetSpec DatasetSpec::defaults() {
    DatasetSpec spec;
    spec.grid.origin = Eigen::Vector3d(-3.2, -3.2, 2.0);
    spec.grid.voxel_size = 0.2;
    spec.grid.dims = {32, 32, 16};
    spec.camera.fx = 18.0;
    spec.camera.fy = 18.0;
    spec.camera.cx = 32.0;
    spec.camera.cy = 32.0;
    spec.camera.image_h = 64;
    spec.camera.image_w = 64;
    return spec;
}

namespace {

// Injective class -> color family; additive noise happens at render time.
Eigen::Vector3d class_color(int class_id, Rng& rng) {
    auto hi = [&rng] { return rng.uniform(0.75, 1.0); };
    auto lo = [&rng] { return rng.uniform(0.0, 0.2); };
    switch ((class_id - 1) % 6) {
        case 0: return {hi(), lo(), lo()};
        case 1: return {lo(), hi(), lo()};
        case 2: return {lo(), lo(), hi()};
        case 3: return {hi(), hi(), lo()};
        case 4: return {hi(), lo(), hi()};
        default: return {lo(), hi(), hi()};
    }
}

Eigen::Vector3d sample_surface_point(const SceneObject& obj, Rng& rng) {
    if (obj.shape == ShapeKind::Sphere) {
        return obj.center + obj.half_extent.x() * rng.unit_vector3();
    }
    const Eigen::Vector3d e = obj.half_extent;
    const double areas[3] = {e.y() * e.z(), e.x() * e.z(), e.x() * e.y()};  // +-x, +-y, +-z faces
    const double total = 2.0 * (areas[0] + areas[1] + areas[2]);
    double pick = rng.uniform() * total;
    int axis = 0;
    double sign = 1.0;
    for (int a = 0; a < 3; ++a) {
        for (int s = 0; s < 2; ++s) {
            if (pick < areas[a]) {
                axis = a;
                sign = s == 0 ? 1.0 : -1.0;
                goto found;
            }
            pick -= areas[a];
        }
    }
found:;
    Eigen::Vector3d p = obj.center;
    p[axis] += sign * e[axis];
    const int u_axis = (axis + 1) % 3, v_axis = (axis + 2) % 3;
    p[u_axis] += rng.uniform(-e[u_axis], e[u_axis]);
    p[v_axis] += rng.uniform(-e[v_axis], e[v_axis]);
    return p;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const DatasetSpec& spec) {
    Rng rng(seed);
    Scene scene;
    const int count = rng.range_int(spec.min_objects, spec.max_objects);
    const Eigen::Vector3d lo = spec.grid.origin;
    const Eigen::Vector3d hi = spec.grid.origin + spec.grid.voxel_size *
                                                      Eigen::Vector3d(spec.grid.dims[0], spec.grid.dims[1],
                                                                      spec.grid.dims[2]);
    for (int i = 0; i < count; ++i) {
        SceneObject obj;
        obj.class_id = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_classes)));
        obj.shape = rng.uniform() < 0.5 ? ShapeKind::Box : ShapeKind::Sphere;
        // Sizes overlap across classes; color is the primary class signal.
        const double base = 0.38 + 0.07 * ((obj.class_id - 1) % 3);
        if (obj.shape == ShapeKind::Sphere) {
            const double r = rng.uniform(base, base + 0.3);
            obj.half_extent = Eigen::Vector3d::Constant(r);
        } else {
            for (int a = 0; a < 3; ++a) obj.half_extent[a] = rng.uniform(base, base + 0.3);
        }
        for (int a = 0; a < 3; ++a) {
            const double margin = obj.half_extent[a];
            obj.center[a] = rng.uniform(lo[a] + margin, hi[a] - margin);
        }
        obj.albedo = class_color(obj.class_id, rng);
        scene.objects.push_back(obj);
    }
    return scene;
}

DenseTensor render_image(const Scene& scene, const CameraModel& camera, double color_noise_sigma,
                         std::uint64_t seed) {
    const int h = camera.image_h, w = camera.image_w;
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    constexpr double kBackgroundGray = 0.5;
    Eigen::ArrayXd img = Eigen::ArrayXd::Constant(3 * plane, kBackgroundGray);
    std::vector<double> depth(plane, std::numeric_limits<double>::infinity());

    Rng rng(seed);
    constexpr double kSplatsPerSquareMeter = 800.0;
    for (const SceneObject& obj : scene.objects) {
        const int splats = std::max(64, static_cast<int>(std::ceil(obj.surface_area() * kSplatsPerSquareMeter)));
        for (int s = 0; s < splats; ++s) {
            const Projection p = world_to_image(camera, sample_surface_point(obj, rng));
            if (!p.valid) continue;
            const int pi = std::min(static_cast<int>(std::floor(p.v)), h - 1);
            const int pj = std::min(static_cast<int>(std::floor(p.u)), w - 1);
            const std::int64_t at = static_cast<std::int64_t>(pi) * w + pj;
            if (p.depth < depth[at]) {
                depth[at] = p.depth;
                for (int c = 0; c < 3; ++c) img[c * plane + at] = obj.albedo[c];
            }
        }
    }

    // One 3x3 dilation pass: empty pixels inherit the nearest-depth covered
    // neighbor, closing splat gaps inside silhouettes.
    Eigen::ArrayXd filled = img;
    std::vector<double> filled_depth = depth;
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const std::int64_t at = static_cast<std::int64_t>(i) * w + j;
            if (std::isfinite(depth[at])) continue;
            double best = std::numeric_limits<double>::infinity();
            std::int64_t best_at = -1;
            for (int di = -1; di <= 1; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    const int ni = i + di, nj = j + dj;
                    if (ni < 0 || nj < 0 || ni >= h || nj >= w) continue;
                    const std::int64_t nat = static_cast<std::int64_t>(ni) * w + nj;
                    if (depth[nat] < best) {
                        best = depth[nat];
                        best_at = nat;
                    }
                }
            }
            if (best_at >= 0) {
                filled_depth[at] = best;
                for (int c = 0; c < 3; ++c) filled[c * plane + at] = img[c * plane + best_at];
            }
        }
    }

    if (color_noise_sigma > 0.0) {
        for (std::int64_t i = 0; i < filled.size(); ++i) {
            filled[i] += color_noise_sigma * rng.normal();
        }
    }
    filled = filled.cwiseMax(0.0).cwiseMin(1.0);
    return DenseTensor({3, h, w}, std::move(filled));
}

PointCloud sample_lidar(const Scene& scene, int n_points, double noise_sigma, std::uint64_t seed) {
    PointCloud cloud;
    if (scene.objects.empty()) return cloud;
    std::vector<double> cumulative;
    double total = 0.0;
    for (const SceneObject& obj : scene.objects) {
        total += obj.surface_area();
        cumulative.push_back(total);
    }
    Rng rng(seed);
    cloud.points.reserve(n_points);
    for (int i = 0; i < n_points; ++i) {
        const double pick = rng.uniform() * total;
        const std::size_t at = std::lower_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin();
        Eigen::Vector3d p = sample_surface_point(scene.objects[std::min(at, scene.objects.size() - 1)], rng);
        if (noise_sigma > 0.0) {
            for (int a = 0; a < 3; ++a) p[a] += noise_sigma * rng.normal();
        }
        cloud.points.push_back(p);
    }
    return cloud;
}

namespace {

// Surface-intersection test between an object and the axis-aligned cube
// [lo, hi]: the cube must touch the object but not sit strictly inside it.
bool surface_intersects(const SceneObject& obj, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
    if (obj.shape == ShapeKind::Sphere) {
        const double r = obj.half_extent.x();
        double dmin2 = 0.0;
        double dmax2 = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double c = obj.center[a];
            const double clamped = std::clamp(c, lo[a], hi[a]);
            dmin2 += (c - clamped) * (c - clamped);
            const double far = std::max(std::abs(c - lo[a]), std::abs(c - hi[a]));
            dmax2 += far * far;
        }
        return dmin2 <= r * r && r * r <= dmax2;
    }
    const Eigen::Vector3d blo = obj.center - obj.half_extent;
    const Eigen::Vector3d bhi = obj.center + obj.half_extent;
    bool overlaps = true, strictly_inside = true;
    for (int a = 0; a < 3; ++a) {
        overlaps = overlaps && lo[a] <= bhi[a] && hi[a] >= blo[a];
        strictly_inside = strictly_inside && lo[a] > blo[a] && hi[a] < bhi[a];
    }
    return overlaps && !strictly_inside;
}

}  // namespace

double surface_distance(const SceneObject& obj, const Eigen::Vector3d& p) {
    const Eigen::Vector3d d = p - obj.center;
    if (obj.shape == ShapeKind::Sphere) {
        return std::abs(d.norm() - obj.half_extent.x());
    }
    const Eigen::Vector3d q = d.cwiseAbs() - obj.half_extent;
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    return std::abs(outside + inside);
}

std::vector<std::uint16_t> label_voxels(const Scene& scene, const GridSpec& grid) {
    const std::int64_t n = static_cast<std::int64_t>(grid.dims[0]) * grid.dims[1] * grid.dims[2];
    std::vector<std::uint16_t> labels(n, 0);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    const double half = 0.5 * grid.voxel_size;
    for (const SceneObject& obj : scene.objects) {
        const VoxelIndex vlo = grid.voxel_of(obj.center - obj.half_extent - Eigen::Vector3d::Constant(half));
        const VoxelIndex vhi = grid.voxel_of(obj.center + obj.half_extent + Eigen::Vector3d::Constant(half));
        for (int i = std::max(0, vlo[0]); i <= std::min(grid.dims[0] - 1, vhi[0]); ++i) {
            for (int j = std::max(0, vlo[1]); j <= std::min(grid.dims[1] - 1, vhi[1]); ++j) {
                for (int k = std::max(0, vlo[2]); k <= std::min(grid.dims[2] - 1, vhi[2]); ++k) {
                    const VoxelIndex v{i, j, k};
                    const Eigen::Vector3d center = grid.voxel_center(v);
                    const Eigen::Vector3d lo = center - Eigen::Vector3d::Constant(half);
                    const Eigen::Vector3d hi = center + Eigen::Vector3d::Constant(half);
                    if (!surface_intersects(obj, lo, hi)) continue;
                    const double dist = surface_distance(obj, center);
                    const std::int64_t at = linear_voxel_key(v, grid.dims);
                    if (dist < best[at]) {  // ties keep the earlier object
                        best[at] = dist;
                        labels[at] = static_cast<std::uint16_t>(obj.class_id);
                    }
                }
            }
        }
    }
    return labels;
}

SceneSample make_sample(const DatasetSpec& spec, int index) {
    const Scene scene = generate_scene(derive_seed(spec.seed, "scene", static_cast<std::uint64_t>(index)), spec);
    SceneSample sample;
    sample.camera = spec.camera;
    sample.grid = spec.grid;
    sample.cloud = sample_lidar(scene, spec.lidar_points, spec.lidar_noise_sigma,
                                derive_seed(spec.seed, "lidar", static_cast<std::uint64_t>(index)));
    sample.image = render_image(scene, spec.camera, spec.color_noise_sigma,
                                derive_seed(spec.seed, "image", static_cast<std::uint64_t>(index)));
    sample.voxel_labels = label_voxels(scene, spec.grid);

    // Labeled voxels must contain at least one point.
    const SparseVoxelTensor occ = voxelize(sample.cloud, spec.grid);
    std::vector<std::uint8_t> occupied(sample.voxel_labels.size(), 0);
    for (const VoxelIndex& v : occ.indices) occupied[linear_voxel_key(v, spec.grid.dims)] = 1;
    for (std::size_t i = 0; i < sample.voxel_labels.size(); ++i) {
        if (!occupied[i]) sample.voxel_labels[i] = 0;
    }
    return sample;
}

}  // namespace pathcons
