#include <doctest.h>

#include "oracles.hpp"
#include "pathcons/geometry.hpp"

using namespace pathcons;

namespace {

CameraModel simple_camera() {
    CameraModel cam;
    cam.fx = 100.0;
    cam.fy = 100.0;
    cam.cx = 50.0;
    cam.cy = 50.0;
    cam.image_h = 100;
    cam.image_w = 100;
    return cam;
}

GridSpec simple_grid() {
    GridSpec grid;
    grid.origin = Eigen::Vector3d(-1.6, -1.6, 1.0);
    grid.voxel_size = 0.2;
    grid.dims = {16, 16, 8};
    return grid;
}

}  // namespace

TEST_CASE("camera validation") {
    CameraModel cam = simple_camera();
    CHECK_NOTHROW(cam.validate());
    cam.fx = 0.0;
    CHECK_THROWS_AS(cam.validate(), ConfigError);
    cam = simple_camera();
    cam.rotation(0, 0) = 1.0 + 1e-6;
    CHECK_THROWS_AS(cam.validate(), ConfigError);
}

TEST_CASE("world_to_image on the optical axis hits the principal point") {
    const Projection p = world_to_image(simple_camera(), {0.0, 0.0, 5.0});
    CHECK(p.valid);
    CHECK(p.u == 50.0);
    CHECK(p.v == 50.0);
    CHECK(p.depth == 5.0);
}

TEST_CASE("world_to_image example point (1,0,5)") {
    const Projection p = world_to_image(simple_camera(), {1.0, 0.0, 5.0});
    CHECK(p.valid);
    CHECK(p.u == doctest::Approx(70.0).epsilon(1e-12));
    CHECK(p.v == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(p.depth == 5.0);
}

TEST_CASE("points behind the camera are invalid") {
    const Projection p = world_to_image(simple_camera(), {0.0, 0.0, -1.0});
    CHECK_FALSE(p.valid);
}

TEST_CASE("world_to_image matches the homogeneous projection-matrix oracle") {
    Rng rng(31);
    CameraModel cam = simple_camera();
    // Non-trivial extrinsics: rotation about y plus translation.
    const double angle = 0.3;
    cam.rotation << std::cos(angle), 0, std::sin(angle), 0, 1, 0, -std::sin(angle), 0, std::cos(angle);
    cam.translation = Eigen::Vector3d(0.2, -0.1, 0.4);
    cam.validate();
    for (int i = 0; i < 200; ++i) {
        const Eigen::Vector3d p(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-2, 6));
        const Projection a = world_to_image(cam, p);
        const Projection b = oracles::project_matrix_ref(cam, p);
        CHECK(a.valid == b.valid);
        if (a.valid) {
            CHECK(a.u == doctest::Approx(b.u).epsilon(1e-12));
            CHECK(a.v == doctest::Approx(b.v).epsilon(1e-12));
            CHECK(a.depth == doctest::Approx(b.depth).epsilon(1e-12));
        }
    }
}

TEST_CASE("projection scale consistency under power-of-two zoom") {
    CameraModel cam = simple_camera();
    Rng rng(32);
    for (const double k : {2.0, 4.0, 0.5}) {
        CameraModel scaled = cam;
        scaled.fx *= k;
        scaled.fy *= k;
        scaled.cx *= k;
        scaled.cy *= k;
        scaled.image_h = static_cast<int>(cam.image_h * k);
        scaled.image_w = static_cast<int>(cam.image_w * k);
        for (int i = 0; i < 100; ++i) {
            const Eigen::Vector3d p(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.5, 6));
            const Projection a = world_to_image(cam, p);
            const Projection b = world_to_image(scaled, p);
            if (a.valid) {
                CHECK(b.u == k * a.u);  // exact: scaling by powers of two
                CHECK(b.v == k * a.v);
            }
        }
    }
}

TEST_CASE("voxelize basics") {
    const GridSpec grid = simple_grid();

    SUBCASE("point at the grid origin lands in voxel (0,0,0)") {
        PointCloud cloud;
        cloud.points.push_back(grid.origin);
        const SparseVoxelTensor t = voxelize(cloud, grid);
        REQUIRE(t.voxel_count() == 1);
        CHECK(t.indices[0] == VoxelIndex{0, 0, 0});
        CHECK(t.features(0, 3) == 1.0);  // count channel
    }
    SUBCASE("empty cloud gives empty tensor") {
        const SparseVoxelTensor t = voxelize(PointCloud{}, grid);
        CHECK(t.voxel_count() == 0);
        CHECK(t.channels == kVoxelFeatureChannels);
    }
    SUBCASE("out-of-bounds points are dropped") {
        PointCloud cloud;
        cloud.points.push_back(grid.origin - Eigen::Vector3d(1, 0, 0));
        cloud.points.push_back(grid.origin + Eigen::Vector3d(100, 0, 0));
        CHECK(voxelize(cloud, grid).voxel_count() == 0);
    }
}

TEST_CASE("voxelize occupancy equals the per-point index oracle") {
    const GridSpec grid = simple_grid();
    Rng rng(33);
    PointCloud cloud;
    for (int i = 0; i < 100; ++i) {
        cloud.points.emplace_back(rng.uniform(-1.6, 1.6), rng.uniform(-1.6, 1.6), rng.uniform(1.0, 2.6));
    }
    const SparseVoxelTensor t = voxelize(cloud, grid);
    const std::vector<VoxelIndex> expect = oracles::voxel_index_ref(cloud.points, grid.origin, grid.voxel_size,
                                                                    grid.dims);
    CHECK(t.indices == expect);
}

TEST_CASE("voxelize mean offsets stay within half a voxel") {
    const GridSpec grid = simple_grid();
    Rng rng(34);
    PointCloud cloud;
    for (int i = 0; i < 400; ++i) {
        cloud.points.emplace_back(rng.uniform(-1.6, 1.6), rng.uniform(-1.6, 1.6), rng.uniform(1.0, 2.6));
    }
    const SparseVoxelTensor t = voxelize(cloud, grid);
    double total_count = 0.0;
    for (Eigen::Index r = 0; r < t.features.rows(); ++r) {
        for (int a = 0; a < 3; ++a) CHECK(std::abs(t.features(r, a)) <= grid.voxel_size / 2 + 1e-12);
        total_count += t.features(r, 3);
    }
    CHECK(total_count == 400.0);
}

TEST_CASE("voxelize of points at voxel centers recovers exactly those indices") {
    const GridSpec grid = simple_grid();
    Rng rng(35);
    std::vector<VoxelIndex> chosen;
    PointCloud cloud;
    for (int i = 0; i < 40; ++i) {
        const VoxelIndex v{static_cast<int>(rng.below(16)), static_cast<int>(rng.below(16)),
                           static_cast<int>(rng.below(8))};
        chosen.push_back(v);
        cloud.points.push_back(grid.voxel_center(v));
    }
    std::sort(chosen.begin(), chosen.end(), lex_less);
    chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
    const SparseVoxelTensor t = voxelize(cloud, grid);
    CHECK(t.indices == chosen);
}

TEST_CASE("stage-t centers are the means of their children's centers") {
    const GridSpec grid = simple_grid();
    for (int t = 1; t <= 3; ++t) {
        const GridSpec coarse = grid.at_level(t);
        Rng rng(36 + t);
        for (int i = 0; i < 20; ++i) {
            const VoxelIndex v{static_cast<int>(rng.below(coarse.dims[0])),
                               static_cast<int>(rng.below(coarse.dims[1])),
                               static_cast<int>(rng.below(coarse.dims[2]))};
            // Mean of the 2^t cube of stage-0 children centers.
            Eigen::Vector3d mean = Eigen::Vector3d::Zero();
            const int f = 1 << t;
            for (int a = 0; a < f; ++a) {
                for (int b = 0; b < f; ++b) {
                    for (int c = 0; c < f; ++c) {
                        mean += grid.voxel_center({v[0] * f + a, v[1] * f + b, v[2] * f + c});
                    }
                }
            }
            mean /= static_cast<double>(f) * f * f;
            CHECK((coarse.voxel_center(v) - mean).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("project_voxel_centers agrees with per-voxel reprojection") {
    const GridSpec grid = simple_grid();
    const CameraModel cam = simple_camera();
    for (int stage = 0; stage <= 2; ++stage) {
        const ProjectionTable table = project_voxel_centers(cam, grid, stage);
        const GridSpec level = grid.at_level(stage);
        CHECK(table.dims == level.dims);
        for (int i = 0; i < level.dims[0]; ++i) {
            for (int j = 0; j < level.dims[1]; ++j) {
                for (int k = 0; k < level.dims[2]; ++k) {
                    const Projection p = oracles::project_matrix_ref(cam, level.voxel_center({i, j, k}));
                    const std::int64_t at = table.index({i, j, k});
                    CHECK(static_cast<bool>(table.valid[at]) == p.valid);
                    if (p.valid) {
                        CHECK(table.u[at] == doctest::Approx(p.u).epsilon(1e-12));
                        CHECK(table.v[at] == doctest::Approx(p.v).epsilon(1e-12));
                    }
                }
            }
        }
    }
}

TEST_CASE("voxel center on the optical axis projects to the principal point") {
    GridSpec grid;
    grid.voxel_size = 0.5;
    grid.dims = {2, 2, 2};
    grid.origin = Eigen::Vector3d(-0.5, -0.5, 1.0);  // voxel (0,0,k) centers on x=y=-0.25...
    // Shift so voxel (1,1,0) center sits exactly on the axis.
    grid.origin = Eigen::Vector3d(-0.75, -0.75, 1.0);
    const CameraModel cam = simple_camera();
    const ProjectionTable table = project_voxel_centers(cam, grid, 0);
    const std::int64_t at = table.index({1, 1, 0});
    CHECK(table.valid[at] == 1);
    CHECK(table.u[at] == doctest::Approx(cam.cx).epsilon(1e-12));
    CHECK(table.v[at] == doctest::Approx(cam.cy).epsilon(1e-12));
}

TEST_CASE("camera facing away yields an all-invalid table") {
    CameraModel cam = simple_camera();
    cam.rotation << 1, 0, 0, 0, -1, 0, 0, 0, -1;  // looks down -z
    cam.validate();
    const ProjectionTable table = project_voxel_centers(cam, simple_grid(), 0);
    for (const std::uint8_t v : table.valid) CHECK(v == 0);
}

TEST_CASE("grid level validation") {
    const GridSpec grid = simple_grid();
    CHECK_NOTHROW(grid.at_level(3));
    CHECK_THROWS_AS(grid.at_level(4), ConfigError);  // 8 / 16 not integral
    GridSpec bad = grid;
    bad.voxel_size = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(grid.validate(5), ConfigError);  // needs divisibility by 16
    CHECK_NOTHROW(grid.validate(4));
}
