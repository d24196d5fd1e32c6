#include <doctest.h>

#include "oracles.hpp"
#include "pathcons/gradcheck.hpp"
#include "pathcons/lifting.hpp"

using namespace pathcons;

namespace {

CameraModel toy_camera() {
    CameraModel cam;
    cam.fx = 8.0;
    cam.fy = 8.0;
    cam.cx = 8.0;
    cam.cy = 8.0;
    cam.image_h = 16;
    cam.image_w = 16;
    return cam;
}

GridSpec toy_grid() {
    GridSpec grid;
    grid.origin = Eigen::Vector3d(-0.8, -0.8, 1.0);
    grid.voxel_size = 0.2;
    grid.dims = {8, 8, 4};
    return grid;
}

std::shared_ptr<const std::vector<VoxelIndex>> occupancy_of(const SparseVoxelTensor& t) {
    return std::make_shared<const std::vector<VoxelIndex>>(t.indices);
}

}  // namespace

TEST_CASE("stage-0 operator is parameter-free, learned stages are seeded") {
    Parameters params;
    const LiftingOperator p0 = build_lifting_operator(toy_camera(), toy_grid(), 0, 0, 3, 3, 16, 16, 1, params);
    CHECK(p0.parameter_count() == 0);
    CHECK(params.values.empty());

    const LiftingOperator p1 = build_lifting_operator(toy_camera(), toy_grid(), 1, 1, 4, 6, 8, 8, 1, params);
    CHECK(p1.parameter_count() == 4u * 6 + 6 + 6u * 6 + 6);
    CHECK(params.total_size() == p1.parameter_count());

    Parameters params_b;
    build_lifting_operator(toy_camera(), toy_grid(), 1, 1, 4, 6, 8, 8, 1, params_b);
    for (const auto& [name, v] : params.values) {
        CHECK((v.data() == params_b.values.at(name).data()).all());
    }
    CHECK_THROWS_AS(build_lifting_operator(toy_camera(), toy_grid(), 0, 0, 3, 4, 16, 16, 1, params),
                    ConfigError);
}

TEST_CASE("projection table inside the operator matches the geometry oracle") {
    Parameters params;
    const LiftingOperator p1 = build_lifting_operator(toy_camera(), toy_grid(), 1, 1, 3, 4, 8, 8, 2, params);
    const GridSpec level = toy_grid().at_level(1);
    for (int i = 0; i < level.dims[0]; ++i) {
        for (int j = 0; j < level.dims[1]; ++j) {
            for (int k = 0; k < level.dims[2]; ++k) {
                const Projection ref = oracles::project_matrix_ref(toy_camera(), level.voxel_center({i, j, k}));
                const std::int64_t at = p1.table->index({i, j, k});
                CHECK(static_cast<bool>(p1.table->valid[at]) == ref.valid);
                if (ref.valid) CHECK(p1.table->u[at] == doctest::Approx(ref.u).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("constant feature map lifts to that constant on every valid voxel") {
    Parameters params;
    const LiftingOperator p0 = build_lifting_operator(toy_camera(), toy_grid(), 0, 0, 3, 3, 16, 16, 3, params);
    const SparseVoxelTensor occ_src = oracles::random_sparse({8, 8, 4}, 1, 20, 9);
    auto occ = occupancy_of(occ_src);

    Graph g;
    DenseTensor img = DenseTensor::zeros({3, 16, 16});
    img.mutable_data().segment(0, 256).setConstant(0.25);
    img.mutable_data().segment(256, 256).setConstant(0.5);
    img.mutable_data().segment(512, 256).setConstant(0.75);
    const ParamBinder bind{&g, &params, false};
    const NodeId out = lift(g, p0, bind, g.input(img), occ);
    const SparseVoxelTensor& y = g.sparse(out);
    const auto gather = make_pixel_gather(*p0.table, *occ);
    for (Eigen::Index r = 0; r < y.features.rows(); ++r) {
        if (gather->valid[static_cast<std::size_t>(r)]) {
            CHECK(y.features(r, 0) == 0.25);
            CHECK(y.features(r, 1) == 0.5);
            CHECK(y.features(r, 2) == 0.75);
        } else {
            CHECK(y.features.row(r).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("stage-0 nearest lift equals the exhaustive pixel-lookup oracle") {
    Parameters params;
    const LiftingOperator p0 = build_lifting_operator(toy_camera(), toy_grid(), 0, 0, 3, 3, 16, 16, 4, params);
    const DenseTensor img = oracles::random_tensor({3, 16, 16}, 91);

    // Full-grid occupancy: every voxel of the 8x8x4 grid.
    std::vector<VoxelIndex> all;
    for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
            for (int k = 0; k < 4; ++k) all.push_back({i, j, k});
        }
    }
    auto occ = std::make_shared<const std::vector<VoxelIndex>>(std::move(all));

    Graph g;
    const ParamBinder bind{&g, &params, false};
    const NodeId out = lift(g, p0, bind, g.input(img), occ);
    const SparseVoxelTensor& y = g.sparse(out);

    const GridSpec grid = toy_grid();
    for (std::size_t r = 0; r < occ->size(); ++r) {
        const Projection proj = oracles::project_matrix_ref(toy_camera(), grid.voxel_center((*occ)[r]));
        if (!proj.valid) {
            CHECK(y.features(static_cast<Eigen::Index>(r), 0) == 0.0);
            continue;
        }
        const int pi = static_cast<int>(std::floor(proj.v));
        const int pj = static_cast<int>(std::floor(proj.u));
        for (int c = 0; c < 3; ++c) {
            CHECK(y.features(static_cast<Eigen::Index>(r), c) == img[img.at3(c, pi, pj)]);
        }
    }
}

TEST_CASE("all-invalid projection lifts to all zeros") {
    CameraModel away = toy_camera();
    away.rotation << 1, 0, 0, 0, -1, 0, 0, 0, -1;
    Parameters params;
    const LiftingOperator p0 = build_lifting_operator(away, toy_grid(), 0, 0, 2, 2, 16, 16, 5, params);
    const SparseVoxelTensor occ_src = oracles::random_sparse({8, 8, 4}, 1, 15, 10);
    Graph g;
    const ParamBinder bind{&g, &params, false};
    const NodeId out = lift(g, p0, bind, g.input(oracles::random_tensor({2, 16, 16}, 92)), occupancy_of(occ_src));
    CHECK(g.sparse(out).features.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lift resolution mismatch is a config error") {
    Parameters params;
    const LiftingOperator p1 = build_lifting_operator(toy_camera(), toy_grid(), 1, 1, 3, 4, 8, 8, 6, params);
    Graph g;
    const ParamBinder bind{&g, &params, false};
    const SparseVoxelTensor occ_src = oracles::random_sparse({4, 4, 2}, 1, 5, 11);
    CHECK_THROWS_AS(lift(g, p1, bind, g.input(oracles::random_tensor({3, 16, 16}, 93)), occupancy_of(occ_src)),
                    ConfigError);
}

TEST_CASE("lift is linear in x with nonlinearity disabled") {
    Parameters params;
    const LiftingOperator p1 =
        build_lifting_operator(toy_camera(), toy_grid(), 1, 1, 3, 4, 8, 8, 7, params, QueryMode::Nearest, false);
    const SparseVoxelTensor occ_src = oracles::random_sparse({4, 4, 2}, 1, 10, 12);
    auto occ = occupancy_of(occ_src);

    // Bias breaks linearity; zero it for the algebraic check.
    for (auto& [name, v] : params.values) {
        if (name.find(".bias") != std::string::npos) v.mutable_data().setZero();
    }

    const DenseTensor x1 = oracles::random_tensor({3, 8, 8}, 94);
    const DenseTensor x2 = oracles::random_tensor({3, 8, 8}, 95);
    const double a = 1.7, b = -0.6;

    auto lift_of = [&](const DenseTensor& x) {
        Graph g;
        const ParamBinder bind{&g, &params, false};
        return g.sparse(lift(g, p1, bind, g.input(x), occ)).features;
    };
    DenseTensor combo(x1.shape(), a * x1.data() + b * x2.data());
    const FeatureMatrix lhs = lift_of(combo);
    const FeatureMatrix rhs = a * lift_of(x1) + b * lift_of(x2);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("lift gradients match finite differences, nearest and bilinear") {
    for (const QueryMode mode : {QueryMode::Nearest, QueryMode::Bilinear}) {
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            Parameters params;
            const LiftingOperator p1 = build_lifting_operator(toy_camera(), toy_grid(), 1, 1, 2, 3, 8, 8,
                                                              30 + seed, params, mode);
            const SparseVoxelTensor occ_src = oracles::random_sparse({4, 4, 2}, 1, 8, 40 + seed);
            auto occ = occupancy_of(occ_src);
            const DenseTensor x0 = oracles::random_positive_tensor({2, 8, 8}, 50 + seed, 0.2, 1.0);

            Graph g;
            const NodeId p = g.parameter("x", x0);
            const ParamBinder bind{&g, &params, false};
            const NodeId loss = sum_all(g, lift(g, p1, bind, p, occ));
            const DenseTensor analytic = g.backward(loss).at_or_zero("x", x0.shape());

            const DenseTensor numeric = finite_diff_gradient(
                [&](const DenseTensor& x) {
                    Graph h;
                    const ParamBinder b2{&h, &params, false};
                    return h.scalar(sum_all(h, lift(h, p1, b2, h.input(x), occ)));
                },
                x0, 1e-5);
            CHECK(relative_error(analytic, numeric) <= 1e-5);
        }
    }
}

TEST_CASE("masked voxels contribute exactly zero gradient to x") {
    CameraModel cam = toy_camera();
    Parameters params;
    const LiftingOperator p0 = build_lifting_operator(cam, toy_grid(), 0, 0, 2, 2, 16, 16, 8, params);

    // Mix of valid and invalid voxels: validity decided by the table.
    const SparseVoxelTensor occ_src = oracles::random_sparse({8, 8, 4}, 1, 30, 13);
    auto occ = occupancy_of(occ_src);
    const auto gather = make_pixel_gather(*p0.table, *occ);

    Graph g;
    const NodeId p = g.parameter("x", oracles::random_tensor({2, 16, 16}, 96));
    const ParamBinder bind{&g, &params, false};
    const NodeId lifted = lift(g, p0, bind, p, occ, gather);

    // Loss reads only the masked (invalid) voxels; gradient must be absent.
    auto invalid_rows = std::make_shared<std::vector<int>>();
    auto invalid_idx = std::make_shared<std::vector<VoxelIndex>>();
    for (std::size_t r = 0; r < occ->size(); ++r) {
        if (!gather->valid[r]) {
            invalid_rows->push_back(static_cast<int>(r));
            invalid_idx->push_back((*occ)[r]);
        }
    }
    if (!invalid_rows->empty()) {
        const NodeId sel = sparse_select_rows(g, lifted, invalid_rows, invalid_idx);
        const GradientMap grads = g.backward(sum_all(g, sel));
        CHECK_FALSE(grads.has("x"));
    }
}

TEST_CASE("fuse sum and concat contracts") {
    const SparseVoxelTensor a = oracles::random_sparse({4, 4, 4}, 4, 10, 60);
    SparseVoxelTensor b = a;
    b.features = -2.0 * a.features;

    Graph g;
    const NodeId na = g.input(a), nb = g.input(b);
    SUBCASE("sum with zero leaves y unchanged") {
        const SparseVoxelTensor zeros = SparseVoxelTensor::zeros_like_occupancy(a.grid_shape, 4, a.indices);
        const NodeId out = fuse(g, na, g.input(zeros), FuseMode::Sum);
        CHECK((g.sparse(out).features - a.features).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("sum commutes") {
        const NodeId ab = fuse(g, na, nb, FuseMode::Sum);
        const NodeId ba = fuse(g, nb, na, FuseMode::Sum);
        CHECK((g.sparse(ab).features - g.sparse(ba).features).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("concat doubles channels") {
        const NodeId cat = fuse(g, na, nb, FuseMode::Concat);
        CHECK(g.sparse(cat).channels == 8);
        CHECK((g.sparse(cat).features.leftCols(4) - a.features).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("occupancy mismatch rejected") {
        const SparseVoxelTensor other = oracles::random_sparse({4, 4, 4}, 4, 9, 61);
        if (other.indices != a.indices) {
            CHECK_THROWS_AS(fuse(g, na, g.input(other), FuseMode::Sum), ConfigError);
        }
        const SparseVoxelTensor narrow = oracles::random_sparse({4, 4, 4}, 3, 10, 60);
        // Same seed gives same indices but 3 channels; sum must reject.
        if (narrow.indices == a.indices) {
            CHECK_THROWS_AS(fuse(g, na, g.input(narrow), FuseMode::Sum), ConfigError);
        }
    }
}
