#include <doctest.h>

#include "oracles.hpp"
#include "pathcons/backbones.hpp"
#include "pathcons/gradcheck.hpp"

using namespace pathcons;

namespace {

BackboneSpec small_spec() {
    BackboneSpec spec;
    spec.n_stages = 4;
    spec.channels_2d = {4, 6, 8, 8};
    spec.channels_3d = {4, 6, 8, 8};
    spec.convs_per_stage = 2;
    return spec;
}

}  // namespace

TEST_CASE("init_backbones is seed-deterministic") {
    const BackboneSpec spec = small_spec();
    Parameters a, b, c;
    init_backbones(spec, 7, a);
    init_backbones(spec, 7, b);
    init_backbones(spec, 8, c);

    REQUIRE(a.values.size() == b.values.size());
    bool all_equal_ab = true, any_diff_ac = false;
    for (const auto& [name, va] : a.values) {
        all_equal_ab = all_equal_ab && (va.data() == b.values.at(name).data()).all();
        any_diff_ac = any_diff_ac || !(va.data() == c.values.at(name).data()).all();
    }
    CHECK(all_equal_ab);
    CHECK(any_diff_ac);
}

TEST_CASE("parameter count matches the closed-form formula") {
    const BackboneSpec spec = small_spec();
    Parameters params;
    init_backbones(spec, 1, params);
    CHECK(params.total_size() == backbone_parameter_count(spec));

    // Default spec too (4 stages, 2 convs, channels 16/32/64/64).
    const BackboneSpec def;
    Parameters def_params;
    init_backbones(def, 1, def_params);
    CHECK(def_params.total_size() == backbone_parameter_count(def));
    // Hand count for the default 2D branch, stage 1: 16*3*9+16 + 16*16*9+16.
    std::size_t stage1_2d = 16u * 3 * 9 + 16 + 16u * 16 * 9 + 16;
    std::size_t found = 0;
    for (const auto& [name, v] : def_params.values) {
        if (name.rfind("2d.stage1.", 0) == 0) found += static_cast<std::size_t>(v.size());
    }
    CHECK(found == stage1_2d);
}

TEST_CASE("spec validation") {
    BackboneSpec spec = small_spec();
    spec.n_stages = 1;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = small_spec();
    spec.channels_2d = {4, 6};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = small_spec();
    spec.kernel_2d = 4;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("run_stage_2d halves resolution and checks channels") {
    const BackboneSpec spec = small_spec();
    Parameters params;
    const BackbonePair nets = init_backbones(spec, 3, params);

    Graph g;
    const ParamBinder bind{&g, &params, false};
    const NodeId x = g.input(oracles::random_tensor({3, 64, 64}, 1));
    const NodeId y = run_stage_2d(g, nets.net2d.stages[0], bind, x);
    CHECK(g.dense(y).shape() == std::vector<int>{4, 32, 32});

    CHECK_THROWS_AS(run_stage_2d(g, nets.net2d.stages[2], bind, x), ConfigError);
}

TEST_CASE("final 2D stage keeps its resolution") {
    const BackboneSpec spec = small_spec();
    Parameters params;
    const BackbonePair nets = init_backbones(spec, 3, params);
    Graph g;
    const ParamBinder bind{&g, &params, false};
    NodeId x = g.input(oracles::random_tensor({3, 32, 32}, 2));
    for (int t = 1; t <= 4; ++t) x = run_stage_2d(g, nets.net2d.stages[t - 1], bind, x);
    // Three downsamples only: 32 -> 16 -> 8 -> 4, stage 4 stays at 4.
    CHECK(g.dense(x).shape() == std::vector<int>{8, 4, 4});
}

TEST_CASE("all-zero input with zero biases stays zero through a 2D stage") {
    const BackboneSpec spec = small_spec();
    Parameters params;
    const BackbonePair nets = init_backbones(spec, 4, params);  // biases init to zero
    Graph g;
    const ParamBinder bind{&g, &params, false};
    const NodeId x = g.input(DenseTensor::zeros({3, 16, 16}));
    const NodeId y = run_stage_2d(g, nets.net2d.stages[0], bind, x);
    CHECK(g.dense(y).data().abs().maxCoeff() == 0.0);
}

TEST_CASE("2D stage gradients match finite differences") {
    BackboneSpec spec = small_spec();
    spec.channels_2d = {2, 2, 2, 2};
    spec.convs_per_stage = 1;
    Parameters params;
    const BackbonePair nets = init_backbones(spec, 5, params);
    const std::string wname = nets.net2d.stages[0].convs[0].weight;

    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const DenseTensor x = oracles::random_positive_tensor({3, 8, 8}, 100 + seed, 0.2, 1.0);
        Parameters local = params;

        Graph g;
        const ParamBinder bind{&g, &local, false};
        const NodeId loss = sum_all(g, run_stage_2d(g, nets.net2d.stages[0], bind, g.input(x)));
        const DenseTensor analytic = g.backward(loss).at_or_zero(wname, local.at(wname).shape());

        const DenseTensor numeric = finite_diff_gradient(
            [&](const DenseTensor& w) {
                Parameters probe = params;
                probe.values.at(wname) = w;
                Graph h;
                const ParamBinder b2{&h, &probe, false};
                return h.scalar(sum_all(h, run_stage_2d(h, nets.net2d.stages[0], b2, h.input(x))));
            },
            local.at(wname), 1e-5);
        CHECK(relative_error(analytic, numeric) <= 1e-5);
    }
}

TEST_CASE("3D stage preserves occupancy rule and halves the grid") {
    const BackboneSpec spec = small_spec();
    Parameters params;
    const BackbonePair nets = init_backbones(spec, 6, params);

    const SparseVoxelTensor y0 = oracles::random_sparse({16, 16, 8}, 4, 40, 77);
    Graph g;
    const ParamBinder bind{&g, &params, false};
    const NodeId y1 = run_stage_3d(g, nets.net3d.stages[0], bind, g.input(y0));
    const SparseVoxelTensor& out = g.sparse(y1);
    CHECK(out.grid_shape == std::array<int, 3>{8, 8, 4});
    CHECK(out.channels == 4);

    // Occupancy is the stride-2 image of the input occupancy.
    std::vector<VoxelIndex> expect;
    for (const VoxelIndex& v : y0.indices) expect.push_back({v[0] / 2, v[1] / 2, v[2] / 2});
    std::sort(expect.begin(), expect.end(), lex_less);
    expect.erase(std::unique(expect.begin(), expect.end()), expect.end());
    CHECK(out.indices == expect);
}

TEST_CASE("occupancy depends only on input occupancy, not on features or weights") {
    const BackboneSpec spec = small_spec();
    Parameters p1, p2;
    const BackbonePair n1 = init_backbones(spec, 10, p1);
    const BackbonePair n2 = init_backbones(spec, 11, p2);

    SparseVoxelTensor a = oracles::random_sparse({16, 16, 8}, 4, 30, 123);
    SparseVoxelTensor b = a;
    b.features = b.features * 3.0 + FeatureMatrix::Constant(b.features.rows(), b.features.cols(), 0.5);

    auto occupancy_after = [&](const BackbonePair& nets, Parameters& params, const SparseVoxelTensor& y0) {
        Graph g;
        const ParamBinder bind{&g, &params, false};
        NodeId y = g.input(y0);
        for (int t = 1; t <= 4; ++t) y = run_stage_3d(g, nets.net3d.stages[t - 1], bind, y);
        return g.sparse(y).indices;
    };
    CHECK(occupancy_after(n1, p1, a) == occupancy_after(n2, p2, b));
}

TEST_CASE("sum fusion with zero lifted features is bit-exact to no fusion") {
    const BackboneSpec spec = small_spec();
    Parameters params;
    const BackbonePair nets = init_backbones(spec, 12, params);
    const SparseVoxelTensor y0 = oracles::random_sparse({16, 16, 8}, 4, 25, 321);
    const SparseVoxelTensor zeros =
        SparseVoxelTensor::zeros_like_occupancy(y0.grid_shape, y0.channels, y0.indices);

    Graph g;
    const ParamBinder bind{&g, &params, false};
    const NodeId plain = run_stage_3d(g, nets.net3d.stages[0], bind, g.input(y0));
    const NodeId fused = run_stage_3d(g, nets.net3d.stages[0], bind, g.input(y0), g.input(zeros), FuseMode::Sum);
    CHECK((g.sparse(plain).features - g.sparse(fused).features).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("small 3D stage equals the dense-conv oracle pipeline on the occupied set") {
    BackboneSpec spec = small_spec();
    spec.convs_per_stage = 1;
    spec.channels_3d = {3, 4, 4, 4};
    Parameters params;
    const BackbonePair nets = init_backbones(spec, 13, params);
    // Biases start at zero, so the dense oracle needs no bias handling.
    const Stage3D& stage = nets.net3d.stages[0];
    const SparseVoxelTensor y0 = oracles::random_sparse({8, 8, 8}, 4, 20, 55);

    Graph g;
    const ParamBinder bind{&g, &params, false};
    const NodeId out = run_stage_3d(g, stage, bind, g.input(y0));

    // Oracle: dense conv + relu restricted to occupancy, then max-merge /2.
    const DenseTensor conv = oracles::conv3d_dense_ref(oracles::densify(y0), params.at(stage.convs[0].weight), 1);
    const SparseVoxelTensor& got = g.sparse(out);
    for (std::size_t i = 0; i < got.indices.size(); ++i) {
        const VoxelIndex& v = got.indices[i];
        for (int c = 0; c < 3; ++c) {
            double best = -std::numeric_limits<double>::infinity();
            bool any = false;
            for (const VoxelIndex& u : y0.indices) {
                if (u[0] / 2 == v[0] && u[1] / 2 == v[1] && u[2] / 2 == v[2]) {
                    const double val =
                        std::max(0.0, conv[((static_cast<std::int64_t>(c) * 8 + u[0]) * 8 + u[1]) * 8 + u[2]]);
                    best = std::max(best, val);
                    any = true;
                }
            }
            REQUIRE(any);
            CHECK(got.features(static_cast<Eigen::Index>(i), c) == doctest::Approx(best).epsilon(1e-12));
        }
    }
}

TEST_CASE("concat fusion widens the first conv input") {
    BackboneSpec spec = small_spec();
    Parameters params;
    const BackbonePair nets = init_backbones(spec, 14, params, {0, 6, 0, 0});
    CHECK(nets.net3d.stages[1].convs[0].in_ch == 4 + 6);
    CHECK(nets.net3d.stages[1].convs[1].in_ch == 6);
}
