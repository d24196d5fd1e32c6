#include "pathcons/backbones.hpp"

#include <cmath>

#include "pathcons/rng.hpp"

namespace pathcons {

NodeId fuse(Graph& g, NodeId y, NodeId lifted, FuseMode mode) {
    return mode == FuseMode::Sum ? fuse_sum(g, y, lifted) : fuse_concat(g, y, lifted);
}

void BackboneSpec::validate() const {
    if (n_stages < 2) throw ConfigError("backbone needs at least 2 stages");
    if (static_cast<int>(channels_2d.size()) != n_stages || static_cast<int>(channels_3d.size()) != n_stages) {
        throw ConfigError("per-stage channel lists must have n_stages entries");
    }
    for (const int c : channels_2d) {
        if (c <= 0) throw ConfigError("2d channels must be positive");
    }
    for (const int c : channels_3d) {
        if (c <= 0) throw ConfigError("3d channels must be positive");
    }
    if (convs_per_stage < 1) throw ConfigError("convs_per_stage must be at least 1");
    if (kernel_2d < 1 || kernel_2d % 2 == 0 || kernel_3d < 1 || kernel_3d % 2 == 0) {
        throw ConfigError("kernel sizes must be odd and positive");
    }
    if (image_channels <= 0 || voxel_channels <= 0) throw ConfigError("input channel counts must be positive");
}

namespace {

DenseTensor kaiming_uniform(std::vector<int> shape, int fan_in, std::uint64_t seed) {
    const double bound = std::sqrt(6.0 / fan_in);
    Rng rng(seed);
    Eigen::ArrayXd data(shape_numel(shape));
    for (std::int64_t i = 0; i < data.size(); ++i) data[i] = rng.uniform(-bound, bound);
    return DenseTensor(std::move(shape), std::move(data));
}

}  // namespace

BackbonePair init_backbones(const BackboneSpec& spec, std::uint64_t seed, Parameters& params,
                            const std::vector<int>& extra_in_3d) {
    spec.validate();
    if (!extra_in_3d.empty() && static_cast<int>(extra_in_3d.size()) != spec.n_stages) {
        throw ConfigError("extra_in_3d must be empty or have n_stages entries");
    }
    BackbonePair pair;
    for (int t = 1; t <= spec.n_stages; ++t) {
        Stage2D s2;
        s2.index = t;
        s2.downsample = t < spec.n_stages;
        s2.out_channels = spec.channels_2d_at(t);
        Stage3D s3;
        s3.index = t;
        s3.downsample = t < spec.n_stages;
        s3.out_channels = spec.channels_3d_at(t);
        for (int l = 1; l <= spec.convs_per_stage; ++l) {
            const std::string base2 = "2d.stage" + std::to_string(t) + ".conv" + std::to_string(l);
            Conv2DLayer c2;
            c2.in_ch = l == 1 ? spec.channels_2d_at(t - 1) : s2.out_channels;
            c2.out_ch = s2.out_channels;
            c2.kernel = spec.kernel_2d;
            c2.weight = base2 + ".weight";
            c2.bias = base2 + ".bias";
            params.add(c2.weight, kaiming_uniform({c2.out_ch, c2.in_ch, c2.kernel, c2.kernel},
                                                  c2.in_ch * c2.kernel * c2.kernel, derive_seed(seed, c2.weight)));
            params.add(c2.bias, DenseTensor::zeros({c2.out_ch}));
            s2.convs.push_back(std::move(c2));

            const std::string base3 = "3d.stage" + std::to_string(t) + ".conv" + std::to_string(l);
            const int extra = extra_in_3d.empty() ? 0 : extra_in_3d[t - 1];
            Conv3DLayer c3;
            c3.in_ch = l == 1 ? spec.channels_3d_at(t - 1) + extra : s3.out_channels;
            c3.out_ch = s3.out_channels;
            c3.kernel = spec.kernel_3d;
            c3.weight = base3 + ".weight";
            c3.bias = base3 + ".bias";
            params.add(c3.weight,
                       kaiming_uniform({c3.out_ch, c3.in_ch, c3.kernel, c3.kernel, c3.kernel},
                                       c3.in_ch * c3.kernel * c3.kernel * c3.kernel, derive_seed(seed, c3.weight)));
            params.add(c3.bias, DenseTensor::zeros({c3.out_ch}));
            s3.convs.push_back(std::move(c3));
        }
        pair.net2d.stages.push_back(std::move(s2));
        pair.net3d.stages.push_back(std::move(s3));
    }
    return pair;
}

std::size_t backbone_parameter_count(const BackboneSpec& spec) {
    spec.validate();
    std::size_t n = 0;
    for (int t = 1; t <= spec.n_stages; ++t) {
        for (int l = 1; l <= spec.convs_per_stage; ++l) {
            const int in2 = l == 1 ? spec.channels_2d_at(t - 1) : spec.channels_2d_at(t);
            const int out2 = spec.channels_2d_at(t);
            n += static_cast<std::size_t>(out2) * in2 * spec.kernel_2d * spec.kernel_2d + out2;
            const int in3 = l == 1 ? spec.channels_3d_at(t - 1) : spec.channels_3d_at(t);
            const int out3 = spec.channels_3d_at(t);
            n += static_cast<std::size_t>(out3) * in3 * spec.kernel_3d * spec.kernel_3d * spec.kernel_3d + out3;
        }
    }
    return n;
}

NodeId run_stage_2d(Graph& g, const Stage2D& stage, const ParamBinder& bind, NodeId x) {
    NodeId h = x;
    for (const Conv2DLayer& layer : stage.convs) {
        if (g.dense(h).shape()[0] != layer.in_ch) {
            throw ConfigError("run_stage_2d: input channels do not match stage " + std::to_string(stage.index));
        }
        h = conv2d(g, h, bind(layer.weight), 1, layer.kernel / 2);
        h = channel_bias(g, h, bind(layer.bias));
        h = relu(g, h);
    }
    if (stage.downsample) h = maxpool2(g, h);
    return h;
}

NodeId run_stage_3d(Graph& g, const Stage3D& stage, const ParamBinder& bind, NodeId y,
                    std::optional<NodeId> fused_in, FuseMode mode, const Stage3DContext* ctx) {
    NodeId h = y;
    if (fused_in.has_value()) h = fuse(g, h, *fused_in, mode);
    for (const Conv3DLayer& layer : stage.convs) {
        if (g.sparse(h).channels != layer.in_ch) {
            throw ConfigError("run_stage_3d: input channels do not match stage " + std::to_string(stage.index));
        }
        h = sparse_conv3d(g, h, bind(layer.weight), 1, ctx ? ctx->rulebook : nullptr);
        h = sparse_bias(g, h, bind(layer.bias));
        h = relu(g, h);
    }
    if (stage.downsample) h = downsample(g, h);
    return h;
}

}  // namespace pathcons
