#include "pathcons/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace pathcons {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (const int d : shape) {
        if (d < 0) throw ConfigError("negative dimension in shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

DenseTensor::DenseTensor(std::vector<int> shape, Eigen::ArrayXd data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw ConfigError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_to_string(shape_));
    }
    if (data_.size() > 0 && !data_.allFinite()) {
        throw NumericError("non-finite value in tensor of shape " + shape_to_string(shape_));
    }
}

DenseTensor DenseTensor::zeros(std::vector<int> shape) {
    const std::int64_t n = shape_numel(shape);
    return DenseTensor(std::move(shape), Eigen::ArrayXd::Zero(n));
}

DenseTensor DenseTensor::scalar(double v) {
    Eigen::ArrayXd d(1);
    d[0] = v;
    return DenseTensor({}, std::move(d));
}

DenseTensor DenseTensor::full(std::vector<int> shape, double v) {
    const std::int64_t n = shape_numel(shape);
    return DenseTensor(std::move(shape), Eigen::ArrayXd::Constant(n, v));
}

double DenseTensor::scalar_value() const {
    if (data_.size() != 1) {
        throw UsageError("scalar_value() on tensor of shape " + shape_to_string(shape_));
    }
    return data_[0];
}

bool lex_less(const VoxelIndex& a, const VoxelIndex& b) {
    if (a[0] != b[0]) return a[0] < b[0];
    if (a[1] != b[1]) return a[1] < b[1];
    return a[2] < b[2];
}

std::int64_t linear_voxel_key(const VoxelIndex& v, const std::array<int, 3>& grid) {
    return (static_cast<std::int64_t>(v[0]) * grid[1] + v[1]) * grid[2] + v[2];
}

SparseVoxelTensor::SparseVoxelTensor(std::array<int, 3> grid, int channels_, std::vector<VoxelIndex> idx,
                                     FeatureMatrix feats)
    : grid_shape(grid), channels(channels_), indices(std::move(idx)), features(std::move(feats)) {
    validate();
}

SparseVoxelTensor SparseVoxelTensor::empty(std::array<int, 3> grid, int channels) {
    SparseVoxelTensor t;
    t.grid_shape = grid;
    t.channels = channels;
    t.features.resize(0, channels);
    return t;
}

SparseVoxelTensor SparseVoxelTensor::zeros_like_occupancy(std::array<int, 3> grid, int channels,
                                                          std::vector<VoxelIndex> idx) {
    SparseVoxelTensor t;
    t.grid_shape = grid;
    t.channels = channels;
    t.indices = std::move(idx);
    t.features = FeatureMatrix::Zero(static_cast<Eigen::Index>(t.indices.size()), channels);
    t.validate();
    return t;
}

void SparseVoxelTensor::validate() const {
    if (channels < 0) throw ConfigError("negative channel count");
    if (features.rows() != static_cast<Eigen::Index>(indices.size()) || features.cols() != channels) {
        throw ConfigError("sparse feature block " + std::to_string(features.rows()) + "x" +
                          std::to_string(features.cols()) + " does not match " +
                          std::to_string(indices.size()) + " voxels x " + std::to_string(channels) + " channels");
    }
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const VoxelIndex& v = indices[i];
        for (int a = 0; a < 3; ++a) {
            if (v[a] < 0 || v[a] >= grid_shape[a]) {
                throw ConfigError("voxel index out of grid bounds");
            }
        }
        if (i > 0) {
            if (!lex_less(indices[i - 1], v)) {
                throw ConfigError(lex_less(v, indices[i - 1]) ? "voxel indices not sorted"
                                                              : "duplicate voxel index");
            }
        }
    }
    if (features.size() > 0 && !features.allFinite()) {
        throw NumericError("non-finite value in sparse voxel features");
    }
}

SparseVoxelTensor canonicalize(const SparseVoxelTensor& t) {
    std::vector<std::size_t> order(t.indices.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return lex_less(t.indices[a], t.indices[b]); });

    SparseVoxelTensor out;
    out.grid_shape = t.grid_shape;
    out.channels = t.channels;
    out.indices.resize(t.indices.size());
    out.features.resize(t.features.rows(), t.features.cols());
    for (std::size_t i = 0; i < order.size(); ++i) {
        out.indices[i] = t.indices[order[i]];
        out.features.row(static_cast<Eigen::Index>(i)) = t.features.row(static_cast<Eigen::Index>(order[i]));
    }
    out.validate();
    return out;
}

}  // namespace pathcons
