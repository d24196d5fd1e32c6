#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pathcons/errors.hpp"

namespace pathcons {

/// Row-major N x C feature block; one row per voxel.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VoxelIndex = std::array<int, 3>;

/// Dense multi-dimensional array of 64-bit floats, row-major.
/// Construction rejects non-finite entries and shape/data length mismatch.
class DenseTensor {
public:
    DenseTensor() = default;
    DenseTensor(std::vector<int> shape, Eigen::ArrayXd data);

    /// Zero-filled tensor of the given shape.
    static DenseTensor zeros(std::vector<int> shape);
    static DenseTensor scalar(double v);
    static DenseTensor full(std::vector<int> shape, double v);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t size() const { return data_.size(); }
    bool is_scalar() const { return shape_.empty(); }

    const Eigen::ArrayXd& data() const { return data_; }
    Eigen::ArrayXd& mutable_data() { return data_; }

    double operator[](std::int64_t i) const { return data_[i]; }
    double& operator[](std::int64_t i) { return data_[i]; }

    /// Value of a rank-0 or single-element tensor.
    double scalar_value() const;

    /// Row-major offset helpers for the common ranks.
    std::int64_t at3(int a, int b, int c) const {
        return (static_cast<std::int64_t>(a) * shape_[1] + b) * shape_[2] + c;
    }
    std::int64_t at4(int a, int b, int c, int d) const {
        return ((static_cast<std::int64_t>(a) * shape_[1] + b) * static_cast<std::int64_t>(shape_[2]) + c) * shape_[3] + d;
    }

    bool same_shape(const DenseTensor& other) const { return shape_ == other.shape_; }

private:
    std::vector<int> shape_;
    Eigen::ArrayXd data_;  // length == product of shape()
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

/// Coordinate-indexed voxel features on an (H, W, D) grid.
/// Canonical form: indices unique, lexicographically sorted, in bounds;
/// features holds one length-C row per index.
struct SparseVoxelTensor {
    std::array<int, 3> grid_shape{0, 0, 0};
    int channels = 0;
    std::vector<VoxelIndex> indices;
    FeatureMatrix features;

    SparseVoxelTensor() = default;
    SparseVoxelTensor(std::array<int, 3> grid, int channels_, std::vector<VoxelIndex> idx, FeatureMatrix feats);

    /// Empty tensor (no occupied voxels) on the given grid.
    static SparseVoxelTensor empty(std::array<int, 3> grid, int channels);
    /// Zero features over a fixed occupancy.
    static SparseVoxelTensor zeros_like_occupancy(std::array<int, 3> grid, int channels, std::vector<VoxelIndex> idx);

    std::int64_t voxel_count() const { return static_cast<std::int64_t>(indices.size()); }

    /// Validates invariants; throws ConfigError / NumericError on violation.
    void validate() const;
};

/// Sorts entries lexicographically by index (stable canonical form).
/// Throws ConfigError on duplicate indices. Idempotent.
SparseVoxelTensor canonicalize(const SparseVoxelTensor& t);

bool lex_less(const VoxelIndex& a, const VoxelIndex& b);
std::int64_t linear_voxel_key(const VoxelIndex& v, const std::array<int, 3>& grid);

}  // namespace pathcons
