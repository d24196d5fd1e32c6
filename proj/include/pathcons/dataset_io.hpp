#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pathcons/scene.hpp"

namespace pathcons {

/// Binary sample container, little-endian throughout:
///   magic "PFDATA01" (8 bytes)
///   header, 64-bit floats: grid origin (3), voxel_size, dims (3),
///     fx, fy, cx, cy, rotation row-major (9), translation (3),
///     image_h, image_w, n_points, n_classes_hint
///   points: n_points x 3 doubles
///   image: 3 * image_h * image_w doubles
///   labels: dims[0]*dims[1]*dims[2] uint16
std::vector<std::uint8_t> serialize_sample(const SceneSample& sample);
SceneSample deserialize_sample(const std::vector<std::uint8_t>& bytes);

/// In-memory dataset: train samples first, then validation, plus the
/// SHA-256 of the concatenated serialized samples.
struct Dataset {
    DatasetSpec spec;
    std::vector<SceneSample> train;
    std::vector<SceneSample> val;
    std::string sha256;
};

/// Generates every sample deterministically from the spec and hashes the
/// serialized stream (fixed order, fixed binary layout).
Dataset build_dataset(const DatasetSpec& spec);

/// Writes one file per sample plus a plain-text key-value index listing the
/// generating spec and the sample files.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace pathcons
