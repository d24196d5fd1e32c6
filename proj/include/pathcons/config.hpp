#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "pathcons/consistency.hpp"
#include "pathcons/scene.hpp"

namespace pathcons {

inline constexpr const char* kCodeVersion = "pathcons 0.1.0";
inline constexpr int kConfigSchemaVersion = 1;

struct OptimizerConfig {
    double lr = 1e-3;
    double lr_final = 1e-5;  // cosine decay target
    int epochs = 30;
    int batch_size = 8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One experiment cell: network, data, fusion and regularization choices,
/// optimization schedule and the seed list it runs over.
struct ExperimentConfig {
    BackboneSpec backbone;
    DatasetSpec dataset = DatasetSpec::defaults();
    std::set<int> fusion_stages = {1, 4};
    FuseMode fuse_mode = FuseMode::Sum;
    QueryMode query_mode = QueryMode::Nearest;
    ConsistencyConfig consistency;
    OptimizerConfig optimizer;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    std::string out_dir = "out";

    void validate() const;
    bool uses_consistency() const {
        return consistency.alpha > 0.0 && !consistency.active_stages.empty();
    }

    /// Canonical JSON (sorted keys, round-trip floats); hashing input.
    std::string canonical_json() const;
    std::string config_hash() const;
};

/// Parses a config file; a run manifest with an embedded "config" object is
/// accepted transparently. The schema_version field is mandatory.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig config_from_json_text(const std::string& text);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

}  // namespace pathcons
