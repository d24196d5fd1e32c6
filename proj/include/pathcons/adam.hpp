#pragma once

#include <map>
#include <string>

#include "pathcons/graph.hpp"

namespace pathcons {

/// Named parameter set; the single mutable store a training run owns.
struct Parameters {
    std::map<std::string, DenseTensor> values;

    const DenseTensor& at(const std::string& name) const;
    void add(const std::string& name, DenseTensor v);
    bool has(const std::string& name) const { return values.count(name) > 0; }
    std::size_t total_size() const;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment estimates, keyed like the parameters they track.
struct AdamState {
    std::map<std::string, DenseTensor> m;
    std::map<std::string, DenseTensor> v;
    std::int64_t step = 0;
};

/// One bias-corrected Adam update over every parameter, in name order.
/// Parameters absent from `grads` see an exact-zero gradient; their moments
/// still decay. Throws ConfigError on shape mismatch.
void adam_step(Parameters& params, const GradientMap& grads, AdamState& state, const AdamConfig& cfg);

}  // namespace pathcons
