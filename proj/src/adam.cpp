#include "pathcons/adam.hpp"

#include <cmath>

namespace pathcons {

const DenseTensor& Parameters::at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
}

void Parameters::add(const std::string& name, DenseTensor v) {
    if (!values.emplace(name, std::move(v)).second) {
        throw ConfigError("parameter '" + name + "' registered twice");
    }
}

std::size_t Parameters::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, v] : values) n += static_cast<std::size_t>(v.size());
    return n;
}

void adam_step(Parameters& params, const GradientMap& grads, AdamState& state, const AdamConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));

    for (auto& [name, value] : params.values) {
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(name, DenseTensor::zeros(value.shape())).first;
            state.v.emplace(name, DenseTensor::zeros(value.shape()));
        }
        DenseTensor& m = mit->second;
        DenseTensor& v = state.v.at(name);
        if (!m.same_shape(value)) throw ConfigError("adam state shape mismatch for '" + name + "'");

        const DenseTensor* grad = grads.find(name);
        if (grad && !grad->same_shape(value)) {
            throw ConfigError("gradient shape mismatch for '" + name + "'");
        }

        if (grad) {
            m.mutable_data() = cfg.beta1 * m.data() + (1.0 - cfg.beta1) * grad->data();
            v.mutable_data() = cfg.beta2 * v.data() + (1.0 - cfg.beta2) * grad->data().square();
        } else {
            m.mutable_data() *= cfg.beta1;
            v.mutable_data() *= cfg.beta2;
        }
        value.mutable_data() -= cfg.lr * (m.data() / bc1) / ((v.data() / bc2).sqrt() + cfg.eps);
    }
}

}  // namespace pathcons
