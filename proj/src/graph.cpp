#include "pathcons/graph.hpp"

#include <limits>

namespace pathcons {

DenseTensor GradientMap::at_or_zero(const std::string& name, const std::vector<int>& shape) const {
    if (const DenseTensor* g = find(name)) {
        if (g->shape() != shape) {
            throw ConfigError("gradient shape " + shape_to_string(g->shape()) + " for '" + name +
                              "' does not match parameter shape " + shape_to_string(shape));
        }
        return *g;
    }
    return DenseTensor::zeros(shape);
}

void GradSlots::add_dense(NodeId id, const Eigen::ArrayXd& delta, const std::vector<int>& shape) {
    std::optional<Value>& slot = slots_[id];
    if (!slot.has_value()) {
        slot = DenseTensor(shape, delta);
        return;
    }
    DenseTensor& acc = std::get<DenseTensor>(*slot);
    acc.mutable_data() += delta;
}

void GradSlots::add_sparse(NodeId id, const FeatureMatrix& delta, const SparseVoxelTensor& like) {
    std::optional<Value>& slot = slots_[id];
    if (!slot.has_value()) {
        SparseVoxelTensor g;
        g.grid_shape = like.grid_shape;
        g.channels = like.channels;
        g.indices = like.indices;
        g.features = delta;
        slot = std::move(g);
        return;
    }
    std::get<SparseVoxelTensor>(*slot).features += delta;
}

NodeId Graph::push(Node n) {
    if (nodes_.size() >= static_cast<std::size_t>(std::numeric_limits<NodeId>::max())) {
        throw ConfigError("compute graph too large");
    }
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::parameter(const std::string& name, const DenseTensor& value) {
    auto it = params_.find(name);
    if (it != params_.end()) {
        if (dense(it->second).shape() != value.shape()) {
            throw ConfigError("parameter '" + name + "' rebound with different shape");
        }
        return it->second;
    }
    Node n;
    n.op = "parameter";
    n.value = value;
    n.param = name;
    const NodeId id = push(std::move(n));
    params_[name] = id;
    return id;
}

NodeId Graph::input(DenseTensor value) {
    Node n;
    n.op = "input";
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Graph::input(SparseVoxelTensor value) {
    Node n;
    n.op = "input";
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Graph::stop_gradient(NodeId x) {
    Node n;
    n.op = "stop_gradient";
    n.inputs = {x};
    n.value = nodes_[x].value;
    n.stop = true;
    return push(std::move(n));
}

NodeId Graph::emplace(const char* op, std::vector<NodeId> inputs, Value value, BackwardFn backward) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.backward = std::move(backward);
    return push(std::move(n));
}

const DenseTensor& Graph::dense(NodeId id) const {
    const Value& v = nodes_[id].value;
    if (!std::holds_alternative<DenseTensor>(v)) {
        throw ConfigError("node " + std::to_string(id) + " (" + nodes_[id].op + ") is not dense");
    }
    return std::get<DenseTensor>(v);
}

const SparseVoxelTensor& Graph::sparse(NodeId id) const {
    const Value& v = nodes_[id].value;
    if (!std::holds_alternative<SparseVoxelTensor>(v)) {
        throw ConfigError("node " + std::to_string(id) + " (" + nodes_[id].op + ") is not sparse");
    }
    return std::get<SparseVoxelTensor>(v);
}

double Graph::scalar(NodeId id) const { return dense(id).scalar_value(); }

GradientMap Graph::backward(NodeId loss) const {
    if (loss < 0 || loss >= static_cast<NodeId>(nodes_.size())) {
        throw UsageError("backward: loss node id out of range");
    }
    const Value& lv = nodes_[loss].value;
    if (!std::holds_alternative<DenseTensor>(lv) || std::get<DenseTensor>(lv).size() != 1) {
        throw UsageError("backward: loss must be a scalar node");
    }

    GradSlots slots(nodes_.size());
    {
        Eigen::ArrayXd one(1);
        one[0] = 1.0;
        slots.add_dense(loss, one, std::get<DenseTensor>(lv).shape());
    }

    GradientMap out;
    for (NodeId id = loss; id >= 0; --id) {
        const Node& node = nodes_[id];
        if (!slots.has(id)) continue;
        if (!node.param.empty()) {
            out.set(node.param, std::get<DenseTensor>(*slots.at(id)));
            slots.release(id);
            continue;
        }
        if (!node.stop && node.backward) {
            node.backward(*this, node.inputs, node.value, *slots.at(id), slots);
        }
        slots.release(id);
    }
    return out;
}

}  // namespace pathcons
