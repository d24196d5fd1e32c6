#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pathcons/tensor.hpp"

namespace pathcons {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

/// A node's forward value: dense array or sparse voxel tensor.
using Value = std::variant<DenseTensor, SparseVoxelTensor>;

/// Parameter-name -> gradient. A parameter absent from the map has an
/// exact-zero gradient (no float accumulation ever touched it).
class GradientMap {
public:
    void set(const std::string& name, DenseTensor g) { grads_[name] = std::move(g); }
    const DenseTensor* find(const std::string& name) const {
        auto it = grads_.find(name);
        return it == grads_.end() ? nullptr : &it->second;
    }
    bool has(const std::string& name) const { return grads_.count(name) > 0; }
    /// Gradient for `name`, materializing exact zeros when absent.
    DenseTensor at_or_zero(const std::string& name, const std::vector<int>& shape) const;
    const std::map<std::string, DenseTensor>& entries() const { return grads_; }
    std::map<std::string, DenseTensor>& mutable_entries() { return grads_; }

private:
    std::map<std::string, DenseTensor> grads_;
};

class Graph;

/// Accumulation slots for reverse mode, indexed by NodeId.
class GradSlots {
public:
    explicit GradSlots(std::size_t n) : slots_(n) {}

    /// Adds a dense contribution to `id` (same shape as its value).
    void add_dense(NodeId id, const Eigen::ArrayXd& delta, const std::vector<int>& shape);
    /// Adds a sparse-feature contribution to `id` (same occupancy as its value).
    void add_sparse(NodeId id, const FeatureMatrix& delta, const SparseVoxelTensor& like);

    const std::optional<Value>& at(NodeId id) const { return slots_[id]; }
    void release(NodeId id) { slots_[id].reset(); }
    bool has(NodeId id) const { return slots_[id].has_value(); }

private:
    std::vector<std::optional<Value>> slots_;
};

/// Propagates this node's upstream gradient into its inputs' slots.
using BackwardFn = std::function<void(const Graph&, const std::vector<NodeId>& inputs, const Value& out,
                                      const Value& upstream, GradSlots& slots)>;

/// Append-only tape of operations. Node ids are topologically ordered by
/// construction; backward walks them once in reverse, which fixes the
/// accumulation order and makes reruns bit-identical.
///
/// Graphs are built and differentiated on one thread; a finished graph is
/// immutable through the const surface and may be read from other threads.
class Graph {
public:
    /// Named leaf. Binding the same name twice returns the original node
    /// (shapes must agree), so shared parameters appear once per graph.
    NodeId parameter(const std::string& name, const DenseTensor& value);

    /// Unnamed leaf (inputs, constants).
    NodeId input(DenseTensor value);
    NodeId input(SparseVoxelTensor value);

    /// Value-transparent barrier: forward value is a bit-identical copy,
    /// backward contributes exactly zero to every input.
    NodeId stop_gradient(NodeId x);

    /// Core extension point used by the op library.
    NodeId emplace(const char* op, std::vector<NodeId> inputs, Value value, BackwardFn backward);

    const Value& value(NodeId id) const { return nodes_[id].value; }
    const DenseTensor& dense(NodeId id) const;
    const SparseVoxelTensor& sparse(NodeId id) const;
    double scalar(NodeId id) const;
    bool is_dense(NodeId id) const { return std::holds_alternative<DenseTensor>(nodes_[id].value); }

    const std::string& op_name(NodeId id) const { return nodes_[id].op; }
    const std::string& param_name(NodeId id) const { return nodes_[id].param; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse-mode gradients of a scalar loss for every named parameter
    /// reachable without crossing a stop_gradient node.
    GradientMap backward(NodeId loss) const;

private:
    struct Node {
        std::string op;
        std::vector<NodeId> inputs;
        Value value;
        bool stop = false;
        std::string param;  // nonempty for named leaves
        BackwardFn backward;
    };

    NodeId push(Node n);

    std::vector<Node> nodes_;
    std::map<std::string, NodeId> params_;
};

}  // namespace pathcons
