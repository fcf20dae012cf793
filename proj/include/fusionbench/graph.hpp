#pragma once

#include "fusionbench/layers.hpp"
#include "fusionbench/rng.hpp"
#include "fusionbench/tensor.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fusionbench {

template <typename T>
struct Param {
    std::string name;   // "<layer>.weight" / "<layer>.bias"
    std::string group;  // encoder or head the layer belongs to
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    void zero_grad() { grad.zero(); }
};

using NodeId = std::size_t;

/// Ordered, acyclic composition of layers over batched inputs.
///
/// Nodes are appended in topological order (every input of a node is an
/// earlier node), so forward walks the list front to back and backward
/// walks it back to front, each visiting every node once. Each parameter is
/// owned by exactly one node.
///
/// Backward only descends into nodes that lead to a trainable parameter, so
/// freezing a branch also removes its cost from the backward pass.
template <typename T>
class LayerGraph {
public:
    NodeId add_input(std::string name, std::size_t width);
    NodeId add_bag_input(std::string name, std::size_t width);
    NodeId add_linear(NodeId x, std::size_t out, std::string name, std::string group);
    NodeId add_sigmoid(NodeId x, std::string name);
    NodeId add_dropout(NodeId x, double rate, std::string name);
    NodeId add_concat(std::vector<NodeId> parts, std::string name);
    NodeId add_kronecker(NodeId a, NodeId b, std::string name);
    NodeId add_gated_sum_pool(NodeId bags, std::string name, std::string group);

    /// Dropout then linear over the concatenation of `blocks`. A block of
    /// one node is used as is; a block of two nodes stands for their
    /// Kronecker product, which is never materialized.
    NodeId add_block_head(std::vector<std::vector<NodeId>> blocks, double rate, std::size_t out,
                          std::string name, std::string group);

    void set_input(NodeId node, Tensor<T> value);
    void set_bags(NodeId node, BagBatch<T> bags);

    /// Throws NumericError naming the first layer whose output is not finite.
    void forward(Mode mode, Rng* rng = nullptr);

    /// Seeds are upstream gradients d(loss)/d(node output). Parameter
    /// gradients accumulate; call zero_grad() between steps.
    void backward(std::span<const std::pair<NodeId, Tensor<T>>> seeds);

    void zero_grad();

    /// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero
    /// biases, drawn in parameter registration order.
    void init_params(Rng& rng);

    [[nodiscard]] const Tensor<T>& value(NodeId node) const { return nodes_.at(node).value; }
    [[nodiscard]] std::size_t width(NodeId node) const { return nodes_.at(node).width; }
    [[nodiscard]] const std::string& name(NodeId node) const { return nodes_.at(node).name; }
    [[nodiscard]] std::size_t node_count() const noexcept { return nodes_.size(); }

    [[nodiscard]] std::vector<Param<T>>& params() noexcept { return params_; }
    [[nodiscard]] const std::vector<Param<T>>& params() const noexcept { return params_; }
    [[nodiscard]] Param<T>& param(std::string_view name);
    [[nodiscard]] const Param<T>& param(std::string_view name) const;

private:
    enum class Kind { input, bag_input, linear, sigmoid, dropout, concat, kronecker, gated_pool, block_head };

    struct Node {
        Kind kind;
        std::string name;
        std::vector<NodeId> inputs;
        std::vector<std::size_t> params;  // indices into params_
        std::size_t width = 0;
        double rate = 0.0;
        Tensor<T> value;
        Tensor<T> cache;  // dropout mask or pool gates
        layers::BitMask bits;               // block head dropout mask
        std::vector<std::size_t> arity;     // block head: nodes per block
        Tensor<T> grad;
        BagBatch<T> bags;
        bool needs_grad = false;
    };

    NodeId push(Node node);
    void check_input(NodeId id, const char* what) const;
    std::size_t add_param(std::string name, std::string group, std::vector<std::size_t> shape);
    void backward_node(Node& node);
    std::vector<layers::HeadBlock<T>> head_blocks(const Node& node) const;

    std::vector<Node> nodes_;
    std::vector<Param<T>> params_;
};

extern template class LayerGraph<float>;
extern template class LayerGraph<double>;

} // namespace fusionbench
