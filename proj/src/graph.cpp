#include "fusionbench/graph.hpp"

#include <algorithm>
#include <cmath>

namespace fusionbench {

template <typename T>
NodeId LayerGraph<T>::push(Node node) {
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
}

template <typename T>
void LayerGraph<T>::check_input(NodeId id, const char* what) const {
    if (id >= nodes_.size()) {
        throw UsageError(std::string(what) + ": input node " + std::to_string(id) +
                         " does not exist yet");
    }
    if (nodes_[id].kind == Kind::bag_input) {
        throw UsageError(std::string(what) + ": bag input '" + nodes_[id].name +
                         "' can only feed a gated pool");
    }
}

template <typename T>
std::size_t LayerGraph<T>::add_param(std::string name, std::string group,
                                     std::vector<std::size_t> shape) {
    for (const auto& p : params_) {
        if (p.name == name) throw UsageError("duplicate parameter name '" + name + "'");
    }
    Param<T> p;
    p.name = std::move(name);
    p.group = std::move(group);
    p.value = Tensor<T>(shape);
    p.grad = Tensor<T>(std::move(shape));
    params_.push_back(std::move(p));
    return params_.size() - 1;
}

template <typename T>
NodeId LayerGraph<T>::add_input(std::string name, std::size_t width) {
    Node n{};
    n.kind = Kind::input;
    n.name = std::move(name);
    n.width = width;
    return push(std::move(n));
}

template <typename T>
NodeId LayerGraph<T>::add_bag_input(std::string name, std::size_t width) {
    Node n{};
    n.kind = Kind::bag_input;
    n.name = std::move(name);
    n.width = width;
    return push(std::move(n));
}

template <typename T>
NodeId LayerGraph<T>::add_linear(NodeId x, std::size_t out, std::string name, std::string group) {
    check_input(x, "linear");
    if (out == 0) throw ConfigError("linear '" + name + "' needs a positive output width");
    Node n{};
    n.kind = Kind::linear;
    n.inputs = {x};
    n.width = out;
    n.params = {add_param(name + ".weight", group, {out, nodes_[x].width}),
                add_param(name + ".bias", group, {out})};
    n.name = std::move(name);
    return push(std::move(n));
}

template <typename T>
NodeId LayerGraph<T>::add_sigmoid(NodeId x, std::string name) {
    check_input(x, "sigmoid");
    Node n{};
    n.kind = Kind::sigmoid;
    n.name = std::move(name);
    n.inputs = {x};
    n.width = nodes_[x].width;
    return push(std::move(n));
}

template <typename T>
NodeId LayerGraph<T>::add_dropout(NodeId x, double rate, std::string name) {
    check_input(x, "dropout");
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout '" + name + "' rate must lie in [0, 1)");
    }
    Node n{};
    n.kind = Kind::dropout;
    n.name = std::move(name);
    n.inputs = {x};
    n.width = nodes_[x].width;
    n.rate = rate;
    return push(std::move(n));
}

template <typename T>
NodeId LayerGraph<T>::add_concat(std::vector<NodeId> parts, std::string name) {
    if (parts.empty()) throw UsageError("concat '" + name + "' needs at least one part");
    Node n{};
    n.kind = Kind::concat;
    for (NodeId p : parts) {
        check_input(p, "concat");
        n.width += nodes_[p].width;
    }
    n.name = std::move(name);
    n.inputs = std::move(parts);
    return push(std::move(n));
}

template <typename T>
NodeId LayerGraph<T>::add_kronecker(NodeId a, NodeId b, std::string name) {
    check_input(a, "kronecker");
    check_input(b, "kronecker");
    Node n{};
    n.kind = Kind::kronecker;
    n.name = std::move(name);
    n.inputs = {a, b};
    n.width = (nodes_[a].width + 1) * (nodes_[b].width + 1);
    return push(std::move(n));
}

template <typename T>
NodeId LayerGraph<T>::add_gated_sum_pool(NodeId bags, std::string name, std::string group) {
    if (bags >= nodes_.size() || nodes_[bags].kind != Kind::bag_input) {
        throw UsageError("gated pool '" + name + "' must consume a bag input");
    }
    const std::size_t d = nodes_[bags].width;
    Node n{};
    n.kind = Kind::gated_pool;
    n.inputs = {bags};
    n.width = d;
    n.params = {add_param(name + ".weight", group, {d, d}), add_param(name + ".bias", group, {d})};
    n.name = std::move(name);
    return push(std::move(n));
}

template <typename T>
NodeId LayerGraph<T>::add_block_head(std::vector<std::vector<NodeId>> blocks, double rate,
                                     std::size_t out, std::string name, std::string group) {
    if (blocks.empty()) throw UsageError("block head '" + name + "' needs at least one block");
    if (out == 0) throw ConfigError("block head '" + name + "' needs a positive output width");
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout '" + name + "' rate must lie in [0, 1)");
    }
    Node n{};
    n.kind = Kind::block_head;
    n.rate = rate;
    n.width = out;
    std::size_t in_width = 0;
    for (const auto& blk : blocks) {
        if (blk.empty() || blk.size() > 2) {
            throw UsageError("block head '" + name + "': a block holds one or two nodes");
        }
        for (NodeId id : blk) check_input(id, "block head");
        in_width += blk.size() == 1 ? nodes_[blk[0]].width
                                    : (nodes_[blk[0]].width + 1) * (nodes_[blk[1]].width + 1);
        n.arity.push_back(blk.size());
        n.inputs.insert(n.inputs.end(), blk.begin(), blk.end());
    }
    n.params = {add_param(name + ".weight", group, {out, in_width}), add_param(name + ".bias", group, {out})};
    n.name = std::move(name);
    return push(std::move(n));
}

template <typename T>
void LayerGraph<T>::set_input(NodeId node, Tensor<T> value) {
    Node& n = nodes_.at(node);
    if (n.kind != Kind::input) throw UsageError("'" + n.name + "' is not a dense input");
    if (value.cols() != n.width) {
        throw DimensionError("input '" + n.name + "' expects width " + std::to_string(n.width) +
                             ", got " + value.shape_string());
    }
    n.value = std::move(value);
}

template <typename T>
void LayerGraph<T>::set_bags(NodeId node, BagBatch<T> bags) {
    Node& n = nodes_.at(node);
    if (n.kind != Kind::bag_input) throw UsageError("'" + n.name + "' is not a bag input");
    if (bags.patches.cols() != n.width) {
        throw DimensionError("bag input '" + n.name + "' expects width " +
                             std::to_string(n.width) + ", got " + bags.patches.shape_string());
    }
    n.bags = std::move(bags);
}

template <typename T>
void LayerGraph<T>::forward(Mode mode, Rng* rng) {
    for (Node& n : nodes_) {
        const auto in = [&](std::size_t i) -> const Tensor<T>& { return nodes_[n.inputs[i]].value; };
        const auto par = [&](std::size_t i) -> const Tensor<T>& { return params_[n.params[i]].value; };
        switch (n.kind) {
        case Kind::input:
            if (n.value.empty()) throw UsageError("input '" + n.name + "' was not set");
            break;
        case Kind::bag_input:
            if (n.bags.offsets.empty()) throw UsageError("bag input '" + n.name + "' was not set");
            break;
        case Kind::linear: n.value = layers::linear(in(0), par(0), par(1)); break;
        case Kind::sigmoid: n.value = layers::sigmoid(in(0)); break;
        case Kind::dropout: n.value = layers::dropout(in(0), n.rate, mode, rng, &n.cache); break;
        case Kind::concat: {
            std::vector<const Tensor<T>*> parts;
            parts.reserve(n.inputs.size());
            for (NodeId id : n.inputs) parts.push_back(&nodes_[id].value);
            n.value = layers::concat<T>(parts);
            break;
        }
        case Kind::kronecker: n.value = layers::kronecker_fuse(in(0), in(1)); break;
        case Kind::gated_pool:
            n.value = layers::gated_sum_pool(nodes_[n.inputs[0]].bags, par(0), par(1), &n.cache);
            break;
        case Kind::block_head: {
            const auto blocks = head_blocks(n);
            n.value = layers::block_dropout_linear<T>(blocks, par(0), par(1), n.rate, mode, rng, &n.bits);
            break;
        }
        }
        if (n.kind != Kind::bag_input && !n.value.all_finite()) {
            throw NumericError("non-finite values in the output of layer '" + n.name + "'");
        }
        bool needs = false;
        for (std::size_t p : n.params) needs = needs || params_[p].trainable;
        for (NodeId id : n.inputs) needs = needs || nodes_[id].needs_grad;
        n.needs_grad = needs;
    }
}

template <typename T>
void LayerGraph<T>::backward(std::span<const std::pair<NodeId, Tensor<T>>> seeds) {
    for (Node& n : nodes_) {
        if (n.needs_grad) {
            n.grad = Tensor<T>(n.value.shape());
        } else {
            n.grad = Tensor<T>();
        }
    }
    for (const auto& [id, g] : seeds) {
        Node& n = nodes_.at(id);
        if (!n.needs_grad) continue;
        if (g.size() != n.value.size()) {
            throw DimensionError("gradient seed for '" + n.name + "' has shape " +
                                 g.shape_string() + ", output is " + n.value.shape_string());
        }
        for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->needs_grad) backward_node(*it);
    }
}

template <typename T>
void LayerGraph<T>::backward_node(Node& n) {
    const auto dinput = [&](std::size_t i) -> Tensor<T>* {
        Node& src = nodes_[n.inputs[i]];
        return src.needs_grad ? &src.grad : nullptr;
    };
    const auto dparam = [&](std::size_t i) -> Tensor<T>* {
        Param<T>& p = params_[n.params[i]];
        return p.trainable ? &p.grad : nullptr;
    };
    switch (n.kind) {
    case Kind::input:
    case Kind::bag_input: break;
    case Kind::linear:
        layers::linear_backward(nodes_[n.inputs[0]].value, params_[n.params[0]].value, n.grad,
                                dparam(0), dparam(1), dinput(0));
        break;
    case Kind::sigmoid:
        if (Tensor<T>* dx = dinput(0)) layers::sigmoid_backward(n.value, n.grad, *dx);
        break;
    case Kind::dropout:
        if (Tensor<T>* dx = dinput(0)) layers::dropout_backward(n.cache, n.grad, *dx);
        break;
    case Kind::concat: {
        // Parts that need no gradient still occupy their columns.
        std::vector<Tensor<T>> scratch;
        scratch.reserve(n.inputs.size());
        std::vector<Tensor<T>*> targets;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            if (Tensor<T>* d = dinput(i)) {
                targets.push_back(d);
            } else {
                scratch.emplace_back(nodes_[n.inputs[i]].value.shape());
                targets.push_back(&scratch.back());
            }
        }
        layers::concat_backward<T>(n.grad, targets);
        break;
    }
    case Kind::kronecker:
        layers::kronecker_backward(nodes_[n.inputs[0]].value, nodes_[n.inputs[1]].value, n.grad,
                                   dinput(0), dinput(1));
        break;
    case Kind::block_head: {
        const auto blocks = head_blocks(n);
        std::vector<Tensor<T>*> da;
        std::vector<Tensor<T>*> db;
        for (std::size_t k = 0, i = 0; k < n.arity.size(); i += n.arity[k], ++k) {
            da.push_back(dinput(i));
            db.push_back(n.arity[k] == 2 ? dinput(i + 1) : nullptr);
        }
        layers::block_dropout_linear_backward<T>(blocks, params_[n.params[0]].value, n.rate, n.bits,
                                                 n.grad, dparam(0), dparam(1), da, db);
        break;
    }
    case Kind::gated_pool:
        layers::gated_sum_pool_backward(nodes_[n.inputs[0]].bags, n.cache,
                                        params_[n.params[0]].value, n.grad, dparam(0), dparam(1),
                                        static_cast<Tensor<T>*>(nullptr));
        break;
    }
}

template <typename T>
std::vector<layers::HeadBlock<T>> LayerGraph<T>::head_blocks(const Node& n) const {
    std::vector<layers::HeadBlock<T>> blocks;
    for (std::size_t k = 0, i = 0; k < n.arity.size(); i += n.arity[k], ++k) {
        layers::HeadBlock<T> blk;
        blk.a = &nodes_[n.inputs[i]].value;
        if (n.arity[k] == 2) blk.b = &nodes_[n.inputs[i + 1]].value;
        blocks.push_back(blk);
    }
    return blocks;
}

template <typename T>
void LayerGraph<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template <typename T>
void LayerGraph<T>::init_params(Rng& rng) {
    for (auto& p : params_) {
        if (p.value.rank() == 2) {
            const double fan_out = static_cast<double>(p.value.shape()[0]);
            const double fan_in = static_cast<double>(p.value.shape()[1]);
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (T& v : p.value.values()) v = static_cast<T>(rng.uniform(-limit, limit));
        } else {
            p.value.zero();
        }
        p.grad.zero();
    }
}

template <typename T>
Param<T>& LayerGraph<T>::param(std::string_view name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw UsageError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const Param<T>& LayerGraph<T>::param(std::string_view name) const {
    for (const auto& p : params_) {
        if (p.name == name) return p;
    }
    throw UsageError("no parameter named '" + std::string(name) + "'");
}

template class LayerGraph<float>;
template class LayerGraph<double>;

} // namespace fusionbench
