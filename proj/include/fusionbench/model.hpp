#pragma once

#include "fusionbench/dataset.hpp"
#include "fusionbench/graph.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fusionbench {

enum class FusionOp { concat, kronecker };

std::string_view to_string(FusionOp op);
FusionOp parse_fusion_op(std::string_view text);

/// Every prediction a model variant can emit. Which ones exist is fixed by
/// the FusionConfig.
enum class Output : std::size_t {
    y_hat,      // final fused prediction, the only score used at inference
    y_hat_f,    // stage-1 fused head (extra supervision + dense fusion)
    y_hat_i,    // image-only head
    y_hat_c,    // clinical-only head
    y_hat_i_1,  // image-only heads per stage (dense fusion)
    y_hat_i_2,
    y_hat_c_1,  // clinical-only heads per stage (dense fusion)
    y_hat_c_2,
    x_hat_c,  // clinical vector regressed from the image representation
};
inline constexpr std::size_t kOutputCount = 9;

std::string_view output_name(Output out);

struct FusionConfig {
    FusionOp fusion_op = FusionOp::concat;
    bool extra_supervision = false;
    bool clinical_prediction = false;
    bool dense_fusion = false;
    std::size_t bag_width = kPatchFeatures;
    std::size_t dim_image_repr = 128;
    std::size_t dim_clinical_repr = 448;
    std::size_t dim_stage2_image = 32;
    std::size_t dim_stage2_clinical = 16;
    double dropout_rate = 0.9;
    std::uint64_t seed = 0;

    void validate() const;

    /// Short label such as "concat+ES+CP" or "kronecker".
    [[nodiscard]] std::string descriptor() const;

    /// Outputs this architecture produces, in Output order.
    [[nodiscard]] std::vector<Output> expected_outputs() const;

    friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

std::string fusion_config_to_json(const FusionConfig& config);
FusionConfig fusion_config_from_json(std::string_view json);

template <typename T>
struct ModelOutputs {
    std::array<std::optional<Tensor<T>>, kOutputCount> values;

    [[nodiscard]] bool has(Output o) const { return values[static_cast<std::size_t>(o)].has_value(); }
    [[nodiscard]] const Tensor<T>& get(Output o) const;
    [[nodiscard]] const Tensor<T>& y_hat() const { return get(Output::y_hat); }
    [[nodiscard]] std::vector<Output> present() const;
};

struct ParamCount {
    std::size_t total = 0;
    std::vector<std::pair<std::string, std::size_t>> by_group;  // construction order

    [[nodiscard]] std::size_t group(std::string_view name) const;
};

/// Training-phase role of a parameter group.
enum class GroupRole { image_side, clinical_encoder, clinical_head, fused_head };

GroupRole group_role(std::string_view group);

/// A configured fusion network.
///
/// Groups: f_i (gated pool plus optional projection), f_c, and with dense
/// fusion f_i_2 / f_c_2; heads g, g_f, g_i, g_c, g_i_1, g_i_2, g_c_1, g_c_2
/// and g_i_to_c. Every head is dropout -> linear -> sigmoid, except g_i_to_c
/// which has no output activation.
template <typename T>
class Model {
public:
    explicit Model(FusionConfig config);

    [[nodiscard]] const FusionConfig& config() const noexcept { return config_; }
    [[nodiscard]] LayerGraph<T>& graph() noexcept { return graph_; }
    [[nodiscard]] const LayerGraph<T>& graph() const noexcept { return graph_; }

    /// `clinical` is `[batch, 6]` and must have one row per bag. Train mode
    /// needs `rng` for dropout.
    ModelOutputs<T> forward(BagBatch<T> bags, Tensor<T> clinical, Mode mode, Rng* rng = nullptr);

    /// Upstream gradients w.r.t. outputs of the last forward.
    void backward(std::span<const std::pair<Output, Tensor<T>>> grads);

    void zero_grad() { graph_.zero_grad(); }

    [[nodiscard]] ParamCount count_params() const;

    /// Marks each parameter trainable iff `pred(group)` holds.
    void set_trainable(const std::function<bool(std::string_view group)>& pred);

    [[nodiscard]] std::optional<NodeId> output_node(Output o) const {
        return outputs_[static_cast<std::size_t>(o)];
    }

    /// Same architecture and parameter values in another precision.
    template <typename U>
    [[nodiscard]] Model<U> cast() const {
        Model<U> out(config_);
        auto& dst = out.graph().params();
        const auto& src = graph_.params();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i].value = src[i].value.template cast<U>();
            dst[i].trainable = src[i].trainable;
        }
        return out;
    }

private:
    NodeId head(NodeId input, std::size_t width, const std::string& name, bool activation);

    FusionConfig config_;
    LayerGraph<T> graph_;
    NodeId bag_input_ = 0;
    NodeId clinical_input_ = 0;
    std::array<std::optional<NodeId>, kOutputCount> outputs_{};
};

extern template class Model<float>;
extern template class Model<double>;

template <typename T>
Model<T> build_model(const FusionConfig& config) {
    return Model<T>(config);
}

template <typename T>
ParamCount count_params(const Model<T>& model) {
    return model.count_params();
}

/// Closed-form parameter count of an architecture, written per layer
/// without building a graph.
ParamCount closed_form_param_count(const FusionConfig& config);

template <typename T>
BagBatch<T> make_bag_batch(const Dataset& data, std::span<const std::size_t> indices);

template <typename T>
Tensor<T> make_clinical_batch(const Dataset& data, std::span<const std::size_t> indices);

/// Single-file checkpoint: magic, length-prefixed config JSON, then every
/// parameter as (length-prefixed name, rank, dims, little-endian float32 data).
void save_checkpoint(const Model<float>& model, const std::filesystem::path& path);
Model<float> load_checkpoint(const std::filesystem::path& path);

} // namespace fusionbench
