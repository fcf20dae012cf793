#include "fusionbench/model.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace fusionbench {

using nlohmann::json;

std::string_view to_string(FusionOp op) {
    return op == FusionOp::concat ? "concat" : "kronecker";
}

FusionOp parse_fusion_op(std::string_view text) {
    if (text == "concat") return FusionOp::concat;
    if (text == "kronecker") return FusionOp::kronecker;
    throw ConfigError("fusion_op must be 'concat' or 'kronecker', got '" + std::string(text) + "'");
}

std::string_view output_name(Output out) {
    switch (out) {
    case Output::y_hat: return "y_hat";
    case Output::y_hat_f: return "y_hat_f";
    case Output::y_hat_i: return "y_hat_i";
    case Output::y_hat_c: return "y_hat_c";
    case Output::y_hat_i_1: return "y_hat_i_1";
    case Output::y_hat_i_2: return "y_hat_i_2";
    case Output::y_hat_c_1: return "y_hat_c_1";
    case Output::y_hat_c_2: return "y_hat_c_2";
    case Output::x_hat_c: return "x_hat_c";
    }
    return "?";
}

void FusionConfig::validate() const {
    if (bag_width == 0 || dim_image_repr == 0 || dim_clinical_repr == 0) {
        throw ConfigError("model dims must be positive");
    }
    if (dense_fusion && (dim_stage2_image == 0 || dim_stage2_clinical == 0)) {
        throw ConfigError("dense fusion needs positive stage-2 dims");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("dropout_rate must lie in [0, 1)");
    }
}

std::string FusionConfig::descriptor() const {
    std::string s(to_string(fusion_op));
    if (extra_supervision) s += "+ES";
    if (clinical_prediction) s += "+CP";
    if (dense_fusion) s += "+DF";
    return s;
}

std::vector<Output> FusionConfig::expected_outputs() const {
    std::vector<Output> out{Output::y_hat};
    if (extra_supervision && dense_fusion) {
        out.insert(out.end(), {Output::y_hat_f, Output::y_hat_i_1, Output::y_hat_i_2,
                               Output::y_hat_c_1, Output::y_hat_c_2});
    } else if (extra_supervision) {
        out.insert(out.end(), {Output::y_hat_i, Output::y_hat_c});
    }
    if (clinical_prediction) out.push_back(Output::x_hat_c);
    return out;
}

std::string fusion_config_to_json(const FusionConfig& c) {
    json j = {{"fusion_op", std::string(to_string(c.fusion_op))},
              {"extra_supervision", c.extra_supervision},
              {"clinical_prediction", c.clinical_prediction},
              {"dense_fusion", c.dense_fusion},
              {"bag_width", c.bag_width},
              {"dim_image_repr", c.dim_image_repr},
              {"dim_clinical_repr", c.dim_clinical_repr},
              {"dim_stage2_image", c.dim_stage2_image},
              {"dim_stage2_clinical", c.dim_stage2_clinical},
              {"dropout_rate", c.dropout_rate},
              {"seed", c.seed}};
    return j.dump();
}

FusionConfig fusion_config_from_json(std::string_view text) {
    FusionConfig c;
    try {
        const json j = json::parse(text);
        c.fusion_op = parse_fusion_op(j.at("fusion_op").get<std::string>());
        c.extra_supervision = j.at("extra_supervision").get<bool>();
        c.clinical_prediction = j.at("clinical_prediction").get<bool>();
        c.dense_fusion = j.at("dense_fusion").get<bool>();
        c.bag_width = j.at("bag_width").get<std::size_t>();
        c.dim_image_repr = j.at("dim_image_repr").get<std::size_t>();
        c.dim_clinical_repr = j.at("dim_clinical_repr").get<std::size_t>();
        c.dim_stage2_image = j.at("dim_stage2_image").get<std::size_t>();
        c.dim_stage2_clinical = j.at("dim_stage2_clinical").get<std::size_t>();
        c.dropout_rate = j.at("dropout_rate").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad model config JSON: ") + e.what());
    }
    c.validate();
    return c;
}

template <typename T>
const Tensor<T>& ModelOutputs<T>::get(Output o) const {
    const auto& v = values[static_cast<std::size_t>(o)];
    if (!v) throw UsageError("model produced no output '" + std::string(output_name(o)) + "'");
    return *v;
}

template <typename T>
std::vector<Output> ModelOutputs<T>::present() const {
    std::vector<Output> out;
    for (std::size_t i = 0; i < kOutputCount; ++i) {
        if (values[i]) out.push_back(static_cast<Output>(i));
    }
    return out;
}

std::size_t ParamCount::group(std::string_view name) const {
    for (const auto& [g, n] : by_group) {
        if (g == name) return n;
    }
    return 0;
}

GroupRole group_role(std::string_view group) {
    if (group == "f_c" || group == "f_c_2") return GroupRole::clinical_encoder;
    if (group == "g_c" || group == "g_c_1" || group == "g_c_2") return GroupRole::clinical_head;
    if (group == "g" || group == "g_f") return GroupRole::fused_head;
    return GroupRole::image_side;
}

template <typename T>
NodeId Model<T>::head(NodeId input, std::size_t width, const std::string& name, bool activation) {
    const NodeId d = graph_.add_dropout(input, config_.dropout_rate, name + ".dropout");
    const NodeId l = graph_.add_linear(d, width, name, name);
    return activation ? graph_.add_sigmoid(l, name + ".sigmoid") : l;
}

template <typename T>
Model<T>::Model(FusionConfig config) : config_(config) {
    config_.validate();
    const auto set = [&](Output o, NodeId id) { outputs_[static_cast<std::size_t>(o)] = id; };

    bag_input_ = graph_.add_bag_input("x_i", config_.bag_width);
    clinical_input_ = graph_.add_input("x_c", kClinicalFeatures);

    NodeId h_i = graph_.add_gated_sum_pool(bag_input_, "f_i.gate", "f_i");
    if (config_.dim_image_repr != config_.bag_width) {
        h_i = graph_.add_linear(h_i, config_.dim_image_repr, "f_i.proj", "f_i");
    }
    const NodeId h_c = graph_.add_linear(clinical_input_, config_.dim_clinical_repr, "f_c", "f_c");
    const bool kron = config_.fusion_op == FusionOp::kronecker;
    const double rate = config_.dropout_rate;
    // Kronecker heads read their fused input through a block head instead
    // of materializing (m+1)(n+1) columns per example.
    const auto fused_head = [&](std::vector<std::vector<NodeId>> blocks, const std::string& name) {
        return graph_.add_sigmoid(graph_.add_block_head(std::move(blocks), rate, 1, name, name), name + ".sigmoid");
    };
    const NodeId h_1 = kron ? h_c : graph_.add_concat({h_i, h_c}, "h_1");  // unused under kronecker

    if (!config_.dense_fusion) {
        set(Output::y_hat, kron ? fused_head({{h_i, h_c}}, "g") : head(h_1, 1, "g", true));
        if (config_.extra_supervision) {
            set(Output::y_hat_i, head(h_i, 1, "g_i", true));
            set(Output::y_hat_c, head(h_c, 1, "g_c", true));
        }
    } else {
        const NodeId h_i2 = graph_.add_linear(h_i, config_.dim_stage2_image, "f_i_2", "f_i_2");
        const NodeId h_c2 = graph_.add_linear(h_c, config_.dim_stage2_clinical, "f_c_2", "f_c_2");
        if (kron) {
            set(Output::y_hat, fused_head({{h_i2, h_c2}, {h_i, h_c}}, "g"));
        } else {
            set(Output::y_hat, head(graph_.add_concat({h_i2, h_c2, h_1}, "h_2"), 1, "g", true));
        }
        if (config_.extra_supervision) {
            set(Output::y_hat_f, kron ? fused_head({{h_i, h_c}}, "g_f") : head(h_1, 1, "g_f", true));
            set(Output::y_hat_i_1, head(h_i, 1, "g_i_1", true));
            set(Output::y_hat_i_2, head(h_i2, 1, "g_i_2", true));
            set(Output::y_hat_c_1, head(h_c, 1, "g_c_1", true));
            set(Output::y_hat_c_2, head(h_c2, 1, "g_c_2", true));
        }
    }
    if (config_.clinical_prediction) {
        set(Output::x_hat_c, head(h_i, kClinicalFeatures, "g_i_to_c", false));
    }

    Rng rng(config_.seed);
    graph_.init_params(rng);
}

template <typename T>
ModelOutputs<T> Model<T>::forward(BagBatch<T> bags, Tensor<T> clinical, Mode mode, Rng* rng) {
    if (clinical.rows() != bags.batch_size() || clinical.cols() != kClinicalFeatures) {
        throw DimensionError("forward: clinical batch " + clinical.shape_string() + " for " +
                             std::to_string(bags.batch_size()) + " bags");
    }
    graph_.set_bags(bag_input_, std::move(bags));
    graph_.set_input(clinical_input_, std::move(clinical));
    graph_.forward(mode, rng);
    ModelOutputs<T> out;
    for (std::size_t i = 0; i < kOutputCount; ++i) {
        if (outputs_[i]) out.values[i] = graph_.value(*outputs_[i]);
    }
    return out;
}

template <typename T>
void Model<T>::backward(std::span<const std::pair<Output, Tensor<T>>> grads) {
    std::vector<std::pair<NodeId, Tensor<T>>> seeds;
    seeds.reserve(grads.size());
    for (const auto& [o, g] : grads) {
        const auto node = outputs_[static_cast<std::size_t>(o)];
        if (!node) {
            throw UsageError("gradient given for absent output '" + std::string(output_name(o)) + "'");
        }
        seeds.emplace_back(*node, g);
    }
    graph_.backward(seeds);
}

template <typename T>
ParamCount Model<T>::count_params() const {
    ParamCount c;
    for (const auto& p : graph_.params()) {
        c.total += p.value.size();
        auto it = std::find_if(c.by_group.begin(), c.by_group.end(),
                               [&](const auto& e) { return e.first == p.group; });
        if (it == c.by_group.end()) {
            c.by_group.emplace_back(p.group, p.value.size());
        } else {
            it->second += p.value.size();
        }
    }
    return c;
}

template <typename T>
void Model<T>::set_trainable(const std::function<bool(std::string_view)>& pred) {
    for (auto& p : graph_.params()) p.trainable = pred(p.group);
}

ParamCount closed_form_param_count(const FusionConfig& c) {
    c.validate();
    const auto lin = [](std::size_t in, std::size_t out) { return in * out + out; };
    const auto fused = [&](std::size_t a, std::size_t b) {
        return c.fusion_op == FusionOp::concat ? a + b : (a + 1) * (b + 1);
    };
    const std::size_t m = c.dim_image_repr;
    const std::size_t n = c.dim_clinical_repr;

    ParamCount pc;
    std::size_t f_i = lin(c.bag_width, c.bag_width);
    if (m != c.bag_width) f_i += lin(c.bag_width, m);
    pc.by_group.emplace_back("f_i", f_i);
    pc.by_group.emplace_back("f_c", lin(kClinicalFeatures, n));
    const std::size_t h1 = fused(m, n);
    if (!c.dense_fusion) {
        pc.by_group.emplace_back("g", lin(h1, 1));
        if (c.extra_supervision) {
            pc.by_group.emplace_back("g_i", lin(m, 1));
            pc.by_group.emplace_back("g_c", lin(n, 1));
        }
    } else {
        const std::size_t m2 = c.dim_stage2_image;
        const std::size_t n2 = c.dim_stage2_clinical;
        pc.by_group.emplace_back("f_i_2", lin(m, m2));
        pc.by_group.emplace_back("f_c_2", lin(n, n2));
        pc.by_group.emplace_back("g", lin(fused(m2, n2) + h1, 1));
        if (c.extra_supervision) {
            pc.by_group.emplace_back("g_f", lin(h1, 1));
            pc.by_group.emplace_back("g_i_1", lin(m, 1));
            pc.by_group.emplace_back("g_i_2", lin(m2, 1));
            pc.by_group.emplace_back("g_c_1", lin(n, 1));
            pc.by_group.emplace_back("g_c_2", lin(n2, 1));
        }
    }
    if (c.clinical_prediction) pc.by_group.emplace_back("g_i_to_c", lin(m, kClinicalFeatures));
    for (const auto& [g, v] : pc.by_group) pc.total += v;
    return pc;
}

template <typename T>
BagBatch<T> make_bag_batch(const Dataset& data, std::span<const std::size_t> indices) {
    BagBatch<T> b;
    std::size_t rows = 0;
    b.offsets.reserve(indices.size() + 1);
    b.offsets.push_back(0);
    for (std::size_t i : indices) {
        rows += data.records.at(i).k;
        b.offsets.push_back(rows);
    }
    b.patches = Tensor<T>::matrix(rows, kPatchFeatures);
    T* dst = b.patches.data();
    for (std::size_t i : indices) {
        for (float v : data.records[i].bag) *dst++ = static_cast<T>(v);
    }
    return b;
}

template <typename T>
Tensor<T> make_clinical_batch(const Dataset& data, std::span<const std::size_t> indices) {
    Tensor<T> x = Tensor<T>::matrix(indices.size(), kClinicalFeatures);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto& c = data.records.at(indices[r]).clinical;
        for (std::size_t j = 0; j < kClinicalFeatures; ++j) x.at(r, j) = static_cast<T>(c[j]);
    }
    return x;
}

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'B', 'C', 'K', 'P', 'T', '1', '\0'};

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw IntegrityError("checkpoint truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
    const std::uint64_t lo = get_u32(is);
    const std::uint64_t hi = get_u32(is);
    return lo | (hi << 32);
}

std::string get_string(std::istream& is, std::uint32_t len) {
    std::string s(len, '\0');
    if (!is.read(s.data(), len)) throw IntegrityError("checkpoint truncated");
    return s;
}

} // namespace

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot write checkpoint '" + path.string() + "'");
        os.write(kCheckpointMagic, sizeof kCheckpointMagic);
        const std::string cfg = fusion_config_to_json(model.config());
        put_u32(os, static_cast<std::uint32_t>(cfg.size()));
        os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
        const auto& params = model.graph().params();
        put_u32(os, static_cast<std::uint32_t>(params.size()));
        for (const auto& p : params) {
            put_u32(os, static_cast<std::uint32_t>(p.name.size()));
            os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
            put_u32(os, static_cast<std::uint32_t>(p.value.rank()));
            for (std::size_t d : p.value.shape()) put_u64(os, d);
            for (float v : p.value.values()) put_u32(os, std::bit_cast<std::uint32_t>(v));
        }
        if (!os) throw IoError("failed writing checkpoint '" + path.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read checkpoint '" + path.string() + "'");
    char magic[sizeof kCheckpointMagic];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw IntegrityError("'" + path.string() + "' is not a checkpoint");
    }
    const std::uint32_t cfg_len = get_u32(is);
    Model<float> model(fusion_config_from_json(get_string(is, cfg_len)));
    auto& params = model.graph().params();
    if (get_u32(is) != params.size()) throw IntegrityError("checkpoint parameter count mismatch");
    for (auto& p : params) {
        const std::string name = get_string(is, get_u32(is));
        if (name != p.name) {
            throw IntegrityError("checkpoint parameter '" + name + "' where '" + p.name + "' expected");
        }
        const std::uint32_t rank = get_u32(is);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get_u64(is));
        if (shape != p.value.shape()) {
            throw IntegrityError("checkpoint parameter '" + name + "' has shape " +
                                 Tensor<float>::shape_string(shape));
        }
        for (float& v : p.value.values()) v = std::bit_cast<float>(get_u32(is));
    }
    return model;
}

template struct ModelOutputs<float>;
template struct ModelOutputs<double>;
template class Model<float>;
template class Model<double>;
template BagBatch<float> make_bag_batch<float>(const Dataset&, std::span<const std::size_t>);
template BagBatch<double> make_bag_batch<double>(const Dataset&, std::span<const std::size_t>);
template Tensor<float> make_clinical_batch<float>(const Dataset&, std::span<const std::size_t>);
template Tensor<double> make_clinical_batch<double>(const Dataset&, std::span<const std::size_t>);

} // namespace fusionbench
