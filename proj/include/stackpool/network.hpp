#pragma once

// Fully convolutional counting networks (Base-S/M/L, Wide, Deep) with the
// same pooling spec substituted at every pooling site.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "ops.hpp"
#include "pooling.hpp"
#include "random.hpp"
#include "serialize.hpp"
#include "tensor.hpp"

namespace stackpool {

enum class Architecture { base_s, base_m, base_l, wide, deep };

inline const char* architecture_name(Architecture a) {
    switch (a) {
        case Architecture::base_s: return "base_s";
        case Architecture::base_m: return "base_m";
        case Architecture::base_l: return "base_l";
        case Architecture::wide: return "wide";
        case Architecture::deep: return "deep";
    }
    return "?";
}

inline Architecture parse_architecture(const std::string& name) {
    for (auto a : {Architecture::base_s, Architecture::base_m, Architecture::base_l, Architecture::wide, Architecture::deep})
        if (name == architecture_name(a)) return a;
    throw std::invalid_argument("unknown network '" + name + "' (expected base_s, base_m, base_l, wide or deep)");
}

struct ConvLayer {
    std::size_t kernel;
    std::size_t channels;
    bool operator==(const ConvLayer&) const = default;
};
struct PoolLayer {
    bool operator==(const PoolLayer&) const = default;
};
using LayerDesc = std::variant<ConvLayer, PoolLayer>;

struct NetworkConfig {
    Architecture arch = Architecture::base_s;
    std::vector<LayerDesc> layers;
    PoolSpec pool;
    std::size_t in_channels = 1;
    bool output_relu = false;  // ReLU on the final 1x1 head

    static NetworkConfig preset(Architecture arch, PoolSpec pool = PoolSpec::vanilla(2, 2)) {
        NetworkConfig c;
        c.arch = arch;
        c.pool = std::move(pool);
        auto conv = [](std::size_t k, std::size_t ch) { return LayerDesc{ConvLayer{k, ch}}; };
        const LayerDesc P{PoolLayer{}};
        switch (arch) {
            case Architecture::base_s:
                c.layers = {conv(5, 24), P, conv(3, 48), P, conv(3, 24), conv(3, 12), conv(1, 1)};
                break;
            case Architecture::base_m:
                c.layers = {conv(7, 20), P, conv(5, 40), P, conv(5, 20), conv(5, 10), conv(1, 1)};
                break;
            case Architecture::base_l:
                c.layers = {conv(9, 16), P, conv(7, 32), P, conv(7, 16), conv(7, 8), conv(1, 1)};
                break;
            case Architecture::wide:
                c.layers = {conv(7, 128), P, conv(5, 256), P, conv(5, 128), conv(5, 64), conv(1, 1)};
                break;
            case Architecture::deep:
                c.layers = {conv(5, 64),  conv(5, 64),  P,           conv(5, 128), conv(5, 128), P,
                            conv(3, 256), conv(3, 256), P,           conv(3, 128), conv(3, 64),  conv(3, 32),
                            conv(3, 16),  conv(1, 1)};
                break;
        }
        return c;
    }

    std::size_t pool_sites() const {
        std::size_t n = 0;
        for (auto& l : layers) n += std::holds_alternative<PoolLayer>(l);
        return n;
    }
    std::size_t conv_layers() const { return layers.size() - pool_sites(); }

    /// Total spatial reduction: stride^(pool sites).
    std::size_t downsample() const {
        std::size_t f = 1;
        for (std::size_t i = 0; i < pool_sites(); ++i) f *= pool.stride;
        return f;
    }

    /// Number of learnable scalars; a pure function of the layer list.
    std::size_t parameter_count() const {
        std::size_t total = 0, in = in_channels;
        for (auto& l : layers)
            if (auto* c = std::get_if<ConvLayer>(&l)) {
                total += c->kernel * c->kernel * in * c->channels + c->channels;
                in = c->channels;
            }
        return total;
    }
};

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> value;
};

/// Intermediate values of one forward pass.
template <typename T>
struct ForwardTrace {
    std::vector<Tensor<T>> conv_outputs;  // before the activation
    std::vector<bool> conv_has_relu;
    std::vector<Tensor<T>> pool_inputs;
    std::vector<Tensor<T>> pool_outputs;
};

template <typename T>
class Network {
public:
    Network() = default;
    Network(NetworkConfig config, std::vector<NamedTensor<T>> params) : config_(std::move(config)), params_(std::move(params)) {
        check_shapes();
    }

    /// He (fan-in) normal weights and zero biases, deterministic in seed.
    static Network build(const NetworkConfig& config, std::uint64_t seed) {
        config.pool.validate();
        std::vector<NamedTensor<T>> params;
        std::size_t in = config.in_channels, idx = 0;
        for (auto& l : config.layers) {
            auto* c = std::get_if<ConvLayer>(&l);
            if (!c) continue;
            auto rng = make_rng(seed, "conv-init", idx);
            const double stddev = std::sqrt(2.0 / static_cast<double>(in * c->kernel * c->kernel));
            std::vector<T> w(c->channels * in * c->kernel * c->kernel);
            for (auto& v : w) v = static_cast<T>(stddev * normal01(rng));
            params.push_back({"conv" + std::to_string(idx) + ".weight",
                              Tensor<T>::from({c->channels, in, c->kernel, c->kernel}, std::move(w))});
            params.push_back({"conv" + std::to_string(idx) + ".bias", Tensor<T>::zeros({c->channels})});
            in = c->channels;
            ++idx;
        }
        Network net(config, std::move(params));
        net.set_requires_grad(true);
        return net;
    }

    const NetworkConfig& config() const { return config_; }
    std::vector<NamedTensor<T>>& parameters() { return params_; }
    const std::vector<NamedTensor<T>>& parameters() const { return params_; }

    void set_requires_grad(bool on) {
        for (auto& p : params_) p.value.set_requires_grad(on);
    }

    void zero_grad() {
        for (auto& p : params_) p.value.clear_grad();
    }

    /// Same architecture, different pooling; parameters are shared handles.
    Network with_pool(const PoolSpec& spec) const {
        NetworkConfig c = config_;
        c.pool = spec;
        return Network(std::move(c), params_);
    }

    /// Deep copy of the parameter values.
    Network snapshot() const {
        std::vector<NamedTensor<T>> copy;
        for (auto& p : params_) copy.push_back({p.name, p.value.clone()});
        return Network(config_, std::move(copy));
    }

    void check_input(const Tensor<T>& image) const {
        if (image.rank() != 4)
            throw ShapeError("network input must be (batch, channels, h, w), got " + to_string(image.shape()));
        if (image.dim(1) != config_.in_channels)
            throw ShapeError("network expects " + std::to_string(config_.in_channels) + " input channel(s), got " +
                             std::to_string(image.dim(1)));
        const auto f = config_.downsample();
        if (image.dim(2) % f || image.dim(3) % f)
            throw ShapeError("input extents " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
                             " are not divisible by the down-sampling factor " + std::to_string(f));
    }

    Tensor<T> forward(const Tensor<T>& image, ForwardTrace<T>* trace = nullptr) const {
        check_input(image);
        Tensor<T> x = image;
        std::size_t conv_idx = 0;
        const std::size_t n_conv = config_.conv_layers();
        for (auto& l : config_.layers) {
            if (std::holds_alternative<PoolLayer>(l)) {
                if (trace) trace->pool_inputs.push_back(x);
                x = pool(x, config_.pool);
                if (trace) trace->pool_outputs.push_back(x);
                continue;
            }
            const bool last = conv_idx + 1 == n_conv;
            x = conv2d(x, params_[2 * conv_idx].value, params_[2 * conv_idx + 1].value, true);
            const bool act = !last || config_.output_relu;
            if (trace) {
                trace->conv_outputs.push_back(x);
                trace->conv_has_relu.push_back(act);
            }
            if (act) x = relu(x);
            ++conv_idx;
        }
        return x;
    }

    /// Feature maps right after each pooling site (inference only).
    std::vector<Tensor<T>> pooled_features(const Tensor<T>& image) const {
        NoGradGuard guard;
        ForwardTrace<T> trace;
        forward(image, &trace);
        return trace.pool_outputs;
    }

private:
    void check_shapes() const {
        std::size_t in = config_.in_channels, idx = 0;
        for (auto& l : config_.layers) {
            auto* c = std::get_if<ConvLayer>(&l);
            if (!c) continue;
            if (2 * idx + 1 >= params_.size()) throw ShapeError("network has fewer parameter tensors than conv layers");
            const Shape ws{c->channels, in, c->kernel, c->kernel}, bs{c->channels};
            if (params_[2 * idx].value.shape() != ws || params_[2 * idx + 1].value.shape() != bs)
                throw ShapeError("parameter shapes of conv" + std::to_string(idx) + " do not match the configuration");
            in = c->channels;
            ++idx;
        }
        if (params_.size() != 2 * idx) throw ShapeError("network has more parameter tensors than conv layers");
    }

    NetworkConfig config_;
    std::vector<NamedTensor<T>> params_;
};

/// Mass of each batch item's single-channel density map, times count_scale
/// (use the squared down-sampling factor when targets were block-averaged
/// rather than block-summed).
template <typename T>
std::vector<double> predicted_count(const Tensor<T>& density, double count_scale = 1.0) {
    if (density.rank() != 4 || density.dim(1) != 1)
        throw ShapeError("predicted_count expects a (batch, 1, h, w) map, got " + to_string(density.shape()));
    const std::size_t plane = density.dim(2) * density.dim(3);
    std::vector<double> counts(density.dim(0));
    for (std::size_t n = 0; n < counts.size(); ++n) {
        double s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += static_cast<double>(density[n * plane + i]);
        counts[n] = s * count_scale;
    }
    return counts;
}

struct CheckpointInfo {
    std::string network;
    std::string pool;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    std::optional<double> val_mae;
    bool output_relu = false;
};

inline nlohmann::json to_json(const CheckpointInfo& info) {
    nlohmann::json j{{"network", info.network}, {"pool", info.pool}, {"seed", info.seed}, {"epoch", info.epoch},
                     {"output_relu", info.output_relu}};
    j["val_mae"] = info.val_mae ? nlohmann::json(*info.val_mae) : nlohmann::json(nullptr);
    return j;
}

template <typename T>
std::string encode_checkpoint(const Network<T>& net, CheckpointInfo info) {
    info.network = architecture_name(net.config().arch);
    info.pool = format_pool_spec(net.config().pool);
    info.output_relu = net.config().output_relu;
    Container<T> c;
    c.manifest = to_json(info).dump(2);
    for (auto& p : net.parameters()) c.tensors.emplace_back(p.name, p.value);
    return encode_container(c);
}

template <typename T>
void save_checkpoint(const std::string& path, const Network<T>& net, const CheckpointInfo& info) {
    detail::write_file(path, encode_checkpoint(net, info));
}

template <typename T>
struct LoadedCheckpoint {
    Network<T> net;
    CheckpointInfo info;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
    auto c = decode_container<T>(detail::read_file(path));
    const nlohmann::json j = nlohmann::json::parse(c.manifest);
    CheckpointInfo info;
    info.network = j.at("network").get<std::string>();
    info.pool = j.at("pool").get<std::string>();
    info.seed = j.at("seed").get<std::uint64_t>();
    info.epoch = j.at("epoch").get<std::size_t>();
    if (!j.at("val_mae").is_null()) info.val_mae = j.at("val_mae").get<double>();
    info.output_relu = j.value("output_relu", false);
    auto config = NetworkConfig::preset(parse_architecture(info.network), parse_pool_spec(info.pool));
    config.output_relu = info.output_relu;
    std::vector<NamedTensor<T>> params;
    for (auto& [name, t] : c.tensors) params.push_back({name, t});
    Network<T> net(std::move(config), std::move(params));
    net.set_requires_grad(true);
    return {std::move(net), std::move(info)};
}

}  // namespace stackpool
