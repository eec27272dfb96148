#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/autograd.hpp"
#include "core/tensor.hpp"

namespace mapkit::nn {

struct LayerSpec {
    enum class Kind { conv, linear, relu, tanh, flatten, gap };
    Kind kind = Kind::relu;
    int64_t out = 0;  // conv: output channels, linear: output features
    int kernel = 3;
    int stride = 1;
    int pad = 1;

    bool has_params() const { return kind == Kind::conv || kind == Kind::linear; }
    nlohmann::json to_json() const;
    static LayerSpec from_json(const nlohmann::json& j);
};

/// Architecture description shared by the source and target networks. The
/// split index divides the feature extractor g (layers [0, split)) from the
/// classifier head h (layers [split, end)); latent_dim is the flat feature
/// size at that boundary and classes the logit count.
struct NetworkSpec {
    std::vector<int64_t> input_shape;  // [C,H,W]
    std::vector<LayerSpec> layers;
    int split = 0;
    int64_t latent_dim = 0;
    int64_t classes = 0;

    /// Throws with the offending layer named if shapes are inconsistent.
    void validate() const;
    /// Shape after each layer (index i = output of layers[i]); entry 0..n.
    std::vector<std::vector<int64_t>> shape_trace() const;

    nlohmann::json to_json() const;
    static NetworkSpec from_json(const nlohmann::json& j);
    std::string hash() const;

    /// Default desk-scale digit backbone: 4 conv + 2 linear, ~146k parameters
    /// at 28x28 input.
    static NetworkSpec digit_cnn(int64_t in_channels, int64_t image_size, int64_t classes = 10);
};

/// Named parameter tensors plus a JSON metadata record. Loading then saving
/// is byte-identical (canonical archive serialization).
struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    nlohmann::json meta = nlohmann::json::object();

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
    uint64_t content_hash() const;
};

struct LayerParams {
    ag::Var w;  // null for stateless layers
    ag::Var b;
};

/// Executes the layer program of `spec` over explicit per-layer parameters.
/// `taps`, when given, receives the activation after every layer.
ag::Var run_layers(const NetworkSpec& spec, const std::vector<LayerParams>& params,
                   const ag::Var& x, size_t from, size_t to, std::vector<ag::Var>* taps = nullptr);

class Network {
public:
    Network() = default;
    Network(NetworkSpec spec, std::vector<LayerParams> params)
        : spec_(std::move(spec)), params_(std::move(params)) {}

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<LayerParams>& layer_params() const { return params_; }

    ag::Var forward(const ag::Var& x, std::vector<ag::Var>* taps = nullptr) const;
    /// Feature extractor g only (layers up to the split).
    ag::Var features(const ag::Var& x) const;
    /// Convenience no-grad forward.
    Tensor logits(const Tensor& x) const;

    std::vector<ag::Var> parameters() const;
    int64_t param_count() const;

    Checkpoint checkpoint(nlohmann::json meta = nlohmann::json::object()) const;
    /// Bit-exact hash of all parameter tensors (frozen-base verification).
    uint64_t params_hash() const;

private:
    NetworkSpec spec_;
    std::vector<LayerParams> params_;
};

/// Deterministic He-initialized network from a spec.
Network build_network(const NetworkSpec& spec, uint64_t seed);

/// Rebuild a network from checkpoint tensors. frozen=true produces constants
/// (no gradient tracking), the mode every MAP pipeline uses for f_s / f_t.
Network network_from_checkpoint(const Checkpoint& ckpt, const NetworkSpec& spec, bool frozen);

/// Parameter tensor names used in checkpoints: "layer<i>.weight" / ".bias".
std::string layer_param_name(size_t layer_idx, bool weight);

}  // namespace mapkit::nn
