#include "nn/network.hpp"

#include <cmath>

#include "core/archive.hpp"
#include "core/hash.hpp"
#include "core/rng.hpp"

namespace mapkit::nn {

namespace {
const char* kind_name(LayerSpec::Kind k) {
    switch (k) {
        case LayerSpec::Kind::conv: return "conv";
        case LayerSpec::Kind::linear: return "linear";
        case LayerSpec::Kind::relu: return "relu";
        case LayerSpec::Kind::tanh: return "tanh";
        case LayerSpec::Kind::flatten: return "flatten";
        case LayerSpec::Kind::gap: return "gap";
    }
    return "?";
}

LayerSpec::Kind kind_from_name(const std::string& s) {
    if (s == "conv") return LayerSpec::Kind::conv;
    if (s == "linear") return LayerSpec::Kind::linear;
    if (s == "relu") return LayerSpec::Kind::relu;
    if (s == "tanh") return LayerSpec::Kind::tanh;
    if (s == "flatten") return LayerSpec::Kind::flatten;
    if (s == "gap") return LayerSpec::Kind::gap;
    throw std::invalid_argument("unknown layer kind '" + s + "'");
}
}  // namespace

nlohmann::json LayerSpec::to_json() const {
    nlohmann::json j;
    j["kind"] = kind_name(kind);
    if (kind == Kind::conv) {
        j["out"] = out;
        j["kernel"] = kernel;
        j["stride"] = stride;
        j["pad"] = pad;
    } else if (kind == Kind::linear) {
        j["out"] = out;
    }
    return j;
}

LayerSpec LayerSpec::from_json(const nlohmann::json& j) {
    LayerSpec s;
    s.kind = kind_from_name(j.at("kind").get<std::string>());
    if (s.kind == Kind::conv) {
        s.out = j.at("out").get<int64_t>();
        s.kernel = j.value("kernel", 3);
        s.stride = j.value("stride", 1);
        s.pad = j.value("pad", 1);
    } else if (s.kind == Kind::linear) {
        s.out = j.at("out").get<int64_t>();
    }
    return s;
}

std::vector<std::vector<int64_t>> NetworkSpec::shape_trace() const {
    if (input_shape.size() != 3)
        throw std::invalid_argument("network spec: input shape must be [C,H,W]");
    std::vector<std::vector<int64_t>> trace;
    std::vector<int64_t> cur = input_shape;  // [C,H,W] or [F]
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        switch (l.kind) {
            case LayerSpec::Kind::conv: {
                if (cur.size() != 3)
                    throw std::invalid_argument("layer " + std::to_string(i) +
                                                " (conv): needs spatial input, got flat");
                int64_t ho = (cur[1] + 2 * l.pad - l.kernel) / l.stride + 1;
                int64_t wo = (cur[2] + 2 * l.pad - l.kernel) / l.stride + 1;
                if (l.out <= 0 || ho <= 0 || wo <= 0)
                    throw std::invalid_argument("layer " + std::to_string(i) +
                                                " (conv): invalid output shape");
                cur = {l.out, ho, wo};
                break;
            }
            case LayerSpec::Kind::linear: {
                if (cur.size() != 1)
                    throw std::invalid_argument("layer " + std::to_string(i) +
                                                " (linear): needs flat input; add flatten/gap first");
                if (l.out <= 0)
                    throw std::invalid_argument("layer " + std::to_string(i) +
                                                " (linear): invalid output size");
                cur = {l.out};
                break;
            }
            case LayerSpec::Kind::flatten: {
                cur = {shape_numel(cur)};
                break;
            }
            case LayerSpec::Kind::gap: {
                if (cur.size() != 3)
                    throw std::invalid_argument("layer " + std::to_string(i) +
                                                " (gap): needs spatial input");
                cur = {cur[0]};
                break;
            }
            case LayerSpec::Kind::relu:
            case LayerSpec::Kind::tanh:
                break;
        }
        trace.push_back(cur);
    }
    return trace;
}

void NetworkSpec::validate() const {
    auto trace = shape_trace();
    if (layers.empty()) throw std::invalid_argument("network spec: no layers");
    if (split <= 0 || split >= static_cast<int>(layers.size()))
        throw std::invalid_argument("network spec: split index " + std::to_string(split) +
                                    " is not an interior layer boundary (layers: " +
                                    std::to_string(layers.size()) + ")");
    const auto& at_split = trace[static_cast<size_t>(split - 1)];
    if (shape_numel(at_split) != latent_dim)
        throw std::invalid_argument("network spec: latent_dim " + std::to_string(latent_dim) +
                                    " != flat size " + std::to_string(shape_numel(at_split)) +
                                    " at split boundary");
    const auto& out = trace.back();
    if (out.size() != 1 || out[0] != classes)
        throw std::invalid_argument("network spec: final layer produces " + shape_to_string(out) +
                                    ", expected [" + std::to_string(classes) + "] logits");
}

nlohmann::json NetworkSpec::to_json() const {
    nlohmann::json j;
    j["input"] = input_shape;
    nlohmann::json ls = nlohmann::json::array();
    for (const auto& l : layers) ls.push_back(l.to_json());
    j["layers"] = ls;
    j["split"] = split;
    j["latent_dim"] = latent_dim;
    j["classes"] = classes;
    return j;
}

NetworkSpec NetworkSpec::from_json(const nlohmann::json& j) {
    NetworkSpec s;
    s.input_shape = j.at("input").get<std::vector<int64_t>>();
    for (const auto& e : j.at("layers")) s.layers.push_back(LayerSpec::from_json(e));
    s.split = j.at("split").get<int>();
    s.latent_dim = j.at("latent_dim").get<int64_t>();
    s.classes = j.at("classes").get<int64_t>();
    return s;
}

std::string NetworkSpec::hash() const { return hash_hex(fnv1a64(to_json().dump())); }

NetworkSpec NetworkSpec::digit_cnn(int64_t in_channels, int64_t image_size, int64_t classes) {
    NetworkSpec s;
    s.input_shape = {in_channels, image_size, image_size};
    using K = LayerSpec::Kind;
    s.layers = {
        {K::conv, 16, 3, 2, 1},  {K::relu}, {K::conv, 32, 3, 2, 1},  {K::relu},
        {K::conv, 72, 3, 1, 1},  {K::relu}, {K::conv, 160, 3, 1, 1}, {K::relu},
        {K::gap},                {K::linear, 96}, {K::relu},         {K::linear, classes},
    };
    s.split = 11;  // g: through the post-linear relu; h: final linear
    s.latent_dim = 96;
    s.classes = classes;
    s.validate();
    return s;
}

// ------------------------------------------------------------------ Checkpoint

void Checkpoint::save(const std::filesystem::path& path) const {
    Archive a;
    a.tensors = tensors;
    a.meta = meta;
    a.save(path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    Archive a = Archive::load(path);
    Checkpoint c;
    c.tensors = std::move(a.tensors);
    c.meta = std::move(a.meta);
    return c;
}

uint64_t Checkpoint::content_hash() const { return tensor_map_hash(tensors); }

// --------------------------------------------------------------------- layers

std::string layer_param_name(size_t layer_idx, bool weight) {
    return "layer" + std::to_string(layer_idx) + (weight ? ".weight" : ".bias");
}

ag::Var run_layers(const NetworkSpec& spec, const std::vector<LayerParams>& params,
                   const ag::Var& x, size_t from, size_t to, std::vector<ag::Var>* taps) {
    ag::Var cur = x;
    for (size_t i = from; i < to; ++i) {
        const LayerSpec& l = spec.layers[i];
        switch (l.kind) {
            case LayerSpec::Kind::conv:
                cur = ag::conv2d(cur, params[i].w, params[i].b, l.stride, l.pad);
                break;
            case LayerSpec::Kind::linear:
                cur = ag::linear(cur, params[i].w, params[i].b);
                break;
            case LayerSpec::Kind::relu:
                cur = ag::relu(cur);
                break;
            case LayerSpec::Kind::tanh:
                cur = ag::tanh_op(cur);
                break;
            case LayerSpec::Kind::flatten: {
                int64_t n = cur->value.shape()[0];
                cur = ag::reshape(cur, {n, cur->value.numel() / n});
                break;
            }
            case LayerSpec::Kind::gap:
                cur = ag::global_avg_pool(cur);
                break;
        }
        if (taps) taps->push_back(cur);
    }
    return cur;
}

ag::Var Network::forward(const ag::Var& x, std::vector<ag::Var>* taps) const {
    return run_layers(spec_, params_, x, 0, spec_.layers.size(), taps);
}

ag::Var Network::features(const ag::Var& x) const {
    ag::Var f = run_layers(spec_, params_, x, 0, static_cast<size_t>(spec_.split));
    int64_t n = f->value.shape()[0];
    return ag::reshape(f, {n, f->value.numel() / n});
}

Tensor Network::logits(const Tensor& x) const {
    ag::NoGradGuard ng;
    return forward(ag::constant(x))->value;
}

std::vector<ag::Var> Network::parameters() const {
    std::vector<ag::Var> out;
    for (const auto& p : params_) {
        if (p.w) out.push_back(p.w);
        if (p.b) out.push_back(p.b);
    }
    return out;
}

int64_t Network::param_count() const {
    int64_t n = 0;
    for (const auto& p : params_) {
        if (p.w) n += p.w->value.numel();
        if (p.b) n += p.b->value.numel();
    }
    return n;
}

Checkpoint Network::checkpoint(nlohmann::json meta) const {
    Checkpoint c;
    c.meta = std::move(meta);
    c.meta["spec_hash"] = spec_.hash();
    for (size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].w) c.tensors[layer_param_name(i, true)] = params_[i].w->value;
        if (params_[i].b) c.tensors[layer_param_name(i, false)] = params_[i].b->value;
    }
    return c;
}

uint64_t Network::params_hash() const {
    std::map<std::string, Tensor> m;
    for (size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].w) m[layer_param_name(i, true)] = params_[i].w->value;
        if (params_[i].b) m[layer_param_name(i, false)] = params_[i].b->value;
    }
    return tensor_map_hash(m);
}

namespace {

std::pair<std::vector<int64_t>, std::vector<int64_t>> param_shapes(const NetworkSpec& spec,
                                                                   size_t idx,
                                                                   const std::vector<int64_t>& in) {
    const LayerSpec& l = spec.layers[idx];
    if (l.kind == LayerSpec::Kind::conv)
        return {{l.out, in[0], l.kernel, l.kernel}, {l.out}};
    return {{l.out, in[0]}, {l.out}};  // linear: in is flat [F]
}

}  // namespace

Network build_network(const NetworkSpec& spec, uint64_t seed) {
    spec.validate();
    auto trace = spec.shape_trace();
    std::vector<LayerParams> params(spec.layers.size());
    std::vector<int64_t> cur = spec.input_shape;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].has_params()) {
            auto [ws, bs] = param_shapes(spec, i, cur);
            int64_t fan_in = shape_numel(ws) / ws[0];
            double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
            Rng rng(Rng::derive(seed, rng_purpose::kInit, i));
            Tensor w(ws);
            for (int64_t t = 0; t < w.numel(); ++t) w[t] = rng.normal() * stddev;
            params[i].w = ag::param(std::move(w));
            params[i].b = ag::param(Tensor(bs));
        }
        cur = trace[i];
    }
    return Network(spec, std::move(params));
}

Network network_from_checkpoint(const Checkpoint& ckpt, const NetworkSpec& spec, bool frozen) {
    spec.validate();
    auto trace = spec.shape_trace();
    std::vector<LayerParams> params(spec.layers.size());
    std::vector<int64_t> cur = spec.input_shape;
    std::vector<std::string> problems;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].has_params()) {
            auto [ws, bs] = param_shapes(spec, i, cur);
            for (bool is_w : {true, false}) {
                std::string name = layer_param_name(i, is_w);
                auto it = ckpt.tensors.find(name);
                if (it == ckpt.tensors.end()) {
                    problems.push_back("missing tensor '" + name + "'");
                    continue;
                }
                const auto& want = is_w ? ws : bs;
                if (it->second.shape() != want) {
                    problems.push_back("tensor '" + name + "' has shape " +
                                       it->second.shape_str() + ", expected " +
                                       shape_to_string(want));
                    continue;
                }
                ag::Var v = frozen ? ag::constant(it->second) : ag::param(it->second);
                (is_w ? params[i].w : params[i].b) = v;
            }
        }
        cur = trace[i];
    }
    if (!problems.empty()) {
        std::string msg = "checkpoint does not match spec:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw std::runtime_error(msg);
    }
    return Network(spec, std::move(params));
}

}  // namespace mapkit::nn
