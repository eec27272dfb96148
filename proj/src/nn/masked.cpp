#include "nn/masked.hpp"

namespace mapkit::nn {

Tensor binarize(const Tensor& scores, double threshold) {
    Tensor out(scores.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = scores[i] >= threshold ? 1.0 : 0.0;
    return out;
}

MaskedNetwork::MaskedNetwork(const Checkpoint& base, const NetworkSpec& spec, double init_score,
                             double threshold)
    : spec_(spec), base_(network_from_checkpoint(base, spec, /*frozen=*/true)),
      threshold_(threshold) {
    for (size_t i = 0; i < spec_.layers.size(); ++i) {
        if (!spec_.layers[i].has_params()) continue;
        maskable_.push_back(i);
        Tensor s(base_.layer_params()[i].w->value.shape(), init_score);
        scores_.push_back(ag::param(std::move(s)));
    }
}

std::vector<LayerParams> MaskedNetwork::effective_params(ag::MaskMode mode) const {
    std::vector<LayerParams> params = base_.layer_params();
    for (size_t m = 0; m < maskable_.size(); ++m) {
        size_t i = maskable_[m];
        params[i].w = ag::mask_weights(base_.layer_params()[i].w->value, scores_[m], threshold_, mode);
    }
    return params;
}

ag::Var MaskedNetwork::forward(const ag::Var& x, ag::MaskMode mode) const {
    auto params = effective_params(mode);
    return run_layers(spec_, params, x, 0, spec_.layers.size());
}

ag::Var MaskedNetwork::forward_frozen(const ag::Var& x) const {
    std::vector<LayerParams> params = base_.layer_params();
    for (size_t m = 0; m < maskable_.size(); ++m) {
        size_t i = maskable_[m];
        const Tensor& w = base_.layer_params()[i].w->value;
        Tensor masked(w.shape());
        const Tensor& s = scores_[m]->value;
        for (int64_t t = 0; t < w.numel(); ++t) masked[t] = s[t] >= threshold_ ? w[t] : 0.0;
        params[i].w = ag::constant(std::move(masked));
    }
    return run_layers(spec_, params, x, 0, spec_.layers.size());
}

Tensor MaskedNetwork::logits(const Tensor& x) const {
    ag::NoGradGuard ng;
    return forward(ag::constant(x))->value;
}

ag::Var MaskedNetwork::features(const ag::Var& x, ag::MaskMode mode) const {
    auto params = effective_params(mode);
    ag::Var f = run_layers(spec_, params, x, 0, static_cast<size_t>(spec_.split));
    int64_t n = f->value.shape()[0];
    return ag::reshape(f, {n, f->value.numel() / n});
}

double MaskedNetwork::sparsity() const {
    int64_t zeros = 0, total = 0;
    for (size_t m = 0; m < scores_.size(); ++m) {
        const Tensor& s = scores_[m]->value;
        for (int64_t i = 0; i < s.numel(); ++i)
            if (s[i] < threshold_) ++zeros;
        total += s.numel();
    }
    return total == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(total);
}

Checkpoint MaskedNetwork::extract_subnetwork(nlohmann::json meta) const {
    Checkpoint c = base_.checkpoint(std::move(meta));
    for (size_t m = 0; m < maskable_.size(); ++m) {
        Tensor& w = c.tensors.at(layer_param_name(maskable_[m], true));
        const Tensor& s = scores_[m]->value;
        for (int64_t i = 0; i < w.numel(); ++i)
            if (s[i] < threshold_) w[i] = 0.0;
    }
    c.meta["sparsity"] = sparsity();
    return c;
}

Checkpoint MaskedNetwork::mask_checkpoint(nlohmann::json meta) const {
    Checkpoint c;
    c.meta = std::move(meta);
    c.meta["spec_hash"] = spec_.hash();
    c.meta["threshold"] = threshold_;
    for (size_t m = 0; m < maskable_.size(); ++m)
        c.tensors["mask_scores." + layer_param_name(maskable_[m], true)] = scores_[m]->value;
    return c;
}

void MaskedNetwork::load_mask(const Checkpoint& ckpt) {
    std::vector<std::string> problems;
    for (size_t m = 0; m < maskable_.size(); ++m) {
        std::string name = "mask_scores." + layer_param_name(maskable_[m], true);
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) {
            problems.push_back("missing tensor '" + name + "'");
            continue;
        }
        if (!it->second.same_shape(scores_[m]->value)) {
            problems.push_back("tensor '" + name + "' shape " + it->second.shape_str() +
                               " != " + scores_[m]->value.shape_str());
            continue;
        }
        scores_[m]->value = it->second;
    }
    if (!problems.empty()) {
        std::string msg = "mask checkpoint does not match network:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw std::runtime_error(msg);
    }
    if (ckpt.meta.contains("threshold")) threshold_ = ckpt.meta["threshold"].get<double>();
}

}  // namespace mapkit::nn
