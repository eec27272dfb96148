#pragma once

#include "nn/network.hpp"

namespace mapkit::nn {

/// Element-wise hard threshold: 1 if score >= threshold else 0. Ties keep.
Tensor binarize(const Tensor& scores, double threshold);

/// A frozen base network plus real-valued mask scores over every maskable
/// tensor (conv and linear weights; never biases). The scores are the only
/// trainable state: the forward pass multiplies each weight by its binarized
/// mask, the backward pass treats the binarization as identity
/// (straight-through), so scores receive d(loss)/d(effective weight) * weight.
class MaskedNetwork {
public:
    static constexpr double kDefaultThreshold = 0.5;
    static constexpr double kDefaultInitScore = 1.0;  // all-ones initial mask

    /// Builds from a base checkpoint; base parameters become constants.
    /// Throws (listing tensors) on any shape mismatch or missing tensor.
    MaskedNetwork(const Checkpoint& base, const NetworkSpec& spec,
                  double init_score = kDefaultInitScore, double threshold = kDefaultThreshold);

    ag::Var forward(const ag::Var& x, ag::MaskMode mode = ag::MaskMode::hard) const;
    /// Forward with the current mask baked in as a constant: the input still
    /// gets gradients (generator training needs them) but the scores do not.
    ag::Var forward_frozen(const ag::Var& x) const;
    /// No-grad hard-masked forward.
    Tensor logits(const Tensor& x) const;
    ag::Var features(const ag::Var& x, ag::MaskMode mode = ag::MaskMode::hard) const;

    const NetworkSpec& spec() const { return spec_; }
    const std::vector<ag::Var>& scores() { return scores_; }
    const std::vector<ag::Var>& scores() const { return scores_; }
    /// Layer indices of maskable tensors, aligned with scores().
    const std::vector<size_t>& maskable_layers() const { return maskable_; }
    double threshold() const { return threshold_; }

    Tensor binary_mask(size_t i) const { return binarize(scores_[i]->value, threshold_); }
    /// Fraction of masked-out entries over all maskable entries.
    double sparsity() const;

    /// Dense checkpoint with weights zeroed where the mask is 0;
    /// forward-equivalent to the masked forward.
    Checkpoint extract_subnetwork(nlohmann::json meta = nlohmann::json::object()) const;

    /// Scores (not binarized values), so training can resume.
    Checkpoint mask_checkpoint(nlohmann::json meta = nlohmann::json::object()) const;
    void load_mask(const Checkpoint& ckpt);

    const Network& base() const { return base_; }
    uint64_t base_hash() const { return base_.params_hash(); }

private:
    std::vector<LayerParams> effective_params(ag::MaskMode mode) const;

    NetworkSpec spec_;
    Network base_;  // constants
    std::vector<size_t> maskable_;
    std::vector<ag::Var> scores_;
    double threshold_;
};

}  // namespace mapkit::nn
