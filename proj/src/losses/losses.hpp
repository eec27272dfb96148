#pragma once

#include <map>
#include <vector>

#include <json.hpp>

#include "core/autograd.hpp"
#include "nn/network.hpp"

namespace mapkit::data {
class AugmentationSet;
}

namespace mapkit::losses {

/// Every scalar the protection objectives use. Defaults follow the reference
/// configuration: lambda 0.1 with unit upper bounds on the subtracted terms.
struct ProtectionHyperparams {
    double lambda = 0.1;   // scaling factor on the subtracted KL
    double alpha = 1.0;    // SA upper bound
    double beta = 1.0;     // SF upper bound
    double gamma = 1.0;    // ownership upper bound
    double delta = 0.9;    // pseudo-label confidence threshold
    double lambda1 = 1.0;  // fresh loss: CE weight
    double lambda2 = 5.0;  // fresh loss: entropy weight
    double epsilon = 1e-3; // probability smoothing floor
    int n_aug = 4;
    int n_dir = 3;
    double sigma_mmd = 0.0;  // <= 0: median heuristic per batch

    /// Throws naming the offending field and its constraint.
    void validate() const;
    nlohmann::json to_json() const;
    static ProtectionHyperparams from_json(const nlohmann::json& j);
};

/// Per-sample probability vectors over k classes (post-softmax, eps-smoothed
/// unless produced by a raw helper). Wraps an autograd var so composite losses
/// stay differentiable.
struct ProbBatch {
    ag::Var p;

    int64_t batch() const { return p->value.shape().at(0); }
    int64_t classes() const { return p->value.shape().at(1); }
    /// Rows sum to 1 within 1e-6 and every entry >= eps/k.
    void validate(double eps) const;
};

/// softmax(logits) followed by eps-smoothing: p' = (1-eps) p + eps/k.
ProbBatch probs_from_logits(const ag::Var& logits, double eps);
ProbBatch smooth_probs(const ag::Var& probs, double eps);
Tensor one_hot(const std::vector<int64_t>& labels, int64_t k);
ProbBatch smoothed_labels(const std::vector<int64_t>& labels, int64_t k, double eps);

/// Batch mean of sum_c p_c ln(p_c / q_c). Rejects unsmoothed inputs (any
/// nonpositive entry) — smoothing is mandatory for KL.
ag::Var kl_divergence(const ProbBatch& p, const ProbBatch& q);

/// 0.5 KL(p||m) + 0.5 KL(q||m), m = (p+q)/2. Zero entries are permitted
/// (0 ln 0 = 0), so exact one-hots reach the ln 2 maximum.
ag::Var js_divergence(const ProbBatch& p, const ProbBatch& q);

/// Batch mean of -sum_c p_c ln p_c.
ag::Var entropy(const ProbBatch& p);

/// min(scale * kl_value, bound); gradient is zero while the clamp is active.
ag::Var clamped_term(const ag::Var& kl_value, double scale, double bound);

/// KL(pred_src || y_src) - min(lambda * KL(pred_tgt || y_tgt), alpha).
ag::Var sa_loss(const ProbBatch& pred_src, const ProbBatch& y_src, const ProbBatch& pred_tgt,
                const ProbBatch& y_tgt, const ProtectionHyperparams& h);

/// KL(pred_pseudo_src_t || pred_pseudo_src_s) - min(lambda * KL(pred_tgt || y_psd), beta).
ag::Var sf_loss(const ProbBatch& pred_pseudo_src_t, const ProbBatch& pred_pseudo_src_s,
                const ProbBatch& pred_tgt, const ProbBatch& y_psd,
                const ProtectionHyperparams& h);

/// KL(pred_src || y_src) - min(lambda * KL(pred_aux || y_aux), gamma).
ag::Var owner_loss(const ProbBatch& pred_src, const ProbBatch& y_src, const ProbBatch& pred_aux,
                   const ProbBatch& y_aux, const ProtectionHyperparams& h);

/// Generator objective: mean of lambda1 * CE(argmax p_s', p_s')
/// - lambda2 * H(p_s') + JS(p_s' || p_t').
ag::Var fresh_loss(const ProbBatch& p_s_prime, const ProbBatch& p_t_prime,
                   const ProtectionHyperparams& h);

/// Replay objective: mean over the batch of ||x_syn - x_re||_1 plus the L1
/// distance between f_s activations at the selected layers. layers_l indexes
/// the layer whose output is compared; it must be non-empty.
ag::Var memory_loss(const ag::Var& x_syn, const ag::Var& x_re, const nn::Network& f_s,
                    const std::vector<int>& layers_l);

/// Mutual-information surrogate between paired latents, with
/// q(z'|z) an isotropic unit-variance Gaussian (constants cancel):
/// (1/N) sum_i [ln q(z'_i|z_i) - (1/N) sum_j ln q(z'_j|z_i)].
ag::Var mi_loss(const ag::Var& z, const ag::Var& z_prime);

/// Class-conditional squared MMD with an RBF kernel of bandwidth sigma:
/// (1/C) sum_k || mean phi(z^k) - mean phi(z'^k) ||^2. Throws, naming the
/// class, if a class appears on one side only.
ag::Var mmd_semantic_loss(const std::map<int64_t, ag::Var>& z_by_class,
                          const std::map<int64_t, ag::Var>& z_prime_by_class, double sigma);

/// Median heuristic: sqrt of the median squared distance over cross pairs.
double median_bandwidth(const Tensor& a, const Tensor& b);

/// Pseudo labels for unlabeled target data: the source model's softmax when
/// its max-probability confidence exceeds h.delta, otherwise the mean over
/// the augmentation set's predictions. Output is eps-smoothed.
ProbBatch pseudo_label(const nn::Network& f_s, const Tensor& x_t,
                       const data::AugmentationSet& augs, const ProtectionHyperparams& h,
                       uint64_t seed);

std::vector<int64_t> argmax_rows(const Tensor& probs);

}  // namespace mapkit::losses
