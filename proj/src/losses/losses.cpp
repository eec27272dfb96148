#include "losses/losses.hpp"

#include <algorithm>
#include <cmath>

#include "data/augment.hpp"

namespace mapkit::losses {

using ag::Var;

void ProtectionHyperparams::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0))
            throw std::invalid_argument(std::string("hparams.") + name + ": must be > 0");
    };
    positive(lambda, "lambda");
    positive(alpha, "alpha");
    positive(beta, "beta");
    positive(gamma, "gamma");
    positive(epsilon, "epsilon");
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("hparams.delta: must be in (0,1)");
    if (n_aug < 1) throw std::invalid_argument("hparams.n_aug: must be >= 1");
    if (n_dir < 1) throw std::invalid_argument("hparams.n_dir: must be >= 1");
}

nlohmann::json ProtectionHyperparams::to_json() const {
    nlohmann::json j;
    j["lambda"] = lambda;
    j["alpha"] = alpha;
    j["beta"] = beta;
    j["gamma"] = gamma;
    j["delta"] = delta;
    j["lambda1"] = lambda1;
    j["lambda2"] = lambda2;
    j["epsilon"] = epsilon;
    j["n_aug"] = n_aug;
    j["n_dir"] = n_dir;
    j["sigma_mmd"] = sigma_mmd <= 0.0 ? nlohmann::json("median") : nlohmann::json(sigma_mmd);
    return j;
}

ProtectionHyperparams ProtectionHyperparams::from_json(const nlohmann::json& j) {
    ProtectionHyperparams h;
    h.lambda = j.value("lambda", h.lambda);
    h.alpha = j.value("alpha", h.alpha);
    h.beta = j.value("beta", h.beta);
    h.gamma = j.value("gamma", h.gamma);
    h.delta = j.value("delta", h.delta);
    h.lambda1 = j.value("lambda1", h.lambda1);
    h.lambda2 = j.value("lambda2", h.lambda2);
    h.epsilon = j.value("epsilon", h.epsilon);
    h.n_aug = j.value("n_aug", h.n_aug);
    h.n_dir = j.value("n_dir", h.n_dir);
    if (j.contains("sigma_mmd")) {
        if (j["sigma_mmd"].is_string()) {
            if (j["sigma_mmd"].get<std::string>() != "median")
                throw std::invalid_argument("hparams.sigma_mmd: must be a number > 0 or \"median\"");
            h.sigma_mmd = 0.0;
        } else {
            h.sigma_mmd = j["sigma_mmd"].get<double>();
            if (!(h.sigma_mmd > 0.0))
                throw std::invalid_argument("hparams.sigma_mmd: must be a number > 0 or \"median\"");
        }
    }
    return h;
}

void ProbBatch::validate(double eps) const {
    const auto& sh = p->value.shape();
    if (sh.size() != 2) throw std::invalid_argument("prob batch must be [N,k]");
    double floor = eps / static_cast<double>(sh[1]);
    for (int64_t r = 0; r < sh[0]; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < sh[1]; ++c) {
            double v = p->value[r * sh[1] + c];
            if (v + 1e-12 < floor)
                throw std::invalid_argument("prob batch entry below smoothing floor");
            s += v;
        }
        if (std::fabs(s - 1.0) > 1e-6)
            throw std::invalid_argument("prob batch row does not sum to 1");
    }
}

ProbBatch smooth_probs(const Var& probs, double eps) {
    const auto& sh = probs->value.shape();
    if (sh.size() != 2) throw std::invalid_argument("smooth_probs: expects [N,k]");
    double k = static_cast<double>(sh[1]);
    return {ag::add_scalar(ag::mul_scalar(probs, 1.0 - eps), eps / k)};
}

ProbBatch probs_from_logits(const Var& logits, double eps) {
    return smooth_probs(ag::softmax_rows(logits), eps);
}

Tensor one_hot(const std::vector<int64_t>& labels, int64_t k) {
    Tensor t({static_cast<int64_t>(labels.size()), k});
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw std::invalid_argument("one_hot: label " + std::to_string(labels[i]) +
                                        " outside [0," + std::to_string(k) + ")");
        t[static_cast<int64_t>(i) * k + labels[i]] = 1.0;
    }
    return t;
}

ProbBatch smoothed_labels(const std::vector<int64_t>& labels, int64_t k, double eps) {
    return smooth_probs(ag::constant(one_hot(labels, k)), eps);
}

namespace {

void check_prob_shapes(const ProbBatch& p, const ProbBatch& q, const char* op) {
    if (!p.p->value.same_shape(q.p->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    p.p->value.shape_str() + " vs " + q.p->value.shape_str());
}

/// Batch-mean KL as a single op. allow_zero_p treats p=0 entries as
/// contributing 0 (needed for JS on exact one-hots).
Var kl_rows_mean(const Var& p, const Var& q, bool allow_zero_p) {
    const auto& sh = p->value.shape();
    int64_t n = sh[0], k = sh[1];
    if (n == 0) throw std::invalid_argument("kl: empty batch");
    double inv_n = 1.0 / static_cast<double>(n);
    double acc = 0.0;
    for (int64_t i = 0; i < n * k; ++i) {
        double pv = p->value[i], qv = q->value[i];
        if (allow_zero_p && pv == 0.0) continue;
        if (!(pv > 0.0) || !(qv > 0.0))
            throw std::invalid_argument("kl: probabilities must be smoothed (nonpositive entry)");
        acc += pv * std::log(pv / qv);
    }
    return ag::make_op_scalar(acc * inv_n, {p, q}, [p, q, inv_n, allow_zero_p](ag::Node& nd) {
        double g = nd.grad[0] * inv_n;
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            double pv = p->value[i], qv = q->value[i];
            if (allow_zero_p && pv == 0.0) continue;
            if (p->requires_grad) p->ensure_grad()[i] += g * (std::log(pv / qv) + 1.0);
            if (q->requires_grad) q->ensure_grad()[i] -= g * pv / qv;
        }
    });
}

}  // namespace

Var kl_divergence(const ProbBatch& p, const ProbBatch& q) {
    check_prob_shapes(p, q, "kl_divergence");
    return kl_rows_mean(p.p, q.p, /*allow_zero_p=*/false);
}

Var js_divergence(const ProbBatch& p, const ProbBatch& q) {
    check_prob_shapes(p, q, "js_divergence");
    Var m = ag::mul_scalar(ag::add(p.p, q.p), 0.5);
    Var a = kl_rows_mean(p.p, m, /*allow_zero_p=*/true);
    Var b = kl_rows_mean(q.p, m, /*allow_zero_p=*/true);
    return ag::mul_scalar(ag::add(a, b), 0.5);
}

Var entropy(const ProbBatch& p) {
    const auto& sh = p.p->value.shape();
    if (sh.size() != 2) throw std::invalid_argument("entropy: expects [N,k]");
    int64_t n = sh[0];
    if (n == 0) throw std::invalid_argument("entropy: empty batch");
    double inv_n = 1.0 / static_cast<double>(n);
    const Var& pv = p.p;
    double acc = 0.0;
    for (int64_t i = 0; i < pv->value.numel(); ++i) {
        double v = pv->value[i];
        if (v > 0.0) acc -= v * std::log(v);
    }
    return ag::make_op_scalar(acc * inv_n, {pv}, [pv, inv_n](ag::Node& nd) {
        double g = nd.grad[0] * inv_n;
        Tensor& gp = pv->ensure_grad();
        for (int64_t i = 0; i < pv->value.numel(); ++i) {
            double v = pv->value[i];
            if (v > 0.0) gp[i] -= g * (std::log(v) + 1.0);
        }
    });
}

Var clamped_term(const Var& kl_value, double scale, double bound) {
    if (kl_value->value.numel() != 1) throw std::invalid_argument("clamped_term: expects scalar");
    double scaled = scale * kl_value->value[0];
    bool clamped = scaled >= bound;
    return ag::make_op_scalar(clamped ? bound : scaled, {kl_value},
                              [kl_value, scale, clamped](ag::Node& nd) {
                                  if (!clamped) kl_value->ensure_grad()[0] += nd.grad[0] * scale;
                              });
}

Var sa_loss(const ProbBatch& pred_src, const ProbBatch& y_src, const ProbBatch& pred_tgt,
            const ProbBatch& y_tgt, const ProtectionHyperparams& h) {
    if (pred_src.classes() != pred_tgt.classes())
        throw std::invalid_argument("sa_loss: class count mismatch between source and target");
    Var keep = kl_divergence(pred_src, y_src);
    Var forget = clamped_term(kl_divergence(pred_tgt, y_tgt), h.lambda, h.alpha);
    return ag::sub(keep, forget);
}

Var sf_loss(const ProbBatch& pred_pseudo_src_t, const ProbBatch& pred_pseudo_src_s,
            const ProbBatch& pred_tgt, const ProbBatch& y_psd, const ProtectionHyperparams& h) {
    Var keep = kl_divergence(pred_pseudo_src_t, pred_pseudo_src_s);
    Var forget = clamped_term(kl_divergence(pred_tgt, y_psd), h.lambda, h.beta);
    return ag::sub(keep, forget);
}

Var owner_loss(const ProbBatch& pred_src, const ProbBatch& y_src, const ProbBatch& pred_aux,
               const ProbBatch& y_aux, const ProtectionHyperparams& h) {
    if (pred_src.classes() != pred_aux.classes())
        throw std::invalid_argument("owner_loss: class count mismatch between source and auxiliary");
    Var keep = kl_divergence(pred_src, y_src);
    Var forget = clamped_term(kl_divergence(pred_aux, y_aux), h.lambda, h.gamma);
    return ag::sub(keep, forget);
}

std::vector<int64_t> argmax_rows(const Tensor& probs) {
    const auto& sh = probs.shape();
    std::vector<int64_t> out(static_cast<size_t>(sh[0]));
    for (int64_t r = 0; r < sh[0]; ++r) {
        int64_t best = 0;
        for (int64_t c = 1; c < sh[1]; ++c)
            if (probs[r * sh[1] + c] > probs[r * sh[1] + best]) best = c;
        out[static_cast<size_t>(r)] = best;
    }
    return out;
}

Var fresh_loss(const ProbBatch& p_s_prime, const ProbBatch& p_t_prime,
               const ProtectionHyperparams& h) {
    check_prob_shapes(p_s_prime, p_t_prime, "fresh_loss");
    std::vector<int64_t> t = argmax_rows(p_s_prime.p->value);
    // CE against the model's own argmax: mean of -ln p[i, t_i]
    Var picked = ag::gather_rowwise(p_s_prime.p, t);
    Var ce = ag::neg(ag::mean_all(ag::log_op(picked)));
    Var ent = entropy(p_s_prime);
    Var js = js_divergence(p_s_prime, p_t_prime);
    return ag::add(ag::sub(ag::mul_scalar(ce, h.lambda1), ag::mul_scalar(ent, h.lambda2)), js);
}

namespace {
/// Batch mean of per-sample L1 distance.
Var l1_pair_mean(const Var& a, const Var& b) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument("memory_loss: operand shape mismatch");
    int64_t n = a->value.shape().at(0);
    return ag::mul_scalar(ag::sum_all(ag::abs_op(ag::sub(a, b))), 1.0 / static_cast<double>(n));
}
}  // namespace

Var memory_loss(const Var& x_syn, const Var& x_re, const nn::Network& f_s,
                const std::vector<int>& layers_l) {
    if (layers_l.empty())
        throw std::invalid_argument("memory_loss: layer set must be non-empty");
    Var total = l1_pair_mean(x_syn, x_re);
    std::vector<Var> taps_syn, taps_re;
    f_s.forward(x_syn, &taps_syn);
    f_s.forward(x_re, &taps_re);
    for (int l : layers_l) {
        if (l < 0 || l >= static_cast<int>(taps_syn.size()))
            throw std::invalid_argument("memory_loss: layer index " + std::to_string(l) +
                                        " outside network (0.." +
                                        std::to_string(taps_syn.size() - 1) + ")");
        total = ag::add(total, l1_pair_mean(taps_syn[static_cast<size_t>(l)],
                                            taps_re[static_cast<size_t>(l)]));
    }
    return total;
}

Var mi_loss(const Var& z, const Var& z_prime) {
    const auto& sa = z->value.shape();
    const auto& sb = z_prime->value.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[0] != sb[0] || sa[1] != sb[1])
        throw std::invalid_argument("mi_loss: latent batches must share [N,d]");
    if (sa[0] == 0) throw std::invalid_argument("mi_loss: empty batch");
    // ln q(z'|z) = -0.5 ||z'-z||^2 up to a constant that cancels between terms
    Var d = ag::pairwise_sqdist(z, z_prime);  // d[i][j] = ||z_i - z'_j||^2
    Var paired = ag::mean_all(ag::diag(d));
    Var all = ag::mean_all(d);
    return ag::mul_scalar(ag::sub(all, paired), 0.5);
}

double median_bandwidth(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    std::vector<double> d2;
    d2.reserve(static_cast<size_t>(sa[0] * sb[0]));
    for (int64_t i = 0; i < sa[0]; ++i)
        for (int64_t j = 0; j < sb[0]; ++j) {
            double s = 0.0;
            for (int64_t t = 0; t < sa[1]; ++t) {
                double diff = a[i * sa[1] + t] - b[j * sb[1] + t];
                s += diff * diff;
            }
            d2.push_back(s);
        }
    if (d2.empty()) return 1.0;
    std::nth_element(d2.begin(), d2.begin() + static_cast<int64_t>(d2.size() / 2), d2.end());
    double med = d2[d2.size() / 2];
    return med > 0.0 ? std::sqrt(med) : 1.0;
}

Var mmd_semantic_loss(const std::map<int64_t, Var>& z_by_class,
                      const std::map<int64_t, Var>& z_prime_by_class, double sigma) {
    if (z_by_class.empty()) throw std::invalid_argument("mmd_semantic_loss: no classes");
    if (!(sigma > 0.0)) throw std::invalid_argument("mmd_semantic_loss: sigma must be > 0");
    for (const auto& [cls, _] : z_prime_by_class)
        if (!z_by_class.count(cls))
            throw std::invalid_argument("mmd_semantic_loss: class " + std::to_string(cls) +
                                        " present only on the generated side");
    double gamma = 1.0 / (2.0 * sigma * sigma);
    Var total;
    int64_t n_classes = 0;
    for (const auto& [cls, zk] : z_by_class) {
        auto it = z_prime_by_class.find(cls);
        if (it == z_prime_by_class.end())
            throw std::invalid_argument("mmd_semantic_loss: class " + std::to_string(cls) +
                                        " present only on the original side");
        const Var& zpk = it->second;
        auto kernel_mean = [gamma](const Var& x, const Var& y) {
            return ag::mean_all(ag::exp_op(ag::mul_scalar(ag::pairwise_sqdist(x, y), -gamma)));
        };
        Var kxx = kernel_mean(zk, zk);
        Var kyy = kernel_mean(zpk, zpk);
        Var kxy = kernel_mean(zk, zpk);
        Var mmd2 = ag::sub(ag::add(kxx, kyy), ag::mul_scalar(kxy, 2.0));
        total = total ? ag::add(total, mmd2) : mmd2;
        ++n_classes;
    }
    return ag::mul_scalar(total, 1.0 / static_cast<double>(n_classes));
}

ProbBatch pseudo_label(const nn::Network& f_s, const Tensor& x_t,
                       const data::AugmentationSet& augs, const ProtectionHyperparams& h,
                       uint64_t seed) {
    ag::NoGradGuard ng;
    Tensor logits = f_s.logits(x_t);
    Tensor direct = ag::softmax_rows(ag::constant(logits))->value;
    int64_t n = direct.shape()[0], k = direct.shape()[1];

    std::vector<bool> confident(static_cast<size_t>(n));
    bool any_fallback = false;
    for (int64_t r = 0; r < n; ++r) {
        double conf = 0.0;
        for (int64_t c = 0; c < k; ++c) conf = std::max(conf, direct[r * k + c]);
        confident[static_cast<size_t>(r)] = conf > h.delta;
        if (!confident[static_cast<size_t>(r)]) any_fallback = true;
    }

    Tensor out = direct;
    if (any_fallback) {
        if (augs.size() == 0)
            throw std::invalid_argument(
                "pseudo_label: empty augmentation set but samples fall below the confidence "
                "threshold");
        Tensor mean({n, k});
        for (size_t i = 0; i < augs.size(); ++i) {
            Tensor xa = augs.apply(x_t, i, seed);
            Tensor pa = ag::softmax_rows(ag::constant(f_s.logits(xa)))->value;
            for (int64_t t = 0; t < mean.numel(); ++t) mean[t] += pa[t];
        }
        double inv = 1.0 / static_cast<double>(augs.size());
        for (int64_t r = 0; r < n; ++r) {
            if (confident[static_cast<size_t>(r)]) continue;
            for (int64_t c = 0; c < k; ++c) out[r * k + c] = mean[r * k + c] * inv;
        }
    }
    return smooth_probs(ag::constant(out), h.epsilon);
}

}  // namespace mapkit::losses
