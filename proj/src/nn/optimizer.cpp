#include "nn/optimizer.hpp"

#include <cmath>

namespace mapkit::nn {

Adam::Adam(std::vector<ag::Var> params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params) {
        if (!p || !p->requires_grad)
            throw std::invalid_argument("Adam: parameter without gradient tracking");
        entries_.push_back({p, Tensor(p->value.shape()), Tensor(p->value.shape()), std::nullopt});
    }
}

void Adam::zero_grad() {
    for (auto& e : entries_)
        if (!e.var->grad.empty()) std::fill(e.var->grad.vec().begin(), e.var->grad.vec().end(), 0.0);
}

void Adam::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& e : entries_) {
        if (e.var->grad.empty()) continue;
        Tensor& val = e.var->value;
        const Tensor& g = e.var->grad;
        for (int64_t i = 0; i < val.numel(); ++i) {
            if (e.update_mask && (*e.update_mask)[i] == 0.0) continue;
            e.m[i] = beta1_ * e.m[i] + (1.0 - beta1_) * g[i];
            e.v[i] = beta2_ * e.v[i] + (1.0 - beta2_) * g[i] * g[i];
            double mhat = e.m[i] / bc1;
            double vhat = e.v[i] / bc2;
            val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::set_update_mask(size_t param_idx, Tensor mask01) {
    if (!mask01.same_shape(entries_.at(param_idx).var->value))
        throw std::invalid_argument("Adam: update mask shape mismatch");
    entries_[param_idx].update_mask = std::move(mask01);
}

void Adam::clear_update_mask(size_t param_idx) { entries_.at(param_idx).update_mask.reset(); }

void Adam::save_state(Archive& a, const std::string& prefix) const {
    a.meta[prefix + ".t"] = t_;
    for (size_t i = 0; i < entries_.size(); ++i) {
        a.tensors[prefix + ".m" + std::to_string(i)] = entries_[i].m;
        a.tensors[prefix + ".v" + std::to_string(i)] = entries_[i].v;
        a.tensors[prefix + ".p" + std::to_string(i)] = entries_[i].var->value;
    }
}

void Adam::load_state(const Archive& a, const std::string& prefix) {
    t_ = a.meta.at(prefix + ".t").get<int64_t>();
    for (size_t i = 0; i < entries_.size(); ++i) {
        entries_[i].m = a.require(prefix + ".m" + std::to_string(i));
        entries_[i].v = a.require(prefix + ".v" + std::to_string(i));
        entries_[i].var->value = a.require(prefix + ".p" + std::to_string(i));
    }
}

}  // namespace mapkit::nn
