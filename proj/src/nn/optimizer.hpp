#pragma once

#include <optional>
#include <vector>

#include "core/archive.hpp"
#include "core/autograd.hpp"

namespace mapkit::nn {

/// Adam. Entries may carry an update mask: where the mask is 0 the element is
/// skipped entirely (value, moments and all — frozen segments must stay
/// bit-identical, and a decaying moment would still move them).
class Adam {
public:
    Adam(std::vector<ag::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    void zero_grad();
    void step();

    void set_update_mask(size_t param_idx, Tensor mask01);
    void clear_update_mask(size_t param_idx);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    int64_t step_count() const { return t_; }

    /// Moments and step counter, for bit-exact resume.
    void save_state(Archive& a, const std::string& prefix) const;
    void load_state(const Archive& a, const std::string& prefix);

private:
    struct Entry {
        ag::Var var;
        Tensor m;
        Tensor v;
        std::optional<Tensor> update_mask;
    };
    std::vector<Entry> entries_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace mapkit::nn
