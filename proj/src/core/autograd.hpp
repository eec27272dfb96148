#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "core/tensor.hpp"

namespace mapkit::ag {

struct Node;
using Var = std::shared_ptr<Node>;

/// One node in the reverse-mode tape. Ops build the graph define-by-run;
/// backward() walks it in reverse topological order.
struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;  // pushes this->grad into parents

    Tensor& ensure_grad();
    void accumulate(const Tensor& g);
};

/// Leaf with gradient tracking (a trainable parameter).
Var param(Tensor value);
/// Leaf without gradient tracking (data, frozen weights).
Var constant(Tensor value);

/// Thread-local switch: while disabled, ops produce plain constants and no
/// graph is recorded (inference mode).
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Reverse pass from a scalar loss. Zeroes nothing: callers reset leaf grads
/// between steps (Optimizer::zero_grad does this).
void backward(const Var& loss);

Var detach(const Var& v);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var neg(const Var& a);
Var relu(const Var& a);
Var tanh_op(const Var& a);
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var abs_op(const Var& a);

// ---- reductions / layout ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var reshape(const Var& a, std::vector<int64_t> shape);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, int64_t start, int64_t count);
Var slice_cols(const Var& a, int64_t start, int64_t count);  // 2-D only
Var gather_rows(const Var& a, const std::vector<int64_t>& rows);
/// out[i] = a[i, idx[i]] for a 2-D input.
Var gather_rowwise(const Var& a, const std::vector<int64_t>& idx);
/// v[C] broadcast to [n, C].
Var broadcast_to_rows(const Var& v, int64_t n);
Var diag(const Var& a);  // [N,N] -> [N]

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);
/// x[N,in] * W[out,in]^T + b[out]
Var linear(const Var& x, const Var& w, const Var& b);
/// Squared euclidean distances: out[i,j] = ||a_i - b_j||^2 for a[N,d], b[M,d].
Var pairwise_sqdist(const Var& a, const Var& b);

// ---- softmax ----
Var softmax_rows(const Var& logits);

// ---- conv ----
/// x[N,C,H,W], w[O,C,kh,kw], b[O] -> [N,O,Ho,Wo]
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// x[N,Cin,H,W], w[Cin,Cout,kh,kw], b[Cout] -> [N,Cout,(H-1)s-2p+kh, ...]
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// [N,C,H,W] -> [N,C]
Var global_avg_pool(const Var& x);

// ---- masking / modulation ----
enum class MaskMode { hard, relaxed };
/// Effective weights for a masked layer. hard: w * (scores >= threshold);
/// relaxed: w * scores. Backward is identical in both modes (straight-through:
/// d scores = d w_eff * w), which makes the relaxed product the finite-
/// difference reference for the hard path at binary score values.
Var mask_weights(const Tensor& w, const Var& scores, double threshold, MaskMode mode);

/// y[n,c,h,w] = x[n,c,h,w] * scale[n,c] + shift[n,c]
Var scale_shift_nc(const Var& x, const Var& scale, const Var& shift);

/// Escape hatch for composite ops with a hand-written scalar forward/backward
/// (the divergence kernels use this to keep one node per loss term).
Var make_op_scalar(double value, std::vector<Var> parents, std::function<void(Node&)> backward);

}  // namespace mapkit::ag
