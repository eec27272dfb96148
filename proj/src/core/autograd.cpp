#include "core/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mapkit::ag {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {

thread_local bool g_grad_enabled = true;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_grad_enabled) {
        bool need = false;
        for (const auto& p : parents)
            if (p && p->requires_grad) need = true;
        if (need) {
            n->requires_grad = true;
            n->parents = std::move(parents);
            n->backward_fn = std::move(bw);
        }
    }
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                    " vs " + b->value.shape_str());
}

}  // namespace

Tensor& Node::ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

void Node::accumulate(const Tensor& g) {
    Tensor& dst = ensure_grad();
    const double* src = g.data();
    double* d = dst.data();
    for (int64_t i = 0; i < g.numel(); ++i) d[i] += src[i];
}

Var param(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void backward(const Var& loss) {
    if (!loss) throw std::invalid_argument("backward: null var");
    if (loss->value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!loss->requires_grad) return;

    // Iterative post-order topo sort (recursion would overflow on deep loops).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({loss.get(), 0});
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next].get();
            ++next;
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

Var detach(const Var& v) { return constant(v->value); }

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad);
        if (b->requires_grad) b->accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) a->accumulate(n.grad);
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        if (a->requires_grad) {
            Tensor& g = a->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->ensure_grad();
            for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * a->value[i];
        }
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + s;
    return make_node(std::move(out), {a}, [a](Node& n) { a->accumulate(n.grad); });
}

Var mul_scalar(const Var& a, double s) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * s;
    return make_node(std::move(out), {a}, [a, s](Node& n) {
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * s;
    });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var relu(const Var& a) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    return make_node(std::move(out), {a}, [a](Node& n) {
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            if (a->value[i] > 0.0) g[i] += n.grad[i];
    });
}

Var tanh_op(const Var& a) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(a->value[i]);
    Tensor saved = out;
    return make_node(std::move(out), {a}, [a, saved](Node& n) {
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * (1.0 - saved[i] * saved[i]);
    });
}

Var exp_op(const Var& a) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a->value[i]);
    Tensor saved = out;
    return make_node(std::move(out), {a}, [a, saved](Node& n) {
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] * saved[i];
    });
}

Var log_op(const Var& a) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(a->value[i]);
    return make_node(std::move(out), {a}, [a](Node& n) {
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) g[i] += n.grad[i] / a->value[i];
    });
}

Var abs_op(const Var& a) {
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(a->value[i]);
    return make_node(std::move(out), {a}, [a](Node& n) {
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            double v = a->value[i];
            g[i] += n.grad[i] * (v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0));
        }
    });
}

// ---------------------------------------------------------------- reductions

Var sum_all(const Var& a) {
    double s = 0.0;
    for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
    return make_node(Tensor::scalar(s), {a}, [a](Node& n) {
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
    });
}

Var mean_all(const Var& a) {
    int64_t cnt = a->value.numel();
    if (cnt == 0) throw std::invalid_argument("mean_all: empty tensor");
    double s = 0.0;
    for (int64_t i = 0; i < cnt; ++i) s += a->value[i];
    double inv = 1.0 / static_cast<double>(cnt);
    return make_node(Tensor::scalar(s * inv), {a}, [a, inv](Node& n) {
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0] * inv;
    });
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
    Tensor out = a->value.reshaped(shape);
    return make_node(std::move(out), {a}, [a](Node& n) {
        a->accumulate(n.grad.reshaped(a->value.shape()));
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    std::vector<int64_t> shape = parts[0]->value.shape();
    int64_t rows = 0, inner = parts[0]->value.numel() / std::max<int64_t>(shape[0], 1);
    for (const auto& p : parts) {
        if (p->value.rank() != shape.size())
            throw std::invalid_argument("concat_rows: rank mismatch");
        for (size_t d = 1; d < shape.size(); ++d)
            if (p->value.shape()[d] != shape[d])
                throw std::invalid_argument("concat_rows: trailing shape mismatch");
        rows += p->value.shape()[0];
    }
    shape[0] = rows;
    Tensor out(shape);
    int64_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.data(), p->value.data() + p->value.numel(), out.data() + off);
        off += p->value.numel();
    }
    return make_node(std::move(out), parts, [parts, inner](Node& n) {
        int64_t off = 0;
        for (const auto& p : parts) {
            int64_t cnt = p->value.numel();
            if (p->requires_grad) {
                Tensor& g = p->ensure_grad();
                for (int64_t i = 0; i < cnt; ++i) g[i] += n.grad[off + i];
            }
            off += cnt;
        }
        (void)inner;
    });
}

Var slice_rows(const Var& a, int64_t start, int64_t count) {
    const auto& sh = a->value.shape();
    if (sh.empty() || start < 0 || count < 0 || start + count > sh[0])
        throw std::invalid_argument("slice_rows: range out of bounds");
    int64_t inner = sh[0] > 0 ? a->value.numel() / sh[0] : 0;
    std::vector<int64_t> oshape = sh;
    oshape[0] = count;
    Tensor out(oshape);
    std::copy(a->value.data() + start * inner, a->value.data() + (start + count) * inner, out.data());
    return make_node(std::move(out), {a}, [a, start, inner](Node& n) {
        Tensor& g = a->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) g[start * inner + i] += n.grad[i];
    });
}

Var slice_cols(const Var& a, int64_t start, int64_t count) {
    const auto& sh = a->value.shape();
    if (sh.size() != 2) throw std::invalid_argument("slice_cols: expects 2-D input");
    if (start < 0 || count < 0 || start + count > sh[1])
        throw std::invalid_argument("slice_cols: range out of bounds");
    Tensor out({sh[0], count});
    for (int64_t r = 0; r < sh[0]; ++r)
        for (int64_t c = 0; c < count; ++c) out[r * count + c] = a->value[r * sh[1] + start + c];
    return make_node(std::move(out), {a}, [a, start, count](Node& n) {
        Tensor& g = a->ensure_grad();
        int64_t cols = a->value.shape()[1];
        for (int64_t r = 0; r < n.grad.shape()[0]; ++r)
            for (int64_t c = 0; c < count; ++c) g[r * cols + start + c] += n.grad[r * count + c];
    });
}

Var gather_rows(const Var& a, const std::vector<int64_t>& rows) {
    const auto& sh = a->value.shape();
    if (sh.empty()) throw std::invalid_argument("gather_rows: scalar input");
    int64_t inner = sh[0] > 0 ? a->value.numel() / sh[0] : 0;
    for (int64_t r : rows)
        if (r < 0 || r >= sh[0]) throw std::out_of_range("gather_rows: row index out of range");
    std::vector<int64_t> oshape = sh;
    oshape[0] = static_cast<int64_t>(rows.size());
    Tensor out(oshape);
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(a->value.data() + rows[i] * inner, a->value.data() + (rows[i] + 1) * inner,
                  out.data() + static_cast<int64_t>(i) * inner);
    return make_node(std::move(out), {a}, [a, rows, inner](Node& n) {
        Tensor& g = a->ensure_grad();
        for (size_t i = 0; i < rows.size(); ++i)
            for (int64_t j = 0; j < inner; ++j)
                g[rows[i] * inner + j] += n.grad[static_cast<int64_t>(i) * inner + j];
    });
}

Var gather_rowwise(const Var& a, const std::vector<int64_t>& idx) {
    const auto& sh = a->value.shape();
    if (sh.size() != 2) throw std::invalid_argument("gather_rowwise: expects 2-D input");
    if (static_cast<int64_t>(idx.size()) != sh[0])
        throw std::invalid_argument("gather_rowwise: index count != rows");
    Tensor out({sh[0]});
    for (int64_t r = 0; r < sh[0]; ++r) {
        if (idx[static_cast<size_t>(r)] < 0 || idx[static_cast<size_t>(r)] >= sh[1])
            throw std::out_of_range("gather_rowwise: column index out of range");
        out[r] = a->value[r * sh[1] + idx[static_cast<size_t>(r)]];
    }
    return make_node(std::move(out), {a}, [a, idx](Node& n) {
        Tensor& g = a->ensure_grad();
        int64_t cols = a->value.shape()[1];
        for (int64_t r = 0; r < n.grad.numel(); ++r)
            g[r * cols + idx[static_cast<size_t>(r)]] += n.grad[r];
    });
}

Var broadcast_to_rows(const Var& v, int64_t n_rows) {
    const auto& sh = v->value.shape();
    if (sh.size() != 1) throw std::invalid_argument("broadcast_to_rows: expects 1-D input");
    Tensor out({n_rows, sh[0]});
    for (int64_t r = 0; r < n_rows; ++r)
        std::copy(v->value.data(), v->value.data() + sh[0], out.data() + r * sh[0]);
    return make_node(std::move(out), {v}, [v](Node& n) {
        Tensor& g = v->ensure_grad();
        int64_t c = g.numel();
        for (int64_t r = 0; r < n.grad.shape()[0]; ++r)
            for (int64_t j = 0; j < c; ++j) g[j] += n.grad[r * c + j];
    });
}

Var diag(const Var& a) {
    const auto& sh = a->value.shape();
    if (sh.size() != 2 || sh[0] != sh[1]) throw std::invalid_argument("diag: expects square 2-D input");
    Tensor out({sh[0]});
    for (int64_t i = 0; i < sh[0]; ++i) out[i] = a->value[i * sh[1] + i];
    return make_node(std::move(out), {a}, [a](Node& n) {
        Tensor& g = a->ensure_grad();
        int64_t c = a->value.shape()[1];
        for (int64_t i = 0; i < n.grad.numel(); ++i) g[i * c + i] += n.grad[i];
    });
}

// ------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw std::invalid_argument("matmul: incompatible shapes " + a->value.shape_str() + " x " +
                                    b->value.shape_str());
    Tensor out({sa[0], sb[1]});
    CMapMat ma(a->value.data(), sa[0], sa[1]);
    CMapMat mb(b->value.data(), sb[0], sb[1]);
    MapMat mo(out.data(), sa[0], sb[1]);
    mo.noalias() = ma * mb;
    return make_node(std::move(out), {a, b}, [a, b](Node& n) {
        const auto& sa = a->value.shape();
        const auto& sb = b->value.shape();
        CMapMat mg(n.grad.data(), sa[0], sb[1]);
        if (a->requires_grad) {
            CMapMat mb(b->value.data(), sb[0], sb[1]);
            MapMat mda(a->ensure_grad().data(), sa[0], sa[1]);
            mda.noalias() += mg * mb.transpose();
        }
        if (b->requires_grad) {
            CMapMat ma(a->value.data(), sa[0], sa[1]);
            MapMat mdb(b->ensure_grad().data(), sb[0], sb[1]);
            mdb.noalias() += ma.transpose() * mg;
        }
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const auto& sx = x->value.shape();
    const auto& sw = w->value.shape();
    if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[1])
        throw std::invalid_argument("linear: x" + x->value.shape_str() + " vs w" + w->value.shape_str());
    if (b->value.numel() != sw[0]) throw std::invalid_argument("linear: bias size mismatch");
    Tensor out({sx[0], sw[0]});
    CMapMat mx(x->value.data(), sx[0], sx[1]);
    CMapMat mw(w->value.data(), sw[0], sw[1]);
    MapMat mo(out.data(), sx[0], sw[0]);
    mo.noalias() = mx * mw.transpose();
    for (int64_t r = 0; r < sx[0]; ++r)
        for (int64_t c = 0; c < sw[0]; ++c) out[r * sw[0] + c] += b->value[c];
    return make_node(std::move(out), {x, w, b}, [x, w, b](Node& n) {
        const auto& sx = x->value.shape();
        const auto& sw = w->value.shape();
        CMapMat mg(n.grad.data(), sx[0], sw[0]);
        if (x->requires_grad) {
            CMapMat mw(w->value.data(), sw[0], sw[1]);
            MapMat mdx(x->ensure_grad().data(), sx[0], sx[1]);
            mdx.noalias() += mg * mw;
        }
        if (w->requires_grad) {
            CMapMat mx(x->value.data(), sx[0], sx[1]);
            MapMat mdw(w->ensure_grad().data(), sw[0], sw[1]);
            mdw.noalias() += mg.transpose() * mx;
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int64_t r = 0; r < sx[0]; ++r)
                for (int64_t c = 0; c < sw[0]; ++c) gb[c] += n.grad[r * sw[0] + c];
        }
    });
}

Var pairwise_sqdist(const Var& a, const Var& b) {
    const auto& sa = a->value.shape();
    const auto& sb = b->value.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1])
        throw std::invalid_argument("pairwise_sqdist: incompatible shapes");
    int64_t n = sa[0], m = sb[0], d = sa[1];
    Tensor out({n, m});
    for (int64_t i = 0; i < n; ++i) {
        const double* ai = a->value.data() + i * d;
        for (int64_t j = 0; j < m; ++j) {
            const double* bj = b->value.data() + j * d;
            double s = 0.0;
            for (int64_t t = 0; t < d; ++t) {
                double diff = ai[t] - bj[t];
                s += diff * diff;
            }
            out[i * m + j] = s;
        }
    }
    return make_node(std::move(out), {a, b}, [a, b](Node& nd) {
        int64_t n = a->value.shape()[0], m = b->value.shape()[0], d = a->value.shape()[1];
        for (int64_t i = 0; i < n; ++i) {
            const double* ai = a->value.data() + i * d;
            for (int64_t j = 0; j < m; ++j) {
                double g = nd.grad[i * m + j];
                if (g == 0.0) continue;
                const double* bj = b->value.data() + j * d;
                if (a->requires_grad) {
                    double* ga = a->ensure_grad().data() + i * d;
                    for (int64_t t = 0; t < d; ++t) ga[t] += g * 2.0 * (ai[t] - bj[t]);
                }
                if (b->requires_grad) {
                    double* gb = b->ensure_grad().data() + j * d;
                    for (int64_t t = 0; t < d; ++t) gb[t] -= g * 2.0 * (ai[t] - bj[t]);
                }
            }
        }
    });
}

// ------------------------------------------------------------------- softmax

Var softmax_rows(const Var& logits) {
    const auto& sh = logits->value.shape();
    if (sh.size() != 2) throw std::invalid_argument("softmax_rows: expects 2-D logits");
    int64_t n = sh[0], k = sh[1];
    Tensor out(sh);
    for (int64_t r = 0; r < n; ++r) {
        const double* src = logits->value.data() + r * k;
        double* dst = out.data() + r * k;
        double mx = src[0];
        for (int64_t c = 1; c < k; ++c) mx = std::max(mx, src[c]);
        double z = 0.0;
        for (int64_t c = 0; c < k; ++c) {
            dst[c] = std::exp(src[c] - mx);
            z += dst[c];
        }
        for (int64_t c = 0; c < k; ++c) dst[c] /= z;
    }
    Tensor saved = out;
    return make_node(std::move(out), {logits}, [logits, saved](Node& nd) {
        int64_t n = saved.shape()[0], k = saved.shape()[1];
        Tensor& g = logits->ensure_grad();
        for (int64_t r = 0; r < n; ++r) {
            const double* p = saved.data() + r * k;
            const double* go = nd.grad.data() + r * k;
            double dot = 0.0;
            for (int64_t c = 0; c < k; ++c) dot += go[c] * p[c];
            for (int64_t c = 0; c < k; ++c) g[r * k + c] += p[c] * (go[c] - dot);
        }
    });
}

// ---------------------------------------------------------------------- conv

namespace {

// src[C,H,W] -> col[Ho*Wo, C*k*k], zero-padded
void im2col(const double* src, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, double* col) {
    const int64_t ck2 = C * k * k;
    for (int64_t ho = 0; ho < Ho; ++ho) {
        for (int64_t wo = 0; wo < Wo; ++wo) {
            double* row = col + (ho * Wo + wo) * ck2;
            for (int64_t c = 0; c < C; ++c) {
                for (int64_t kh = 0; kh < k; ++kh) {
                    int64_t h = ho * stride - pad + kh;
                    for (int64_t kw = 0; kw < k; ++kw) {
                        int64_t w = wo * stride - pad + kw;
                        row[(c * k + kh) * k + kw] =
                            (h >= 0 && h < H && w >= 0 && w < W) ? src[(c * H + h) * W + w] : 0.0;
                    }
                }
            }
        }
    }
}

// scatter-add of col[Ho*Wo, C*k*k] back into dst[C,H,W]
void col2im(const double* col, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride,
            int64_t pad, int64_t Ho, int64_t Wo, double* dst) {
    const int64_t ck2 = C * k * k;
    for (int64_t ho = 0; ho < Ho; ++ho) {
        for (int64_t wo = 0; wo < Wo; ++wo) {
            const double* row = col + (ho * Wo + wo) * ck2;
            for (int64_t c = 0; c < C; ++c) {
                for (int64_t kh = 0; kh < k; ++kh) {
                    int64_t h = ho * stride - pad + kh;
                    if (h < 0 || h >= H) continue;
                    for (int64_t kw = 0; kw < k; ++kw) {
                        int64_t w = wo * stride - pad + kw;
                        if (w < 0 || w >= W) continue;
                        dst[(c * H + h) * W + w] += row[(c * k + kh) * k + kw];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const auto& sx = x->value.shape();
    const auto& sw = w->value.shape();
    if (sx.size() != 4) throw std::invalid_argument("conv2d: input must be [N,C,H,W]");
    if (sw.size() != 4) throw std::invalid_argument("conv2d: weight must be [O,C,kh,kw]");
    if (sw[2] != sw[3]) throw std::invalid_argument("conv2d: only square kernels supported");
    if (sx[1] != sw[1])
        throw std::invalid_argument("conv2d: channel mismatch x" + x->value.shape_str() + " w" +
                                    w->value.shape_str());
    const int64_t N = sx[0], C = sx[1], H = sx[2], W = sx[3];
    const int64_t O = sw[0], k = sw[2];
    if (b->value.numel() != O) throw std::invalid_argument("conv2d: bias size mismatch");
    const int64_t Ho = (H + 2 * pad - k) / stride + 1;
    const int64_t Wo = (W + 2 * pad - k) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");

    const int64_t P = Ho * Wo, ck2 = C * k * k;
    Tensor out({N, O, Ho, Wo});
    std::vector<double> colbuf(static_cast<size_t>(P * ck2));
    RowMat om(P, O);
    CMapMat wm(w->value.data(), O, ck2);
    for (int64_t n = 0; n < N; ++n) {
        im2col(x->value.data() + n * C * H * W, C, H, W, k, stride, pad, Ho, Wo, colbuf.data());
        CMapMat cm(colbuf.data(), P, ck2);
        om.noalias() = cm * wm.transpose();
        double* dst = out.data() + n * O * P;
        for (int64_t o = 0; o < O; ++o)
            for (int64_t p = 0; p < P; ++p) dst[o * P + p] = om(p, o) + b->value[o];
    }

    return make_node(std::move(out), {x, w, b}, [x, w, b, stride, pad](Node& nd) {
        const auto& sx = x->value.shape();
        const auto& sw = w->value.shape();
        const int64_t N = sx[0], C = sx[1], H = sx[2], W = sx[3];
        const int64_t O = sw[0], k = sw[2];
        const int64_t Ho = (H + 2 * pad - k) / stride + 1;
        const int64_t Wo = (W + 2 * pad - k) / stride + 1;
        const int64_t P = Ho * Wo, ck2 = C * k * k;

        std::vector<double> colbuf(static_cast<size_t>(P * ck2));
        RowMat gm(P, O);  // grad at output positions, [P, O]
        CMapMat wm(w->value.data(), O, ck2);
        RowMat dcol(P, ck2);
        for (int64_t n = 0; n < N; ++n) {
            const double* gsrc = nd.grad.data() + n * O * P;
            for (int64_t o = 0; o < O; ++o)
                for (int64_t p = 0; p < P; ++p) gm(p, o) = gsrc[o * P + p];
            if (b->requires_grad) {
                Tensor& gb = b->ensure_grad();
                for (int64_t o = 0; o < O; ++o) gb[o] += gm.col(o).sum();
            }
            if (w->requires_grad || x->requires_grad) {
                if (w->requires_grad) {
                    // recompute im2col; cheaper than keeping per-layer buffers alive
                    im2col(x->value.data() + n * C * H * W, C, H, W, k, stride, pad, Ho, Wo,
                           colbuf.data());
                    CMapMat cm(colbuf.data(), P, ck2);
                    MapMat gw(w->ensure_grad().data(), O, ck2);
                    gw.noalias() += gm.transpose() * cm;
                }
                if (x->requires_grad) {
                    dcol.noalias() = gm * wm;
                    col2im(dcol.data(), C, H, W, k, stride, pad, Ho, Wo,
                           x->ensure_grad().data() + n * C * H * W);
                }
            }
        }
    });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const auto& sx = x->value.shape();
    const auto& sw = w->value.shape();
    if (sx.size() != 4) throw std::invalid_argument("conv_transpose2d: input must be [N,C,H,W]");
    if (sw.size() != 4) throw std::invalid_argument("conv_transpose2d: weight must be [Cin,Cout,kh,kw]");
    if (sw[2] != sw[3]) throw std::invalid_argument("conv_transpose2d: only square kernels supported");
    if (sx[1] != sw[0])
        throw std::invalid_argument("conv_transpose2d: channel mismatch x" + x->value.shape_str() +
                                    " w" + w->value.shape_str());
    const int64_t N = sx[0], Cin = sx[1], H = sx[2], W = sx[3];
    const int64_t Cout = sw[1], k = sw[2];
    if (b->value.numel() != Cout) throw std::invalid_argument("conv_transpose2d: bias size mismatch");
    const int64_t Ho = (H - 1) * stride - 2 * pad + k;
    const int64_t Wo = (W - 1) * stride - 2 * pad + k;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv_transpose2d: degenerate output size");

    const int64_t P = H * W, ckk = Cout * k * k;
    Tensor out({N, Cout, Ho, Wo});
    RowMat xt(P, Cin);
    RowMat col(P, ckk);
    CMapMat wm(w->value.data(), Cin, ckk);
    for (int64_t n = 0; n < N; ++n) {
        const double* src = x->value.data() + n * Cin * P;
        for (int64_t c = 0; c < Cin; ++c)
            for (int64_t p = 0; p < P; ++p) xt(p, c) = src[c * P + p];
        col.noalias() = xt * wm;
        double* dst = out.data() + n * Cout * Ho * Wo;
        col2im(col.data(), Cout, Ho, Wo, k, stride, pad, H, W, dst);
        for (int64_t c = 0; c < Cout; ++c)
            for (int64_t p = 0; p < Ho * Wo; ++p) dst[c * Ho * Wo + p] += b->value[c];
    }

    return make_node(std::move(out), {x, w, b}, [x, w, b, stride, pad](Node& nd) {
        const auto& sx = x->value.shape();
        const auto& sw = w->value.shape();
        const int64_t N = sx[0], Cin = sx[1], H = sx[2], W = sx[3];
        const int64_t Cout = sw[1], k = sw[2];
        const int64_t Ho = (H - 1) * stride - 2 * pad + k;
        const int64_t Wo = (W - 1) * stride - 2 * pad + k;
        const int64_t P = H * W, ckk = Cout * k * k;

        std::vector<double> gcol(static_cast<size_t>(P * ckk));
        CMapMat wm(w->value.data(), Cin, ckk);
        RowMat xt(P, Cin), dxt(P, Cin);
        for (int64_t n = 0; n < N; ++n) {
            const double* g = nd.grad.data() + n * Cout * Ho * Wo;
            im2col(g, Cout, Ho, Wo, k, stride, pad, H, W, gcol.data());
            CMapMat gcm(gcol.data(), P, ckk);
            if (b->requires_grad) {
                Tensor& gb = b->ensure_grad();
                for (int64_t c = 0; c < Cout; ++c) {
                    double s = 0.0;
                    for (int64_t p = 0; p < Ho * Wo; ++p) s += g[c * Ho * Wo + p];
                    gb[c] += s;
                }
            }
            if (x->requires_grad) {
                dxt.noalias() = gcm * wm.transpose();
                double* dst = x->ensure_grad().data() + n * Cin * P;
                for (int64_t c = 0; c < Cin; ++c)
                    for (int64_t p = 0; p < P; ++p) dst[c * P + p] += dxt(p, c);
            }
            if (w->requires_grad) {
                const double* src = x->value.data() + n * Cin * P;
                for (int64_t c = 0; c < Cin; ++c)
                    for (int64_t p = 0; p < P; ++p) xt(p, c) = src[c * P + p];
                MapMat gw(w->ensure_grad().data(), Cin, ckk);
                gw.noalias() += xt.transpose() * gcm;
            }
        }
    });
}

Var global_avg_pool(const Var& x) {
    const auto& sh = x->value.shape();
    if (sh.size() != 4) throw std::invalid_argument("global_avg_pool: input must be [N,C,H,W]");
    int64_t N = sh[0], C = sh[1], HW = sh[2] * sh[3];
    if (HW == 0) throw std::invalid_argument("global_avg_pool: empty spatial dims");
    Tensor out({N, C});
    double inv = 1.0 / static_cast<double>(HW);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const double* src = x->value.data() + (n * C + c) * HW;
            double s = 0.0;
            for (int64_t p = 0; p < HW; ++p) s += src[p];
            out[n * C + c] = s * inv;
        }
    return make_node(std::move(out), {x}, [x, HW, inv](Node& nd) {
        Tensor& g = x->ensure_grad();
        int64_t NC = nd.grad.numel();
        for (int64_t i = 0; i < NC; ++i) {
            double gv = nd.grad[i] * inv;
            double* dst = g.data() + i * HW;
            for (int64_t p = 0; p < HW; ++p) dst[p] += gv;
        }
    });
}

// ------------------------------------------------------------------- masking

Var mask_weights(const Tensor& w, const Var& scores, double threshold, MaskMode mode) {
    if (!w.same_shape(scores->value))
        throw std::invalid_argument("mask_weights: score shape " + scores->value.shape_str() +
                                    " != weight shape " + shape_to_string(w.shape()));
    Tensor out(w.shape());
    if (mode == MaskMode::hard) {
        for (int64_t i = 0; i < out.numel(); ++i)
            out[i] = scores->value[i] >= threshold ? w[i] : 0.0;
    } else {
        for (int64_t i = 0; i < out.numel(); ++i) out[i] = w[i] * scores->value[i];
    }
    Tensor wcopy = w;
    return make_node(std::move(out), {scores}, [scores, wcopy](Node& nd) {
        Tensor& g = scores->ensure_grad();
        for (int64_t i = 0; i < nd.grad.numel(); ++i) g[i] += nd.grad[i] * wcopy[i];
    });
}

Var scale_shift_nc(const Var& x, const Var& scale, const Var& shift) {
    const auto& sx = x->value.shape();
    if (sx.size() != 4) throw std::invalid_argument("scale_shift_nc: input must be [N,C,H,W]");
    int64_t N = sx[0], C = sx[1], HW = sx[2] * sx[3];
    if (scale->value.shape() != std::vector<int64_t>{N, C} ||
        shift->value.shape() != std::vector<int64_t>{N, C})
        throw std::invalid_argument("scale_shift_nc: scale/shift must be [N,C]");
    Tensor out(sx);
    for (int64_t i = 0; i < N * C; ++i) {
        const double* src = x->value.data() + i * HW;
        double* dst = out.data() + i * HW;
        double s = scale->value[i], t = shift->value[i];
        for (int64_t p = 0; p < HW; ++p) dst[p] = src[p] * s + t;
    }
    return make_node(std::move(out), {x, scale, shift}, [x, scale, shift, HW](Node& nd) {
        int64_t NC = scale->value.numel();
        for (int64_t i = 0; i < NC; ++i) {
            const double* g = nd.grad.data() + i * HW;
            if (x->requires_grad) {
                double* gx = x->ensure_grad().data() + i * HW;
                double s = scale->value[i];
                for (int64_t p = 0; p < HW; ++p) gx[p] += g[p] * s;
            }
            if (scale->requires_grad) {
                const double* xv = x->value.data() + i * HW;
                double s = 0.0;
                for (int64_t p = 0; p < HW; ++p) s += g[p] * xv[p];
                scale->ensure_grad()[i] += s;
            }
            if (shift->requires_grad) {
                double s = 0.0;
                for (int64_t p = 0; p < HW; ++p) s += g[p];
                shift->ensure_grad()[i] += s;
            }
        }
    });
}

Var make_op_scalar(double value, std::vector<Var> parents, std::function<void(Node&)> backward) {
    return make_node(Tensor::scalar(value), std::move(parents), std::move(backward));
}

}  // namespace mapkit::ag
