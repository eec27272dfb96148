#include <doctest.h>

#include <cmath>

#include "core/autograd.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

using namespace mapkit;
using ag::Var;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
    return t;
}

/// Central finite differences of a scalar-valued graph w.r.t. one leaf.
/// Rebuilds the graph per probe, so it exercises exactly the tested op chain.
void check_gradient(const std::function<Var(const Var&)>& f, Tensor at, double h = 1e-6,
                    double tol = 1e-6) {
    Var leaf = ag::param(at);
    Var loss = f(leaf);
    ag::backward(loss);
    Tensor analytic = leaf->grad;

    for (int64_t i = 0; i < at.numel(); ++i) {
        Tensor plus = at, minus = at;
        plus[i] += h;
        minus[i] -= h;
        double fp, fm;
        {
            ag::NoGradGuard ng;
            fp = f(ag::constant(plus))->value[0];
            fm = f(ag::constant(minus))->value[0];
        }
        double numeric = (fp - fm) / (2 * h);
        double denom = std::max({1.0, std::fabs(numeric), std::fabs(analytic[i])});
        CHECK(std::fabs(analytic[i] - numeric) / denom < tol);
    }
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6);
    CHECK_THROWS(t.reshaped({4, 2}));
    CHECK(t.reshaped({3, 2}).at({2, 1}) == 6);
    CHECK_THROWS(Tensor({2}, {1, 2, 3}));
}

TEST_CASE("rng determinism and derivation") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    CHECK(Rng::derive(1, 2, 3) == Rng::derive(1, 2, 3));
    CHECK(Rng::derive(1, 2, 3) != Rng::derive(1, 2, 4));
}

TEST_CASE("elementwise ops forward and gradients") {
    Tensor x = random_tensor({3, 4}, 7);
    check_gradient([](const Var& v) { return ag::mean_all(ag::mul(v, v)); }, x);
    check_gradient([](const Var& v) { return ag::sum_all(ag::tanh_op(v)); }, x);
    check_gradient([](const Var& v) { return ag::mean_all(ag::exp_op(ag::mul_scalar(v, 0.3))); },
                   x);
    check_gradient(
        [](const Var& v) { return ag::sum_all(ag::relu(ag::add_scalar(v, 0.05))); }, x, 1e-6,
        1e-5);
    Tensor pos = random_tensor({2, 5}, 8);
    for (int64_t i = 0; i < pos.numel(); ++i) pos[i] = std::fabs(pos[i]) + 0.5;
    check_gradient([](const Var& v) { return ag::mean_all(ag::log_op(v)); }, pos);
}

TEST_CASE("matmul and linear match Eigen and gradients") {
    Tensor a = random_tensor({4, 3}, 1), b = random_tensor({3, 5}, 2);
    Var prod = ag::matmul(ag::constant(a), ag::constant(b));
    // spot-check one entry
    double manual = 0;
    for (int64_t k = 0; k < 3; ++k) manual += a.at({1, k}) * b.at({k, 2});
    CHECK(prod->value.at({1, 2}) == doctest::Approx(manual).epsilon(1e-12));

    check_gradient(
        [&](const Var& v) { return ag::mean_all(ag::matmul(v, ag::constant(b))); }, a);
    check_gradient(
        [&](const Var& v) { return ag::mean_all(ag::matmul(ag::constant(a), v)); }, b);

    Tensor w = random_tensor({5, 3}, 3), bias = random_tensor({5}, 4);
    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(ag::linear(v, ag::constant(w), ag::constant(bias)));
        },
        a);
    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(ag::linear(ag::constant(a), v, ag::constant(bias)));
        },
        w);
    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(ag::linear(ag::constant(a), ag::constant(w), v));
        },
        bias);
}

TEST_CASE("softmax rows: values and gradient") {
    Tensor logits = random_tensor({3, 5}, 11);
    Var p = ag::softmax_rows(ag::constant(logits));
    for (int64_t r = 0; r < 3; ++r) {
        double s = 0;
        for (int64_t c = 0; c < 5; ++c) {
            s += p->value.at({r, c});
            CHECK(p->value.at({r, c}) > 0);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    // weighted sum so the gradient is nontrivial
    Tensor wts = random_tensor({3, 5}, 12);
    check_gradient(
        [&](const Var& v) {
            return ag::sum_all(ag::mul(ag::softmax_rows(v), ag::constant(wts)));
        },
        logits);
}

TEST_CASE("conv2d forward matches direct convolution") {
    Tensor x = random_tensor({2, 3, 7, 7}, 21);
    Tensor w = random_tensor({4, 3, 3, 3}, 22);
    Tensor b = random_tensor({4}, 23);
    int stride = 2, pad = 1;
    Var out = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), stride, pad);
    CHECK(out->value.shape() == std::vector<int64_t>{2, 4, 4, 4});

    // direct nested-loop reference
    for (int64_t n = 0; n < 2; ++n)
        for (int64_t o = 0; o < 4; ++o)
            for (int64_t ho = 0; ho < 4; ++ho)
                for (int64_t wo = 0; wo < 4; ++wo) {
                    double acc = b[o];
                    for (int64_t c = 0; c < 3; ++c)
                        for (int64_t kh = 0; kh < 3; ++kh)
                            for (int64_t kw = 0; kw < 3; ++kw) {
                                int64_t hi = ho * stride - pad + kh;
                                int64_t wi = wo * stride - pad + kw;
                                if (hi < 0 || hi >= 7 || wi < 0 || wi >= 7) continue;
                                acc += x.at({n, c, hi, wi}) * w.at({o, c, kh, kw});
                            }
                    CHECK(out->value.at({n, o, ho, wo}) == doctest::Approx(acc).epsilon(1e-10));
                }
}

TEST_CASE("conv2d gradients (input, weight, bias)") {
    Tensor x = random_tensor({2, 2, 5, 5}, 31);
    Tensor w = random_tensor({3, 2, 3, 3}, 32);
    Tensor b = random_tensor({3}, 33);
    for (int stride : {1, 2}) {
        check_gradient(
            [&](const Var& v) {
                return ag::mean_all(ag::conv2d(v, ag::constant(w), ag::constant(b), stride, 1));
            },
            x);
        check_gradient(
            [&](const Var& v) {
                return ag::mean_all(ag::conv2d(ag::constant(x), v, ag::constant(b), stride, 1));
            },
            w);
        check_gradient(
            [&](const Var& v) {
                return ag::mean_all(ag::conv2d(ag::constant(x), ag::constant(w), v, stride, 1));
            },
            b);
    }
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    // <conv(x), y> == <x, convT(y)> for matching weights
    Tensor x = random_tensor({1, 2, 6, 6}, 41);
    Tensor w = random_tensor({3, 2, 4, 4}, 42);  // conv weight [O,C,k,k]
    Tensor zero_b3({3}), zero_b2({2});
    int stride = 2, pad = 1;
    Var cx = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(zero_b3), stride, pad);
    Tensor y = random_tensor(cx->value.shape(), 43);

    // convT weight layout is [Cin,Cout,k,k] = w viewed with Cin=O
    Tensor wt = w.reshaped({3, 2, 4, 4});
    Var ty = ag::conv_transpose2d(ag::constant(y), ag::constant(wt), ag::constant(zero_b2),
                                  stride, pad);
    REQUIRE(ty->value.shape() == x.shape());

    double lhs = 0, rhs = 0;
    for (int64_t i = 0; i < cx->value.numel(); ++i) lhs += cx->value[i] * y[i];
    for (int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * ty->value[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("conv_transpose2d gradients") {
    Tensor x = random_tensor({2, 3, 4, 4}, 51);
    Tensor w = random_tensor({3, 2, 4, 4}, 52);
    Tensor b = random_tensor({2}, 53);
    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(ag::conv_transpose2d(v, ag::constant(w), ag::constant(b), 2, 1));
        },
        x);
    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(ag::conv_transpose2d(ag::constant(x), v, ag::constant(b), 2, 1));
        },
        w);
    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(ag::conv_transpose2d(ag::constant(x), ag::constant(w), v, 2, 1));
        },
        b);
}

TEST_CASE("structural ops: slice, concat, gather, diag, broadcast") {
    Tensor a = random_tensor({4, 3}, 61), b = random_tensor({2, 3}, 62);
    Var cat = ag::concat_rows({ag::constant(a), ag::constant(b)});
    CHECK(cat->value.shape() == std::vector<int64_t>{6, 3});
    CHECK(cat->value.at({5, 2}) == b.at({1, 2}));

    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(ag::concat_rows({v, ag::constant(b)}));
        },
        a);
    check_gradient([&](const Var& v) { return ag::sum_all(ag::slice_rows(v, 1, 2)); }, a);
    check_gradient([&](const Var& v) { return ag::sum_all(ag::slice_cols(v, 1, 2)); }, a);
    check_gradient(
        [&](const Var& v) { return ag::sum_all(ag::gather_rows(v, {2, 0, 2})); }, a);
    check_gradient(
        [&](const Var& v) { return ag::sum_all(ag::gather_rowwise(v, {2, 0, 1, 2})); }, a);

    Tensor sq = random_tensor({3, 3}, 63);
    check_gradient([&](const Var& v) { return ag::mean_all(ag::diag(v)); }, sq);
    Tensor vec = random_tensor({4}, 64);
    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(ag::mul(ag::broadcast_to_rows(v, 3),
                                        ag::constant(random_tensor({3, 4}, 65))));
        },
        vec);
}

TEST_CASE("pairwise_sqdist values and gradients") {
    Tensor a({2, 1}, {0.0, 1.0});
    Tensor b({2, 1}, {0.0, 1.0});
    Var d = ag::pairwise_sqdist(ag::constant(a), ag::constant(b));
    CHECK(d->value.at({0, 0}) == 0.0);
    CHECK(d->value.at({0, 1}) == 1.0);
    CHECK(d->value.at({1, 0}) == 1.0);

    Tensor x = random_tensor({3, 4}, 71), y = random_tensor({2, 4}, 72);
    check_gradient(
        [&](const Var& v) { return ag::mean_all(ag::pairwise_sqdist(v, ag::constant(y))); }, x);
    check_gradient(
        [&](const Var& v) { return ag::mean_all(ag::pairwise_sqdist(ag::constant(x), v)); }, y);
}

TEST_CASE("global_avg_pool and scale_shift") {
    Tensor x = random_tensor({2, 3, 4, 4}, 81);
    Var g = ag::global_avg_pool(ag::constant(x));
    double manual = 0;
    for (int64_t p = 0; p < 16; ++p) manual += x.at({1, 2, p / 4, p % 4});
    CHECK(g->value.at({1, 2}) == doctest::Approx(manual / 16).epsilon(1e-12));

    check_gradient([&](const Var& v) { return ag::mean_all(ag::global_avg_pool(v)); }, x);

    Tensor scale = random_tensor({2, 3}, 82), shift = random_tensor({2, 3}, 83);
    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(
                ag::scale_shift_nc(v, ag::constant(scale), ag::constant(shift)));
        },
        x);
    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(ag::scale_shift_nc(ag::constant(x), v, ag::constant(shift)));
        },
        scale);
    check_gradient(
        [&](const Var& v) {
            return ag::mean_all(ag::scale_shift_nc(ag::constant(x), ag::constant(scale), v));
        },
        shift);
}

TEST_CASE("mask_weights: straight-through gradient equals FD on the relaxed product") {
    Tensor w = random_tensor({4, 3}, 91);
    // binary scores: the hard and relaxed forwards coincide there
    Tensor scores({4, 3});
    Rng rng(92);
    for (int64_t i = 0; i < scores.numel(); ++i) scores[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
    Tensor downstream = random_tensor({4, 3}, 93);

    auto loss_with = [&](const Var& s, ag::MaskMode mode) {
        return ag::mean_all(ag::mul(ag::mask_weights(w, s, 0.5, mode), ag::constant(downstream)));
    };

    Var s_hard = ag::param(scores);
    ag::backward(loss_with(s_hard, ag::MaskMode::hard));

    double h = 1e-6;
    for (int64_t i = 0; i < scores.numel(); ++i) {
        Tensor plus = scores, minus = scores;
        plus[i] += h;
        minus[i] -= h;
        ag::NoGradGuard ng;
        double fp = loss_with(ag::constant(plus), ag::MaskMode::relaxed)->value[0];
        double fm = loss_with(ag::constant(minus), ag::MaskMode::relaxed)->value[0];
        double numeric = (fp - fm) / (2 * h);
        CHECK(std::fabs(s_hard->grad[i] - numeric) < 1e-6);
    }
}

TEST_CASE("no-grad mode records no graph") {
    Tensor x = random_tensor({2, 2}, 99);
    ag::NoGradGuard ng;
    Var y = ag::mul(ag::param(x), ag::param(x));
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
}

TEST_CASE("gradient accumulation across shared subgraphs") {
    Tensor x({1}, {2.0});
    Var v = ag::param(x);
    Var y = ag::add(ag::mul(v, v), ag::mul_scalar(v, 3.0));  // x^2 + 3x
    ag::backward(y);
    CHECK(v->grad[0] == doctest::Approx(2 * 2.0 + 3.0));
}
