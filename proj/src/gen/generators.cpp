#include "gen/generators.hpp"

#include <cmath>

namespace mapkit::gen {

namespace {

ag::Var make_param(std::vector<int64_t> shape, uint64_t seed, double fan_in_scale = 2.0) {
    int64_t fan_in = shape_numel(shape) / shape[0];
    double stddev = std::sqrt(fan_in_scale / static_cast<double>(fan_in));
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * stddev;
    return ag::param(std::move(t));
}

void check_gen_shape(const std::vector<int64_t>& out_shape) {
    if (out_shape.size() != 3)
        throw std::invalid_argument("generator output shape must be [C,H,W]");
    if (out_shape[1] != out_shape[2] || out_shape[1] % 4 != 0)
        throw std::invalid_argument("generator needs square images with size divisible by 4, got " +
                                    shape_to_string(out_shape));
}

}  // namespace

// -------------------------------------------------------------- FreshGenerator

FreshGenerator::FreshGenerator(int64_t noise_dim, std::vector<int64_t> out_shape, uint64_t seed)
    : noise_dim_(noise_dim), out_shape_(std::move(out_shape)) {
    check_gen_shape(out_shape_);
    int64_t base = out_shape_[1] / 4;
    fc_w_ = make_param({64 * base * base, noise_dim_}, Rng::derive(seed, rng_purpose::kInit, 0));
    fc_b_ = ag::param(Tensor({64 * base * base}));
    ct1_w_ = make_param({64, 32, 4, 4}, Rng::derive(seed, rng_purpose::kInit, 1));
    ct1_b_ = ag::param(Tensor({32}));
    ct2_w_ = make_param({32, out_shape_[0], 4, 4}, Rng::derive(seed, rng_purpose::kInit, 2));
    ct2_b_ = ag::param(Tensor({out_shape_[0]}));
}

Tensor FreshGenerator::make_noise(int64_t n, uint64_t seed) const {
    Rng rng(Rng::derive(seed, rng_purpose::kNoise));
    Tensor z({n, noise_dim_});
    for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.normal();
    return z;
}

ag::Var FreshGenerator::forward(const ag::Var& z) const {
    int64_t n = z->value.shape().at(0);
    int64_t base = out_shape_[1] / 4;
    ag::Var h = ag::linear(z, fc_w_, fc_b_);
    h = ag::relu(ag::reshape(h, {n, 64, base, base}));
    h = ag::relu(ag::conv_transpose2d(h, ct1_w_, ct1_b_, 2, 1));
    return ag::tanh_op(ag::conv_transpose2d(h, ct2_w_, ct2_b_, 2, 1));
}

Tensor FreshGenerator::sample(int64_t n, uint64_t seed) const {
    ag::NoGradGuard ng;
    return forward(ag::constant(make_noise(n, seed)))->value;
}

std::vector<ag::Var> FreshGenerator::parameters() const {
    return {fc_w_, fc_b_, ct1_w_, ct1_b_, ct2_w_, ct2_b_};
}

nn::Adam& FreshGenerator::optimizer(double lr) {
    if (!opt_) opt_ = std::make_unique<nn::Adam>(parameters(), lr);
    opt_->set_lr(lr);
    return *opt_;
}

void FreshGenerator::save_state(Archive& a, const std::string& prefix) const {
    auto ps = parameters();
    for (size_t i = 0; i < ps.size(); ++i)
        a.tensors[prefix + ".w" + std::to_string(i)] = ps[i]->value;
    if (opt_) opt_->save_state(a, prefix + ".opt");
}

void FreshGenerator::load_state(const Archive& a, const std::string& prefix) {
    auto ps = parameters();
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = a.require(prefix + ".w" + std::to_string(i));
    if (a.meta.contains(prefix + ".opt.t")) optimizer(1e-4).load_state(a, prefix + ".opt");
}

// ------------------------------------------------------------------ MemoryPair

MemoryPair::MemoryPair(int64_t noise_dim, std::vector<int64_t> out_shape, uint64_t seed)
    : gen_(noise_dim, out_shape, Rng::mix(seed, 0xa1)),
      decoder_(noise_dim, out_shape, Rng::mix(seed, 0xa2)) {
    int64_t c = out_shape[0], quarter = out_shape[1] / 4;
    e1_w_ = make_param({32, c, 4, 4}, Rng::derive(seed, rng_purpose::kInit, 10));
    e1_b_ = ag::param(Tensor({32}));
    e2_w_ = make_param({64, 32, 4, 4}, Rng::derive(seed, rng_purpose::kInit, 11));
    e2_b_ = ag::param(Tensor({64}));
    e3_w_ = make_param({noise_dim, 64 * quarter * quarter},
                       Rng::derive(seed, rng_purpose::kInit, 12));
    e3_b_ = ag::param(Tensor({noise_dim}));
}

ag::Var MemoryPair::encode(const ag::Var& x) const {
    ag::Var h = ag::relu(ag::conv2d(x, e1_w_, e1_b_, 2, 1));
    h = ag::relu(ag::conv2d(h, e2_w_, e2_b_, 2, 1));
    int64_t n = h->value.shape().at(0);
    h = ag::reshape(h, {n, h->value.numel() / n});
    return ag::linear(h, e3_w_, e3_b_);
}

std::vector<ag::Var> MemoryPair::parameters() const {
    std::vector<ag::Var> ps = gen_.parameters();
    auto dec = decoder_.parameters();
    ps.insert(ps.end(), dec.begin(), dec.end());
    ps.insert(ps.end(), {e1_w_, e1_b_, e2_w_, e2_b_, e3_w_, e3_b_});
    return ps;
}

nn::Adam& MemoryPair::optimizer(double lr) {
    if (!opt_) opt_ = std::make_unique<nn::Adam>(parameters(), lr);
    opt_->set_lr(lr);
    return *opt_;
}

void MemoryPair::save_state(Archive& a, const std::string& prefix) const {
    auto ps = parameters();
    for (size_t i = 0; i < ps.size(); ++i)
        a.tensors[prefix + ".w" + std::to_string(i)] = ps[i]->value;
    if (opt_) opt_->save_state(a, prefix + ".opt");
}

void MemoryPair::load_state(const Archive& a, const std::string& prefix) {
    auto ps = parameters();
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = a.require(prefix + ".w" + std::to_string(i));
    if (a.meta.contains(prefix + ".opt.t")) optimizer(1e-4).load_state(a, prefix + ".opt");
}

// ----------------------------------------------------------------- train steps

double train_fresh_step(FreshGenerator& g, const nn::Network& f_s, const nn::MaskedNetwork& f_t,
                        const losses::ProtectionHyperparams& h, const Tensor& z_f, double lr) {
    ag::Var x_f = g.forward(ag::constant(z_f));
    losses::ProbBatch p_s = losses::probs_from_logits(f_s.forward(x_f), h.epsilon);
    losses::ProbBatch p_t =
        losses::probs_from_logits(f_t.forward_frozen(x_f), h.epsilon);
    ag::Var loss = losses::fresh_loss(p_s, p_t, h);
    double val = loss->value[0];
    if (!std::isfinite(val))
        throw std::runtime_error("fresh generator step produced a non-finite loss");
    nn::Adam& opt = g.optimizer(lr);
    opt.zero_grad();
    ag::backward(loss);
    opt.step();
    return val;
}

double train_memory_step(MemoryPair& g, const nn::Network& f_s, const Tensor& x_f,
                         const Tensor& z_m, const std::vector<int>& layers_l, double lr) {
    ag::Var x_m = g.generate(ag::constant(z_m));
    ag::Var x_syn = ag::concat_rows({ag::constant(x_f), x_m});
    ag::Var x_re = g.reconstruct(x_syn);
    ag::Var loss = losses::memory_loss(x_syn, x_re, f_s, layers_l);
    double val = loss->value[0];
    if (!std::isfinite(val))
        throw std::runtime_error("memory generator step produced a non-finite loss");
    nn::Adam& opt = g.optimizer(lr);
    opt.zero_grad();
    ag::backward(loss);
    opt.step();
    return val;
}

Tensor synthesize_pseudo_source(const FreshGenerator& g_f, const MemoryPair& g_m, int64_t n,
                                uint64_t seed) {
    if (n <= 0 || n % 2 != 0)
        throw std::invalid_argument("synthesize_pseudo_source: n must be a positive even count "
                                    "(1:1 fresh/memory split), got " + std::to_string(n));
    Tensor fresh = g_f.sample(n / 2, Rng::mix(seed, 0xf));
    Tensor memory = g_m.sample(n / 2, Rng::mix(seed, 0x3));
    ag::NoGradGuard ng;
    return ag::concat_rows({ag::constant(fresh), ag::constant(memory)})->value;
}

}  // namespace mapkit::gen
