#include "gen/diversity.hpp"

#include <cmath>

#include "core/rng.hpp"

namespace mapkit::gen {

namespace {

constexpr int64_t kTrunkWidth = 24;

ag::Var he_param(std::vector<int64_t> shape, uint64_t seed) {
    int64_t fan_in = shape_numel(shape) / shape[0];
    double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * stddev;
    return ag::param(std::move(t));
}

/// Per-(sample,channel) means of a [N,C,H,W] tensor.
Tensor channel_means(const Tensor& x) {
    const auto& sh = x.shape();
    int64_t hw = sh[2] * sh[3];
    Tensor m({sh[0], sh[1]});
    for (int64_t i = 0; i < sh[0] * sh[1]; ++i) {
        double s = 0.0;
        const double* src = x.data() + i * hw;
        for (int64_t p = 0; p < hw; ++p) s += src[p];
        m[i] = s / static_cast<double>(hw);
    }
    return m;
}

}  // namespace

DiversityGenerator::DiversityGenerator(int64_t channels, int n_dir, uint64_t seed)
    : channels_(channels), n_dir_(n_dir) {
    if (n_dir < 1) throw std::invalid_argument("diversity generator: n_dir must be >= 1");
    t1_w_ = he_param({kTrunkWidth, channels, 3, 3}, Rng::derive(seed, rng_purpose::kInit, 0));
    t1_b_ = ag::param(Tensor({kTrunkWidth}));
    t2_w_ = he_param({kTrunkWidth, kTrunkWidth, 3, 3}, Rng::derive(seed, rng_purpose::kInit, 1));
    t2_b_ = ag::param(Tensor({kTrunkWidth}));
    t3_w_ = he_param({kTrunkWidth, kTrunkWidth, 3, 3}, Rng::derive(seed, rng_purpose::kInit, 2));
    t3_b_ = ag::param(Tensor({kTrunkWidth}));
    head_w_ = ag::param(Tensor({2 * channels, kTrunkWidth}));  // zero init: identity at start
    head_b_ = ag::param(Tensor({2 * channels}));
    theta_mu_ = ag::param(Tensor({channels}, 0.0));
    theta_sigma_ = ag::param(Tensor({channels}, 1.0));
}

ag::Var DiversityGenerator::generate(const ag::Var& x) const {
    const auto& sh = x->value.shape();
    if (sh.size() != 4 || sh[1] != channels_)
        throw std::invalid_argument("diversity generator: expected [N," +
                                    std::to_string(channels_) + ",H,W], got " +
                                    x->value.shape_str());
    int64_t n = sh[0];

    ag::Var h = ag::relu(ag::conv2d(x, t1_w_, t1_b_, 1, 1));
    h = ag::relu(ag::conv2d(h, t2_w_, t2_b_, 1, 1));
    h = ag::relu(ag::conv2d(h, t3_w_, t3_b_, 1, 1));
    ag::Var pooled = ag::global_avg_pool(h);
    ag::Var deltas = ag::linear(pooled, head_w_, head_b_);  // [N, 2C]
    ag::Var d_sigma = ag::slice_cols(deltas, 0, channels_);
    ag::Var d_mu = ag::slice_cols(deltas, channels_, channels_);

    Tensor m = channel_means(x->value);  // input statistics; constants in the graph
    ag::Var m_c = ag::constant(m);
    ag::Var ones = ag::constant(Tensor({n, channels_}, 1.0));
    ag::Var centered = ag::scale_shift_nc(x, ones, ag::neg(m_c));
    ag::Var scale = ag::add(ag::broadcast_to_rows(theta_sigma_, n), d_sigma);
    ag::Var shift = ag::add(ag::add(m_c, ag::broadcast_to_rows(theta_mu_, n)), d_mu);
    return ag::scale_shift_nc(centered, scale, shift);
}

Tensor DiversityGenerator::generate(const Tensor& x) const {
    ag::NoGradGuard ng;
    return generate(ag::constant(x))->value;
}

std::vector<ag::Var> DiversityGenerator::trunk_parameters() const {
    return {t1_w_, t1_b_, t2_w_, t2_b_, t3_w_, t3_b_};
}

std::vector<ag::Var> DiversityGenerator::parameters() const {
    return {t1_w_, t1_b_, t2_w_, t2_b_, t3_w_, t3_b_, head_w_, head_b_, theta_mu_, theta_sigma_};
}

nn::Adam& DiversityGenerator::optimizer(double lr) {
    if (!opt_) opt_ = std::make_unique<nn::Adam>(parameters(), lr);
    opt_->set_lr(lr);
    return *opt_;
}

void DiversityGenerator::freeze_direction(int d) {
    if (d < 0 || d >= n_dir_)
        throw std::out_of_range("freeze_direction: direction " + std::to_string(d) +
                                " outside [0," + std::to_string(n_dir_) + ")");
    nn::Adam& opt = optimizer(1e-4);  // lr is overridden by the caller before stepping
    // Trunk entries are the first six parameters, in (w,b) pairs.
    auto trunk = trunk_parameters();
    for (size_t p = 0; p < trunk.size(); ++p) {
        const auto& shape = trunk[p]->value.shape();
        int64_t out_ch = shape[0];
        int64_t base = out_ch / n_dir_;
        int64_t frozen_rows = base * d;  // remainder lives in the last segment
        if (d == n_dir_) frozen_rows = out_ch;
        Tensor mask(shape, 1.0);
        int64_t per_row = shape_numel(shape) / out_ch;
        for (int64_t r = 0; r < frozen_rows; ++r)
            for (int64_t i = 0; i < per_row; ++i) mask[r * per_row + i] = 0.0;
        opt.set_update_mask(p, std::move(mask));
    }
}

void DiversityGenerator::save_state(Archive& a, const std::string& prefix) const {
    auto ps = parameters();
    for (size_t i = 0; i < ps.size(); ++i)
        a.tensors[prefix + ".w" + std::to_string(i)] = ps[i]->value;
    if (opt_) opt_->save_state(a, prefix + ".opt");
}

void DiversityGenerator::load_state(const Archive& a, const std::string& prefix) {
    auto ps = parameters();
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = a.require(prefix + ".w" + std::to_string(i));
    if (a.meta.contains(prefix + ".opt.t")) optimizer(1e-4).load_state(a, prefix + ".opt");
}

NeighborhoodResult generate_neighborhood(DiversityGenerator& g, const nn::Network& f_s,
                                         const Tensor& x, const std::vector<int64_t>& y,
                                         const losses::ProtectionHyperparams& h,
                                         int steps_per_dir, double lr) {
    const auto& sh = x.shape();
    if (sh.size() != 4 || sh[0] == 0)
        throw std::invalid_argument("generate_neighborhood: empty input batch");
    if (static_cast<int64_t>(y.size()) != sh[0])
        throw std::invalid_argument("generate_neighborhood: label count mismatch");

    // Latents of the originals never change; group them by class once.
    Tensor z_src;
    {
        ag::NoGradGuard ng;
        z_src = f_s.features(ag::constant(x))->value;
    }
    std::map<int64_t, std::vector<int64_t>> by_class;
    for (int64_t i = 0; i < sh[0]; ++i) by_class[y[static_cast<size_t>(i)]].push_back(i);

    NeighborhoodResult result;
    std::vector<ag::Var> batches;
    for (int d = 0; d < g.n_dir(); ++d) {
        g.freeze_direction(d);
        Tensor last;
        for (int step = 0; step < std::max(1, steps_per_dir); ++step) {
            ag::Var x_g = g.generate(ag::constant(x));
            last = x_g->value;
            ag::Var z_gen = f_s.features(x_g);

            ag::Var z_const = ag::constant(z_src);
            ag::Var mi = losses::mi_loss(z_const, z_gen);

            std::map<int64_t, ag::Var> zk, zpk;
            for (const auto& [cls, rows] : by_class) {
                zk[cls] = ag::gather_rows(z_const, rows);
                zpk[cls] = ag::gather_rows(z_gen, rows);
            }
            double sigma = h.sigma_mmd > 0.0 ? h.sigma_mmd
                                             : losses::median_bandwidth(z_src, z_gen->value);
            ag::Var mmd = losses::mmd_semantic_loss(zk, zpk, sigma);

            ag::Var loss = ag::add(mi, mmd);
            if (!std::isfinite(loss->value[0]))
                throw std::runtime_error("diversity generator step produced a non-finite loss");
            result.loss_trace.push_back({mi->value[0], mmd->value[0]});

            nn::Adam& opt = g.optimizer(lr);
            opt.zero_grad();
            ag::backward(loss);
            opt.step();
        }
        batches.push_back(ag::constant(last));
        result.labels.insert(result.labels.end(), y.begin(), y.end());
    }
    ag::NoGradGuard ng;
    result.samples = ag::concat_rows(batches)->value;
    return result;
}

}  // namespace mapkit::gen
