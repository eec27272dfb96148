#pragma once

#include <memory>

#include "core/rng.hpp"
#include "losses/losses.hpp"
#include "nn/masked.hpp"
#include "nn/network.hpp"
#include "nn/optimizer.hpp"

namespace mapkit::gen {

/// Transposed-convolution stack mapping Gaussian noise to images in [-1,1]
/// (tanh output). Synthesizes "novel featured" pseudo-source samples.
class FreshGenerator {
public:
    FreshGenerator(int64_t noise_dim, std::vector<int64_t> out_shape, uint64_t seed);

    int64_t noise_dim() const { return noise_dim_; }
    const std::vector<int64_t>& out_shape() const { return out_shape_; }

    Tensor make_noise(int64_t n, uint64_t seed) const;
    ag::Var forward(const ag::Var& z) const;
    /// n samples from seeded N(0,1) noise; deterministic, no graph.
    Tensor sample(int64_t n, uint64_t seed) const;

    std::vector<ag::Var> parameters() const;
    nn::Adam& optimizer(double lr);

    void save_state(Archive& a, const std::string& prefix) const;
    void load_state(const Archive& a, const std::string& prefix);

private:
    int64_t noise_dim_;
    std::vector<int64_t> out_shape_;
    ag::Var fc_w_, fc_b_;        // noise -> 64 x (H/4)^2
    ag::Var ct1_w_, ct1_b_;      // 64 -> 32, x2
    ag::Var ct2_w_, ct2_b_;      // 32 -> C, x2
    std::unique_ptr<nn::Adam> opt_;
};

/// Memory generator plus encoder-decoder: G_m replays pseudo-source samples,
/// E_m/D_m reconstruct the concatenated synthetic batch for the replay loss.
class MemoryPair {
public:
    MemoryPair(int64_t noise_dim, std::vector<int64_t> out_shape, uint64_t seed);

    int64_t noise_dim() const { return gen_.noise_dim(); }
    Tensor make_noise(int64_t n, uint64_t seed) const { return gen_.make_noise(n, seed); }
    ag::Var generate(const ag::Var& z) const { return gen_.forward(z); }
    Tensor sample(int64_t n, uint64_t seed) const { return gen_.sample(n, seed); }

    ag::Var encode(const ag::Var& x) const;
    ag::Var decode(const ag::Var& latent) const { return decoder_.forward(latent); }
    /// D_m(E_m(x))
    ag::Var reconstruct(const ag::Var& x) const { return decode(encode(x)); }

    std::vector<ag::Var> parameters() const;
    nn::Adam& optimizer(double lr);

    void save_state(Archive& a, const std::string& prefix) const;
    void load_state(const Archive& a, const std::string& prefix);

private:
    FreshGenerator gen_;      // G_m: same stack shape as the fresh generator
    FreshGenerator decoder_;  // D_m: latent -> image
    ag::Var e1_w_, e1_b_;     // C -> 32, /2
    ag::Var e2_w_, e2_b_;     // 32 -> 64, /2
    ag::Var e3_w_, e3_b_;     // flatten -> latent
    std::unique_ptr<nn::Adam> opt_;
};

/// One fresh-generator update minimizing the fresh loss; f_s and the masked
/// network's base stay untouched (the mask is held fixed for this step).
/// Returns the pre-update loss. Aborts on a non-finite loss.
double train_fresh_step(FreshGenerator& g, const nn::Network& f_s, const nn::MaskedNetwork& f_t,
                        const losses::ProtectionHyperparams& h, const Tensor& z_f, double lr);

/// One memory/encoder/decoder update minimizing the replay loss on
/// x_syn = [x_f ; G_m(z_m)], with gradients flowing through the memory half.
/// Returns the pre-update loss.
double train_memory_step(MemoryPair& g, const nn::Network& f_s, const Tensor& x_f,
                         const Tensor& z_m, const std::vector<int>& layers_l, double lr);

/// n/2 fresh + n/2 memory samples concatenated in that order. n must be even.
Tensor synthesize_pseudo_source(const FreshGenerator& g_f, const MemoryPair& g_m, int64_t n,
                                uint64_t seed);

}  // namespace mapkit::gen
