#pragma once

#include <array>
#include <memory>

#include "losses/losses.hpp"
#include "nn/network.hpp"
#include "nn/optimizer.hpp"

namespace mapkit::gen {

/// Style-shift generator for neighborhood domains. A small convolutional
/// trunk predicts per-sample, per-channel statistic deltas; the output is
///   x_g = (x - m) * (theta_sigma + d_sigma) + m + theta_mu + d_mu
/// with m the per-channel mean of x. At theta_mu=0, theta_sigma=1 and
/// zero-initialized heads the transform is the identity. The trunk's output
/// channels are split into n_dir contiguous segments per layer; freezing the
/// first d segments constrains the optimization to one "direction".
class DiversityGenerator {
public:
    DiversityGenerator(int64_t channels, int n_dir, uint64_t seed);

    int n_dir() const { return n_dir_; }
    int64_t channels() const { return channels_; }

    ag::Var generate(const ag::Var& x) const;
    Tensor generate(const Tensor& x) const;

    /// Disables updates for the first d output-channel segments of every
    /// trunk layer (weights and biases). d in [0, n_dir).
    void freeze_direction(int d);

    std::vector<ag::Var> trunk_parameters() const;
    std::vector<ag::Var> parameters() const;
    nn::Adam& optimizer(double lr);

    void save_state(Archive& a, const std::string& prefix) const;
    void load_state(const Archive& a, const std::string& prefix);

private:
    int64_t channels_;
    int n_dir_;
    ag::Var t1_w_, t1_b_, t2_w_, t2_b_, t3_w_, t3_b_;  // trunk convs
    ag::Var head_w_, head_b_;                          // gap -> [2C] deltas (zero init)
    ag::Var theta_mu_, theta_sigma_;                   // [C]
    std::unique_ptr<nn::Adam> opt_;
};

struct NeighborhoodResult {
    Tensor samples;                                // [n_dir * N, C, H, W]
    std::vector<int64_t> labels;                   // inherited from the inputs
    std::vector<std::array<double, 2>> loss_trace; // (mi, mmd) per update step
};

/// One pass of the diversity procedure: for each direction d —
/// freeze_direction(d), then steps_per_dir updates of theta/trunk minimizing
/// mi_loss(g(x), g(x_g)) + class-conditional MMD in the source feature space,
/// appending the last generated batch. Labels transfer from x to x_g.
NeighborhoodResult generate_neighborhood(DiversityGenerator& g, const nn::Network& f_s,
                                         const Tensor& x, const std::vector<int64_t>& y,
                                         const losses::ProtectionHyperparams& h,
                                         int steps_per_dir, double lr);

}  // namespace mapkit::gen
