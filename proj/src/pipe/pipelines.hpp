#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "data/dataset.hpp"
#include "eval/metrics.hpp"
#include "nn/masked.hpp"
#include "nn/optimizer.hpp"
#include "pipe/config.hpp"

namespace mapkit::pipe {

/// Datasets for one experiment. Pipelines normally load this from the catalog
/// themselves; tests inject pre-built bundles to observe access counters.
struct DataBundle {
    data::DomainDataset src_train, src_test;
    data::DomainDataset tgt_train, tgt_test;  // df: evaluation only
};

DataBundle load_bundle(const ExperimentConfig& cfg);
/// Replicates grayscale datasets up to the network's input channel count.
data::DomainDataset adapt_channels(const data::DomainDataset& d, const nn::NetworkSpec& spec);

struct RunResult {
    eval::MetricsReport report;
    std::filesystem::path run_dir;
    /// Update kinds in execution order ("fresh"/"memory"/"mask"), for loop-
    /// order conformance checks.
    std::vector<std::string> update_trace;
    double final_sparsity = 0.0;
};

/// Supervised training of the source network; emits model.ckpt under
/// cfg.out_dir with test accuracy in the metadata (plus a warning flag when
/// it lands under cfg.accuracy_floor).
nn::Checkpoint pretrain_source(const ExperimentConfig& cfg, const DataBundle* pre = nullptr);

RunResult run_sa_map(const ExperimentConfig& cfg, const DataBundle* pre = nullptr);
RunResult run_sf_map(const ExperimentConfig& cfg, const DataBundle* pre = nullptr);
RunResult run_df_map(const ExperimentConfig& cfg, const DataBundle* pre = nullptr);
RunResult run_ownership(const ExperimentConfig& cfg, const DataBundle* pre = nullptr);

RunResult run_protect(const ExperimentConfig& cfg, const DataBundle* pre = nullptr);

/// Top-1 accuracy per domain id (counts, not percentages). Every domain must
/// be labeled.
eval::AccuracyMap evaluate_model(const nn::MaskedNetwork& m,
                                 const std::vector<data::DomainDataset>& domains,
                                 int64_t batch_size = 256);
eval::AccuracyMap evaluate_network(const nn::Network& net,
                                   const std::vector<data::DomainDataset>& domains,
                                   int64_t batch_size = 256);

/// Deterministic sample order for one epoch (Fisher-Yates over a derived
/// stream; pure function of its arguments).
std::vector<int64_t> epoch_order(int64_t n, uint64_t seed, uint64_t epoch);

/// Mask-score training loop state: Adam moments, loss window and step count.
/// save/load make checkpoint-resume reproduce an uninterrupted run bit-for-bit
/// (all per-step randomness derives from (seed, step), never live RNG state).
class MaskTrainer {
public:
    MaskTrainer(nn::MaskedNetwork& net, double lr);

    /// zero grads -> backward(loss_fn()) -> Adam step; returns the loss.
    double step(const std::function<ag::Var()>& loss_fn);
    int64_t steps_done() const { return steps_done_; }
    bool should_early_stop(int64_t window, double tol) const;
    const std::vector<double>& loss_history() const { return history_; }

    void save(Archive& a) const;
    void load(const Archive& a);

private:
    nn::MaskedNetwork& net_;
    nn::Adam opt_;
    std::vector<double> history_;
    int64_t steps_done_ = 0;
};

}  // namespace mapkit::pipe
