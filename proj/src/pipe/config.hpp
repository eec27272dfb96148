#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "data/watermark.hpp"
#include "losses/losses.hpp"
#include "nn/network.hpp"

namespace mapkit::pipe {

struct OptimSettings {
    double lr = 1e-4;      // reference learning rate (pretraining, generators)
    double lr_mask = 0.0;  // mask-score learning rate; 0 means "use lr"
    int64_t batch_size = 32;
    int64_t steps = 2000;  // mask update budget for protect/ownership modes
    int64_t pretrain_epochs = 4;
    int64_t early_stop_window = 200;
    double early_stop_tol = 1e-4;

    double mask_lr() const { return lr_mask > 0.0 ? lr_mask : lr; }
};

struct DataSettings {
    int64_t limit_train = 8000;
    int64_t limit_test = 2000;
    std::string cache_dir;  // empty: $MAPKIT_DATA_DIR or ./data
};

/// One experiment, fully described. Serializes to/from the config JSON the
/// CLI consumes; unknown keys are rejected at parse time.
struct ExperimentConfig {
    std::string mode;  // pretrain | sa | sf | df | ownership
    std::string source;
    std::string target;  // required for sa/sf; evaluation-only for df
    nn::NetworkSpec network;
    bool network_explicit = false;
    losses::ProtectionHyperparams hparams;
    OptimSettings optim;
    DataSettings data;
    data::WatermarkSpec watermark = data::WatermarkSpec::checkerboard();
    std::vector<int> feature_layers = {8, 10};  // memory-loss taps into f_s
    int steps_per_dir = 10;                     // diversity updates per direction
    uint64_t seed = 0;
    std::string out_dir = "runs/run";
    std::string source_checkpoint;
    std::string resume;            // optional train-state archive
    double accuracy_floor = 0.90;  // pretrain warning threshold

    /// Parses, applies dotted-key overrides ("hparams.lambda=0.2"), fills
    /// defaults and validates. Throws std::invalid_argument with the field
    /// name and constraint on any violation.
    static ExperimentConfig from_json(nlohmann::json j,
                                      const std::vector<std::string>& overrides = {});
    nlohmann::json to_json() const;
    void validate() const;

    /// The target domain evaluated by df runs ("<source>+color" by default).
    std::string effective_target() const;
};

/// Applies "a.b.c=value" into a JSON document (value parsed as JSON when
/// possible, else taken as a string).
void apply_override(nlohmann::json& j, const std::string& dotted);

}  // namespace mapkit::pipe
