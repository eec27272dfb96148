#include "pipe/config.hpp"

#include <set>

namespace mapkit::pipe {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
}

}  // namespace

void apply_override(nlohmann::json& j, const std::string& dotted) {
    auto eq = dotted.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override '" + dotted + "' is not of the form key=value");
    std::string path = dotted.substr(0, eq);
    std::string value = dotted.substr(eq + 1);

    nlohmann::json* cur = &j;
    size_t pos = 0;
    while (true) {
        size_t dot = path.find('.', pos);
        std::string key = path.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (key.empty()) throw std::invalid_argument("override '" + dotted + "' has an empty key");
        if (dot == std::string::npos) {
            nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
            (*cur)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
            return;
        }
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

ExperimentConfig ExperimentConfig::from_json(nlohmann::json j,
                                             const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) apply_override(j, o);

    check_keys(j, {"mode", "source", "target", "network", "hparams", "optim", "data",
                   "watermark", "feature_layers", "steps_per_dir", "seed", "out_dir",
                   "source_checkpoint", "resume", "accuracy_floor"},
               "config");

    ExperimentConfig c;
    if (!j.contains("mode")) throw std::invalid_argument("config: missing required key 'mode'");
    c.mode = j["mode"].get<std::string>();
    c.source = j.value("source", "");
    c.target = j.value("target", "");
    c.seed = j.value("seed", 0);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.source_checkpoint = j.value("source_checkpoint", "");
    c.resume = j.value("resume", "");
    c.accuracy_floor = j.value("accuracy_floor", c.accuracy_floor);
    c.steps_per_dir = j.value("steps_per_dir", c.steps_per_dir);
    if (j.contains("feature_layers")) c.feature_layers = j["feature_layers"].get<std::vector<int>>();

    if (j.contains("hparams")) {
        check_keys(j["hparams"],
                   {"lambda", "alpha", "beta", "gamma", "delta", "lambda1", "lambda2", "epsilon",
                    "n_aug", "n_dir", "sigma_mmd"},
                   "hparams");
        c.hparams = losses::ProtectionHyperparams::from_json(j["hparams"]);
    }
    if (j.contains("optim")) {
        check_keys(j["optim"],
                   {"lr", "lr_mask", "batch_size", "steps", "pretrain_epochs",
                    "early_stop_window", "early_stop_tol"},
                   "optim");
        const auto& o = j["optim"];
        c.optim.lr = o.value("lr", c.optim.lr);
        c.optim.lr_mask = o.value("lr_mask", c.optim.lr_mask);
        c.optim.batch_size = o.value("batch_size", c.optim.batch_size);
        c.optim.steps = o.value("steps", c.optim.steps);
        c.optim.pretrain_epochs = o.value("pretrain_epochs", c.optim.pretrain_epochs);
        c.optim.early_stop_window = o.value("early_stop_window", c.optim.early_stop_window);
        c.optim.early_stop_tol = o.value("early_stop_tol", c.optim.early_stop_tol);
    }
    if (j.contains("data")) {
        check_keys(j["data"], {"limit_train", "limit_test", "cache_dir"}, "data");
        const auto& d = j["data"];
        c.data.limit_train = d.value("limit_train", c.data.limit_train);
        c.data.limit_test = d.value("limit_test", c.data.limit_test);
        c.data.cache_dir = d.value("cache_dir", c.data.cache_dir);
    }
    if (j.contains("watermark")) c.watermark = data::WatermarkSpec::from_json(j["watermark"]);

    if (j.contains("network")) {
        c.network = nn::NetworkSpec::from_json(j["network"]);
        c.network_explicit = true;
    } else {
        // color domains carry 3 channels; everything else in the digit
        // catalog is grayscale
        bool color = c.source.ends_with("+color") || c.target.ends_with("+color") ||
                     (c.mode == "df" && c.target.empty());
        c.network = nn::NetworkSpec::digit_cnn(color ? 3 : 1, 28);
    }

    c.validate();
    return c;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["mode"] = mode;
    j["source"] = source;
    if (!target.empty()) j["target"] = target;
    j["network"] = network.to_json();
    j["hparams"] = hparams.to_json();
    j["optim"] = {{"lr", optim.lr},
                  {"lr_mask", optim.lr_mask},
                  {"batch_size", optim.batch_size},
                  {"steps", optim.steps},
                  {"pretrain_epochs", optim.pretrain_epochs},
                  {"early_stop_window", optim.early_stop_window},
                  {"early_stop_tol", optim.early_stop_tol}};
    j["data"] = {{"limit_train", data.limit_train},
                 {"limit_test", data.limit_test},
                 {"cache_dir", data.cache_dir}};
    j["watermark"] = watermark.to_json();
    j["feature_layers"] = feature_layers;
    j["steps_per_dir"] = steps_per_dir;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["source_checkpoint"] = source_checkpoint;
    j["resume"] = resume;
    j["accuracy_floor"] = accuracy_floor;
    return j;
}

std::string ExperimentConfig::effective_target() const {
    if (!target.empty()) return target;
    return source + "+color";
}

void ExperimentConfig::validate() const {
    static const std::set<std::string> kModes = {"pretrain", "sa", "sf", "df", "ownership"};
    if (!kModes.count(mode))
        throw std::invalid_argument("config: mode must be one of pretrain/sa/sf/df/ownership, "
                                    "got '" + mode + "'");
    if (source.empty()) throw std::invalid_argument("config: source domain is required");
    if ((mode == "sa" || mode == "sf") && target.empty())
        throw std::invalid_argument("config: mode '" + mode + "' requires a target domain");
    if (mode != "pretrain" && source_checkpoint.empty())
        throw std::invalid_argument("config: mode '" + mode +
                                    "' requires source_checkpoint (run pretrain first)");
    hparams.validate();
    watermark.validate();
    network.validate();
    if (!(optim.lr > 0.0)) throw std::invalid_argument("optim.lr: must be > 0");
    if (optim.lr_mask < 0.0) throw std::invalid_argument("optim.lr_mask: must be >= 0");
    if (optim.batch_size < 2) throw std::invalid_argument("optim.batch_size: must be >= 2");
    if (optim.batch_size % 2 != 0)
        throw std::invalid_argument("optim.batch_size: must be even (1:1 pseudo-source split)");
    if (optim.steps < 0) throw std::invalid_argument("optim.steps: must be >= 0");
    if (optim.pretrain_epochs < 1) throw std::invalid_argument("optim.pretrain_epochs: must be >= 1");
    if (optim.early_stop_window < 1)
        throw std::invalid_argument("optim.early_stop_window: must be >= 1");
    if (data.limit_train < 0 || data.limit_test < 0)
        throw std::invalid_argument("data.limit_train/limit_test: must be >= 0");
    if (feature_layers.empty())
        throw std::invalid_argument("feature_layers: must name at least one layer");
    if (steps_per_dir < 1) throw std::invalid_argument("steps_per_dir: must be >= 1");
}

}  // namespace mapkit::pipe
