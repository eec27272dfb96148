#include "mapkit.h"

#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "eval/metrics.hpp"
#include "pipe/pipelines.hpp"

using namespace mapkit;

struct mapkit_config {
    pipe::ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error = "ok";

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void write_failed_marker(const pipe::ExperimentConfig& cfg, const std::string& why) {
    try {
        std::filesystem::create_directories(cfg.out_dir);
        std::ofstream f(std::filesystem::path(cfg.out_dir) / "FAILED", std::ios::trunc);
        f << why << "\n";
    } catch (...) {
        // the marker is best-effort; the error code already reports failure
    }
}

/// Runs `fn`, translating exceptions into status codes + the thread-local
/// error message. std::invalid_argument maps to the config error code.
template <typename Fn>
mapkit_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error = "ok";
        return MAPKIT_OK;
    } catch (const std::invalid_argument& e) {
        g_last_error = e.what();
        return MAPKIT_ERR_CONFIG;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MAPKIT_ERR_RUN;
    } catch (...) {
        g_last_error = "unknown error";
        return MAPKIT_ERR_RUN;
    }
}

}  // namespace

extern "C" {

const char* mapkit_version(void) { return "0.1.0"; }

const char* mapkit_last_error(void) { return g_last_error.c_str(); }

void mapkit_string_free(char* s) { std::free(s); }

mapkit_status mapkit_config_parse(const char* json_text, const char* const* overrides,
                                  int n_overrides, mapkit_config** out) {
    if (!json_text || !out) {
        g_last_error = "config_parse: null argument";
        return MAPKIT_ERR_CONFIG;
    }
    *out = nullptr;
    return guarded([&] {
        nlohmann::json j = nlohmann::json::parse(json_text, nullptr, false);
        if (j.is_discarded()) throw std::invalid_argument("config: invalid JSON");
        std::vector<std::string> ov;
        for (int i = 0; i < n_overrides; ++i) ov.emplace_back(overrides[i]);
        auto cfg = pipe::ExperimentConfig::from_json(std::move(j), ov);
        *out = new mapkit_config{std::move(cfg)};
    });
}

void mapkit_config_free(mapkit_config* cfg) { delete cfg; }

mapkit_status mapkit_config_dump(const mapkit_config* cfg, char** json_out) {
    if (!cfg || !json_out) {
        g_last_error = "config_dump: null argument";
        return MAPKIT_ERR_CONFIG;
    }
    return guarded([&] { *json_out = dup_string(cfg->cfg.to_json().dump(2)); });
}

mapkit_status mapkit_pretrain(const mapkit_config* cfg, char** result_json) {
    if (!cfg) {
        g_last_error = "pretrain: null config";
        return MAPKIT_ERR_CONFIG;
    }
    mapkit_status st = guarded([&] {
        if (cfg->cfg.mode != "pretrain")
            throw std::invalid_argument("pretrain: config mode must be 'pretrain', got '" +
                                        cfg->cfg.mode + "'");
        nn::Checkpoint ckpt = pipe::pretrain_source(cfg->cfg);
        if (result_json) *result_json = dup_string(ckpt.meta.dump(2));
    });
    if (st == MAPKIT_ERR_RUN) write_failed_marker(cfg->cfg, g_last_error);
    return st;
}

mapkit_status mapkit_protect(const mapkit_config* cfg, char** metrics_json) {
    if (!cfg) {
        g_last_error = "protect: null config";
        return MAPKIT_ERR_CONFIG;
    }
    mapkit_status st = guarded([&] {
        pipe::RunResult r = pipe::run_protect(cfg->cfg);
        if (metrics_json) *metrics_json = dup_string(r.report.to_json().dump(2));
    });
    if (st == MAPKIT_ERR_RUN) write_failed_marker(cfg->cfg, g_last_error);
    return st;
}

mapkit_status mapkit_verify_ownership(const mapkit_config* cfg, char** metrics_json) {
    if (!cfg) {
        g_last_error = "verify_ownership: null config";
        return MAPKIT_ERR_CONFIG;
    }
    mapkit_status st = guarded([&] {
        pipe::RunResult r = pipe::run_ownership(cfg->cfg);
        if (metrics_json) *metrics_json = dup_string(r.report.to_json().dump(2));
    });
    if (st == MAPKIT_ERR_RUN) write_failed_marker(cfg->cfg, g_last_error);
    return st;
}

mapkit_status mapkit_evaluate(const mapkit_config* cfg, const char* mask_path,
                              char** result_json) {
    if (!cfg) {
        g_last_error = "evaluate: null config";
        return MAPKIT_ERR_CONFIG;
    }
    return guarded([&] {
        const auto& c = cfg->cfg;
        nn::Checkpoint ckpt = nn::Checkpoint::load(c.source_checkpoint);
        nn::MaskedNetwork masked(ckpt, c.network);
        if (mask_path && *mask_path) masked.load_mask(nn::Checkpoint::load(mask_path));

        std::vector<data::DomainDataset> domains;
        domains.push_back(pipe::adapt_channels(
            data::load_domain(c.source, "test", c.data.limit_test, c.data.cache_dir), c.network));
        if (!c.target.empty())
            domains.push_back(pipe::adapt_channels(
                data::load_domain(c.target, "test", c.data.limit_test, c.data.cache_dir),
                c.network));
        eval::AccuracyMap acc = pipe::evaluate_model(masked, domains);

        nlohmann::json j;
        for (const auto& [dom, a] : acc)
            j[dom] = {{"correct", a.correct}, {"total", a.total}, {"pct", a.pct()}};
        j["sparsity"] = masked.sparsity();
        if (result_json) *result_json = dup_string(j.dump(2));
    });
}

mapkit_status mapkit_report(const char* const* run_dirs, int n_dirs, char** table_out) {
    if (!run_dirs || n_dirs <= 0 || !table_out) {
        g_last_error = "report: need at least one run directory";
        return MAPKIT_ERR_CONFIG;
    }
    return guarded([&] {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os << "Run | Mode | Source Drop | Target Drop | ST-D\n";
        os << "----+------+-------------+-------------+------\n";
        for (int i = 0; i < n_dirs; ++i) {
            std::filesystem::path p = std::filesystem::path(run_dirs[i]) / "metrics.json";
            std::ifstream f(p);
            if (!f) throw std::runtime_error("no metrics.json under " + std::string(run_dirs[i]));
            nlohmann::json j = nlohmann::json::parse(f);
            auto r = eval::MetricsReport::from_json(j);
            os.precision(1);
            os << run_dirs[i] << " | " << r.mode << " | " << r.source_drop_points << " ("
               << r.source_drop_rel_pct << "%) | " << r.target_drop_points << " ("
               << r.target_drop_rel_pct << "%) | ";
            os.precision(3);
            if (r.st_d_metric.infinite)
                os << "inf";
            else
                os << r.st_d_metric.value;
            os << "\n";
        }
        *table_out = dup_string(os.str());
    });
}

mapkit_status mapkit_st_d(double acc_s, double drop_s, double acc_t, double drop_t, double* out,
                          int* is_infinite) {
    if (!out) {
        g_last_error = "st_d: null output";
        return MAPKIT_ERR_CONFIG;
    }
    return guarded([&] {
        eval::StD v = eval::st_d(acc_s, drop_s, acc_t, drop_t);
        *out = v.value;
        if (is_infinite) *is_infinite = v.infinite ? 1 : 0;
    });
}

}  // extern "C"
