#pragma once

#include <map>
#include <string>

#include <json.hpp>

namespace mapkit::eval {

/// Accuracy kept as exact counts; percentage is computed at the edge so the
/// drop arithmetic stays rational until the final division.
struct AccCount {
    int64_t correct = 0;
    int64_t total = 0;
    double pct() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) /
                                                       static_cast<double>(total); }
};

using AccuracyMap = std::map<std::string, AccCount>;

/// ST-D with its degenerate case: a zero target drop means no protection was
/// achieved and is reported as a flagged +inf sentinel, never a crash.
struct StD {
    double value = 0.0;
    bool infinite = false;
};

/// (drop_s / acc_s) / (drop_t / acc_t); sign follows the drops.
/// acc_s and acc_t must be positive.
StD st_d(double acc_s, double drop_s, double acc_t, double drop_t);

/// Table-mode helper: ST-D directly from pre-rounded relative drop
/// percentages (cross-checks against published tables).
StD st_d_from_relative(double rel_drop_s_pct, double rel_drop_t_pct);

struct MetricsReport {
    int schema_version = 1;
    std::string mode;
    std::string source_domain;
    std::string target_domain;
    uint64_t seed = 0;
    AccuracyMap acc_original;
    AccuracyMap acc_protected;

    double source_drop_points = 0.0;
    double source_drop_rel_pct = 0.0;
    double target_drop_points = 0.0;
    double target_drop_rel_pct = 0.0;
    StD st_d_metric;

    /// Ownership runs: accuracy gap between the clean source and the
    /// watermarked auxiliary domain under the protected model.
    double avg_drop_points = 0.0;

    nlohmann::json metadata = nlohmann::json::object();

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
    /// Tables-style one-line summary: Source Drop | Target Drop | ST-D.
    std::string summary_table() const;
};

/// Populates drops, relative percentages and ST-D from before/after accuracy
/// maps. Both maps must cover the source and target domain ids.
MetricsReport build_report(const AccuracyMap& before, const AccuracyMap& after,
                           const std::string& source_domain, const std::string& target_domain,
                           const std::string& mode, uint64_t seed,
                           nlohmann::json metadata = nlohmann::json::object());

}  // namespace mapkit::eval
