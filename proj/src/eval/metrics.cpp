#include "eval/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mapkit::eval {

StD st_d(double acc_s, double drop_s, double acc_t, double drop_t) {
    if (!(acc_s > 0.0) || !(acc_t > 0.0))
        throw std::invalid_argument("st_d: accuracies must be positive");
    if (drop_t == 0.0) {
        if (drop_s == 0.0) return {0.0, false};  // no drops anywhere
        return {std::numeric_limits<double>::infinity(), true};
    }
    return {(drop_s / acc_s) / (drop_t / acc_t), false};
}

StD st_d_from_relative(double rel_drop_s_pct, double rel_drop_t_pct) {
    if (rel_drop_t_pct == 0.0) {
        if (rel_drop_s_pct == 0.0) return {0.0, false};
        return {std::numeric_limits<double>::infinity(), true};
    }
    return {rel_drop_s_pct / rel_drop_t_pct, false};
}

namespace {

nlohmann::json acc_map_to_json(const AccuracyMap& m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m)
        j[k] = {{"correct", v.correct}, {"total", v.total}, {"pct", v.pct()}};
    return j;
}

AccuracyMap acc_map_from_json(const nlohmann::json& j) {
    AccuracyMap m;
    for (auto it = j.begin(); it != j.end(); ++it)
        m[it.key()] = {it.value().at("correct").get<int64_t>(),
                       it.value().at("total").get<int64_t>()};
    return m;
}

/// 100 * (c1/t1 - c2/t2), keeping the numerator in exact integers.
double drop_points(const AccCount& before, const AccCount& after) {
    if (before.total == 0 || after.total == 0) return 0.0;
    long double num = 100.0L * static_cast<long double>(before.correct * after.total -
                                                        after.correct * before.total);
    return static_cast<double>(num / static_cast<long double>(before.total * after.total));
}

/// 100 * drop / acc_before == 100 * (c1 t2 - c2 t1) / (c1 t2), exact integers
/// until the final division.
double drop_relative_pct(const AccCount& before, const AccCount& after) {
    if (before.correct == 0) return 0.0;
    long double num =
        100.0L * static_cast<long double>(before.correct * after.total - after.correct * before.total);
    return static_cast<double>(num / static_cast<long double>(before.correct * after.total));
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["schema_version"] = schema_version;
    j["mode"] = mode;
    j["source_domain"] = source_domain;
    j["target_domain"] = target_domain;
    j["seed"] = seed;
    j["acc_original"] = acc_map_to_json(acc_original);
    j["acc_protected"] = acc_map_to_json(acc_protected);
    j["source_drop_points"] = source_drop_points;
    j["source_drop_rel_pct"] = source_drop_rel_pct;
    j["target_drop_points"] = target_drop_points;
    j["target_drop_rel_pct"] = target_drop_rel_pct;
    if (st_d_metric.infinite) {
        j["st_d"] = nullptr;
        j["st_d_infinite"] = true;
    } else {
        j["st_d"] = st_d_metric.value;
        j["st_d_infinite"] = false;
    }
    j["avg_drop_points"] = avg_drop_points;
    j["metadata"] = metadata;
    return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.schema_version = j.at("schema_version").get<int>();
    r.mode = j.at("mode").get<std::string>();
    r.source_domain = j.at("source_domain").get<std::string>();
    r.target_domain = j.at("target_domain").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.acc_original = acc_map_from_json(j.at("acc_original"));
    r.acc_protected = acc_map_from_json(j.at("acc_protected"));
    r.source_drop_points = j.at("source_drop_points").get<double>();
    r.source_drop_rel_pct = j.at("source_drop_rel_pct").get<double>();
    r.target_drop_points = j.at("target_drop_points").get<double>();
    r.target_drop_rel_pct = j.at("target_drop_rel_pct").get<double>();
    r.st_d_metric.infinite = j.at("st_d_infinite").get<bool>();
    r.st_d_metric.value = r.st_d_metric.infinite ? std::numeric_limits<double>::infinity()
                                                 : j.at("st_d").get<double>();
    r.avg_drop_points = j.value("avg_drop_points", 0.0);
    r.metadata = j.value("metadata", nlohmann::json::object());
    return r;
}

std::string MetricsReport::summary_table() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(1);
    os << "Method | Source Drop | Target Drop | ST-D\n";
    os << "-------+-------------+-------------+------\n";
    os << mode << "-map | " << source_drop_points << " (" << source_drop_rel_pct << "%) | "
       << target_drop_points << " (" << target_drop_rel_pct << "%) | ";
    os.precision(3);
    if (st_d_metric.infinite)
        os << "inf (no target drop)";
    else
        os << st_d_metric.value;
    os << "\n";
    return os.str();
}

MetricsReport build_report(const AccuracyMap& before, const AccuracyMap& after,
                           const std::string& source_domain, const std::string& target_domain,
                           const std::string& mode, uint64_t seed, nlohmann::json metadata) {
    for (const auto* m : {&before, &after})
        for (const auto& id : {source_domain, target_domain})
            if (!m->count(id))
                throw std::invalid_argument("build_report: accuracy map missing domain '" + id +
                                            "'");
    MetricsReport r;
    r.mode = mode;
    r.source_domain = source_domain;
    r.target_domain = target_domain;
    r.seed = seed;
    r.acc_original = before;
    r.acc_protected = after;
    r.metadata = std::move(metadata);

    const AccCount &sb = before.at(source_domain), &sa = after.at(source_domain);
    const AccCount &tb = before.at(target_domain), &ta = after.at(target_domain);
    r.source_drop_points = drop_points(sb, sa);
    r.source_drop_rel_pct = drop_relative_pct(sb, sa);
    r.target_drop_points = drop_points(tb, ta);
    r.target_drop_rel_pct = drop_relative_pct(tb, ta);
    r.st_d_metric = st_d(sb.pct(), r.source_drop_points, tb.pct(), r.target_drop_points);
    r.avg_drop_points = sa.pct() - ta.pct();
    return r;
}

}  // namespace mapkit::eval
