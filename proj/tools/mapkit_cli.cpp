// Command-line front end. Everything goes through the C API in mapkit.h; the
// only extras here are argument parsing and table formatting.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mapkit.h"

namespace {

int fail(mapkit_status st) {
    std::cerr << "error: " << mapkit_last_error() << "\n";
    return static_cast<int>(st);
}

struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string seed;
    std::string out_dir;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config JSON")->required();
    cmd->add_option("--set", args.sets, "override, dotted-key=value (repeatable)");
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--out", args.out_dir, "override the output directory");
}

mapkit_status parse_config(const ConfigArgs& args, mapkit_config** out) {
    std::ifstream f(args.config_path);
    if (!f) {
        std::cerr << "error: cannot open config '" << args.config_path << "'\n";
        return MAPKIT_ERR_CONFIG;
    }
    std::stringstream ss;
    ss << f.rdbuf();
    std::string text = ss.str();

    std::vector<std::string> sets = args.sets;
    if (!args.seed.empty()) sets.push_back("seed=" + args.seed);
    if (!args.out_dir.empty()) sets.push_back("out_dir=\"" + args.out_dir + "\"");
    std::vector<const char*> ov;
    for (const auto& s : sets) ov.push_back(s.c_str());
    return mapkit_config_parse(text.c_str(), ov.data(), static_cast<int>(ov.size()), out);
}

/// Summary in the published-table column style. Values are re-printed from
/// the JSON tokens so stdout equals metrics.json exactly.
void print_summary(const std::string& metrics_json) {
    nlohmann::json j = nlohmann::json::parse(metrics_json);
    std::cout << "mode=" << j["mode"].get<std::string>() << " source="
              << j["source_domain"].get<std::string>() << " target="
              << j["target_domain"].get<std::string>() << "\n";
    std::cout << "Source Drop | Target Drop | ST-D\n";
    std::cout << j["source_drop_points"].dump() << " (" << j["source_drop_rel_pct"].dump()
              << "%) | " << j["target_drop_points"].dump() << " ("
              << j["target_drop_rel_pct"].dump() << "%) | ";
    if (j["st_d_infinite"].get<bool>())
        std::cout << "inf (no target drop)";
    else
        std::cout << j["st_d"].dump();
    std::cout << "\n";
    if (j["mode"].get<std::string>() == "ownership")
        std::cout << "Avg Drop: " << j["avg_drop_points"].dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mapkit - model applicability protection via learned binary masks"};
    app.require_subcommand(1);
    app.set_version_flag("--version", mapkit_version());

    ConfigArgs pretrain_args, protect_args, owner_args, eval_args;
    std::string eval_mask;
    std::vector<std::string> report_dirs;

    CLI::App* pretrain = app.add_subcommand("pretrain", "train the source classifier");
    add_config_options(pretrain, pretrain_args);

    CLI::App* protect = app.add_subcommand("protect", "run mask protection (mode sa/sf/df)");
    add_config_options(protect, protect_args);

    CLI::App* owner = app.add_subcommand("verify-ownership",
                                         "watermark-based ownership verification");
    add_config_options(owner, owner_args);

    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a saved mask checkpoint");
    add_config_options(evaluate, eval_args);
    evaluate->add_option("--mask", eval_mask, "mask checkpoint (default: all-ones mask)");

    CLI::App* report = app.add_subcommand("report", "compare completed runs side by side");
    report->add_option("runs", report_dirs, "run directories")->required();

    CLI11_PARSE(app, argc, argv);

    mapkit_config* cfg = nullptr;
    char* out = nullptr;
    mapkit_status st = MAPKIT_OK;

    if (pretrain->parsed()) {
        if ((st = parse_config(pretrain_args, &cfg)) != MAPKIT_OK) return fail(st);
        st = mapkit_pretrain(cfg, &out);
        if (st == MAPKIT_OK) std::cout << out << "\n";
    } else if (protect->parsed()) {
        if ((st = parse_config(protect_args, &cfg)) != MAPKIT_OK) return fail(st);
        st = mapkit_protect(cfg, &out);
        if (st == MAPKIT_OK) print_summary(out);
    } else if (owner->parsed()) {
        if ((st = parse_config(owner_args, &cfg)) != MAPKIT_OK) return fail(st);
        st = mapkit_verify_ownership(cfg, &out);
        if (st == MAPKIT_OK) print_summary(out);
    } else if (evaluate->parsed()) {
        if ((st = parse_config(eval_args, &cfg)) != MAPKIT_OK) return fail(st);
        st = mapkit_evaluate(cfg, eval_mask.c_str(), &out);
        if (st == MAPKIT_OK) std::cout << out << "\n";
    } else if (report->parsed()) {
        std::vector<const char*> dirs;
        for (const auto& d : report_dirs) dirs.push_back(d.c_str());
        st = mapkit_report(dirs.data(), static_cast<int>(dirs.size()), &out);
        if (st == MAPKIT_OK) std::cout << out;
    }

    if (out) mapkit_string_free(out);
    if (cfg) mapkit_config_free(cfg);
    return st == MAPKIT_OK ? 0 : fail(st);
}
