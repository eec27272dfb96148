#pragma once

#include <filesystem>
#include <vector>

#include "eval/metrics.hpp"

namespace mapkit::eval {

/// Grouped accuracy bar chart (source green, target orange, red relative-
/// degradation line) plus a loss-trace line chart when a trace is present in
/// the metadata sidecar. Returns the files written; names derive from run_id.
std::vector<std::filesystem::path> render_figures(const MetricsReport& r,
                                                  const std::filesystem::path& out_dir);

/// Plain line chart of per-step loss values (losses.csv companion figure).
std::filesystem::path render_loss_trace(const std::vector<double>& losses,
                                        const std::filesystem::path& out_file);

/// Minimal RGB8 PNG writer (zlib-deflated, filter 0).
void write_png_rgb(const std::filesystem::path& path, const std::vector<unsigned char>& rgb,
                   int width, int height);

}  // namespace mapkit::eval
