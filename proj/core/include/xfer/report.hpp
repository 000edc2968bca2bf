#pragma once

#include <string>

#include "xfer/pipeline.hpp"

namespace xfer {

// Writes results.csv (one row per grid point plus reference rows),
// report.json (config echo, loss curves, metric counts, converted samples)
// and converted_samples.csv into out_dir. Reruns with the same report
// produce byte-identical files.
void emit_report(const ExperimentReport& report, const std::string& out_dir);

// Rebuilds an ExperimentReport from a previously written report.json, so the
// CSV views can be regenerated without rerunning the experiment.
ExperimentReport load_report(const std::string& json_path);

}  // namespace xfer
