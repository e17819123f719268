#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fust/cli/config.hpp"
#include "fust/fusion/training.hpp"

namespace fust::cli {

// Exit codes of run().
inline constexpr int exit_ok = 0;
inline constexpr int exit_failed = 1;      // an inner module raised during the run
inline constexpr int exit_bad_config = 2;  // usage or config error; nothing was run

// Entry point of the fustkit tool. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Mean and sample standard deviation of loss, accuracy and mAP per
// (strategy, stage, epoch, split) across metrics files, in first-seen order.
// Columns: strategy,stage,epoch,split,n,loss_mean,loss_std,accuracy_mean,
// accuracy_std,map_mean,map_std.
std::string summarize_metrics(const std::vector<fusion::MetricsLog>& logs);

} // namespace fust::cli
