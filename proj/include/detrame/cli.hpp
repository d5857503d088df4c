#pragma once

#include <string>
#include <vector>

#include "detrame/train.hpp"

namespace detrame::cli {

/// Entry point behind the `detrame` executable. `args` excludes the program
/// name. Returns 0 on success, 1 on runtime failure, 2 on bad usage/config.
int run_command(const std::vector<std::string>& args);

/// Metrics CSV with the fixed header epoch,train_loss,train_acc,test_acc,wall_s
/// and one row per epoch. Values are written round-trip exact (%.17g).
void write_metrics_csv(const std::string& path, const train::History& hist);
std::vector<train::EpochRecord> read_metrics_csv(const std::string& path);

}  // namespace detrame::cli
