#pragma once

#include <string>

#include "sgad/config.hpp"

namespace sgad {

// Executes one CLI command: train | eval | analyze | prune | export | report.
// `resume_path` points at a checkpoint directory (continue or warm-start for
// train; the model to inspect for the others; empty = out_dir/checkpoint).
// Returns the process exit status.
int run_command(const std::string& command, ExperimentConfig cfg, const std::string& resume_path);

}  // namespace sgad
