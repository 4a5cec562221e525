#pragma once

#include <functional>

#include "selfrobust/config.hpp"
#include "selfrobust/report.hpp"

namespace selfrobust {

// Runs tasks 0..n-1 on at most `threads` workers; rethrows the first task
// exception after all workers join. threads <= 1 runs inline.
void parallel_for(int n, int threads, const std::function<void(int)>& task);

// Dispatches on cfg.kind and writes report.json, CSV tables, and
// manifest.json into cfg.output_dir. Artifacts depend only on (config, seed).
void run_experiment(const ExperimentConfig& cfg);

// CLI wrapper: loads, runs, maps failures to diagnostics on stderr and a
// nonzero exit status.
int run_experiment_file(const std::string& config_path);

// Subcommand bodies. Checkpoint paths default to <output_dir>/model.srb1.
void run_adv_train(const ExperimentConfig& cfg, const std::string& ckpt_out);
void run_adv_eval(const ExperimentConfig& cfg, const std::string& ckpt_in);
void run_corruptions(const ExperimentConfig& cfg, const std::string& ckpt_in);
void run_labelnoise(const ExperimentConfig& cfg);
void run_ood(const ExperimentConfig& cfg);

}  // namespace selfrobust
