#include <iostream>

#include "CLI11.hpp"
#include "selfrobust/harness.hpp"

namespace {

using namespace selfrobust;

ExperimentConfig load_for(const std::string& path, ExperimentKind want) {
  ExperimentConfig cfg = load_experiment_config(path);
  if (cfg.kind != want)
    throw ConfigError("kind", std::string("this subcommand needs kind=") +
                                  experiment_kind_name(want) + ", config has kind=" +
                                  experiment_kind_name(cfg.kind));
  return cfg;
}

int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised robustness experiments"};
  app.require_subcommand(1);

  std::string config_path, ckpt, run_dir;

  auto* run = app.add_subcommand("run", "run the experiment named by the config's kind");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();

  auto* train_adv = app.add_subcommand("train-adv", "adversarial training, writes a checkpoint");
  train_adv->add_option("--config", config_path)->required();
  train_adv->add_option("--ckpt-out", ckpt, "checkpoint path (default <output_dir>/model.srb1)");

  auto* eval_adv = app.add_subcommand("eval-adv", "clean accuracy and PGD epsilon sweep");
  eval_adv->add_option("--config", config_path)->required();
  eval_adv->add_option("--ckpt", ckpt, "checkpoint to evaluate");

  auto* eval_corr = app.add_subcommand("eval-corruptions", "accuracy over the corruption grid");
  eval_corr->add_option("--config", config_path)->required();
  eval_corr->add_option("--ckpt", ckpt, "checkpoint to evaluate (default: train one)");

  auto* labelnoise = app.add_subcommand("run-labelnoise", "test error across label noise strengths");
  labelnoise->add_option("--config", config_path)->required();

  auto* ood = app.add_subcommand("run-ood", "one-class anomaly detection AUROC table");
  ood->add_option("--config", config_path)->required();

  auto* report = app.add_subcommand("report", "print a digest of a finished run");
  report->add_option("--run", run_dir, "run output directory")->required();

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return run_experiment_file(config_path);
  if (train_adv->parsed())
    return guarded([&] { run_adv_train(load_for(config_path, ExperimentKind::Adv), ckpt); });
  if (eval_adv->parsed())
    return guarded([&] { run_adv_eval(load_for(config_path, ExperimentKind::Adv), ckpt); });
  if (eval_corr->parsed())
    return guarded(
        [&] { run_corruptions(load_for(config_path, ExperimentKind::Corruptions), ckpt); });
  if (labelnoise->parsed())
    return guarded([&] { run_labelnoise(load_for(config_path, ExperimentKind::LabelNoise)); });
  if (ood->parsed())
    return guarded([&] { run_ood(load_for(config_path, ExperimentKind::Ood)); });
  if (report->parsed())
    return guarded([&] { std::cout << summarize_report(run_dir); });
  return 0;
}
