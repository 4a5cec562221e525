#include "selfrobust/harness.hpp"

#include <algorithm>
#include <atomic>
#include <iostream>
#include <mutex>
#include <thread>

#include "json.hpp"
#include "selfrobust/checkpoint.hpp"
#include "selfrobust/corruptions.hpp"
#include "selfrobust/labelnoise.hpp"
#include "selfrobust/ooddetect.hpp"

namespace selfrobust {

using nlohmann::json;

void parallel_for(int n, int threads, const std::function<void(int)>& task) {
  if (n <= 0) return;
  const int workers = std::min(threads, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        task(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

struct Prepared {
  Dataset<float> data;
  NetworkSpec net;
  int threads = 1;
};

Prepared prepare(const ExperimentConfig& cfg) {
  Dataset<float> data = load_dataset(cfg, cfg.seed);
  if (data.train_images.size() == 0)
    throw ConfigError("dataset", "training split is empty");
  const std::vector<int> input_shape = {data.train_images.dim(1), data.train_images.dim(2),
                                        data.train_images.dim(3)};
  NetworkSpec net = build_network(cfg, input_shape);
  return Prepared{std::move(data), std::move(net), effective_threads(cfg.threads)};
}

AdvTrainConfig<float> adv_train_config(const ExperimentConfig& cfg) {
  AdvTrainConfig<float> tc;
  tc.epochs = cfg.adv.epochs;
  tc.batch_size = cfg.adv.batch_size;
  tc.base_lr = cfg.optimizer.base_lr;
  tc.momentum = cfg.optimizer.momentum;
  tc.weight_decay = cfg.optimizer.weight_decay;
  tc.attack.epsilon = cfg.adv.epsilon;
  tc.attack.alpha = cfg.adv.alpha;
  tc.attack.steps = cfg.adv.steps;
  tc.attack.random_start = cfg.adv.random_start;
  tc.attack.loss =
      cfg.adv.attack_loss == "ce_only" ? AttackLoss::CeOnly : AttackLoss::CePlusSs;
  tc.attack.ss_heads = cfg.adv.ss_heads;
  tc.attack.view_mode = view_mode_from_name(cfg.adv.view_mode);
  tc.attack.translation = cfg.adv.translation;
  tc.loss.lambda = cfg.adv.lambda;
  tc.loss.enabled_heads = cfg.adv.ss_heads;
  tc.loss.include_supervised = true;
  tc.loss.view_mode = view_mode_from_name(cfg.adv.view_mode);
  tc.loss.translation = cfg.adv.translation;
  return tc;
}

json sweep_json(const ExperimentConfig& cfg, const Prepared& p,
                const ParameterSet<float>& params) {
  AttackConfig<float> atk;
  atk.alpha = cfg.adv.alpha;
  atk.steps = cfg.adv.eval_steps;
  atk.random_start = cfg.adv.random_start;
  atk.loss = AttackLoss::CeOnly;  // evaluation attacks the classification loss
  std::vector<float> eps;
  for (int u : cfg.adv.eval_eps_units) eps.push_back(static_cast<float>(u) / 255.0f);
  auto sweep = eval_eps_sweep(p.net, params, p.data.test_images, p.data.test_labels, atk,
                              eps, derive_seed(cfg.seed, "adv-eval"), cfg.adv.eval_chunk);
  json out = json::array();
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    json pt;
    pt["epsilon_units"] = cfg.adv.eval_eps_units[i];
    pt["epsilon"] = static_cast<double>(sweep[i].epsilon);
    pt["accuracy"] = sweep[i].accuracy;
    out.push_back(pt);
  }
  return out;
}

std::string sweep_csv(const json& sweep) {
  std::string csv = "epsilon_units,epsilon,accuracy\n";
  for (const auto& pt : sweep)
    csv += detail::strcat(pt.at("epsilon_units").get<int>(), ",",
                          csv_number(pt.at("epsilon").get<double>()), ",",
                          csv_number(pt.at("accuracy").get<double>()), "\n");
  return csv;
}

json train_history_json(const TrainResult<float>& result) {
  json hist = json::array();
  for (const auto& e : result.history) {
    json row;
    row["epoch"] = e.epoch;
    row["mean_total"] = static_cast<double>(e.mean_total);
    row["mean_supervised"] = static_cast<double>(e.mean_supervised);
    row["mean_selfsup"] = static_cast<double>(e.mean_selfsup);
    hist.push_back(row);
  }
  return hist;
}

void write_report(const ExperimentConfig& cfg, json report) {
  report["schema"] = kReportSchema;
  report["kind"] = experiment_kind_name(cfg.kind);
  report["config_hash"] = hex64(cfg.config_hash);
  report["seed"] = cfg.seed;
  write_text_file(cfg.output_dir + "/report.json", report.dump(2) + "\n");
  write_manifest(cfg.output_dir, cfg);
}

std::vector<CorruptionKind> corruption_kinds(const ExperimentConfig& cfg) {
  if (cfg.corruptions.kinds.empty()) return all_corruptions();
  std::vector<CorruptionKind> kinds;
  for (const auto& name : cfg.corruptions.kinds) kinds.push_back(corruption_from_name(name));
  return kinds;
}

ParameterSet<float> corruption_params(const ExperimentConfig& cfg, const Prepared& p,
                                      const std::string& ckpt_override) {
  const std::string ckpt = !ckpt_override.empty() ? ckpt_override : cfg.corruptions.ckpt;
  if (!ckpt.empty()) {
    auto params = load_checkpoint<float>(ckpt);
    params.require_compatible(make_parameter_set<float>(p.net), "corruptions checkpoint");
    return params;
  }
  Rng init_rng(derive_seed(cfg.seed, "init"));
  auto params = init_parameters<float>(p.net, init_rng);
  train_supervised(p.net, params, p.data.train_images, p.data.train_labels,
                   cfg.corruptions.train_use_rotations, cfg.corruptions.lambda,
                   cfg.corruptions.train_epochs, cfg.corruptions.train_batch_size,
                   cfg.optimizer.base_lr, cfg.optimizer.momentum,
                   cfg.optimizer.weight_decay, derive_seed(cfg.seed, "corr-train"));
  save_checkpoint(params, cfg.output_dir + "/model.srb1");
  return params;
}

Tensor<float> ood_outliers(const ExperimentConfig& cfg, const Prepared& p) {
  const auto& shape = p.data.train_images;
  if (cfg.ood.oe_source == "noise") {
    Tensor<float> out({cfg.ood.oe_count, shape.dim(1), shape.dim(2), shape.dim(3)});
    Rng rng(derive_seed(cfg.seed, "oe-noise"));
    for (std::int64_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<float>(rng.uniform());
    return out;
  }
  if (cfg.ood.oe_source == "shapes_holdout") {
    if (cfg.dataset.source != DatasetSource::Synthetic)
      throw ConfigError("ood.oe_source",
                        "shapes_holdout requires the synthetic_shapes dataset");
    const int held_in = cfg.dataset.shapes.classes;
    if (held_in >= kShapeGlyphs)
      throw ConfigError("ood.oe_source",
                        detail::strcat("no glyphs left beyond the ", held_in,
                                       " dataset classes"));
    ShapesConfig sc = cfg.dataset.shapes;
    sc.classes = kShapeGlyphs;
    const int spare = kShapeGlyphs - held_in;
    sc.n_per_class = (cfg.ood.oe_count + spare - 1) / spare;
    sc.test_per_class = 1;
    auto holdout = gen_synthetic_shapes<float>(sc, derive_seed(cfg.seed, "oe-holdout"));
    std::vector<int> rows;
    for (std::size_t i = 0; i < holdout.train_labels.size(); ++i)
      if (holdout.train_labels[i] >= held_in &&
          static_cast<int>(rows.size()) < cfg.ood.oe_count)
        rows.push_back(static_cast<int>(i));
    return take_rows(holdout.train_images, rows);
  }
  return Tensor<float>();
}

OneClassConfig<float> ood_config(const ExperimentConfig& cfg) {
  OneClassConfig<float> oc;
  oc.train_heads = cfg.ood.train_heads;
  oc.view_mode = view_mode_from_name(cfg.ood.view_mode);
  oc.translation = cfg.ood.translation;
  oc.epochs = cfg.ood.epochs;
  oc.batch_size = cfg.ood.batch_size;
  oc.base_lr = cfg.optimizer.base_lr;
  oc.momentum = cfg.optimizer.momentum;
  oc.weight_decay = cfg.optimizer.weight_decay;
  oc.oe_weight = cfg.ood.oe_weight;
  oc.score_chunk = cfg.ood.score_chunk;
  if (cfg.ood.scorers.empty()) {
    ScoreConfig rotnet;
    rotnet.name = "rotnet";
    ScoreConfig rot_trans;
    rot_trans.name = "rot_trans";
    rot_trans.heads = {"rotation", "vtrans", "htrans"};
    rot_trans.view_mode = ViewMode::ComposedSubset;
    rot_trans.translation = cfg.ood.translation;
    oc.scorers = {rotnet, rot_trans};
  } else {
    for (const auto& s : cfg.ood.scorers) {
      ScoreConfig sc;
      sc.name = s.name;
      sc.heads = s.heads;
      sc.view_mode = view_mode_from_name(s.view_mode);
      sc.translation = s.translation;
      sc.log_prob = s.log_prob;
      oc.scorers.push_back(sc);
    }
  }
  return oc;
}

}  // namespace

void run_adv_train(const ExperimentConfig& cfg, const std::string& ckpt_out) {
  Prepared p = prepare(cfg);
  ensure_dir(cfg.output_dir);
  auto tc = adv_train_config(cfg);
  Rng init_rng(derive_seed(cfg.seed, "init"));
  auto params = init_parameters<float>(p.net, init_rng);
  Rng train_rng(derive_seed(cfg.seed, "adv-train"));
  auto result = adv_train(p.net, params, p.data.train_images, p.data.train_labels, tc,
                          train_rng);
  const std::string ckpt = !ckpt_out.empty() ? ckpt_out : cfg.output_dir + "/model.srb1";
  save_checkpoint(params, ckpt);
  json log;
  log["schema"] = kReportSchema;
  log["train_history"] = train_history_json(result);
  log["aborted"] = result.aborted;
  if (result.aborted) log["abort_reason"] = result.abort_reason;
  log["steps_completed"] = result.steps_completed;
  log["checkpoint"] = ckpt;
  write_text_file(cfg.output_dir + "/train_log.json", log.dump(2) + "\n");
  write_manifest(cfg.output_dir, cfg);
}

void run_adv_eval(const ExperimentConfig& cfg, const std::string& ckpt_in) {
  Prepared p = prepare(cfg);
  ensure_dir(cfg.output_dir);
  const std::string ckpt = !ckpt_in.empty() ? ckpt_in : cfg.output_dir + "/model.srb1";
  auto params = load_checkpoint<float>(ckpt);
  params.require_compatible(make_parameter_set<float>(p.net), "eval checkpoint");
  json report;
  report["clean_accuracy"] =
      eval_accuracy(p.net, params, p.data.test_images, p.data.test_labels);
  if (cfg.adv.steps > 0) {
    report["sweep"] = sweep_json(cfg, p, params);
    write_text_file(cfg.output_dir + "/sweep.csv", sweep_csv(report["sweep"]));
  }
  write_report(cfg, std::move(report));
}

void run_corruptions(const ExperimentConfig& cfg, const std::string& ckpt_in) {
  Prepared p = prepare(cfg);
  ensure_dir(cfg.output_dir);
  auto params = corruption_params(cfg, p, ckpt_in);
  const auto kinds = corruption_kinds(cfg);
  const auto& severities = cfg.corruptions.severities;
  const int cells = static_cast<int>(kinds.size() * severities.size());
  std::vector<double> accuracies(static_cast<std::size_t>(cells), 0.0);
  parallel_for(cells, p.threads, [&](int i) {
    const auto kind = kinds[static_cast<std::size_t>(i) / severities.size()];
    const int severity = severities[static_cast<std::size_t>(i) % severities.size()];
    accuracies[static_cast<std::size_t>(i)] = corruption_cell_accuracy(
        p.net, params, p.data.test_images, p.data.test_labels, kind, severity, cfg.seed,
        cfg.corruptions.eval_chunk);
  });
  const double clean = eval_accuracy(p.net, params, p.data.test_images, p.data.test_labels,
                                     cfg.corruptions.eval_chunk);
  CorruptionGrid grid = aggregate_corruption_grid(clean, kinds, severities, accuracies);

  std::string csv = "kind,severity,accuracy\n";
  json cells_json = json::array();
  for (const auto& cell : grid.cells) {
    csv += detail::strcat(cell.kind, ",", cell.severity, ",", csv_number(cell.accuracy), "\n");
    json c;
    c["kind"] = cell.kind;
    c["severity"] = cell.severity;
    c["accuracy"] = cell.accuracy;
    cells_json.push_back(c);
  }
  write_text_file(cfg.output_dir + "/corruptions.csv", csv);
  json report;
  report["clean_accuracy"] = grid.clean_accuracy;
  report["cells"] = std::move(cells_json);
  report["kind_means"] = grid.kind_means;
  report["grand_mean"] = grid.grand_mean;
  write_report(cfg, std::move(report));
}

void run_labelnoise(const ExperimentConfig& cfg) {
  Prepared p = prepare(cfg);
  ensure_dir(cfg.output_dir);
  LabelNoiseConfig<float> lc;
  lc.method = cfg.labelnoise.method == "glc" ? LabelNoiseMethod::Glc : LabelNoiseMethod::None;
  lc.use_rotations = cfg.labelnoise.use_rotations;
  lc.rotation_head_trainable = cfg.labelnoise.rotation_head_trainable;
  lc.trusted_fraction = cfg.labelnoise.trusted_fraction;
  lc.strengths = cfg.labelnoise.strengths;
  lc.epochs_normal = cfg.labelnoise.epochs_normal;
  lc.epochs_pretrain = cfg.labelnoise.epochs_pretrain;
  lc.epochs_finetune = cfg.labelnoise.epochs_finetune;
  lc.batch_size = cfg.labelnoise.batch_size;
  lc.base_lr = cfg.optimizer.base_lr;
  lc.momentum = cfg.optimizer.momentum;
  lc.weight_decay = cfg.optimizer.weight_decay;
  lc.lambda = cfg.labelnoise.lambda;
  lc.validate();

  // Seeds match label_noise_protocol's per-strength derivation, so the
  // worker-pool sweep reproduces the serial protocol exactly.
  const auto strengths = lc.strength_list();
  std::vector<StrengthResult<float>> results(strengths.size());
  parallel_for(static_cast<int>(strengths.size()), p.threads, [&](int i) {
    results[static_cast<std::size_t>(i)] = label_noise_run(
        p.net, p.data.train_images, p.data.train_labels, p.data.test_images,
        p.data.test_labels, strengths[static_cast<std::size_t>(i)], lc,
        derive_seed(cfg.seed, detail::strcat("strength-", i)));
  });
  double sum = 0.0;
  json per_strength = json::array();
  std::string csv = "strength,test_error\n";
  for (const auto& r : results) {
    sum += r.test_error;
    json row;
    row["strength"] = static_cast<double>(r.strength);
    row["test_error"] = r.test_error;
    if (lc.method == LabelNoiseMethod::Glc)
      row["glc_fallback_classes"] = r.glc_fallback_classes;
    per_strength.push_back(row);
    csv += detail::strcat(csv_number(static_cast<double>(r.strength)), ",",
                          csv_number(r.test_error), "\n");
  }
  write_text_file(cfg.output_dir + "/labelnoise_curve.csv", csv);
  json report;
  report["per_strength"] = std::move(per_strength);
  report["mean_error"] = sum / static_cast<double>(strengths.size());
  write_report(cfg, std::move(report));
}

void run_ood(const ExperimentConfig& cfg) {
  Prepared p = prepare(cfg);
  ensure_dir(cfg.output_dir);
  OneClassConfig<float> oc = ood_config(cfg);
  oc.validate();
  for (const auto& sc : oc.scorers) sc.validate(p.net);
  Tensor<float> outliers = ood_outliers(cfg, p);
  const Tensor<float>* oe = outliers.size() > 0 ? &outliers : nullptr;
  const int k = p.data.classes;
  if (k < 2) throw ConfigError("dataset", "ood needs at least 2 classes");

  // Mirrors one_class_protocol with the per-class runs fanned out to the
  // pool; seed tags match, so results equal the serial protocol.
  std::vector<std::vector<double>> table(static_cast<std::size_t>(k));
  parallel_for(k, p.threads, [&](int c) {
    std::vector<int> train_rows, in_rows, out_rows;
    for (std::size_t i = 0; i < p.data.train_labels.size(); ++i)
      if (p.data.train_labels[i] == c) train_rows.push_back(static_cast<int>(i));
    for (std::size_t i = 0; i < p.data.test_labels.size(); ++i)
      (p.data.test_labels[i] == c ? in_rows : out_rows).push_back(static_cast<int>(i));
    if (train_rows.empty() || in_rows.empty() || out_rows.empty())
      throw std::invalid_argument(detail::strcat("ood: class ", c,
                                                 " lacks train or test examples"));
    Tensor<float> class_train = take_rows(p.data.train_images, train_rows);
    auto params = one_class_train(p.net, class_train, oc,
                                  derive_seed(cfg.seed, detail::strcat("class-", c)), oe);
    Tensor<float> in_x = take_rows(p.data.test_images, in_rows);
    Tensor<float> out_x = take_rows(p.data.test_images, out_rows);
    for (const auto& sc : oc.scorers) {
      auto in_scores = anomaly_scores(p.net, params, in_x, sc, oc.score_chunk);
      auto out_scores = anomaly_scores(p.net, params, out_x, sc, oc.score_chunk);
      table[static_cast<std::size_t>(c)].push_back(auroc(in_scores, out_scores));
    }
  });

  json report;
  json classes = json::array(), methods = json::array(), tbl = json::array(),
       means = json::array();
  std::string csv = "class";
  for (const auto& sc : oc.scorers) {
    methods.push_back(sc.name);
    csv += "," + sc.name;
  }
  csv += "\n";
  std::vector<double> mean_acc(oc.scorers.size(), 0.0);
  for (int c = 0; c < k; ++c) {
    classes.push_back(c);
    tbl.push_back(table[static_cast<std::size_t>(c)]);
    csv += std::to_string(c);
    for (std::size_t m = 0; m < oc.scorers.size(); ++m) {
      mean_acc[m] += table[static_cast<std::size_t>(c)][m];
      csv += "," + csv_number(table[static_cast<std::size_t>(c)][m]);
    }
    csv += "\n";
  }
  csv += "mean";
  for (std::size_t m = 0; m < oc.scorers.size(); ++m) {
    means.push_back(mean_acc[m] / static_cast<double>(k));
    csv += "," + csv_number(mean_acc[m] / static_cast<double>(k));
  }
  csv += "\n";
  write_text_file(cfg.output_dir + "/ood_table.csv", csv);
  report["classes"] = std::move(classes);
  report["methods"] = std::move(methods);
  report["auroc_table"] = std::move(tbl);
  report["mean_auroc"] = std::move(means);
  write_report(cfg, std::move(report));
}

void run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::Adv:
      run_adv_train(cfg, "");
      run_adv_eval(cfg, "");
      return;
    case ExperimentKind::Corruptions:
      run_corruptions(cfg, "");
      return;
    case ExperimentKind::LabelNoise:
      run_labelnoise(cfg);
      return;
    case ExperimentKind::Ood:
      run_ood(cfg);
      return;
  }
}

int run_experiment_file(const std::string& config_path) {
  try {
    run_experiment(load_experiment_config(config_path));
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace selfrobust
