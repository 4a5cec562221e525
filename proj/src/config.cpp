#include "selfrobust/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "json.hpp"

namespace selfrobust {

using nlohmann::json;

ExperimentKind experiment_kind_from_name(const std::string& name) {
  if (name == "adv") return ExperimentKind::Adv;
  if (name == "corruptions") return ExperimentKind::Corruptions;
  if (name == "labelnoise") return ExperimentKind::LabelNoise;
  if (name == "ood") return ExperimentKind::Ood;
  throw ConfigError("kind", "unknown experiment kind '" + name + "'");
}

const char* experiment_kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Adv: return "adv";
    case ExperimentKind::Corruptions: return "corruptions";
    case ExperimentKind::LabelNoise: return "labelnoise";
    case ExperimentKind::Ood: return "ood";
  }
  return "?";
}

ViewMode view_mode_from_name(const std::string& name) {
  if (name == "all_rotations") return ViewMode::AllRotations;
  if (name == "composed_subset") return ViewMode::ComposedSubset;
  if (name == "full_product") return ViewMode::FullProduct;
  throw ConfigError("view_mode", "unknown view mode '" + name + "'");
}

const char* view_mode_name(ViewMode mode) {
  switch (mode) {
    case ViewMode::AllRotations: return "all_rotations";
    case ViewMode::ComposedSubset: return "composed_subset";
    case ViewMode::FullProduct: return "full_product";
  }
  return "?";
}

namespace {

std::string join_path(const std::string& section, const std::string& key) {
  return section.empty() ? key : section + "." + key;
}

void reject_unknown_keys(const json& obj, const std::string& section,
                         const std::set<std::string>& allowed) {
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key))
      throw ConfigError(join_path(section, key), "unknown key");
}

const json* find(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

template <typename T>
T get_as(const json& value, const std::string& path);

template <>
std::string get_as<std::string>(const json& value, const std::string& path) {
  if (!value.is_string()) throw ConfigError(path, "expected a string");
  return value.get<std::string>();
}

template <>
bool get_as<bool>(const json& value, const std::string& path) {
  if (!value.is_boolean()) throw ConfigError(path, "expected true or false");
  return value.get<bool>();
}

template <>
int get_as<int>(const json& value, const std::string& path) {
  if (!value.is_number_integer()) throw ConfigError(path, "expected an integer");
  return value.get<int>();
}

template <>
std::uint64_t get_as<std::uint64_t>(const json& value, const std::string& path) {
  if (value.is_number_unsigned()) return value.get<std::uint64_t>();
  if (value.is_number_integer()) {
    const auto v = value.get<std::int64_t>();
    if (v >= 0) return static_cast<std::uint64_t>(v);
  }
  throw ConfigError(path, "expected a non-negative integer");
}

template <>
float get_as<float>(const json& value, const std::string& path) {
  if (!value.is_number()) throw ConfigError(path, "expected a number");
  return value.get<float>();
}

template <>
double get_as<double>(const json& value, const std::string& path) {
  if (!value.is_number()) throw ConfigError(path, "expected a number");
  return value.get<double>();
}

template <typename T>
void read_opt(const json& obj, const std::string& section, const std::string& key, T& out) {
  if (const json* v = find(obj, key)) out = get_as<T>(*v, join_path(section, key));
}

template <typename T>
T read_req(const json& obj, const std::string& section, const std::string& key) {
  const json* v = find(obj, key);
  if (!v) throw ConfigError(join_path(section, key), "required key missing");
  return get_as<T>(*v, join_path(section, key));
}

template <typename T>
void read_opt_list(const json& obj, const std::string& section, const std::string& key,
                   std::vector<T>& out) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_array()) throw ConfigError(join_path(section, key), "expected an array");
  out.clear();
  for (std::size_t i = 0; i < v->size(); ++i)
    out.push_back(get_as<T>((*v)[i], detail::strcat(join_path(section, key), "[", i, "]")));
}

DatasetSection parse_dataset(const json& obj) {
  DatasetSection out;
  const std::string src = read_req<std::string>(obj, "dataset", "source");
  if (src == "synthetic_shapes") {
    out.source = DatasetSource::Synthetic;
    reject_unknown_keys(obj, "dataset",
                        {"source", "classes", "size", "n_per_class", "test_per_class",
                         "noise", "jitter"});
    read_opt(obj, "dataset", "classes", out.shapes.classes);
    read_opt(obj, "dataset", "size", out.shapes.size);
    read_opt(obj, "dataset", "n_per_class", out.shapes.n_per_class);
    read_opt(obj, "dataset", "test_per_class", out.shapes.test_per_class);
    read_opt(obj, "dataset", "noise", out.shapes.noise);
    read_opt(obj, "dataset", "jitter", out.shapes.jitter);
  } else if (src == "cifar_binary") {
    out.source = DatasetSource::CifarBinary;
    reject_unknown_keys(obj, "dataset", {"source", "train_paths", "test_path"});
    read_opt_list(obj, "dataset", "train_paths", out.cifar_train_paths);
    read_opt(obj, "dataset", "test_path", out.cifar_test_path);
    if (out.cifar_train_paths.empty())
      throw ConfigError("dataset.train_paths", "at least one path required");
  } else if (src == "idx") {
    out.source = DatasetSource::Idx;
    reject_unknown_keys(obj, "dataset",
                        {"source", "train_images", "train_labels", "test_images",
                         "test_labels", "classes"});
    out.idx_train_images = read_req<std::string>(obj, "dataset", "train_images");
    out.idx_train_labels = read_req<std::string>(obj, "dataset", "train_labels");
    read_opt(obj, "dataset", "test_images", out.idx_test_images);
    read_opt(obj, "dataset", "test_labels", out.idx_test_labels);
    read_opt(obj, "dataset", "classes", out.idx_classes);
  } else {
    throw ConfigError("dataset.source", "unknown source '" + src + "'");
  }
  return out;
}

std::vector<LayerDesc> parse_trunk(const json& arr) {
  if (!arr.is_array() || arr.empty())
    throw ConfigError("network.trunk", "expected a non-empty array of layer objects");
  std::vector<LayerDesc> trunk;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string path = detail::strcat("network.trunk[", i, "]");
    const json& layer = arr[i];
    if (!layer.is_object()) throw ConfigError(path, "expected a layer object");
    const std::string op = read_req<std::string>(layer, path, "op");
    if (op == "conv") {
      reject_unknown_keys(layer, path, {"op", "filters", "kernel", "stride", "pad"});
      const int filters = read_req<int>(layer, path, "filters");
      const int kernel = read_req<int>(layer, path, "kernel");
      int stride = 1, pad = 0;
      read_opt(layer, path, "stride", stride);
      read_opt(layer, path, "pad", pad);
      trunk.push_back(LayerDesc::conv2d(filters, kernel, stride, pad));
    } else if (op == "dense") {
      reject_unknown_keys(layer, path, {"op", "units"});
      trunk.push_back(LayerDesc::dense(read_req<int>(layer, path, "units")));
    } else if (op == "relu") {
      reject_unknown_keys(layer, path, {"op"});
      trunk.push_back(LayerDesc::relu());
    } else if (op == "max_pool") {
      reject_unknown_keys(layer, path, {"op", "window"});
      int window = 2;
      read_opt(layer, path, "window", window);
      trunk.push_back(LayerDesc::max_pool(window));
    } else if (op == "global_avg_pool") {
      reject_unknown_keys(layer, path, {"op"});
      trunk.push_back(LayerDesc::global_avg_pool());
    } else if (op == "flatten") {
      reject_unknown_keys(layer, path, {"op"});
      trunk.push_back(LayerDesc::flatten());
    } else {
      throw ConfigError(path + ".op", "unknown layer op '" + op + "'");
    }
  }
  return trunk;
}

ScorerSection parse_scorer(const json& obj, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path, "expected a scorer object");
  reject_unknown_keys(obj, path, {"name", "heads", "view_mode", "translation", "log_prob"});
  ScorerSection out;
  out.name = read_req<std::string>(obj, path, "name");
  read_opt_list(obj, path, "heads", out.heads);
  if (out.heads.empty()) throw ConfigError(path + ".heads", "at least one head required");
  read_opt(obj, path, "view_mode", out.view_mode);
  read_opt(obj, path, "translation", out.translation);
  read_opt(obj, path, "log_prob", out.log_prob);
  return out;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", detail::strcat("not valid JSON: ", e.what()));
  }
  if (!root.is_object()) throw ConfigError("<root>", "expected a JSON object");
  reject_unknown_keys(root, "",
                      {"kind", "seed", "output_dir", "threads", "dataset", "network",
                       "optimizer", "adv", "corruptions", "labelnoise", "ood"});

  ExperimentConfig cfg;
  cfg.kind = experiment_kind_from_name(read_req<std::string>(root, "", "kind"));
  cfg.seed = read_req<std::uint64_t>(root, "", "seed");
  cfg.output_dir = read_req<std::string>(root, "", "output_dir");
  read_opt(root, "", "threads", cfg.threads);
  if (cfg.threads < 1) throw ConfigError("threads", "must be >= 1");

  const json* ds = find(root, "dataset");
  if (!ds || !ds->is_object()) throw ConfigError("dataset", "required section missing");
  cfg.dataset = parse_dataset(*ds);

  const json* net = find(root, "network");
  if (!net || !net->is_object()) throw ConfigError("network", "required section missing");
  reject_unknown_keys(*net, "network", {"trunk", "heads"});
  const json* trunk = find(*net, "trunk");
  if (!trunk) throw ConfigError("network.trunk", "required key missing");
  cfg.trunk = parse_trunk(*trunk);
  const json* heads = find(*net, "heads");
  if (!heads || !heads->is_object() || heads->empty())
    throw ConfigError("network.heads", "expected a non-empty object of name -> classes");
  for (const auto& [name, classes] : heads->items())
    cfg.heads[name] = get_as<int>(classes, "network.heads." + name);

  if (const json* opt = find(root, "optimizer")) {
    reject_unknown_keys(*opt, "optimizer", {"base_lr", "momentum", "weight_decay"});
    read_opt(*opt, "optimizer", "base_lr", cfg.optimizer.base_lr);
    read_opt(*opt, "optimizer", "momentum", cfg.optimizer.momentum);
    read_opt(*opt, "optimizer", "weight_decay", cfg.optimizer.weight_decay);
  }

  const char* kind_section = experiment_kind_name(cfg.kind);
  for (const char* section : {"adv", "corruptions", "labelnoise", "ood"})
    if (std::string(section) != kind_section && find(root, section))
      throw ConfigError(section, detail::strcat("section does not match kind '",
                                                kind_section, "'"));

  switch (cfg.kind) {
    case ExperimentKind::Adv: {
      if (const json* a = find(root, "adv")) {
        reject_unknown_keys(*a, "adv",
                            {"epochs", "batch_size", "epsilon_units", "alpha_units",
                             "steps", "random_start", "attack_loss", "lambda", "ss_heads",
                             "view_mode", "translation", "eval_eps_units", "eval_steps",
                             "eval_chunk"});
        read_opt(*a, "adv", "epochs", cfg.adv.epochs);
        read_opt(*a, "adv", "batch_size", cfg.adv.batch_size);
        int eps_units = -1, alpha_units = -1;
        read_opt(*a, "adv", "epsilon_units", eps_units);
        read_opt(*a, "adv", "alpha_units", alpha_units);
        if (eps_units >= 0) cfg.adv.epsilon = static_cast<float>(eps_units) / 255.0f;
        if (alpha_units >= 0) cfg.adv.alpha = static_cast<float>(alpha_units) / 255.0f;
        read_opt(*a, "adv", "steps", cfg.adv.steps);
        read_opt(*a, "adv", "random_start", cfg.adv.random_start);
        read_opt(*a, "adv", "attack_loss", cfg.adv.attack_loss);
        if (cfg.adv.attack_loss != "ce_only" && cfg.adv.attack_loss != "ce_plus_ss")
          throw ConfigError("adv.attack_loss", "expected 'ce_only' or 'ce_plus_ss'");
        read_opt(*a, "adv", "lambda", cfg.adv.lambda);
        read_opt_list(*a, "adv", "ss_heads", cfg.adv.ss_heads);
        read_opt(*a, "adv", "view_mode", cfg.adv.view_mode);
        read_opt(*a, "adv", "translation", cfg.adv.translation);
        read_opt_list(*a, "adv", "eval_eps_units", cfg.adv.eval_eps_units);
        read_opt(*a, "adv", "eval_steps", cfg.adv.eval_steps);
        read_opt(*a, "adv", "eval_chunk", cfg.adv.eval_chunk);
      }
      break;
    }
    case ExperimentKind::Corruptions: {
      if (const json* c = find(root, "corruptions")) {
        reject_unknown_keys(*c, "corruptions",
                            {"kinds", "severities", "ckpt", "train_epochs",
                             "train_batch_size", "train_use_rotations", "lambda",
                             "eval_chunk"});
        read_opt_list(*c, "corruptions", "kinds", cfg.corruptions.kinds);
        read_opt_list(*c, "corruptions", "severities", cfg.corruptions.severities);
        read_opt(*c, "corruptions", "ckpt", cfg.corruptions.ckpt);
        read_opt(*c, "corruptions", "train_epochs", cfg.corruptions.train_epochs);
        read_opt(*c, "corruptions", "train_batch_size", cfg.corruptions.train_batch_size);
        read_opt(*c, "corruptions", "train_use_rotations",
                 cfg.corruptions.train_use_rotations);
        read_opt(*c, "corruptions", "lambda", cfg.corruptions.lambda);
        read_opt(*c, "corruptions", "eval_chunk", cfg.corruptions.eval_chunk);
      }
      break;
    }
    case ExperimentKind::LabelNoise: {
      if (const json* l = find(root, "labelnoise")) {
        reject_unknown_keys(*l, "labelnoise",
                            {"method", "use_rotations", "rotation_head_trainable",
                             "trusted_fraction", "strengths", "epochs_normal",
                             "epochs_pretrain", "epochs_finetune", "batch_size", "lambda"});
        read_opt(*l, "labelnoise", "method", cfg.labelnoise.method);
        if (cfg.labelnoise.method != "none" && cfg.labelnoise.method != "glc")
          throw ConfigError("labelnoise.method", "expected 'none' or 'glc'");
        read_opt(*l, "labelnoise", "use_rotations", cfg.labelnoise.use_rotations);
        read_opt(*l, "labelnoise", "rotation_head_trainable",
                 cfg.labelnoise.rotation_head_trainable);
        read_opt(*l, "labelnoise", "trusted_fraction", cfg.labelnoise.trusted_fraction);
        read_opt_list(*l, "labelnoise", "strengths", cfg.labelnoise.strengths);
        read_opt(*l, "labelnoise", "epochs_normal", cfg.labelnoise.epochs_normal);
        read_opt(*l, "labelnoise", "epochs_pretrain", cfg.labelnoise.epochs_pretrain);
        read_opt(*l, "labelnoise", "epochs_finetune", cfg.labelnoise.epochs_finetune);
        read_opt(*l, "labelnoise", "batch_size", cfg.labelnoise.batch_size);
        read_opt(*l, "labelnoise", "lambda", cfg.labelnoise.lambda);
      }
      break;
    }
    case ExperimentKind::Ood: {
      if (const json* o = find(root, "ood")) {
        reject_unknown_keys(*o, "ood",
                            {"train_heads", "view_mode", "translation", "epochs",
                             "batch_size", "oe_weight", "oe_source", "oe_count",
                             "score_chunk", "scorers"});
        read_opt_list(*o, "ood", "train_heads", cfg.ood.train_heads);
        read_opt(*o, "ood", "view_mode", cfg.ood.view_mode);
        read_opt(*o, "ood", "translation", cfg.ood.translation);
        read_opt(*o, "ood", "epochs", cfg.ood.epochs);
        read_opt(*o, "ood", "batch_size", cfg.ood.batch_size);
        read_opt(*o, "ood", "oe_weight", cfg.ood.oe_weight);
        read_opt(*o, "ood", "oe_source", cfg.ood.oe_source);
        if (cfg.ood.oe_source != "none" && cfg.ood.oe_source != "noise" &&
            cfg.ood.oe_source != "shapes_holdout")
          throw ConfigError("ood.oe_source",
                            "expected 'none', 'noise', or 'shapes_holdout'");
        read_opt(*o, "ood", "oe_count", cfg.ood.oe_count);
        read_opt(*o, "ood", "score_chunk", cfg.ood.score_chunk);
        if (const json* sc = find(*o, "scorers")) {
          if (!sc->is_array()) throw ConfigError("ood.scorers", "expected an array");
          for (std::size_t i = 0; i < sc->size(); ++i)
            cfg.ood.scorers.push_back(
                parse_scorer((*sc)[i], detail::strcat("ood.scorers[", i, "]")));
        }
      }
      break;
    }
  }

  // Canonical hash over the semantic fields. nlohmann::json objects keep keys
  // sorted, so dump() is a stable serialization.
  json semantic = root;
  semantic.erase("output_dir");
  semantic.erase("threads");
  cfg.config_hash = fnv1a64(semantic.dump());
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_experiment_config(text);
}

int effective_threads(int configured) {
  int cap = configured;
  if (const char* env = std::getenv("SELFROBUST_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v >= 1) cap = std::min(cap, static_cast<int>(v));
  }
  return std::max(1, cap);
}

NetworkSpec build_network(const ExperimentConfig& cfg, const std::vector<int>& input_shape) {
  try {
    return NetworkSpec(input_shape, cfg.trunk, cfg.heads);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("network", e.what());
  }
}

Dataset<float> load_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  switch (cfg.dataset.source) {
    case DatasetSource::Synthetic:
      return gen_synthetic_shapes<float>(cfg.dataset.shapes, derive_seed(seed, "dataset"));
    case DatasetSource::CifarBinary:
      return load_cifar_binary<float>(cfg.dataset.cifar_train_paths,
                                      cfg.dataset.cifar_test_path);
    case DatasetSource::Idx:
      return load_idx<float>(cfg.dataset.idx_train_images, cfg.dataset.idx_train_labels,
                             cfg.dataset.idx_test_images, cfg.dataset.idx_test_labels,
                             cfg.dataset.idx_classes);
  }
  throw ConfigError("dataset.source", "unhandled source");
}

}  // namespace selfrobust
