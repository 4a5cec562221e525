#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "selfrobust/dataset.hpp"
#include "selfrobust/network.hpp"
#include "selfrobust/transforms.hpp"

namespace selfrobust {

// Configuration faults carry the offending field path for CLI diagnostics.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error("config: field '" + field + "': " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class ExperimentKind { Adv, Corruptions, LabelNoise, Ood };

ExperimentKind experiment_kind_from_name(const std::string& name);
const char* experiment_kind_name(ExperimentKind kind);
ViewMode view_mode_from_name(const std::string& name);
const char* view_mode_name(ViewMode mode);

enum class DatasetSource { Synthetic, CifarBinary, Idx };

struct DatasetSection {
  DatasetSource source = DatasetSource::Synthetic;
  ShapesConfig shapes;  // Synthetic
  std::vector<std::string> cifar_train_paths;  // CifarBinary
  std::string cifar_test_path;
  std::string idx_train_images, idx_train_labels;  // Idx
  std::string idx_test_images, idx_test_labels;
  int idx_classes = 10;
};

struct OptimizerSection {
  float base_lr = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
};

struct AdvSection {
  int epochs = 5;
  int batch_size = 32;
  float epsilon = 8.0f / 255.0f;
  float alpha = 2.0f / 255.0f;
  int steps = 10;
  bool random_start = true;
  std::string attack_loss = "ce_plus_ss";  // training adversary
  float lambda = 0.5f;
  std::vector<std::string> ss_heads = {"rotation"};
  std::string view_mode = "all_rotations";
  int translation = 0;
  std::vector<int> eval_eps_units = {4, 5, 6, 7, 8, 9, 10};  // units of 1/255
  int eval_steps = 20;
  int eval_chunk = 128;
};

struct CorruptionsSection {
  std::vector<std::string> kinds;     // empty = all six
  std::vector<int> severities = {1, 2, 3, 4, 5};
  std::string ckpt;                   // empty = train below
  int train_epochs = 10;
  int train_batch_size = 32;
  bool train_use_rotations = false;
  float lambda = 0.5f;
  int eval_chunk = 256;
};

struct LabelNoiseSection {
  std::string method = "none";  // none | glc
  bool use_rotations = false;
  bool rotation_head_trainable = true;
  float trusted_fraction = 0.05f;
  std::vector<float> strengths;  // empty = 0.0 .. 1.0 in steps of 0.1
  int epochs_normal = 20;
  int epochs_pretrain = 20;
  int epochs_finetune = 8;
  int batch_size = 32;
  float lambda = 0.5f;
};

struct ScorerSection {
  std::string name;
  std::vector<std::string> heads;
  std::string view_mode = "all_rotations";
  int translation = 0;
  bool log_prob = false;
};

struct OodSection {
  std::vector<std::string> train_heads = {"rotation", "vtrans", "htrans"};
  std::string view_mode = "composed_subset";
  int translation = 0;
  int epochs = 10;
  int batch_size = 32;
  float oe_weight = 0.0f;
  std::string oe_source = "none";  // none | noise | shapes_holdout
  int oe_count = 512;
  int score_chunk = 128;
  std::vector<ScorerSection> scorers;  // empty = rotnet + rot_trans defaults
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Adv;
  std::uint64_t seed = 0;
  std::string output_dir;
  int threads = 1;  // before the SELFROBUST_THREADS cap

  DatasetSection dataset;
  std::vector<LayerDesc> trunk;
  std::map<std::string, int> heads;
  OptimizerSection optimizer;

  AdvSection adv;
  CorruptionsSection corruptions;
  LabelNoiseSection labelnoise;
  OodSection ood;

  // FNV-1a of the canonical config serialization, excluding output_dir and
  // threads (neither changes any computed number).
  std::uint64_t config_hash = 0;
};

ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::string& path);

// Worker count: config value capped by the SELFROBUST_THREADS env var.
int effective_threads(int configured);

NetworkSpec build_network(const ExperimentConfig& cfg, const std::vector<int>& input_shape);
Dataset<float> load_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace selfrobust
