#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "selfrobust/checkpoint.hpp"
#include "selfrobust/harness.hpp"

using namespace selfrobust;
using nlohmann::json;

namespace {

std::string fresh_dir(const std::string& name) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(path);
  std::filesystem::create_directories(path);
  return path.string();
}

json tiny_dataset(int classes, int n_per_class) {
  return json{{"source", "synthetic_shapes"}, {"classes", classes},      {"size", 12},
              {"n_per_class", n_per_class},   {"test_per_class", 2},     {"noise", 0.05},
              {"jitter", 1}};
}

json tiny_network(json heads) {
  return json{{"trunk", json::array({json{{"op", "conv"}, {"filters", 4}, {"kernel", 3},
                                          {"stride", 1}, {"pad", 1}},
                                     json{{"op", "relu"}},
                                     json{{"op", "global_avg_pool"}}})},
              {"heads", std::move(heads)}};
}

ExperimentConfig make_config(json j) { return parse_experiment_config(j.dump()); }

json read_json(const std::string& path) { return json::parse(read_text_file(path)); }

json manifest_sans_timestamp(const std::string& dir) {
  json m = read_json(dir + "/manifest.json");
  REQUIRE(m.contains("timestamp"));
  m.erase("timestamp");
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("harness");

TEST_CASE("parallel_for covers each index once and rethrows") {
  std::vector<std::atomic<int>> hits(97);
  for (auto& h : hits) h = 0;
  parallel_for(97, 4, [&](int i) { ++hits[static_cast<std::size_t>(i)]; });
  for (auto& h : hits) CHECK(h.load() == 1);

  for (auto& h : hits) h = 0;
  parallel_for(97, 1, [&](int i) { ++hits[static_cast<std::size_t>(i)]; });
  for (auto& h : hits) CHECK(h.load() == 1);

  parallel_for(0, 4, [&](int) { FAIL("no tasks expected"); });

  CHECK_THROWS_AS(parallel_for(20, 4,
                               [&](int i) {
                                 if (i == 13) throw std::runtime_error("boom");
                               }),
                  std::runtime_error);
}

TEST_CASE("csv numbers and hex hashes round-trip") {
  CHECK(csv_number(0.5) == "0.5");
  CHECK(csv_number(0.0) == "0");
  for (double v : {1.0 / 3.0, 0.1, 123456.789, 1e-9}) {
    CHECK(std::stod(csv_number(v)) == v);
  }
  CHECK(hex64(0) == "0000000000000000");
  CHECK(hex64(0xdeadbeefull) == "00000000deadbeef");
  CHECK(hex64(~0ull) == "ffffffffffffffff");
}

TEST_CASE("adv experiment with steps=0 reports clean accuracy only") {
  const auto dir = fresh_dir("selfrobust_run_adv");
  json j{{"kind", "adv"},
         {"seed", 180},
         {"output_dir", dir},
         {"dataset", tiny_dataset(3, 3)},
         {"network", tiny_network({{"class", 3}, {"rotation", 4}})},
         {"adv",
          {{"epochs", 1},
           {"batch_size", 8},
           {"steps", 0},
           {"random_start", false}}}};
  run_experiment(make_config(j));

  const json report = read_json(dir + "/report.json");
  CHECK(report.at("schema") == 1);
  CHECK(report.at("kind") == "adv");
  CHECK(report.contains("clean_accuracy"));
  CHECK_FALSE(report.contains("sweep"));
  CHECK(report.at("clean_accuracy").get<double>() >= 0.0);
  CHECK(report.at("clean_accuracy").get<double>() <= 1.0);

  const json log = read_json(dir + "/train_log.json");
  CHECK(log.at("aborted") == false);
  CHECK(log.at("train_history").size() == 1);

  auto params = load_checkpoint<float>(dir + "/model.srb1");
  CHECK_FALSE(params.tensors.empty());

  const json m = read_json(dir + "/manifest.json");
  CHECK(m.at("schema") == 1);
  CHECK(m.at("kind") == "adv");
  CHECK(m.at("seed") == 180);
  CHECK(m.at("config_hash") == hex64(make_config(j).config_hash));
  CHECK(m.at("code_version") == kCodeVersion);

  const std::string digest = summarize_report(dir);
  CHECK(digest.find("kind: adv") != std::string::npos);
  CHECK(digest.find("clean accuracy") != std::string::npos);

  std::filesystem::remove_all(dir);
}

TEST_CASE("adv rerun produces identical artifacts modulo timestamp") {
  const auto dir1 = fresh_dir("selfrobust_rerun_a");
  const auto dir2 = fresh_dir("selfrobust_rerun_b");
  auto cfg_json = [&](const std::string& dir) {
    return json{{"kind", "adv"},
                {"seed", 181},
                {"output_dir", dir},
                {"dataset", tiny_dataset(2, 3)},
                {"network", tiny_network({{"class", 2}, {"rotation", 4}})},
                {"adv",
                 {{"epochs", 1},
                  {"batch_size", 4},
                  {"steps", 1},
                  {"epsilon_units", 4},
                  {"alpha_units", 2},
                  {"eval_eps_units", {0, 4}},
                  {"eval_steps", 2}}}};
  };
  run_experiment(make_config(cfg_json(dir1)));
  run_experiment(make_config(cfg_json(dir2)));

  CHECK(read_text_file(dir1 + "/report.json") == read_text_file(dir2 + "/report.json"));
  CHECK(read_text_file(dir1 + "/sweep.csv") == read_text_file(dir2 + "/sweep.csv"));
  CHECK(manifest_sans_timestamp(dir1) == manifest_sans_timestamp(dir2));

  // The sweep at epsilon 0 must reproduce the clean accuracy.
  const json report = read_json(dir1 + "/report.json");
  REQUIRE(report.at("sweep").size() == 2);
  CHECK(report.at("sweep")[0].at("epsilon_units") == 0);
  CHECK(report.at("sweep")[0].at("accuracy").get<double>() ==
        report.at("clean_accuracy").get<double>());

  std::filesystem::remove_all(dir1);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("corruptions experiment writes an exactly re-aggregable grid") {
  const auto dir = fresh_dir("selfrobust_run_corr");
  json j{{"kind", "corruptions"},
         {"seed", 182},
         {"output_dir", dir},
         {"dataset", tiny_dataset(3, 3)},
         {"network", tiny_network({{"class", 3}})},
         {"corruptions",
          {{"kinds", {"gaussian_noise", "contrast"}},
           {"severities", {0, 2}},
           {"train_epochs", 1},
           {"train_batch_size", 8}}}};
  run_experiment(make_config(j));

  const json report = read_json(dir + "/report.json");
  CHECK(report.at("kind") == "corruptions");
  const double clean = report.at("clean_accuracy").get<double>();
  REQUIRE(report.at("cells").size() == 4);
  double kind_sum = 0.0;
  for (const auto& cell : report.at("cells")) {
    const double acc = cell.at("accuracy").get<double>();
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    if (cell.at("severity").get<int>() == 0) CHECK(acc == clean);
  }
  for (const auto& [name, mean] : report.at("kind_means").items()) {
    CHECK((name == "gaussian_noise" || name == "contrast"));
    kind_sum += mean.get<double>();
  }
  CHECK(report.at("grand_mean").get<double>() == kind_sum / 2.0);

  const std::string csv = read_text_file(dir + "/corruptions.csv");
  CHECK(csv.rfind("kind,severity,accuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  // A trained checkpoint lands next to the report for reuse.
  auto params = load_checkpoint<float>(dir + "/model.srb1");
  CHECK_FALSE(params.tensors.empty());

  const std::string digest = summarize_report(dir);
  CHECK(digest.find("grand mean") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("labelnoise experiment defaults to eleven strengths") {
  const auto dir = fresh_dir("selfrobust_run_ln");
  json j{{"kind", "labelnoise"},
         {"seed", 183},
         {"output_dir", dir},
         {"dataset", tiny_dataset(2, 4)},
         {"network", tiny_network({{"class", 2}, {"rotation", 4}})},
         {"labelnoise",
          {{"epochs_normal", 1}, {"batch_size", 8}}}};
  run_experiment(make_config(j));

  const json report = read_json(dir + "/report.json");
  REQUIRE(report.at("per_strength").size() == 11);
  double sum = 0.0;
  for (int i = 0; i <= 10; ++i) {
    const auto& row = report.at("per_strength")[static_cast<std::size_t>(i)];
    CHECK(row.at("strength").get<double>() ==
          doctest::Approx(i / 10.0).epsilon(1e-6));
    const double err = row.at("test_error").get<double>();
    CHECK(err >= 0.0);
    CHECK(err <= 1.0);
    sum += err;
  }
  CHECK(report.at("mean_error").get<double>() == sum / 11.0);

  const std::string csv = read_text_file(dir + "/labelnoise_curve.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 12);

  const std::string digest = summarize_report(dir);
  CHECK(digest.find("mean error") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("labelnoise sweep is identical on one worker and several") {
  auto cfg_json = [&](const std::string& dir, int threads) {
    return json{{"kind", "labelnoise"},
                {"seed", 184},
                {"output_dir", dir},
                {"threads", threads},
                {"dataset", tiny_dataset(2, 4)},
                {"network", tiny_network({{"class", 2}, {"rotation", 4}})},
                {"labelnoise",
                 {{"strengths", {0.0, 0.5, 1.0}},
                  {"epochs_normal", 1},
                  {"batch_size", 8}}}};
  };
  const auto serial = fresh_dir("selfrobust_ln_serial");
  const auto pooled = fresh_dir("selfrobust_ln_pooled");
  unsetenv("SELFROBUST_THREADS");
  run_experiment(make_config(cfg_json(serial, 1)));
  run_experiment(make_config(cfg_json(pooled, 3)));
  // threads and output_dir are excluded from the hash, so the whole report
  // file must match byte for byte.
  CHECK(read_text_file(serial + "/report.json") ==
        read_text_file(pooled + "/report.json"));
  std::filesystem::remove_all(serial);
  std::filesystem::remove_all(pooled);
}

TEST_CASE("ood experiment reports a table per scorer with its mean row") {
  const auto dir = fresh_dir("selfrobust_run_ood");
  json j{{"kind", "ood"},
         {"seed", 185},
         {"output_dir", dir},
         {"dataset", tiny_dataset(2, 4)},
         {"network", tiny_network({{"rotation", 4}, {"vtrans", 3}, {"htrans", 3}})},
         {"ood", {{"epochs", 1}, {"batch_size", 8}}}};
  run_experiment(make_config(j));

  const json report = read_json(dir + "/report.json");
  CHECK(report.at("methods") == json::array({"rotnet", "rot_trans"}));
  CHECK(report.at("classes") == json::array({0, 1}));
  REQUIRE(report.at("auroc_table").size() == 2);
  for (std::size_t m = 0; m < 2; ++m) {
    double col = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
      const double a = report.at("auroc_table")[c][m].get<double>();
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
      col += a;
    }
    CHECK(report.at("mean_auroc")[m].get<double>() == col / 2.0);
  }

  const std::string csv = read_text_file(dir + "/ood_table.csv");
  CHECK(csv.rfind("class,rotnet,rot_trans\n", 0) == 0);
  CHECK(csv.find("\nmean,") != std::string::npos);

  const std::string digest = summarize_report(dir);
  CHECK(digest.find("mean AUROC") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("experiment file runner maps failures to exit codes") {
  const auto dir = fresh_dir("selfrobust_run_err");
  const auto cfg_path = dir + "/cfg.json";

  // Unknown key -> config diagnostic, exit 2.
  json bad{{"kind", "adv"},
           {"seed", 1},
           {"output_dir", dir},
           {"dataset", tiny_dataset(2, 3)},
           {"network", tiny_network({{"class", 2}})},
           {"wat", 1}};
  write_text_file(cfg_path, bad.dump());
  CHECK(run_experiment_file(cfg_path) == 2);

  CHECK(run_experiment_file(dir + "/missing.json") == 2);

  // Valid config whose checkpoint does not exist -> runtime failure, exit 1.
  json runtime{{"kind", "corruptions"},
               {"seed", 1},
               {"output_dir", dir},
               {"dataset", tiny_dataset(2, 3)},
               {"network", tiny_network({{"class", 2}})},
               {"corruptions", {{"ckpt", dir + "/nope.srb1"}, {"severities", {1}}}}};
  write_text_file(cfg_path, runtime.dump());
  CHECK(run_experiment_file(cfg_path) == 1);

  std::filesystem::remove_all(dir);
}

TEST_CASE("adv train and eval share checkpoints across directories") {
  const auto train_dir = fresh_dir("selfrobust_adv_trn");
  const auto eval_dir = fresh_dir("selfrobust_adv_evl");
  const auto ckpt = train_dir + "/shared.srb1";
  auto j = [&](const std::string& dir) {
    return json{{"kind", "adv"},
                {"seed", 186},
                {"output_dir", dir},
                {"dataset", tiny_dataset(2, 3)},
                {"network", tiny_network({{"class", 2}, {"rotation", 4}})},
                {"adv", {{"epochs", 1}, {"batch_size", 8}, {"steps", 0},
                         {"random_start", false}}}};
  };
  run_adv_train(make_config(j(train_dir)), ckpt);
  CHECK(std::filesystem::exists(ckpt));
  run_adv_eval(make_config(j(eval_dir)), ckpt);
  CHECK(read_json(eval_dir + "/report.json").contains("clean_accuracy"));

  CHECK_THROWS(run_adv_eval(make_config(j(eval_dir)), train_dir + "/absent.srb1"));

  std::filesystem::remove_all(train_dir);
  std::filesystem::remove_all(eval_dir);
}

TEST_SUITE_END();
