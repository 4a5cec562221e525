#include <cmath>

#include "doctest.h"
#include "selfrobust/labelnoise.hpp"

using namespace selfrobust;

namespace {

NetworkSpec small_cls(int classes = 3, int h = 8) {
  return NetworkSpec({1, h, h},
                     {LayerDesc::conv2d(4, 3, 1, 1), LayerDesc::relu(),
                      LayerDesc::global_avg_pool()},
                     {{"class", classes}, {"rotation", 4}});
}

template <typename S>
Tensor<S> random_images(Rng& rng, int n, int h) {
  Tensor<S> t({n, 1, h, h});
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<S>(rng.uniform(0.05, 0.95));
  return t;
}

}  // namespace

TEST_SUITE_BEGIN("labelnoise");

TEST_CASE("transition matrix closed form") {
  auto c0 = corruption_matrix<double>(4, 0.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(c0.entries(i, j) == (i == j ? 1.0 : 0.0));

  auto c1 = corruption_matrix<double>(4, 1.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(c1.entries(i, j) == 0.25);

  auto ch = corruption_matrix<double>(10, 0.5);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j)
      CHECK(ch.entries(i, j) == doctest::Approx(i == j ? 0.55 : 0.05).epsilon(1e-12));

  CHECK_THROWS_AS((void)corruption_matrix<double>(4, -0.1), std::invalid_argument);
  CHECK_THROWS_AS((void)corruption_matrix<double>(4, 1.5), std::invalid_argument);
  CHECK_THROWS_AS((void)corruption_matrix<double>(1, 0.5), std::invalid_argument);
}

TEST_CASE("matrix rows sum to one exactly in the working precision") {
  for (int k : {2, 3, 4, 7, 10, 13}) {
    for (double s : {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
      auto cf = corruption_matrix<float>(k, static_cast<float>(s));
      for (int i = 0; i < k; ++i) {
        float sum = 0.0f;
        for (int j = 0; j < k; ++j) sum += cf.entries(i, j);
        CHECK(sum == 1.0f);
      }
      auto cd = corruption_matrix<double>(k, s);
      for (int i = 0; i < k; ++i) {
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += cd.entries(i, j);
        CHECK(sum == 1.0);
      }
      CHECK_NOTHROW(cf.validate());
      CHECK_NOTHROW(cd.validate());
    }
  }
}

TEST_CASE("matrix validation rejects malformed inputs") {
  CorruptionMatrix<double> bad;
  bad.entries = MatX<double>::Constant(3, 2, 0.5);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad.entries = MatX<double>::Identity(3, 3);
  bad.entries(0, 0) = -1.0;
  bad.entries(0, 1) = 2.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  bad.entries = MatX<double>::Identity(3, 3);
  bad.entries(1, 1) = 0.9;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("identity matrix leaves labels unchanged") {
  std::vector<int> labels = {0, 3, 1, 2, 2, 0, 1, 3};
  auto c = corruption_matrix<double>(4, 0.0);
  CHECK(corrupt_labels(labels, c, 99) == labels);
}

TEST_CASE("corrupted labels are deterministic per seed") {
  std::vector<int> labels(200);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 4);
  auto c = corruption_matrix<double>(4, 0.6);
  CHECK(corrupt_labels(labels, c, 7) == corrupt_labels(labels, c, 7));
  CHECK(corrupt_labels(labels, c, 7) != corrupt_labels(labels, c, 8));
  std::vector<int> bad = {4};
  CHECK_THROWS_AS((void)corrupt_labels(bad, c, 7), std::out_of_range);
}

TEST_CASE("full corruption yields a uniform histogram at scale") {
  const int n = 100000, k = 4;
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % k;
  auto c = corruption_matrix<double>(k, 1.0);
  auto noisy = corrupt_labels(labels, c, 1234);
  std::vector<int> hist(k, 0);
  for (int l : noisy) ++hist[static_cast<std::size_t>(l)];
  const double expect = static_cast<double>(n) / k;
  const double se = std::sqrt(n * (1.0 / k) * (1.0 - 1.0 / k));
  for (int j = 0; j < k; ++j)
    CHECK(std::abs(hist[static_cast<std::size_t>(j)] - expect) <= 4.0 * se);
}

TEST_CASE("empirical transition frequencies track the matrix") {
  const int n = 100000, k = 4;
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % k;
  const double s = 0.5;
  auto c = corruption_matrix<double>(k, s);
  auto noisy = corrupt_labels(labels, c, 555);

  MatX<double> counts = MatX<double>::Zero(k, k);
  std::vector<double> row_n(static_cast<std::size_t>(k), 0.0);
  for (int i = 0; i < n; ++i) {
    counts(labels[static_cast<std::size_t>(i)], noisy[static_cast<std::size_t>(i)]) += 1.0;
    row_n[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += 1.0;
  }
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double p = c.entries(i, j);
      const double se = std::sqrt(p * (1.0 - p) / row_n[static_cast<std::size_t>(i)]);
      CHECK(std::abs(counts(i, j) / row_n[static_cast<std::size_t>(i)] - p) <= 4.0 * se);
    }

  // Overall corrupted fraction concentrates on s*(K-1)/K.
  int changed = 0;
  for (int i = 0; i < n; ++i)
    if (noisy[static_cast<std::size_t>(i)] != labels[static_cast<std::size_t>(i)]) ++changed;
  const double pc = s * (k - 1.0) / k;
  const double se = std::sqrt(pc * (1.0 - pc) / n);
  CHECK(std::abs(static_cast<double>(changed) / n - pc) <= 4.0 * se);
}

TEST_CASE("noisy dataset keeps clean labels on the trusted subset") {
  Rng rng(120);
  auto images = random_images<float>(rng, 20, 8);
  std::vector<int> labels(20);
  for (int i = 0; i < 20; ++i) labels[i] = i % 3;
  auto c = corruption_matrix<float>(3, 1.0f);
  auto data = make_noisy_dataset(images, labels, c, 0.25, 42);
  data.validate();

  int trusted = 0;
  for (std::size_t i = 0; i < data.trusted.size(); ++i) {
    if (data.trusted[i]) {
      ++trusted;
      CHECK(data.noisy_labels[i] == data.clean_labels[i]);
      CHECK(data.train_label(i) == data.clean_labels[i]);
    } else {
      CHECK(data.train_label(i) == data.noisy_labels[i]);
    }
  }
  CHECK(trusted == 5);

  CHECK_THROWS_AS((void)make_noisy_dataset(images, labels, c, 1.0, 42),
                  std::invalid_argument);
}

TEST_CASE("glc estimate of a one-hot classifier is the identity") {
  // Images one-hot-code their class; saturated dense weights make the
  // softmax collapse to the clean label.
  const int k = 3;
  NetworkSpec spec({1, 1, k}, {LayerDesc::flatten()}, {{"class", k}});
  auto params = make_parameter_set<float>(spec);
  auto& w = params.at("head.class.weight");
  for (int c = 0; c < k; ++c) w(c, c) = 50.0f;

  NoisyLabeledDataset<float> data;
  data.images = Tensor<float>({2 * k, 1, 1, k});
  for (int i = 0; i < 2 * k; ++i) {
    data.images(i, 0, 0, i % k) = 1.0f;
    data.clean_labels.push_back(i % k);
    data.noisy_labels.push_back((i + 1) % k);  // noise must not matter
    data.trusted.push_back(1);
  }
  auto est = glc_estimate(spec, params, data);
  CHECK(est.fallback_classes.empty());
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      CHECK(std::abs(est.matrix.entries(i, j) - (i == j ? 1.0f : 0.0f)) < 1e-6f);
}

TEST_CASE("glc estimate recovers a planted transition matrix") {
  // With x = e_y and W = log C, the softmax equals row y of C, so the
  // estimate matches C up to floating-point renormalization.
  const int k = 3;
  const double s = 0.4;
  auto c = corruption_matrix<float>(k, static_cast<float>(s));
  NetworkSpec spec({1, 1, k}, {LayerDesc::flatten()}, {{"class", k}});
  auto params = make_parameter_set<float>(spec);
  auto& w = params.at("head.class.weight");
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      w(i, j) = std::log(c.entries(i, j));

  const int per_class = 30;
  NoisyLabeledDataset<float> data;
  data.images = Tensor<float>({per_class * k, 1, 1, k});
  for (int i = 0; i < per_class * k; ++i) {
    data.images(i, 0, 0, i % k) = 1.0f;
    data.clean_labels.push_back(i % k);
    data.noisy_labels.push_back(i % k);
    data.trusted.push_back(1);
  }
  auto est = glc_estimate(spec, params, data);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      CHECK(std::abs(est.matrix.entries(i, j) - c.entries(i, j)) < 1e-5);
}

TEST_CASE("glc estimate: single trusted example per class copies its softmax") {
  auto spec = small_cls(3);
  Rng rng(121);
  auto params = init_parameters<float>(spec, rng);
  NoisyLabeledDataset<float> data;
  data.images = random_images<float>(rng, 3, 8);
  data.clean_labels = {0, 1, 2};
  data.noisy_labels = {0, 1, 2};
  data.trusted = {1, 1, 1};

  auto est = glc_estimate(spec, params, data);
  auto probs = softmax(forward_logits(spec, params, data.images, "class"));
  for (int i = 0; i < 3; ++i) {
    float sum = 0.0f;
    for (int j = 0; j < 3; ++j) sum += probs(i, j);
    for (int j = 0; j < 3; ++j)
      CHECK(est.matrix.entries(i, j) == doctest::Approx(probs(i, j) / sum).epsilon(1e-5));
  }
}

TEST_CASE("glc estimate records identity fallbacks for absent classes") {
  auto spec = small_cls(3);
  Rng rng(122);
  auto params = init_parameters<float>(spec, rng);
  NoisyLabeledDataset<float> data;
  data.images = random_images<float>(rng, 4, 8);
  data.clean_labels = {0, 1, 0, 1};  // class 2 never trusted
  data.noisy_labels = {0, 1, 0, 1};
  data.trusted = {1, 1, 1, 1};
  auto est = glc_estimate(spec, params, data);
  REQUIRE(est.fallback_classes == std::vector<int>{2});
  for (int j = 0; j < 3; ++j)
    CHECK(est.matrix.entries(2, j) == (j == 2 ? 1.0f : 0.0f));

  data.trusted = {0, 0, 0, 0};
  CHECK_THROWS_AS((void)glc_estimate(spec, params, data), std::invalid_argument);
}

TEST_CASE("identity correction reduces to plain cross-entropy bitwise") {
  Rng rng(123);
  Tensor<float> logits({5, 4});
  for (std::int64_t i = 0; i < logits.size(); ++i)
    logits[i] = static_cast<float>(rng.uniform(-3.0, 3.0));
  std::vector<int> labels = {0, 3, 2, 1, 1};
  auto ident = corruption_matrix<float>(4, 0.0f);
  int floored = -1;
  CHECK(glc_corrected_loss(logits, labels, ident, &floored) ==
        cross_entropy(logits, labels));
  CHECK(floored == 0);
}

TEST_CASE("uniform correction makes the loss constant at ln K") {
  Rng rng(124);
  Tensor<float> logits({4, 5});
  for (std::int64_t i = 0; i < logits.size(); ++i)
    logits[i] = static_cast<float>(rng.uniform(-50.0, 50.0));
  auto uniform = corruption_matrix<float>(5, 1.0f);
  CHECK(glc_corrected_loss(logits, {0, 4, 2, 3}, uniform) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-5));
}

TEST_CASE("forward correction matches the hand-computed mixture") {
  // softmax (0.8, 0.2), C = [[.9,.1],[.2,.8]], noisy label 0:
  // q = 0.8*0.9 + 0.2*0.2 = 0.76.
  Tensor<double> logits({1, 2}, {std::log(0.8), std::log(0.2)});
  CorruptionMatrix<double> chat;
  chat.entries = MatX<double>(2, 2);
  chat.entries << 0.9, 0.1, 0.2, 0.8;
  CHECK(glc_corrected_loss(logits, {0}, chat) ==
        doctest::Approx(-std::log(0.76)).epsilon(1e-12));
}

TEST_CASE("vanishing mixture probability is floored and flagged") {
  Tensor<double> logits({1, 2}, {0.0, 0.0});
  CorruptionMatrix<double> chat;
  chat.entries = MatX<double>(2, 2);
  chat.entries << 1.0, 0.0, 1.0, 0.0;  // column 1 is zero
  int floored = 0;
  const double loss = glc_corrected_loss(logits, {1}, chat, &floored);
  CHECK(floored == 1);
  CHECK(loss == doctest::Approx(-std::log(1e-12)).epsilon(1e-9));

  CHECK_THROWS_AS((void)glc_corrected_loss(logits, {0, 1}, chat),
                  std::invalid_argument);
}

TEST_CASE("strength-zero run equals ordinary supervised training") {
  auto spec = small_cls(3);
  Rng rng(125);
  auto images = random_images<float>(rng, 12, 8);
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) labels.push_back(i % 3);
  auto test_images = random_images<float>(rng, 6, 8);
  std::vector<int> test_labels = {0, 1, 2, 0, 1, 2};

  LabelNoiseConfig<float> cfg;
  cfg.epochs_normal = 2;
  cfg.batch_size = 6;

  ParameterSet<float> run_params;
  auto r = label_noise_run(spec, images, labels, test_images, test_labels, 0.0f, cfg,
                           9001, &run_params);

  ParameterSet<float> manual;
  {
    Rng init_rng(derive_seed(9001, "init"));
    manual = init_parameters<float>(spec, init_rng);
  }
  train_supervised(spec, manual, images, labels, false, cfg.lambda, cfg.epochs_normal,
                   cfg.batch_size, cfg.base_lr, cfg.momentum, cfg.weight_decay, 9001);
  for (const auto& [name, t] : manual.tensors)
    CHECK(bitwise_equal(t, run_params.at(name)));
  CHECK(r.test_error == 1.0 - eval_accuracy(spec, manual, test_images, test_labels));
}

TEST_CASE("single-strength runs are deterministic") {
  auto spec = small_cls(3);
  Rng rng(126);
  auto images = random_images<float>(rng, 9, 8);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1, 2};
  auto test_images = random_images<float>(rng, 3, 8);
  std::vector<int> test_labels = {0, 1, 2};

  LabelNoiseConfig<float> cfg;
  cfg.epochs_normal = 1;
  cfg.batch_size = 4;
  auto a = label_noise_run(spec, images, labels, test_images, test_labels, 0.5f, cfg, 11);
  auto b = label_noise_run(spec, images, labels, test_images, test_labels, 0.5f, cfg, 11);
  CHECK(a.test_error == b.test_error);
}

TEST_CASE("glc method runs both stages and stays in range") {
  auto spec = small_cls(3);
  Rng rng(127);
  auto images = random_images<float>(rng, 12, 8);
  std::vector<int> labels;
  for (int i = 0; i < 12; ++i) labels.push_back(i % 3);
  auto test_images = random_images<float>(rng, 6, 8);
  std::vector<int> test_labels = {0, 1, 2, 0, 1, 2};

  LabelNoiseConfig<float> cfg;
  cfg.method = LabelNoiseMethod::Glc;
  cfg.trusted_fraction = 0.4f;
  cfg.epochs_normal = 2;
  cfg.batch_size = 6;
  auto r = label_noise_run(spec, images, labels, test_images, test_labels, 0.7f, cfg, 77);
  CHECK(r.test_error >= 0.0);
  CHECK(r.test_error <= 1.0);
}

TEST_CASE("rotation pre-training path runs with both stages") {
  auto spec = small_cls(3);
  Rng rng(128);
  auto images = random_images<float>(rng, 8, 8);
  std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0, 1};
  auto test_images = random_images<float>(rng, 4, 8);
  std::vector<int> test_labels = {0, 1, 2, 0};

  LabelNoiseConfig<float> cfg;
  cfg.use_rotations = true;
  cfg.epochs_pretrain = 2;
  cfg.epochs_finetune = 1;
  cfg.batch_size = 4;
  auto r = label_noise_run(spec, images, labels, test_images, test_labels, 0.3f, cfg, 88);
  CHECK(r.test_error >= 0.0);
  CHECK(r.test_error <= 1.0);
}

TEST_CASE("protocol reports eleven default strengths and their exact mean") {
  auto spec = small_cls(2);
  Rng rng(129);
  auto images = random_images<float>(rng, 8, 8);
  std::vector<int> labels = {0, 1, 0, 1, 0, 1, 0, 1};
  auto test_images = random_images<float>(rng, 4, 8);
  std::vector<int> test_labels = {0, 1, 0, 1};

  LabelNoiseConfig<float> cfg;
  cfg.epochs_normal = 1;
  cfg.batch_size = 8;
  auto report = label_noise_protocol(spec, images, labels, test_images, test_labels,
                                     cfg, 333);
  REQUIRE(report.per_strength.size() == 11);
  double sum = 0.0;
  for (int i = 0; i <= 10; ++i) {
    CHECK(report.per_strength[static_cast<std::size_t>(i)].strength ==
          static_cast<float>(i) / 10.0f);
    sum += report.per_strength[static_cast<std::size_t>(i)].test_error;
  }
  CHECK(report.mean_error == sum / 11.0);

  // A strength cell recomputed in isolation matches the in-protocol cell.
  auto solo = label_noise_run(spec, images, labels, test_images, test_labels,
                              report.per_strength[3].strength, cfg,
                              derive_seed(333, "strength-3"));
  CHECK(solo.test_error == report.per_strength[3].test_error);
}

TEST_SUITE_END();
