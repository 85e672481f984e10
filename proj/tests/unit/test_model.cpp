#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "../common/oracles.hpp"
#include "glag/error.hpp"
#include "glag/losses.hpp"
#include "glag/model.hpp"

using namespace glag;

namespace {

Matrix random_inputs(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix x(rows, cols);
  for (double& v : x.data()) v = rng.uniform(-1.0, 1.0);
  return x;
}

double mean_ce(const Matrix& logits, const std::vector<int>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i)
    s += oracle::ce(Vector(logits.row(i).begin(), logits.row(i).end()), y[i]);
  return s / double(logits.rows());
}

}  // namespace

TEST_CASE("forward matches an independent evaluation") {
  Rng rng(4);
  const std::vector<std::size_t> hidden{6, 5};
  auto p = init_model(4, hidden, 3, rng);
  enable_scaling(p);
  for (double& s : p.scales) s = rng.uniform(0.5, 2.0);
  for (double& b : p.classifier_bias) b = rng.uniform(-1.0, 1.0);
  const Matrix x = random_inputs(7, 4, rng);
  const Matrix ref = oracle::mlp_logits(p, x);
  const BatchCache cache = forward_batch(p, x);
  CHECK(oracle::max_abs_diff(cache.logits, ref) < 1e-12);
  const auto single = forward(p, x.row(2));
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(single.logits[k] - ref(2, k)) < 1e-12);
  CHECK(single.feature.size() == 5);
  CHECK(p.input_dim() == 4);
  CHECK(p.feature_dim() == 5);
  CHECK(p.num_classes() == 3);
}

TEST_CASE("mlp backprop against finite differences") {
  Rng rng(21);
  int checked = 0;
  while (checked < 30) {
    const std::size_t d = 2 + rng.below(7), l = 2 + rng.below(4), b = 1 + rng.below(16);
    const std::vector<std::size_t> hidden{3 + rng.below(6), 2 + rng.below(6)};
    auto p = init_model(d, hidden, l, rng);
    for (auto& layer : p.feature_layers)
      for (double& v : layer.bias) v = rng.uniform(-0.3, 0.3);
    if (rng.uniform() < 0.5) {
      enable_scaling(p);
      for (double& s : p.scales) s = rng.uniform(0.5, 2.0);
    }
    const Matrix x = random_inputs(b, d, rng);
    if (oracle::min_abs_preactivation(p, x) < 1e-3) continue;
    std::vector<int> y(b);
    for (int& v : y) v = static_cast<int>(rng.below(l));

    const auto cache = forward_batch(p, x);
    const BatchLoss loss = batch_loss(LossKind::CrossEntropy, cache.logits, y, {}, 0.0);
    const Vector analytic = oracle::flatten(backward(p, cache, loss.grad));

    auto probe = p;
    auto slots = oracle::parameter_slots(probe);
    Vector theta;
    for (double* s : slots) theta.push_back(*s);
    const Vector numeric = oracle::numeric_gradient(
        [&](const Vector& t) {
          for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] = t[i];
          return mean_ce(oracle::mlp_logits(probe, x), y);
        },
        theta);
    CHECK(oracle::relative_error(analytic, numeric) < 1e-4);
    ++checked;
  }
}

TEST_CASE("classifier_backward leaves feature layers alone") {
  Rng rng(2);
  const std::vector<std::size_t> hidden{4};
  auto p = init_model(3, hidden, 3, rng);
  enable_scaling(p);
  const Matrix f = random_inputs(5, 4, rng);
  Matrix dz(5, 3, 0.1);
  const auto g = classifier_backward(p, f, dz);
  CHECK_FALSE(g.has_feature_grads());
  CHECK(g.scales.size() == 3);
  CHECK(g.classifier_bias == Vector(3, 0.5));
}

TEST_CASE("sgd with momentum and coupled weight decay") {
  ModelParams p;
  p.classifier_weight = Matrix(1, 1, 1.0);
  p.classifier_bias = {0.0};
  OptState opt = make_opt_state(p, 0.9, 0.1);
  Gradients g;
  g.classifier_weight = Matrix(1, 1, 0.5);
  g.classifier_bias = {0.0};
  sgd_step(p, opt, g, 0.1, {false, true, true, true});
  // v = 0.5 + 0.1 * 1 = 0.6; p = 1 - 0.06
  CHECK(p.classifier_weight(0, 0) == doctest::Approx(0.94).epsilon(1e-14));
  sgd_step(p, opt, g, 0.1, {false, true, true, true});
  // v = 0.9 * 0.6 + 0.5 + 0.1 * 0.94 = 1.134
  CHECK(p.classifier_weight(0, 0) == doctest::Approx(0.94 - 0.1134).epsilon(1e-14));

  ParamMask frozen{false, false, true, true};
  const double before = p.classifier_weight(0, 0);
  sgd_step(p, opt, g, 0.1, frozen);
  CHECK(p.classifier_weight(0, 0) == before);

  g.classifier_weight(0, 0) = NAN;
  CHECK_THROWS_AS(sgd_step(p, opt, g, 0.1), NumericError);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 10, 0.1, 0.0) == doctest::Approx(0.1));
  CHECK(cosine_lr(5, 10, 0.1, 0.0) == doctest::Approx(0.05));
  CHECK(cosine_lr(10, 10, 0.1, 0.01) == doctest::Approx(0.01));
  double prev = 1.0;
  for (int t = 0; t <= 40; ++t) {
    const double lr = cosine_lr(t, 40, 0.5, 0.0);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(cosine_lr(11, 10, 0.1, 0.0), ContractViolation);
}

TEST_CASE("reset and scaling") {
  Rng rng(8);
  const std::vector<std::size_t> hidden{4};
  auto p = init_model(2, hidden, 3, rng);
  const auto layers = p.feature_layers;
  enable_scaling(p);
  CHECK(p.scales == Vector(3, 1.0));
  reset_classifier(p, rng);
  CHECK(p.feature_layers == layers);
  CHECK_FALSE(p.scaling_enabled());
  CHECK(p.classifier_bias == Vector(3, 0.0));
}

TEST_CASE("checkpoint round trip and corruption") {
  Rng rng(5);
  const std::vector<std::size_t> hidden{5, 4};
  Checkpoint c{init_model(3, hidden, 4, rng), {40, 20, 10, 5}};
  enable_scaling(c.params);
  c.params.scales[2] = 1.5;
  const auto bytes = encode_checkpoint(c);
  CHECK(decode_checkpoint(bytes) == c);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(decode_checkpoint(flipped), ParseError);
  auto cut = bytes;
  cut.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(cut), ParseError);
  CHECK_THROWS_AS(decode_checkpoint({}), ParseError);

  Checkpoint plain{init_model(2, hidden, 2, rng), {}};
  CHECK(decode_checkpoint(encode_checkpoint(plain)) == plain);

  const auto path = std::filesystem::temp_directory_path() / "glag_test_model.ckpt";
  save_checkpoint(c, path);
  CHECK(load_checkpoint(path) == c);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/m.ckpt"), IoError);
}
