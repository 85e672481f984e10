#include <doctest.h>

#include <cmath>

#include "../common/oracles.hpp"
#include "glag/error.hpp"
#include "glag/losses.hpp"

using namespace glag;

namespace {

Vector random_logits(std::size_t l, Rng& rng) {
  Vector z(l);
  for (double& v : z) v = rng.uniform(-3.0, 3.0);
  return z;
}

Vector random_priors(std::size_t l, Rng& rng) {
  Vector p(l);
  double s = 0.0;
  for (double& v : p) s += (v = rng.uniform(0.01, 1.0));
  for (double& v : p) v /= s;
  return p;
}

}  // namespace

TEST_CASE("alpha schedule endpoints and midpoint") {
  for (AlphaForm f : {AlphaForm::Convex, AlphaForm::Linear, AlphaForm::Concave}) {
    ScheduleSpec s{1.0, 2.0, f, 60.0};
    CHECK(alpha_at(s, 0.0) == 0.0);
    CHECK(alpha_at(s, 60.0) == 1.0);
    s = {0.5, 4.0, f, 10.0};
    CHECK(alpha_at(s, 10.0) == 1.5);
  }
  const ScheduleSpec convex{1.0, 2.0, AlphaForm::Convex, 2.0};
  CHECK(std::abs(alpha_at(convex, 1.0) - (std::sqrt(2.0) - 1.0)) < 1e-12);
  const ScheduleSpec linear{1.0, 3.0, AlphaForm::Linear, 4.0};
  CHECK(alpha_at(linear, 1.0) == doctest::Approx(0.5));
  // concave: 2 * log(1 + 2 * 0.5) / log 3
  const ScheduleSpec concave{1.0, 3.0, AlphaForm::Concave, 4.0};
  CHECK(alpha_at(concave, 2.0) == doctest::Approx(2.0 * std::log(2.0) / std::log(3.0)));

  CHECK_THROWS_AS(alpha_at(convex, -1.0), ContractViolation);
  CHECK_THROWS_AS(alpha_at(convex, 3.0), ContractViolation);
  CHECK_THROWS_AS(alpha_at({1.0, 1.0, AlphaForm::Convex, 1.0}, 0.5), ContractViolation);
}

TEST_CASE("alpha schedule is monotone and ordered") {
  for (double c : {2.0, 4.0, 8.0}) {
    double prev[3] = {0, 0, 0};
    for (int i = 0; i <= 1000; ++i) {
      const double t = i / 1000.0;
      const double cv = alpha_at({1.0, c, AlphaForm::Convex, 1.0}, t);
      const double li = alpha_at({1.0, c, AlphaForm::Linear, 1.0}, t);
      const double cc = alpha_at({1.0, c, AlphaForm::Concave, 1.0}, t);
      CHECK(cv >= prev[0]);
      CHECK(li >= prev[1]);
      CHECK(cc >= prev[2]);
      CHECK(cv <= li + 1e-12);
      CHECK(li <= cc + 1e-12);
      prev[0] = cv;
      prev[1] = li;
      prev[2] = cc;
    }
  }
}

TEST_CASE("name parsing") {
  CHECK(parse_alpha_form("concave") == AlphaForm::Concave);
  CHECK(std::string(alpha_form_name(AlphaForm::Linear)) == "linear");
  CHECK(parse_loss_kind("logit-adjust") == LossKind::LogitAdjust);
  CHECK(std::string(loss_kind_name(LossKind::GraLoss)) == "graloss");
  CHECK_THROWS(parse_loss_kind("focal"));
  CHECK_THROWS(parse_alpha_form("cubic"));
}

TEST_CASE("cross entropy values") {
  const auto v = cross_entropy(Vector{0.0, 0.0}, 1);
  CHECK(v.loss == doctest::Approx(std::log(2.0)));
  CHECK(v.grad[0] == doctest::Approx(0.5));
  CHECK(v.grad[1] == doctest::Approx(-0.5));
  const auto big = cross_entropy(Vector{1000.0, 0.0}, 0);
  CHECK(big.loss == doctest::Approx(0.0));
  CHECK(std::isfinite(cross_entropy(Vector{1000.0, 0.0}, 1).loss));
  CHECK_THROWS_AS(cross_entropy(Vector{0.0, 0.0}, 2), ContractViolation);
}

TEST_CASE("logit adjustment matches its definition") {
  Rng rng(12);
  for (int t = 0; t < 200; ++t) {
    const std::size_t l = 2 + rng.below(6);
    const Vector z = random_logits(l, rng), p = random_priors(l, rng);
    const int y = static_cast<int>(rng.below(l));
    const double a = rng.uniform(0.0, 2.0);
    Vector adj(z);
    for (std::size_t k = 0; k < l; ++k) adj[k] += a * std::log(p[k]);
    CHECK(gra_loss(z, y, p, a).loss == doctest::Approx(oracle::ce(adj, y)).epsilon(1e-12));
    CHECK(logit_adjusted_loss(z, y, p, a).loss == gra_loss(z, y, p, a).loss);
  }
}

TEST_CASE("gra_loss collapses to cross entropy") {
  Rng rng(13);
  for (int t = 0; t < 300; ++t) {
    const std::size_t l = 2 + rng.below(6);
    const Vector z = random_logits(l, rng);
    const int y = static_cast<int>(rng.below(l));
    const auto ce = cross_entropy(z, y);
    const auto zero = gra_loss(z, y, random_priors(l, rng), 0.0);
    const auto uni = gra_loss(z, y, Vector(l, 1.0 / double(l)), rng.uniform(0.1, 3.0));
    CHECK(zero.loss == ce.loss);
    CHECK(uni.loss == ce.loss);
    CHECK(zero.grad == ce.grad);
  }
}

TEST_CASE("per-sample gradients against finite differences") {
  Rng rng(14);
  for (int t = 0; t < 100; ++t) {
    const std::size_t l = 2 + rng.below(4);
    const Vector z = random_logits(l, rng), q = random_logits(l, rng), p = random_priors(l, rng);
    const int y = static_cast<int>(rng.below(l));
    const double a = rng.uniform(0.0, 2.0), temp = rng.uniform(0.5, 4.0);

    auto num = oracle::numeric_gradient([&](const Vector& x) { return oracle::ce(x, y); }, z);
    CHECK(oracle::relative_error(cross_entropy(z, y).grad, num) < 1e-6);

    num = oracle::numeric_gradient(
        [&](const Vector& x) {
          Vector adj(x);
          for (std::size_t k = 0; k < l; ++k) adj[k] += a * std::log(p[k]);
          return oracle::ce(adj, y);
        },
        z);
    CHECK(oracle::relative_error(gra_loss(z, y, p, a).grad, num) < 1e-6);

    num = oracle::numeric_gradient([&](const Vector& x) { return oracle::kd(x, q, temp); }, z);
    const auto kd = kd_loss(z, q, temp);
    CHECK(oracle::relative_error(kd.grad, num) < 1e-5);
    CHECK(kd.loss == doctest::Approx(oracle::kd(z, q, temp)).epsilon(1e-10));
  }
}

TEST_CASE("kd loss vanishes when student equals teacher") {
  const Vector z{0.3, -1.0, 2.0};
  const auto v = kd_loss(z, z, 2.0);
  CHECK(v.loss == doctest::Approx(0.0));
  for (double g : v.grad) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("stage-two composite") {
  Rng rng(15);
  const std::size_t b = 6, l = 4;
  Matrix z(b, l), q(b, l);
  for (double& v : z.data()) v = rng.uniform(-2.0, 2.0);
  for (double& v : q.data()) v = rng.uniform(-2.0, 2.0);
  const std::vector<int> y{0, 1, 2, 3, 0, 1};
  const bool head[b] = {true, false, true, false, false, true};
  const double alpha = 0.7, temp = 2.0;
  const auto out = stage2_loss(z, y, q, alpha, std::span<const bool>(head, b), temp);

  double expect = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const Vector zi(z.row(i).begin(), z.row(i).end()), qi(q.row(i).begin(), q.row(i).end());
    expect += oracle::ce(zi, y[i]) + (head[i] ? alpha * oracle::kd(zi, qi, temp) : 0.0);
  }
  CHECK(out.loss == doctest::Approx(expect / b).epsilon(1e-12));

  const auto num = oracle::numeric_gradient(
      [&](const Vector& flat) {
        Matrix m(b, l, flat);
        return stage2_loss(m, y, q, alpha, std::span<const bool>(head, b), temp).loss;
      },
      z.data());
  CHECK(oracle::relative_error(out.grad.data(), num) < 1e-6);

  // alpha = 0 and an all-false mask are both plain mean cross entropy
  const auto plain = batch_loss(LossKind::CrossEntropy, z, y, {}, 0.0);
  CHECK(stage2_loss(z, y, q, 0.0, std::span<const bool>(head, b), temp).loss == plain.loss);
  const bool none[b] = {};
  CHECK(stage2_loss(z, y, Matrix(), alpha, std::span<const bool>(none, b), temp).loss == plain.loss);
}

TEST_CASE("batch loss dispatch") {
  const Matrix z(2, 2, {0.0, 1.0, 2.0, 0.0});
  const std::vector<int> y{0, 1};
  const Vector p{0.8, 0.2};
  const auto g = batch_loss(LossKind::GraLoss, z, y, p, 0.5);
  const double expect = 0.5 * (gra_loss(z.row(0), 0, p, 0.5).loss + gra_loss(z.row(1), 1, p, 0.5).loss);
  CHECK(g.loss == doctest::Approx(expect));
  CHECK(batch_loss(LossKind::LogitAdjust, z, y, p, 0.5).loss == g.loss);
}
