#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "mixcl/common.hpp"
#include "mixcl/gradcheck.hpp"
#include "mixcl/losses.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/tensor.hpp"

using namespace mixcl;

namespace {

Tensor leaf(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

double cosine(const Tensor& a, int i, const Tensor& b, int j) {
  const int d = a.dim(1);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int k = 0; k < d; ++k) {
    const double x = a.at({i, k}), y = b.at({j, k});
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Direct double-precision evaluation of the loss definition, no tape and no
// stabilization, used as the oracle for the library implementation.
double reference_mnt(const Tensor& z1, const Tensor& z2, const Tensor& zt,
                     const std::vector<double>& lambdas, double tau) {
  const int n = zt.dim(0);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double den = 0.0;
    for (int k = 0; k < n; ++k) {
      den += std::exp(cosine(zt, i, z1, k) / tau);
      den += std::exp(cosine(zt, i, z2, k) / tau);
    }
    const double p1 = std::exp(cosine(zt, i, z1, i) / tau) / den;
    const double p2 = std::exp(cosine(zt, i, z2, i) / tau) / den;
    total += -lambdas[i] * std::log(p1) - (1.0 - lambdas[i]) * std::log(p2);
  }
  return total / n;
}

double mnt_value(const Tensor& z1, const Tensor& z2, const Tensor& zt,
                 double lambda, double tau) {
  Tape tape;
  ContrastiveBatchEmbeddings b;
  b.z1 = z1;
  b.z2 = z2;
  b.z_tilde = zt;
  b.lambda = lambda;
  b.tau = tau;
  return mnt_xent(tape, b).value();
}

double nt_value(const Tensor& za, const Tensor& zb, double tau) {
  Tape tape;
  return nt_xent(tape, za, zb, tau).value();
}

}  // namespace

TEST_CASE("mnt_xent hand value: lone anchor aligned with view 1") {
  // z_tilde = z1 (similarity 1), z2 orthogonal, lambda=1, tau=0.5:
  // l = -log(e^2 / (e^2 + 1)) = log(1 + e^-2).
  const Tensor z1 = Tensor::from_values({1, 2}, {1, 0});
  const Tensor z2 = Tensor::from_values({1, 2}, {0, 1});
  const Tensor zt = Tensor::from_values({1, 2}, {1, 0});
  const double loss = mnt_value(z1, z2, zt, 1.0, 0.5);
  CHECK(loss == doctest::Approx(0.12693).epsilon(1e-4 / 0.12693));
  CHECK(loss == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-12));
}

TEST_CASE("mnt_xent matches the direct reference on random inputs") {
  Rng rng(1);
  for (double tau : {0.5, 0.07, 3.0}) {
    const Tensor z1 = leaf(rng, {5, 7});
    const Tensor z2 = leaf(rng, {5, 7});
    const Tensor zt = leaf(rng, {5, 7});
    for (double lam : {0.0, 0.31, 1.0}) {
      const std::vector<double> lams(5, lam);
      CHECK(mnt_value(z1, z2, zt, lam, tau) ==
            doctest::Approx(reference_mnt(z1, z2, zt, lams, tau))
                .epsilon(1e-10));
    }
  }
}

TEST_CASE("mnt_xent lambda-swap symmetry") {
  Rng rng(2);
  const Tensor z1 = leaf(rng, {4, 6});
  const Tensor z2 = leaf(rng, {4, 6});
  const Tensor zt = leaf(rng, {4, 6});
  for (double lam : {0.0, 0.25, 0.5, 0.875, 1.0}) {
    const double a = mnt_value(z1, z2, zt, lam, 0.5);
    const double b = mnt_value(z2, z1, zt, 1.0 - lam, 0.5);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("mnt_xent endpoint reduces to the single positive term") {
  Rng rng(3);
  const Tensor z1 = leaf(rng, {4, 6});
  const Tensor z2 = leaf(rng, {4, 6});
  const Tensor zt = leaf(rng, {4, 6});
  // Direct single-term implementation at lambda=1.
  double direct = 0.0;
  for (int i = 0; i < 4; ++i) {
    double den = 0.0;
    for (int k = 0; k < 4; ++k)
      den += std::exp(cosine(zt, i, z1, k) / 0.5) +
             std::exp(cosine(zt, i, z2, k) / 0.5);
    direct += -std::log(std::exp(cosine(zt, i, z1, i) / 0.5) / den);
  }
  direct /= 4;
  CHECK(mnt_value(z1, z2, zt, 1.0, 0.5) ==
        doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("mnt_xent implied 2N probabilities sum to one") {
  Rng rng(4);
  const Tensor z1 = leaf(rng, {3, 5});
  const Tensor z2 = leaf(rng, {3, 5});
  const Tensor zt = leaf(rng, {3, 5});
  // The implementation agrees with reference_mnt (previous test); here the
  // reference's probability vector is checked to normalize per anchor.
  for (int i = 0; i < 3; ++i) {
    double den = 0.0;
    for (int k = 0; k < 3; ++k)
      den += std::exp(cosine(zt, i, z1, k) / 0.5) +
             std::exp(cosine(zt, i, z2, k) / 0.5);
    double psum = 0.0;
    for (int k = 0; k < 3; ++k)
      psum += std::exp(cosine(zt, i, z1, k) / 0.5) / den +
              std::exp(cosine(zt, i, z2, k) / 0.5) / den;
    CHECK(psum == doctest::Approx(1.0).epsilon(1e-10));
  }
  CHECK(mnt_value(z1, z2, zt, 0.4, 0.5) ==
        doctest::Approx(reference_mnt(z1, z2, zt, {0.4, 0.4, 0.4}, 0.5))
            .epsilon(1e-10));
}

TEST_CASE("contrastive losses are scale invariant and strictly positive") {
  Rng rng(5);
  const Tensor z1 = leaf(rng, {4, 8});
  const Tensor z2 = leaf(rng, {4, 8});
  const Tensor zt = leaf(rng, {4, 8});
  const double base_mnt = mnt_value(z1, z2, zt, 0.3, 0.5);
  const double base_nt = nt_value(z1, z2, 0.5);
  CHECK(base_mnt > 0.0);
  CHECK(base_nt > 0.0);
  auto scaled = [](const Tensor& t, double c) {
    std::vector<double> v(t.values());
    for (double& x : v) x *= c;
    return Tensor::from_values({t.dim(0), t.dim(1)}, std::move(v));
  };
  for (double c : {1e-3, 7.0, 1e3}) {
    const Tensor s1 = scaled(z1, c), s2 = scaled(z2, c), st = scaled(zt, c);
    CHECK(mnt_value(s1, s2, st, 0.3, 0.5) ==
          doctest::Approx(base_mnt).epsilon(1e-10));
    CHECK(nt_value(s1, s2, 0.5) == doctest::Approx(base_nt).epsilon(1e-10));
  }
}

TEST_CASE("mnt_xent minimizes at the lambda split of the positive mass") {
  // Anchor 1 distributes denominator mass between its two positives while
  // everything else stays fixed; grid search over the split must land at
  // lambda : (1 - lambda).
  const double tau = 0.5, lambda = 0.3, M = 2.0;
  double best_t = -1.0, best_loss = 1e300;
  for (double t = 0.08; t <= 0.92; t += 0.002) {
    const double c1 = tau * std::log(t * M);        // cos(zt_1, z1_1)
    const double c2 = tau * std::log((1 - t) * M);  // cos(zt_1, z2_1)
    REQUIRE(std::fabs(c1) <= 1.0);
    REQUIRE(std::fabs(c2) <= 1.0);
    const Tensor z1 = Tensor::from_values(
        {2, 3}, {c1, std::sqrt(1 - c1 * c1), 0, 0, 0, 1});
    const Tensor z2 = Tensor::from_values(
        {2, 3}, {c2, std::sqrt(1 - c2 * c2), 0, 0, 0, 1});
    const Tensor zt = Tensor::from_values({2, 3}, {1, 0, 0, 0, 0, 1});
    const double loss = mnt_value(z1, z2, zt, lambda, tau);
    if (loss < best_loss) {
      best_loss = loss;
      best_t = t;
    }
  }
  CHECK(best_t == doctest::Approx(lambda).epsilon(0.02));
}

TEST_CASE("mnt_xent per-sample overload") {
  Rng rng(6);
  const Tensor z1 = leaf(rng, {4, 6});
  const Tensor z2 = leaf(rng, {4, 6});
  const Tensor zt = leaf(rng, {4, 6});

  SUBCASE("constant lambdas reduce to the scalar form") {
    Tape tape;
    const std::vector<double> lams(4, 0.4);
    const double got = mnt_xent(tape, z1, z2, zt, lams, 0.5).value();
    CHECK(got == doctest::Approx(mnt_value(z1, z2, zt, 0.4, 0.5))
                     .epsilon(1e-12));
  }

  SUBCASE("mixed lambdas match the reference") {
    Tape tape;
    const std::vector<double> lams{0.0, 0.2, 0.9, 1.0};
    const double got = mnt_xent(tape, z1, z2, zt, lams, 0.5).value();
    CHECK(got ==
          doctest::Approx(reference_mnt(z1, z2, zt, lams, 0.5)).epsilon(1e-10));
  }

  SUBCASE("validation") {
    Tape tape;
    CHECK_THROWS_AS(mnt_xent(tape, z1, z2, zt, {0.5, 0.5}, 0.5),
                    std::invalid_argument);
    CHECK_THROWS_AS(mnt_xent(tape, z1, z2, zt, {0.5, 0.5, 0.5, 1.5}, 0.5),
                    std::invalid_argument);
  }
}

TEST_CASE("mnt_xent input validation") {
  Rng rng(7);
  const Tensor z4 = leaf(rng, {4, 6});
  const Tensor z3 = leaf(rng, {3, 6});
  ContrastiveBatchEmbeddings b;
  b.z1 = z4;
  b.z2 = z3;
  b.z_tilde = z4;
  Tape tape;
  CHECK_THROWS_AS(mnt_xent(tape, b), std::invalid_argument);
  b.z2 = z4;
  b.tau = 0.0;
  CHECK_THROWS_AS(mnt_xent(tape, b), std::invalid_argument);
  b.tau = 0.5;
  b.lambda = -0.2;
  CHECK_THROWS_AS(mnt_xent(tape, b), std::invalid_argument);
  b.lambda = 0.5;

  Tensor zero_row = Tensor::zeros({4, 6});
  CHECK_THROWS_AS(
      [&] {
        ContrastiveBatchEmbeddings bad = b;
        bad.z_tilde = zero_row;
        Tape t;
        return mnt_xent(t, bad);
      }(),
      NumericError);
}

TEST_CASE("nt_xent hand value on orthogonal pairs") {
  // Four views, positives identical, everything else orthogonal, tau=1:
  // per anchor l = -log(e / (e + 2)).
  const Tensor za = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  const Tensor zb = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  const double loss = nt_value(za, zb, 1.0);
  const double want = std::log((std::exp(1.0) + 2.0) / std::exp(1.0));
  CHECK(loss == doctest::Approx(0.5514).epsilon(1e-4 / 0.5514));
  CHECK(loss == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("nt_xent is rotation invariant") {
  Rng rng(8);
  const int n = 3, d = 6;
  const Tensor za = leaf(rng, {n, d});
  const Tensor zb = leaf(rng, {n, d});
  const double base = nt_value(za, zb, 0.5);

  // Compose a handful of Givens rotations applied to every embedding row.
  std::vector<double> ra(za.values()), rb(zb.values());
  for (int rot = 0; rot < 5; ++rot) {
    const int p = static_cast<int>(rng.below(d));
    int q = static_cast<int>(rng.below(d));
    if (q == p) q = (q + 1) % d;
    const double th = rng.uniform() * 6.283185307179586;
    const double c = std::cos(th), s = std::sin(th);
    for (std::vector<double>* m : {&ra, &rb}) {
      for (int i = 0; i < n; ++i) {
        double& x = (*m)[static_cast<std::size_t>(i) * d + p];
        double& y = (*m)[static_cast<std::size_t>(i) * d + q];
        const double nx = c * x - s * y, ny = s * x + c * y;
        x = nx;
        y = ny;
      }
    }
  }
  const double rotated = nt_value(Tensor::from_values({n, d}, ra),
                                  Tensor::from_values({n, d}, rb), 0.5);
  CHECK(rotated == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("nt_xent decreases as the positive alignment improves") {
  auto loss_at = [](double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    const Tensor za = Tensor::from_values({2, 3}, {c, s, 0, 0, 0, 1});
    const Tensor zb = Tensor::from_values({2, 3}, {1, 0, 0, 0, 0, 1});
    return nt_value(za, zb, 1.0);
  };
  CHECK(loss_at(0.4) < loss_at(0.8));
  CHECK(loss_at(0.1) < loss_at(0.4));
}

TEST_CASE("nt_xent needs two samples") {
  Rng rng(9);
  const Tensor z1 = leaf(rng, {1, 4});
  Tape tape;
  CHECK_THROWS_AS(nt_xent(tape, z1, z1, 0.5), std::invalid_argument);
}

TEST_CASE("mse_reconstruction values and errors") {
  Tape tape;
  const Tensor x = Tensor::from_values({2, 1, 2}, {1, 2, 3, 4});
  CHECK(mse_reconstruction(tape, x, x).value() == 0.0);
  const Tensor y = Tensor::from_values({2, 1, 2}, {2, 3, 4, 5});
  CHECK(mse_reconstruction(tape, y, x).value() == doctest::Approx(1.0));
  const Tensor z = Tensor::from_values({2, 2}, {0, 0, 0, 0});
  CHECK_THROWS_AS(mse_reconstruction(tape, z, x), std::invalid_argument);
}

TEST_CASE("softmax_cross_entropy values and errors") {
  Tape tape;
  const Tensor uniform = Tensor::zeros({3, 4});
  CHECK(softmax_cross_entropy(tape, uniform, {0, 1, 3}).value() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Tensor dominant = Tensor::zeros({2, 3});
  dominant.data()[1] = 100.0;   // row 0, class 1
  dominant.data()[3 + 2] = 100.0;  // row 1, class 2
  CHECK(softmax_cross_entropy(tape, dominant, {1, 2}).value() < 1e-10);

  CHECK_THROWS_AS(softmax_cross_entropy(tape, uniform, {0, 4, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(softmax_cross_entropy(tape, uniform, {0, -1, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS(softmax_cross_entropy(tape, uniform, {0, 1}),
                  std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(10);

  SUBCASE("mnt_xent, all three blocks") {
    const Tensor z1 = leaf(rng, {3, 5});
    const Tensor z2 = leaf(rng, {3, 5});
    const Tensor zt = leaf(rng, {3, 5});
    const GradCheckResult r = grad_check(
        [&](Tape& t) {
          ContrastiveBatchEmbeddings b;
          b.z1 = z1;
          b.z2 = z2;
          b.z_tilde = zt;
          b.lambda = 0.3;
          b.tau = 0.5;
          return mnt_xent(t, b);
        },
        {z1, z2, zt}, -1, nullptr);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("mnt_xent per-sample lambdas") {
    const Tensor z1 = leaf(rng, {3, 5});
    const Tensor z2 = leaf(rng, {3, 5});
    const Tensor zt = leaf(rng, {3, 5});
    const std::vector<double> lams{0.1, 0.9, 0.5};
    const GradCheckResult r = grad_check(
        [&](Tape& t) { return mnt_xent(t, z1, z2, zt, lams, 0.5); },
        {z1, z2, zt}, -1, nullptr);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("nt_xent") {
    const Tensor za = leaf(rng, {3, 5});
    const Tensor zb = leaf(rng, {3, 5});
    const GradCheckResult r = grad_check(
        [&](Tape& t) { return nt_xent(t, za, zb, 0.5); }, {za, zb}, -1,
        nullptr);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("mse gradient is 2(x_hat - x)/numel") {
    const Tensor xh = leaf(rng, {2, 3});
    const Tensor x = leaf(rng, {2, 3});
    Tape tape;
    Tensor loss = mse_reconstruction(tape, xh, x);
    tape.backward(loss);
    for (std::int64_t i = 0; i < xh.numel(); ++i)
      CHECK(xh.grad()[i] ==
            doctest::Approx(2.0 * (xh.data()[i] - x.data()[i]) / 6.0)
                .epsilon(1e-12));
    const GradCheckResult r = grad_check(
        [&](Tape& t) { return mse_reconstruction(t, xh, x); }, {xh, x}, -1,
        nullptr);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("softmax cross entropy") {
    const Tensor logits = leaf(rng, {4, 5});
    const std::vector<int> labels{0, 3, 2, 4};
    const GradCheckResult r = grad_check(
        [&](Tape& t) { return softmax_cross_entropy(t, logits, labels); },
        {logits}, -1, nullptr);
    CHECK(r.max_rel_err < 1e-6);
  }
}
