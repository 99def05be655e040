#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "roiattn/loss.hpp"
#include "roiattn/prng.hpp"

using namespace roiattn;

namespace {
constexpr double kEps = 1e-7;

Matrix random_xl(Rng& rng, Eigen::Index k, Eigen::Index d) {
  Matrix X(k, d);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal();
  return X;
}
}  // namespace

TEST_CASE("bce hits the closed forms") {
  CHECK(std::abs(bce(0.5, 1, kEps) - std::log(2.0)) < 1e-12);
  CHECK(std::abs(bce(0.9, 0, kEps) - (-std::log(0.1))) < 1e-12);
  CHECK(bce(1.0 - kEps, 1, kEps) == doctest::Approx(kEps).epsilon(0.01));
  // clamp handles endpoints without infinities
  CHECK(std::isfinite(bce(0.0, 1, kEps)));
  CHECK(std::isfinite(bce(1.0, 0, kEps)));
  CHECK_THROWS_AS(bce(0.5, 2, kEps), ValidationError);
}

TEST_CASE("bce is convex in y_hat") {
  Rng rng(1, 0);
  for (int t = 0; t < 200; ++t) {
    const double a = rng.uniform(0.01, 0.99);
    const double b = rng.uniform(0.01, 0.99);
    const int y = rng.uniform() < 0.5 ? 0 : 1;
    const double mid = bce((a + b) / 2.0, y, kEps);
    CHECK(mid <= (bce(a, y, kEps) + bce(b, y, kEps)) / 2.0 + 1e-12);
  }
}

TEST_CASE("bce gradient matches finite differences") {
  Rng rng(2, 0);
  for (int t = 0; t < 100; ++t) {
    const double yh = rng.uniform(0.05, 0.95);
    const int y = rng.uniform() < 0.5 ? 0 : 1;
    const double h = 1e-7;
    const double fd = (bce(yh + h, y, kEps) - bce(yh - h, y, kEps)) / (2 * h);
    CHECK(bce_grad(yh, y, kEps) == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("repulsive loss identities") {
  // identical non-anchor rows -> 1
  Matrix X(3, 4);
  X.row(0) << 5, 5, 5, 5;
  X.row(1) << 1, 2, 3, 4;
  X.row(2) << 1, 2, 3, 4;
  CHECK(std::abs(repulsive_loss(X, kEps) - 1.0) < 1e-12);

  // orthogonal rows -> 0
  Matrix Y(3, 4);
  Y.row(0) << 5, 5, 5, 5;
  Y.row(1) << 1, 0, 0, 0;
  Y.row(2) << 0, 2, 0, 0;
  CHECK(std::abs(repulsive_loss(Y, kEps)) < 1e-12);

  // hand case: cos(e1,e2) = 0.5 -> (0.25 + 0.25) / 2 = 0.25
  Matrix Z(3, 2);
  Z.row(0) << 9, 9;
  Z.row(1) << 1.0, 0.0;
  Z.row(2) << 0.5, std::sqrt(3.0) / 2.0;
  CHECK(repulsive_loss(Z, kEps) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("repulsive loss stays in [0,1] and ignores row scaling") {
  Rng rng(3, 0);
  for (int t = 0; t < 100; ++t) {
    Matrix X = random_xl(rng, 5, 7);
    const double v = repulsive_loss(X, kEps);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);

    Matrix Y = X;
    Y.row(2) *= 3.7;  // positive rescaling of one row
    CHECK(repulsive_loss(Y, kEps) == doctest::Approx(v).epsilon(1e-12));

    // permutation of non-anchor rows
    Matrix Z = X;
    Z.row(1) = X.row(3);
    Z.row(3) = X.row(1);
    CHECK(repulsive_loss(Z, kEps) == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("repulsive loss requires two non-anchor rows") {
  Matrix X = Matrix::Ones(2, 4);
  CHECK_THROWS_WITH_AS(repulsive_loss(X, kEps),
                       "need >=2 non-anchor RoIs for the repulsive loss",
                       ValidationError);
}

TEST_CASE("batch repulsive loss averages the per-example values") {
  Rng rng(4, 0);
  Matrix A = random_xl(rng, 4, 6);
  Matrix B = random_xl(rng, 4, 6);
  const double expect =
      (repulsive_loss(A, kEps) + repulsive_loss(B, kEps)) / 2.0;
  CHECK(repulsive_loss(std::vector<Matrix>{A, B}, kEps) ==
        doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("repulsive gradient: anchor row is exactly zero") {
  Rng rng(5, 0);
  Matrix X = random_xl(rng, 6, 9);
  Matrix g = repulsive_grad(X, kEps);
  for (Eigen::Index j = 0; j < g.cols(); ++j) CHECK(g(0, j) == 0.0);
}

TEST_CASE("total loss gradients match finite differences") {
  Rng rng(6, 0);
  LossConfig cfg;
  cfg.lambda_rep = 0.7;
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    Matrix X = random_xl(rng, 5, 8);
    const double yh = rng.uniform(0.1, 0.9);
    const int y = trial % 2;
    TotalLoss tl = total_loss(yh, y, X, cfg);

    // y_hat direction
    const double fd_y = (total_loss(yh + h, y, X, cfg).value -
                         total_loss(yh - h, y, X, cfg).value) /
                        (2 * h);
    CHECK(std::abs(tl.d_y_hat - fd_y) /
              std::max({std::abs(tl.d_y_hat), std::abs(fd_y), 1e-8}) <
          1e-6);

    // every X_L entry
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index j = 0; j < X.cols(); ++j) {
        Matrix Xp = X, Xm = X;
        Xp(i, j) += h;
        Xm(i, j) -= h;
        const double fd = (total_loss(yh, y, Xp, cfg).value -
                           total_loss(yh, y, Xm, cfg).value) /
                          (2 * h);
        const double an = tl.d_X_L(i, j);
        CHECK(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8}) <
              1e-6);
      }
  }
}

TEST_CASE("lambda 0 bitwise-equals bce and skips the k check") {
  LossConfig cfg;
  cfg.lambda_rep = 0.0;
  Matrix tiny = Matrix::Ones(2, 4);  // too few rows for repulsion
  TotalLoss tl = total_loss(0.3, 1, tiny, cfg);
  CHECK(tl.value == bce(0.3, 1, cfg.eps));
  CHECK(tl.d_X_L.isZero(0.0));
}

TEST_CASE("combined example: ln 2 + 1") {
  LossConfig cfg;
  cfg.lambda_rep = 1.0;
  Matrix X(4, 3);
  X.row(0) << 7, 0, 0;
  X.row(1) << 1, 2, 3;
  X.row(2) << 1, 2, 3;
  X.row(3) << 1, 2, 3;
  TotalLoss tl = total_loss(0.5, 1, X, cfg);
  CHECK(std::abs(tl.value - (std::log(2.0) + 1.0)) < 1e-12);
}

TEST_CASE("loss config validation") {
  LossConfig cfg;
  CHECK_NOTHROW(validate(cfg));
  cfg.eps = 0.0;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
  cfg.eps = 1e-2;  // above the 1e-3 cap
  CHECK_THROWS_AS(validate(cfg), ValidationError);
  cfg.eps = 1e-7;
  cfg.lambda_rep = -0.5;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
}
