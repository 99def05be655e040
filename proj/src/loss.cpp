#include "roiattn/loss.hpp"

#include <algorithm>
#include <cmath>

namespace roiattn {

void validate(const LossConfig& cfg) {
  if (!(cfg.lambda_rep >= 0.0))
    throw ValidationError("lambda_rep >= 0 required");
  if (!(cfg.eps > 0.0 && cfg.eps <= 1e-3))
    throw ValidationError("eps must lie in (0, 1e-3]");
}

double bce(double y_hat, int y, double eps) {
  if (y != 0 && y != 1) throw ValidationError("label must be 0 or 1");
  const double c = std::clamp(y_hat, eps, 1.0 - eps);
  return y == 1 ? -std::log(c) : -std::log(1.0 - c);
}

double bce_grad(double y_hat, int y, double eps) {
  if (y != 0 && y != 1) throw ValidationError("label must be 0 or 1");
  if (y_hat < eps || y_hat > 1.0 - eps) return 0.0;  // clamp flats
  return (y_hat - static_cast<double>(y)) / (y_hat * (1.0 - y_hat));
}

namespace {

void check_rep_input(const Matrix& X_L) {
  if (X_L.rows() < 3)
    throw ValidationError("need >=2 non-anchor RoIs for the repulsive loss");
}

// Unit-normalized non-anchor rows; norms clamped at eps. Returns the K x d
// matrix of e_i and fills norms (the clamped denominators).
Matrix normalized_rows(const Matrix& X_L, double eps, Vector& norms) {
  const Eigen::Index K = X_L.rows() - 1;
  Matrix E(K, X_L.cols());
  norms.resize(K);
  for (Eigen::Index i = 0; i < K; ++i) {
    const double n = std::max(X_L.row(i + 1).norm(), eps);
    norms[i] = n;
    E.row(i) = X_L.row(i + 1) / n;
  }
  return E;
}

}  // namespace

double repulsive_loss(const Matrix& X_L, double eps) {
  check_rep_input(X_L);
  Vector norms;
  Matrix E = normalized_rows(X_L, eps, norms);
  const Eigen::Index K = E.rows();
  Matrix S = E * E.transpose();
  double sum = 0;
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index j = 0; j < K; ++j)
      if (i != j) sum += S(i, j) * S(i, j);
  return sum / (static_cast<double>(K) * static_cast<double>(K - 1));
}

double repulsive_loss(const std::vector<Matrix>& X_L_batch, double eps) {
  if (X_L_batch.empty()) throw ValidationError("empty batch");
  double sum = 0;
  for (const auto& X : X_L_batch) sum += repulsive_loss(X, eps);
  return sum / static_cast<double>(X_L_batch.size());
}

Matrix repulsive_grad(const Matrix& X_L, double eps) {
  check_rep_input(X_L);
  Vector norms;
  Matrix E = normalized_rows(X_L, eps, norms);
  const Eigen::Index K = E.rows();
  Matrix S = E * E.transpose();
  const double c = 1.0 / (static_cast<double>(K) * static_cast<double>(K - 1));

  Matrix grad = Matrix::Zero(X_L.rows(), X_L.cols());
  for (Eigen::Index r = 0; r < K; ++r) {
    // dL/de_r = 4c * sum_{j != r} s_rj e_j  (ordered pairs count each
    // unordered pair twice). Through the normalization e = x/n this becomes
    // (dL/de - <e, dL/de> e) / n; with a clamped norm the projection drops.
    Vector dLde = Vector::Zero(X_L.cols());
    for (Eigen::Index j = 0; j < K; ++j)
      if (j != r) dLde += S(r, j) * E.row(j).transpose();
    dLde *= 4.0 * c;
    const double raw_norm = X_L.row(r + 1).norm();
    if (raw_norm > eps) {
      const double proj = E.row(r).dot(dLde);
      grad.row(r + 1) =
          ((dLde - proj * E.row(r).transpose()) / norms[r]).transpose();
    } else {
      grad.row(r + 1) = (dLde / norms[r]).transpose();
    }
  }
  return grad;
}

TotalLoss total_loss(double y_hat, int y, const Matrix& X_L,
                     const LossConfig& cfg) {
  validate(cfg);
  TotalLoss out;
  out.value = bce(y_hat, y, cfg.eps);
  out.d_y_hat = bce_grad(y_hat, y, cfg.eps);
  if (cfg.lambda_rep == 0.0) {
    out.d_X_L = Matrix::Zero(X_L.rows(), X_L.cols());
    return out;
  }
  out.value += cfg.lambda_rep * repulsive_loss(X_L, cfg.eps);
  out.d_X_L = cfg.lambda_rep * repulsive_grad(X_L, cfg.eps);
  return out;
}

}  // namespace roiattn
