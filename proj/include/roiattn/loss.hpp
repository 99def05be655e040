#pragma once

#include <vector>

#include "roiattn/common.hpp"

namespace roiattn {

struct LossConfig {
  double lambda_rep = 0.1;  // weight of the repulsion term
  double eps = 1e-7;        // clamp for logs and near-zero row norms
};

void validate(const LossConfig& cfg);

// -(y log yh + (1-y) log(1-yh)) with yh clamped to [eps, 1-eps].
double bce(double y_hat, int y, double eps);
// d bce / d y_hat (zero in the clamped flats).
double bce_grad(double y_hat, int y, double eps);

// Mean squared cosine similarity over ordered pairs of distinct non-anchor
// rows (row 0 excluded), rows unit-normalized with norms clamped at eps,
// averaged over the batch. Always in [0,1]. Requires k >= 3.
double repulsive_loss(const std::vector<Matrix>& X_L_batch, double eps);
double repulsive_loss(const Matrix& X_L, double eps);

// Gradient of the single-example repulsive loss w.r.t. X_L. Row 0 is exactly
// zero: the anchor never enters the sum.
Matrix repulsive_grad(const Matrix& X_L, double eps);

struct TotalLoss {
  double value = 0;
  double d_y_hat = 0;
  Matrix d_X_L;
};

// bce + lambda_rep * repulsive_loss with exact gradients. lambda_rep == 0
// skips the repulsion term entirely, so the value bitwise-equals bce and no
// k >= 3 requirement applies.
TotalLoss total_loss(double y_hat, int y, const Matrix& X_L,
                     const LossConfig& cfg);

}  // namespace roiattn
