#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roiattn/data.hpp"
#include "roiattn/loss.hpp"
#include "roiattn/model.hpp"

namespace roiattn {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double lambda_rep = 0.1;
  double val_fraction = 0.2;
};

void validate(const TrainConfig& cfg);

struct TrainReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_auc;     // per epoch
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double best_val_auc = 0;
};

std::string to_json(const TrainReport& report);

struct AdamState {
  ModelParams m, v;
  std::size_t t = 0;
};

AdamState make_adam_state(const ModelConfig& cfg);

// Standard bias-corrected Adam, elementwise, eps added outside the sqrt.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& cfg);

struct TrainResult {
  ModelParams params;  // best validation epoch
  TrainReport report;
};

// Mini-batch training of total_loss with a deterministic stratified
// val_fraction split, per-epoch seeded shuffles, and early stopping on
// validation AUC. Single-threaded and bitwise reproducible.
TrainResult train(const Dataset& dataset, const ModelConfig& model_cfg,
                  const TrainConfig& cfg);

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_param;
  double analytic = 0;  // gradient entries at the worst parameter
  double numeric = 0;
};

// Central finite differences (h = 1e-5) against model_backward through
// total_loss on one random record with noise-perturbed parameters. Relative
// errors use denominators clamped at 1e-8. fault_inject_sign_flip negates the
// analytic gradients first, to prove the harness can fail.
GradCheckReport gradcheck(const ModelConfig& model_cfg,
                          const LossConfig& loss_cfg, std::size_t k,
                          std::uint64_t seed,
                          bool fault_inject_sign_flip = false);

}  // namespace roiattn
