#include "roiattn/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "roiattn/metrics.hpp"
#include "roiattn/prng.hpp"

namespace roiattn {

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ValidationError("lr > 0 required");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0))
    throw ValidationError("beta1 must lie in [0,1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw ValidationError("beta2 must lie in [0,1)");
  if (!(cfg.adam_eps > 0.0)) throw ValidationError("adam_eps > 0 required");
  if (cfg.batch_size < 1) throw ValidationError("batch_size >= 1 required");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
    throw ValidationError("val_fraction must lie in (0,1)");
  if (!(cfg.lambda_rep >= 0.0))
    throw ValidationError("lambda_rep >= 0 required");
}

std::string to_json(const TrainReport& report) {
  nlohmann::json j{
      {"train_loss", report.train_loss},
      {"val_auc", report.val_auc},
      {"best_epoch", report.best_epoch},
      {"epochs_run", report.epochs_run},
  };
  if (report.epochs_run > 0)
    j["best_val_auc"] = report.best_val_auc;
  else
    j["best_val_auc"] = nullptr;
  return j.dump(2);
}

AdamState make_adam_state(const ModelConfig& cfg) {
  return {make_params(cfg), make_params(cfg), 0};
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const TrainConfig& cfg) {
  auto pr = tensor_refs(params);
  auto gr = tensor_refs(grads);
  auto mr = tensor_refs(state.m);
  auto vr = tensor_refs(state.v);
  if (pr.size() != gr.size()) throw ValidationError("param/grad shape mismatch");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t ti = 0; ti < pr.size(); ++ti) {
    if (pr[ti].size != gr[ti].size)
      throw ValidationError("param/grad shape mismatch at " + pr[ti].name);
    for (std::size_t i = 0; i < pr[ti].size; ++i) {
      const double g = gr[ti].data[i];
      double& m = mr[ti].data[i];
      double& v = vr[ti].data[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      pr[ti].data[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

namespace {

struct ExampleGrads {
  double loss = 0;
  ModelParams grads;
};

double example_loss(const ImageRecord& rec, const ModelParams& p,
                    const ModelConfig& mcfg, const LossConfig& lcfg) {
  auto out = model_forward(rec, p, mcfg);
  return total_loss(out.y_hat, rec.label, out.X_L, lcfg).value;
}

ExampleGrads example_grads(const ImageRecord& rec, const ModelParams& p,
                           const ModelConfig& mcfg, const LossConfig& lcfg) {
  auto out = model_forward(rec, p, mcfg);
  auto tl = total_loss(out.y_hat, rec.label, out.X_L, lcfg);
  return {tl.value, model_backward(out.trace, tl.d_y_hat, tl.d_X_L, p, mcfg)};
}

void accumulate(ModelParams& acc, const ModelParams& g) {
  auto ar = tensor_refs(acc);
  auto gr = tensor_refs(g);
  for (std::size_t ti = 0; ti < ar.size(); ++ti)
    for (std::size_t i = 0; i < ar[ti].size; ++i)
      ar[ti].data[i] += gr[ti].data[i];
}

void scale(ModelParams& p, double s) {
  for (auto& t : tensor_refs(p))
    for (std::size_t i = 0; i < t.size; ++i) t.data[i] *= s;
}

// Stratified split: per class, a seeded shuffle puts round(val_fraction * n_c)
// examples (clamped to [1, n_c - 1]) into validation.
void split_dataset(const Dataset& dataset, const TrainConfig& cfg,
                   std::vector<std::size_t>& train_idx,
                   std::vector<std::size_t>& val_idx) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int y = dataset[i].label;
    if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
    by_class[y].push_back(i);
  }
  Rng rng(cfg.seed, 1);
  for (auto& cls : by_class) {
    if (cls.size() < 2)
      throw ValidationError(
          "AUC undefined: need at least 2 examples of each class");
    rng.shuffle(cls);
    auto n_val = static_cast<std::size_t>(std::llround(
        cfg.val_fraction * static_cast<double>(cls.size())));
    n_val = std::max<std::size_t>(1, std::min(n_val, cls.size() - 1));
    for (std::size_t i = 0; i < cls.size(); ++i)
      (i < n_val ? val_idx : train_idx).push_back(cls[i]);
  }
}

}  // namespace

TrainResult train(const Dataset& dataset, const ModelConfig& model_cfg,
                  const TrainConfig& cfg) {
  validate(model_cfg);
  validate(cfg);
  if (dataset.empty()) throw ValidationError("empty dataset");

  LossConfig lcfg;
  lcfg.lambda_rep = cfg.lambda_rep;

  std::vector<std::size_t> train_idx, val_idx;
  split_dataset(dataset, cfg, train_idx, val_idx);

  TrainResult result;
  result.params = init_params(model_cfg, cfg.seed);
  AdamState adam = make_adam_state(model_cfg);

  ModelParams best_params = result.params;
  double best_auc = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0, bad_epochs = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng(cfg.seed, 2 + epoch);
    erng.shuffle(train_idx);

    double loss_sum = 0;
    for (std::size_t start = 0; start < train_idx.size();
         start += cfg.batch_size) {
      const std::size_t stop =
          std::min(start + cfg.batch_size, train_idx.size());
      ModelParams grad_sum = make_params(model_cfg);
      for (std::size_t i = start; i < stop; ++i) {
        auto eg = example_grads(dataset[train_idx[i]], result.params,
                                model_cfg, lcfg);
        loss_sum += eg.loss;
        accumulate(grad_sum, eg.grads);
      }
      scale(grad_sum, 1.0 / static_cast<double>(stop - start));
      adam_step(result.params, grad_sum, adam, cfg);
    }
    result.report.train_loss.push_back(loss_sum /
                                       static_cast<double>(train_idx.size()));

    ScoredSet val;
    for (std::size_t idx : val_idx) {
      val.scores.push_back(
          model_forward(dataset[idx], result.params, model_cfg).y_hat);
      val.labels.push_back(dataset[idx].label);
    }
    const double auc = roc_auc(val);
    result.report.val_auc.push_back(auc);

    if (auc > best_auc) {
      best_auc = auc;
      best_epoch = epoch;
      best_params = result.params;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.patience) {
      break;
    }
  }

  result.report.epochs_run = result.report.train_loss.size();
  result.report.best_epoch = best_epoch;
  result.report.best_val_auc =
      result.report.epochs_run > 0 ? best_auc : 0.0;
  result.params = std::move(best_params);
  return result;
}

GradCheckReport gradcheck(const ModelConfig& model_cfg,
                          const LossConfig& loss_cfg, std::size_t k,
                          std::uint64_t seed, bool fault_inject_sign_flip) {
  validate(model_cfg);
  validate(loss_cfg);
  if (k < 1) throw ValidationError("k >= 1 required");

  ModelParams params = init_params(model_cfg, seed);
  // Noise on every tensor so no gradient is structurally zero (the classifier
  // head is zero-initialized, which would otherwise mask everything below it).
  Rng noise(seed, 1);
  for (auto& t : tensor_refs(params))
    for (std::size_t i = 0; i < t.size; ++i)
      t.data[i] += noise.uniform(-0.05, 0.05);

  Rng rec_rng(seed, 2);
  ImageRecord rec;
  rec.id = "gradcheck";
  rec.label = rec_rng.uniform() < 0.5 ? 1 : 0;
  for (std::size_t r = 0; r < k; ++r) {
    RoiRecord roi;
    if (r == 0) {
      roi.proposal.bbox = {0.0, 0.0, 1.0, 1.0};
      roi.proposal.confidence = 1.0;
    } else {
      const double w = rec_rng.uniform(0.02, 0.12);
      const double h = rec_rng.uniform(0.02, 0.12);
      const double x1 = rec_rng.uniform(0.0, 1.0 - w);
      const double y1 = rec_rng.uniform(0.0, 1.0 - h);
      roi.proposal.bbox = {x1, y1, x1 + w, y1 + h};
      roi.proposal.confidence = rec_rng.uniform();
    }
    roi.embedding.resize(static_cast<Eigen::Index>(model_cfg.a));
    for (Eigen::Index t = 0; t < roi.embedding.size(); ++t)
      roi.embedding[t] = rec_rng.normal();
    rec.rois.push_back(std::move(roi));
  }

  ModelParams analytic = example_grads(rec, params, model_cfg, loss_cfg).grads;
  if (fault_inject_sign_flip) scale(analytic, -1.0);

  constexpr double h = 1e-5;
  GradCheckReport report;
  auto pr = tensor_refs(params);
  auto ar = tensor_refs(analytic);
  for (std::size_t ti = 0; ti < pr.size(); ++ti) {
    for (std::size_t i = 0; i < pr[ti].size; ++i) {
      double& theta = pr[ti].data[i];
      const double saved = theta;
      theta = saved + h;
      const double lp = example_loss(rec, params, model_cfg, loss_cfg);
      theta = saved - h;
      const double lm = example_loss(rec, params, model_cfg, loss_cfg);
      theta = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = ar[ti].data[i];
      const double rel = std::abs(an - fd) /
                         std::max({std::abs(an), std::abs(fd), 1e-8});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = pr[ti].name + "[" + std::to_string(i) + "]";
        report.analytic = an;
        report.numeric = fd;
      }
    }
  }
  return report;
}

}  // namespace roiattn
