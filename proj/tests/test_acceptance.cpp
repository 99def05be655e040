#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "roiattn/checkpoint.hpp"
#include "roiattn/data.hpp"
#include "roiattn/loss.hpp"
#include "roiattn/metrics.hpp"
#include "roiattn/model.hpp"
#include "roiattn/prng.hpp"
#include "roiattn/train.hpp"

using namespace roiattn;

// Tolerances and budgets pinned by the acceptance contract.
namespace tol {
constexpr double kGradCheck = 1e-4;
constexpr double kShift = 1e-6;
constexpr double kPermutation = 1e-6;
constexpr double kLossIdentity = 1e-12;
constexpr double kAucOracle = 1e-12;
constexpr double kMetricAgreement = 1e-6;
constexpr double kFullAucFloor = 0.90;
constexpr double kNullAucLo = 0.40, kNullAucHi = 0.60;
constexpr double kProbeAucCeil = 0.60;
constexpr double kGradCheckBudgetSec = 60.0;
constexpr double kBenchmarkBudgetSec = 600.0;
}  // namespace tol

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  }
};

void report(int criterion, const char* name, bool pass, const char* detail) {
  std::printf("ACCEPTANCE %d (%s): %s%s%s\n", criterion, name,
              pass ? "PASS" : "FAIL", std::strlen(detail) ? " -- " : "",
              detail);
  std::fflush(stdout);
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  auto ra = tensor_refs(a), rb = tensor_refs(b);
  if (ra.size() != rb.size()) return false;
  for (std::size_t i = 0; i < ra.size(); ++i)
    if (ra[i].size != rb[i].size ||
        std::memcmp(ra[i].data, rb[i].data, ra[i].size * sizeof(double)) != 0)
      return false;
  return true;
}

// Random record with boxes that stay inside the unit square under the two
// probe shifts (+0.1,+0.1) and (-0.2,+0.05).
ImageRecord random_record(Rng& rng, std::size_t a, std::size_t k) {
  ImageRecord rec;
  rec.id = "probe";
  rec.label = rng.uniform() < 0.5 ? 1 : 0;
  for (std::size_t i = 0; i < k; ++i) {
    RoiRecord roi;
    if (i == 0) {
      roi.proposal.bbox = {0.22, 0.22, 0.88, 0.88};
      roi.proposal.confidence = 1.0;
    } else {
      const double x1 = rng.uniform(0.25, 0.75);
      const double y1 = rng.uniform(0.25, 0.75);
      roi.proposal.bbox = {x1, y1, x1 + rng.uniform(0.02, 0.1),
                           y1 + rng.uniform(0.02, 0.1)};
      roi.proposal.confidence = rng.uniform();
    }
    roi.embedding.resize(static_cast<Eigen::Index>(a));
    for (Eigen::Index t = 0; t < roi.embedding.size(); ++t)
      roi.embedding[t] = rng.normal();
    rec.rois.push_back(std::move(roi));
  }
  return rec;
}

ImageRecord shifted(const ImageRecord& rec, double dx, double dy) {
  ImageRecord out = rec;
  for (auto& roi : out.rois) {
    roi.proposal.bbox.x1 += dx;
    roi.proposal.bbox.x2 += dx;
    roi.proposal.bbox.y1 += dy;
    roi.proposal.bbox.y2 += dy;
  }
  return out;
}

ModelParams noisy_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = init_params(cfg, seed);
  Rng rng(seed, 9);
  for (auto& t : tensor_refs(p))
    for (std::size_t i = 0; i < t.size; ++i)
      t.data[i] += rng.uniform(-0.05, 0.05);
  return p;
}

double max_prob_diff(const ForwardTrace& a, const ForwardTrace& b) {
  double worst = 0;
  for (std::size_t l = 0; l < a.blocks.size(); ++l)
    for (std::size_t h = 0; h < a.blocks[l].attn.P.size(); ++h)
      worst = std::max(worst, (a.blocks[l].attn.P[h] - b.blocks[l].attn.P[h])
                                  .cwiseAbs()
                                  .maxCoeff());
  return worst;
}

ScoredSet score_dataset(const Dataset& data, const ModelParams& params,
                        const ModelConfig& cfg) {
  ScoredSet s;
  for (const auto& rec : data) {
    s.scores.push_back(model_forward(rec, params, cfg).y_hat);
    s.labels.push_back(rec.label);
  }
  return s;
}

// ---- the planted-signal benchmark shared by criteria 6-8 ----

struct RunOutcome {
  TrainResult result;
  double seconds = 0;
  MetricReport metrics;  // held-out slice
  std::string checkpoint_bytes;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Bench {
  Dataset mu2_train, mu2_test, mu0_train, mu0_test;
  ModelConfig full_cfg, pool_cfg;
  TrainConfig tcfg;
  RunOutcome full[2], mu0[2], pool[2];
  double probe_auc = 0;

  Bench() {
    SynthConfig scfg;  // n=3000 split 2500/500; everything else at defaults
    scfg.n = 3000;
    scfg.seed = 0;
    scfg.signal_strength = 2.0;
    split(generate_synthetic(scfg), mu2_train, mu2_test);
    scfg.signal_strength = 0.0;
    split(generate_synthetic(scfg), mu0_train, mu0_test);

    full_cfg.a = scfg.a;  // defaults otherwise: d=64 H=4 L=2 anchor+rope
    pool_cfg = full_cfg;
    pool_cfg.L = 0;
    pool_cfg.readout = Readout::maxpool_raw;
    pool_cfg.use_rope = false;

    TrainConfig pool_tcfg = tcfg;
    pool_tcfg.lambda_rep = 0.0;

    for (int r = 0; r < 2; ++r) {
      full[r] = run("full", r, mu2_train, mu2_test, full_cfg, tcfg);
      mu0[r] = run("mu0", r, mu0_train, mu0_test, full_cfg, tcfg);
      pool[r] = run("pool", r, mu2_train, mu2_test, pool_cfg, pool_tcfg);
    }
    probe_auc = anchor_probe_auc(mu2_train, mu2_test);
    std::printf("[bench] anchor-only linear probe test AUC %.4f\n", probe_auc);
    std::fflush(stdout);
  }

  static void split(Dataset&& all, Dataset& train_part, Dataset& test_part) {
    train_part.assign(all.begin(), all.begin() + 2500);
    test_part.assign(all.begin() + 2500, all.end());
  }

  RunOutcome run(const char* tag, int repeat, const Dataset& tr,
                 const Dataset& te, const ModelConfig& mcfg,
                 const TrainConfig& cfg) {
    Timer timer;
    RunOutcome out;
    out.result = train(tr, mcfg, cfg);
    out.seconds = timer.seconds();
    out.metrics = compute_metrics(score_dataset(te, out.result.params, mcfg));

    const std::string path =
        (std::filesystem::temp_directory_path() /
         ("roiattn_accept_" + std::to_string(::getpid()) + "_" + tag + "_" +
          std::to_string(repeat) + ".json"))
            .string();
    save_checkpoint(path, mcfg, out.result.params);
    out.checkpoint_bytes = slurp(path);
    std::filesystem::remove(path);

    std::printf(
        "[bench] %s run %d: %zu epochs in %.1f s, best val AUC %.4f, "
        "test AUC %.4f\n",
        tag, repeat, out.result.report.epochs_run, out.seconds,
        out.result.report.best_val_auc, out.metrics.auc);
    std::fflush(stdout);
    return out;
  }

  // Logistic regression on the raw anchor embeddings: deterministic
  // full-batch gradient descent with train-set standardization.
  static double anchor_probe_auc(const Dataset& tr, const Dataset& te) {
    const auto n = static_cast<Eigen::Index>(tr.size());
    const Eigen::Index a = tr[0].rois[0].embedding.size();
    Matrix X(n, a);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      X.row(i) = tr[static_cast<std::size_t>(i)].rois[0].embedding.transpose();
      y[i] = tr[static_cast<std::size_t>(i)].label;
    }
    const Vector mean = X.colwise().mean().transpose();
    Vector stddev(a);
    for (Eigen::Index j = 0; j < a; ++j)
      stddev[j] = std::max(
          std::sqrt((X.col(j).array() - mean[j]).square().mean()), 1e-8);
    for (Eigen::Index j = 0; j < a; ++j)
      X.col(j) = (X.col(j).array() - mean[j]) / stddev[j];

    Vector w = Vector::Zero(a);
    double b = 0;
    const double lr = 0.5, l2 = 1e-4;
    for (int it = 0; it < 300; ++it) {
      Vector p = (X * w).array() + b;
      p = p.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      Vector diff = p - y;
      w -= lr * (X.transpose() * diff / static_cast<double>(n) + l2 * w);
      b -= lr * diff.mean();
    }

    ScoredSet s;
    for (const auto& rec : te) {
      Vector z = rec.rois[0].embedding;
      for (Eigen::Index j = 0; j < a; ++j)
        z[j] = (z[j] - mean[j]) / stddev[j];
      s.scores.push_back(w.dot(z) + b);
      s.labels.push_back(rec.label);
    }
    return roc_auc(s);
  }
};

Bench& bench() {
  static Bench b;
  return b;
}

}  // namespace

TEST_CASE("criterion 1: gradient oracle") {
  ModelConfig cfg;
  cfg.a = 16;
  cfg.d = 16;
  cfg.H = 2;
  cfg.L = 1;
  LossConfig lcfg;  // lambda_rep 0.1

  Timer timer;
  double worst = 0;
  for (std::uint64_t seed : {0, 1, 2}) {
    GradCheckReport r = gradcheck(cfg, lcfg, 4, seed);
    std::printf("[gradcheck] seed %llu: max rel err %.3g at %s\n",
                static_cast<unsigned long long>(seed), r.max_rel_err,
                r.worst_param.c_str());
    worst = std::max(worst, r.max_rel_err);
  }
  const double secs = timer.seconds();

  const bool pass = worst < tol::kGradCheck && secs < tol::kGradCheckBudgetSec;
  char detail[128];
  std::snprintf(detail, sizeof detail, "max rel err %.3g, %.1f s", worst,
                secs);
  report(1, "gradient oracle", pass, detail);
  CHECK(worst < tol::kGradCheck);
  CHECK(secs < tol::kGradCheckBudgetSec);
}

TEST_CASE("criterion 2: translation invariance of attention and score") {
  ModelConfig cfg;  // defaults: d=64 H=4 L=2, anchor readout, rope on
  ModelParams params = noisy_params(cfg, 0);
  Rng rng(1, 0);

  double worst_prob = 0, worst_score = 0;
  for (int t = 0; t < 100; ++t) {
    ImageRecord rec = random_record(rng, cfg.a, 4 + rng.uniform_index(5));
    ModelOutput base = model_forward(rec, params, cfg);
    for (auto [dx, dy] : {std::pair{0.1, 0.1}, std::pair{-0.2, 0.05}}) {
      ModelOutput moved = model_forward(shifted(rec, dx, dy), params, cfg);
      worst_prob = std::max(worst_prob, max_prob_diff(base.trace, moved.trace));
      worst_score = std::max(worst_score, std::abs(moved.y_hat - base.y_hat));
    }
  }

  const bool pass = worst_prob < tol::kShift && worst_score < tol::kShift;
  char detail[128];
  std::snprintf(detail, sizeof detail,
                "max prob delta %.3g, max score delta %.3g", worst_prob,
                worst_score);
  report(2, "translation invariance", pass, detail);
  CHECK(worst_prob < tol::kShift);
  CHECK(worst_score < tol::kShift);
}

TEST_CASE("criterion 3: permutation equivariance of the anchor score") {
  ModelConfig cfg;
  ModelParams params = noisy_params(cfg, 2);
  Rng rng(3, 0);

  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 4 + rng.uniform_index(5);
    ImageRecord rec = random_record(rng, cfg.a, k);
    const double base = model_forward(rec, params, cfg).y_hat;

    std::vector<std::size_t> order(k - 1);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i + 1;
    rng.shuffle(order);
    ImageRecord perm;
    perm.id = rec.id;
    perm.label = rec.label;
    perm.rois.push_back(rec.rois[0]);
    for (std::size_t i : order) perm.rois.push_back(rec.rois[i]);

    worst = std::max(worst,
                     std::abs(model_forward(perm, params, cfg).y_hat - base));
  }

  const bool pass = worst < tol::kPermutation;
  char detail[64];
  std::snprintf(detail, sizeof detail, "max score delta %.3g", worst);
  report(3, "permutation equivariance", pass, detail);
  CHECK(worst < tol::kPermutation);
}

TEST_CASE("criterion 4: loss identities") {
  const double eps = LossConfig{}.eps;

  const double bce_err = std::abs(bce(0.5, 1, eps) - std::log(2.0));

  Matrix same(4, 6);
  Rng rng(4, 0);
  for (Eigen::Index j = 0; j < 6; ++j) same(0, j) = rng.normal();
  Vector row(6);
  for (Eigen::Index j = 0; j < 6; ++j) row[j] = rng.normal();
  for (Eigen::Index i = 1; i < 4; ++i) same.row(i) = row.transpose();
  const double same_err = std::abs(repulsive_loss(same, eps) - 1.0);

  Matrix ortho = Matrix::Zero(4, 6);
  for (Eigen::Index j = 0; j < 6; ++j) ortho(0, j) = rng.normal();
  ortho(1, 0) = 1.3;
  ortho(2, 2) = -0.4;
  ortho(3, 4) = 2.2;
  const double ortho_err = std::abs(repulsive_loss(ortho, eps));

  Matrix X(5, 7);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = rng.normal();
  const Matrix g = repulsive_grad(X, eps);
  const bool anchor_zero = (g.row(0).array() == 0.0).all();

  const bool pass = bce_err < tol::kLossIdentity &&
                    same_err < tol::kLossIdentity &&
                    ortho_err < tol::kLossIdentity && anchor_zero;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "bce err %.3g, identical-rows err %.3g, orthogonal err %.3g, "
                "anchor grad zero: %s",
                bce_err, same_err, ortho_err, anchor_zero ? "yes" : "no");
  report(4, "loss identities", pass, detail);
  CHECK(bce_err < tol::kLossIdentity);
  CHECK(same_err < tol::kLossIdentity);
  CHECK(ortho_err < tol::kLossIdentity);
  CHECK(anchor_zero);
}

TEST_CASE("criterion 5: AUC against pairwise concordance") {
  Rng rng(5, 0);
  double worst = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.uniform_index(99);
    ScoredSet s;
    while (true) {
      s.scores.clear();
      s.labels.clear();
      std::size_t pos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double v = rng.uniform();
        if (t % 2 == 0) v = std::floor(v * 6.0) / 6.0;  // force ties
        s.scores.push_back(v);
        const int y = rng.uniform() < 0.5 ? 1 : 0;
        pos += static_cast<std::size_t>(y);
        s.labels.push_back(y);
      }
      if (pos > 0 && pos < n) break;
    }

    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (s.labels[i] != 1) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (s.labels[j] != 0) continue;
        pairs += 1;
        if (s.scores[i] > s.scores[j]) wins += 1;
        else if (s.scores[i] == s.scores[j]) wins += 0.5;
      }
    }
    worst = std::max(worst, std::abs(roc_auc(s) - wins / pairs));
  }

  const bool pass = worst < tol::kAucOracle;
  char detail[64];
  std::snprintf(detail, sizeof detail, "max abs deviation %.3g", worst);
  report(5, "AUC oracle", pass, detail);
  CHECK(worst < tol::kAucOracle);
}

TEST_CASE("criterion 6: planted-signal benchmark") {
  Bench& b = bench();
  const double full_auc = b.full[0].metrics.auc;
  const double null_auc = b.mu0[0].metrics.auc;
  const double secs = b.full[0].seconds + b.mu0[0].seconds;

  const bool learn_ok = full_auc >= tol::kFullAucFloor;
  const bool null_ok =
      null_auc >= tol::kNullAucLo && null_auc <= tol::kNullAucHi;
  const bool time_ok = secs < tol::kBenchmarkBudgetSec;
  const bool pass = learn_ok && null_ok && time_ok;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "signal AUC %.4f (floor %.2f), null AUC %.4f, runtime %.0f s",
                full_auc, tol::kFullAucFloor, null_auc, secs);
  report(6, "planted-signal benchmark", pass, detail);
  CHECK(full_auc >= tol::kFullAucFloor);
  CHECK(null_auc >= tol::kNullAucLo);
  CHECK(null_auc <= tol::kNullAucHi);
  CHECK(secs < tol::kBenchmarkBudgetSec);
}

TEST_CASE("criterion 7: ablation direction and anchor probe") {
  Bench& b = bench();
  const double full_auc = b.full[0].metrics.auc;
  const double pool_auc = b.pool[0].metrics.auc;

  const bool direction_ok = full_auc >= pool_auc;
  const bool probe_ok = b.probe_auc <= tol::kProbeAucCeil;
  const bool pass = direction_ok && probe_ok;
  char detail[128];
  std::snprintf(detail, sizeof detail,
                "full AUC %.4f vs pool AUC %.4f, probe AUC %.4f", full_auc,
                pool_auc, b.probe_auc);
  report(7, "ablation direction", pass, detail);
  CHECK(full_auc >= pool_auc);
  CHECK(b.probe_auc <= tol::kProbeAucCeil);
}

TEST_CASE("criterion 8: determinism of the benchmark runs") {
  Bench& b = bench();

  bool params_ok = true, bytes_ok = true;
  double metric_delta = 0;
  const RunOutcome* pairs[3][2] = {{&b.full[0], &b.full[1]},
                                   {&b.mu0[0], &b.mu0[1]},
                                   {&b.pool[0], &b.pool[1]}};
  for (const auto& pr : pairs) {
    const RunOutcome& r1 = *pr[0];
    const RunOutcome& r2 = *pr[1];
    params_ok = params_ok && params_equal(r1.result.params, r2.result.params);
    bytes_ok = bytes_ok && r1.checkpoint_bytes == r2.checkpoint_bytes;
    metric_delta = std::max(
        {metric_delta, std::abs(r1.metrics.auc - r2.metrics.auc),
         std::abs(r1.metrics.f1 - r2.metrics.f1),
         std::abs(r1.metrics.r_at_01 - r2.metrics.r_at_01),
         std::abs(r1.metrics.r_at_03 - r2.metrics.r_at_03),
         std::abs(r1.metrics.r_at_05 - r2.metrics.r_at_05)});
  }

  const bool metrics_ok = metric_delta < tol::kMetricAgreement;
  const bool pass = params_ok && bytes_ok && metrics_ok;
  char detail[160];
  std::snprintf(detail, sizeof detail,
                "checkpoints bitwise identical: %s, files byte-identical: %s, "
                "max metric delta %.3g",
                params_ok ? "yes" : "no", bytes_ok ? "yes" : "no",
                metric_delta);
  report(8, "determinism", pass, detail);
  CHECK(params_ok);
  CHECK(bytes_ok);
  CHECK(metric_delta < tol::kMetricAgreement);
}
