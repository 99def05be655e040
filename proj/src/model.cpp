#include "roiattn/model.hpp"

#include <cmath>

#include "roiattn/prng.hpp"

namespace roiattn {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

// d/dx of the exact (erf-form) GELU: Phi(x) + x * phi(x).
double gelu_grad(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  const double Phi = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  return Phi + x * phi;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix gelu_mat(const Matrix& X) {
  return X.unaryExpr([](double v) { return gelu(v); });
}

Matrix gelu_grad_mat(const Matrix& X) {
  return X.unaryExpr([](double v) { return gelu_grad(v); });
}

// out = g (.) xhat + b, rowwise.
Matrix ln_apply_gain(const Matrix& xhat, const Vector& g, const Vector& b) {
  return ((xhat.array().rowwise() * g.transpose().array()).rowwise() +
          b.transpose().array())
      .matrix();
}

Matrix layer_norm(const Matrix& X, const Vector& g, const Vector& b,
                  Matrix& xhat, Vector& inv_std) {
  const Eigen::Index k = X.rows(), d = X.cols();
  xhat.resize(k, d);
  inv_std.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double mu = X.row(i).mean();
    const double var =
        (X.row(i).array() - mu).square().sum() / static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + kLnEps);
    inv_std[i] = is;
    xhat.row(i) = ((X.row(i).array() - mu) * is).matrix();
  }
  return ln_apply_gain(xhat, g, b);
}

// dX += backward of layer norm; dg and db accumulate too. Per row:
// dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat (.) xhat)).
void layer_norm_backward(const Matrix& dOut, const Matrix& xhat,
                         const Vector& inv_std, const Vector& g, Matrix& dX,
                         Vector& dg, Vector& db) {
  const Eigen::Index k = dOut.rows();
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto dxhat =
        (dOut.row(i).array() * g.transpose().array()).matrix().eval();
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
    dX.row(i) +=
        (inv_std[i] * (dxhat.array() - m1 - xhat.row(i).array() * m2)).matrix();
    dg += dOut.row(i).cwiseProduct(xhat.row(i)).transpose();
    db += dOut.row(i).transpose();
  }
}

// In-place 2D axial rotation of one head segment. Inverse flips the angles,
// which is the exact transpose of the (orthogonal) forward map.
void rope_segment(double* seg, Eigen::Index dh, double cx, double cy,
                  const ModelConfig& cfg, bool inverse) {
  const Eigen::Index pairs = dh / 4;
  const double sign = inverse ? -1.0 : 1.0;
  for (Eigen::Index t = 0; t < pairs; ++t) {
    const double freq = std::pow(
        cfg.rope_base, -4.0 * static_cast<double>(t) / static_cast<double>(dh));
    for (int axis = 0; axis < 2; ++axis) {
      const double coord = axis == 0 ? cx : cy;
      const double angle = sign * coord * cfg.rope_scale * freq;
      const double c = std::cos(angle), s = std::sin(angle);
      double* u = seg + (axis == 0 ? 2 * t : dh / 2 + 2 * t);
      const double a = u[0], b = u[1];
      u[0] = a * c - b * s;
      u[1] = a * s + b * c;
    }
  }
}

// Rotate every head segment of every row of M (k x d) by its row's center.
void rope_rows(Matrix& M, const Matrix& centers, const ModelConfig& cfg,
               bool inverse) {
  const Eigen::Index k = M.rows();
  const Eigen::Index dh = static_cast<Eigen::Index>(cfg.d / cfg.H);
  Eigen::RowVectorXd row(M.cols());
  for (Eigen::Index i = 0; i < k; ++i) {
    row = M.row(i);
    for (std::size_t h = 0; h < cfg.H; ++h)
      rope_segment(row.data() + static_cast<Eigen::Index>(h) * dh, dh,
                   centers(i, 0), centers(i, 1), cfg, inverse);
    M.row(i) = row;
  }
}

Vector colsum(const Matrix& M) { return M.colwise().sum().transpose(); }

}  // namespace

Readout parse_readout(const std::string& name) {
  if (name == "anchor") return Readout::anchor;
  if (name == "meanpool") return Readout::meanpool;
  if (name == "maxpool") return Readout::maxpool;
  if (name == "maxpool_raw") return Readout::maxpool_raw;
  throw ValidationError("unknown readout: " + name);
}

std::string to_string(Readout r) {
  switch (r) {
    case Readout::anchor: return "anchor";
    case Readout::meanpool: return "meanpool";
    case Readout::maxpool: return "maxpool";
    case Readout::maxpool_raw: return "maxpool_raw";
  }
  throw ValidationError("unknown readout value");
}

void validate(const ModelConfig& cfg) {
  if (cfg.a < 1) throw ValidationError("a >= 1 required");
  if (cfg.H < 1) throw ValidationError("H >= 1 required");
  if (cfg.d < 4 || cfg.d % cfg.H != 0)
    throw ValidationError("d must be a positive multiple of H");
  if ((cfg.d / cfg.H) % 4 != 0)
    throw ValidationError("head dim d/H must be divisible by 4");
  if (cfg.mlp_ratio < 1) throw ValidationError("mlp_ratio >= 1 required");
  if (!(cfg.rope_base > 1.0)) throw ValidationError("rope_base > 1 required");
  if (!(cfg.rope_scale >= 0.0))
    throw ValidationError("rope_scale >= 0 required");
  if (cfg.readout == Readout::maxpool_raw && cfg.L != 0)
    throw ValidationError("maxpool_raw readout requires depth 0");
}

ModelParams make_params(const ModelConfig& cfg) {
  validate(cfg);
  const auto a = static_cast<Eigen::Index>(cfg.a);
  const auto d = static_cast<Eigen::Index>(cfg.d);
  const auto hidden = static_cast<Eigen::Index>(cfg.mlp_ratio * cfg.d);

  ModelParams p;
  p.Win = Matrix::Zero(d, a);
  p.bin = Vector::Zero(d);
  p.blocks.resize(cfg.L);
  for (auto& b : p.blocks) {
    b.ln1_g = Vector::Zero(d);
    b.ln1_b = Vector::Zero(d);
    b.Wq = Matrix::Zero(d, d);
    b.Wk = Matrix::Zero(d, d);
    b.Wv = Matrix::Zero(d, d);
    b.Wo = Matrix::Zero(d, d);
    b.bq = Vector::Zero(d);
    b.bk = Vector::Zero(d);
    b.bv = Vector::Zero(d);
    b.bo = Vector::Zero(d);
    b.ln2_g = Vector::Zero(d);
    b.ln2_b = Vector::Zero(d);
    b.W1 = Matrix::Zero(hidden, d);
    b.b1 = Vector::Zero(hidden);
    b.W2 = Matrix::Zero(d, hidden);
    b.b2 = Vector::Zero(d);
  }
  p.Wc1 = Matrix::Zero(d / 2, d);
  p.bc1 = Vector::Zero(d / 2);
  p.wc2 = Vector::Zero(d / 2);
  p.bc2 = 0.0;
  return p;
}

void set_zero(ModelParams& p) {
  for (auto& t : tensor_refs(p))
    for (std::size_t i = 0; i < t.size; ++i) t.data[i] = 0.0;
}

namespace {

template <typename Ref, typename Params>
std::vector<Ref> tensor_refs_impl(Params& p) {
  std::vector<Ref> out;
  auto add_m = [&](const std::string& name, auto& m) {
    out.push_back({name, m.data(), static_cast<std::size_t>(m.size()),
                   static_cast<std::size_t>(m.rows()),
                   static_cast<std::size_t>(m.cols())});
  };
  auto add_v = [&](const std::string& name, auto& v) {
    out.push_back({name, v.data(), static_cast<std::size_t>(v.size()),
                   static_cast<std::size_t>(v.size()), 1});
  };
  add_m("input.W", p.Win);
  add_v("input.b", p.bin);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "block" + std::to_string(i) + ".";
    add_v(pre + "ln1.g", b.ln1_g);
    add_v(pre + "ln1.b", b.ln1_b);
    add_m(pre + "attn.Wq", b.Wq);
    add_v(pre + "attn.bq", b.bq);
    add_m(pre + "attn.Wk", b.Wk);
    add_v(pre + "attn.bk", b.bk);
    add_m(pre + "attn.Wv", b.Wv);
    add_v(pre + "attn.bv", b.bv);
    add_m(pre + "attn.Wo", b.Wo);
    add_v(pre + "attn.bo", b.bo);
    add_v(pre + "ln2.g", b.ln2_g);
    add_v(pre + "ln2.b", b.ln2_b);
    add_m(pre + "ffn.W1", b.W1);
    add_v(pre + "ffn.b1", b.b1);
    add_m(pre + "ffn.W2", b.W2);
    add_v(pre + "ffn.b2", b.b2);
  }
  add_m("cls.W1", p.Wc1);
  add_v("cls.b1", p.bc1);
  add_v("cls.w2", p.wc2);
  out.push_back({"cls.b2", &p.bc2, 1, 1, 1});
  return out;
}

}  // namespace

std::vector<TensorRef> tensor_refs(ModelParams& p) {
  return tensor_refs_impl<TensorRef>(p);
}

std::vector<ConstTensorRef> tensor_refs(const ModelParams& p) {
  return tensor_refs_impl<ConstTensorRef>(p);
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = make_params(cfg);
  Rng rng(seed, 0);
  auto fill = [&](Matrix& W, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index t = 0; t < W.size(); ++t)
      W.data()[t] = rng.uniform(-bound, bound);
  };
  fill(p.Win, cfg.a);
  for (auto& b : p.blocks) {
    b.ln1_g.setOnes();
    b.ln2_g.setOnes();
    fill(b.Wq, cfg.d);
    fill(b.Wk, cfg.d);
    fill(b.Wv, cfg.d);
    fill(b.Wo, cfg.d);
    fill(b.W1, cfg.d);
    fill(b.W2, cfg.mlp_ratio * cfg.d);
  }
  fill(p.Wc1, cfg.d);
  // wc2 and bc2 stay zero: a fresh model scores 0.5 everywhere.
  return p;
}

Vector rope_rotate(const Vector& vec, double cx, double cy,
                   const ModelConfig& cfg) {
  const auto dh = static_cast<Eigen::Index>(cfg.d / cfg.H);
  if (vec.size() != dh)
    throw ValidationError("rope_rotate expects a head-dim vector");
  if (dh % 4 != 0) throw ValidationError("head dim must be divisible by 4");
  Vector out = vec;
  rope_segment(out.data(), dh, cx, cy, cfg, false);
  return out;
}

Matrix attention_forward(const Matrix& X, const Matrix& centers,
                         const BlockParams& params, const ModelConfig& cfg,
                         AttnTrace* trace) {
  const Eigen::Index k = X.rows();
  const auto d = static_cast<Eigen::Index>(cfg.d);
  const auto dh = static_cast<Eigen::Index>(cfg.d / cfg.H);
  if (X.cols() != d) throw ValidationError("attention input must be k x d");
  if (centers.rows() != k || centers.cols() != 2)
    throw ValidationError("centers must be k x 2");
  if (!X.allFinite() || !centers.allFinite())
    throw ValidationError("non-finite input to attention");

  AttnTrace local;
  AttnTrace& tr = trace ? *trace : local;

  Matrix ln1out = layer_norm(X, params.ln1_g, params.ln1_b, tr.xhat1,
                             tr.inv_std1);
  tr.Qrot = (ln1out * params.Wq.transpose()).rowwise() + params.bq.transpose();
  tr.Krot = (ln1out * params.Wk.transpose()).rowwise() + params.bk.transpose();
  tr.V = (ln1out * params.Wv.transpose()).rowwise() + params.bv.transpose();
  if (cfg.use_rope) {
    rope_rows(tr.Qrot, centers, cfg, false);
    rope_rows(tr.Krot, centers, cfg, false);
  }

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  tr.P.assign(cfg.H, Matrix());
  tr.A.resize(k, d);
  for (std::size_t h = 0; h < cfg.H; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * dh;
    Matrix logits = tr.Qrot.middleCols(off, dh) *
                    tr.Krot.middleCols(off, dh).transpose() * inv_sqrt_dh;
    Matrix& P = tr.P[h];
    P.resize(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double m = logits.row(i).maxCoeff();
      P.row(i) = (logits.row(i).array() - m).exp();
      P.row(i) /= P.row(i).sum();
    }
    tr.A.middleCols(off, dh) = P * tr.V.middleCols(off, dh);
  }
  return X + ((tr.A * params.Wo.transpose()).rowwise() +
              params.bo.transpose());
}

namespace {

Matrix block_forward(const Matrix& X, const Matrix& centers,
                     const BlockParams& bp, const ModelConfig& cfg,
                     BlockTrace& bt) {
  bt.X_in = X;
  bt.X_mid = attention_forward(X, centers, bp, cfg, &bt.attn);
  Matrix ln2out =
      layer_norm(bt.X_mid, bp.ln2_g, bp.ln2_b, bt.xhat2, bt.inv_std2);
  bt.Hpre = (ln2out * bp.W1.transpose()).rowwise() + bp.b1.transpose();
  bt.Hact = gelu_mat(bt.Hpre);
  bt.X_out = bt.X_mid +
             ((bt.Hact * bp.W2.transpose()).rowwise() + bp.b2.transpose());
  return bt.X_out;
}

// Returns dX_in; accumulates parameter gradients into gb.
Matrix block_backward(const BlockTrace& bt, const Matrix& centers,
                      const Matrix& dX_out, const BlockParams& bp,
                      const ModelConfig& cfg, BlockParams& gb) {
  const Eigen::Index k = bt.X_in.rows();
  const auto dh = static_cast<Eigen::Index>(cfg.d / cfg.H);

  // FFN sublayer.
  Matrix dX_mid = dX_out;  // residual branch
  gb.W2 += dX_out.transpose() * bt.Hact;
  gb.b2 += colsum(dX_out);
  Matrix dHact = dX_out * bp.W2;
  Matrix dHpre = dHact.cwiseProduct(gelu_grad_mat(bt.Hpre));
  Matrix ln2out = ln_apply_gain(bt.xhat2, bp.ln2_g, bp.ln2_b);
  gb.W1 += dHpre.transpose() * ln2out;
  gb.b1 += colsum(dHpre);
  Matrix dln2out = dHpre * bp.W1;
  layer_norm_backward(dln2out, bt.xhat2, bt.inv_std2, bp.ln2_g, dX_mid,
                      gb.ln2_g, gb.ln2_b);

  // Attention sublayer.
  Matrix dX_in = dX_mid;  // residual branch
  gb.Wo += dX_mid.transpose() * bt.attn.A;
  gb.bo += colsum(dX_mid);
  Matrix dA = dX_mid * bp.Wo;

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dQ = Matrix::Zero(k, bt.X_in.cols());
  Matrix dK = Matrix::Zero(k, bt.X_in.cols());
  Matrix dV = Matrix::Zero(k, bt.X_in.cols());
  for (std::size_t h = 0; h < cfg.H; ++h) {
    const auto off = static_cast<Eigen::Index>(h) * dh;
    const Matrix& P = bt.attn.P[h];
    Matrix dAh = dA.middleCols(off, dh);
    Matrix dP = dAh * bt.attn.V.middleCols(off, dh).transpose();
    dV.middleCols(off, dh) = P.transpose() * dAh;
    // Softmax rows: dlogit = p (.) (dp - <dp, p>).
    Matrix dLogits(k, k);
    for (Eigen::Index i = 0; i < k; ++i) {
      const double dot = dP.row(i).dot(P.row(i));
      dLogits.row(i) = P.row(i).cwiseProduct(
          (dP.row(i).array() - dot).matrix());
    }
    dQ.middleCols(off, dh) =
        dLogits * bt.attn.Krot.middleCols(off, dh) * inv_sqrt_dh;
    dK.middleCols(off, dh) =
        dLogits.transpose() * bt.attn.Qrot.middleCols(off, dh) * inv_sqrt_dh;
  }
  if (cfg.use_rope) {
    rope_rows(dQ, centers, cfg, true);  // inverse rotation = transpose
    rope_rows(dK, centers, cfg, true);
  }

  Matrix ln1out = ln_apply_gain(bt.attn.xhat1, bp.ln1_g, bp.ln1_b);
  gb.Wq += dQ.transpose() * ln1out;
  gb.bq += colsum(dQ);
  gb.Wk += dK.transpose() * ln1out;
  gb.bk += colsum(dK);
  gb.Wv += dV.transpose() * ln1out;
  gb.bv += colsum(dV);
  Matrix dln1out = dQ * bp.Wq + dK * bp.Wk + dV * bp.Wv;
  layer_norm_backward(dln1out, bt.attn.xhat1, bt.attn.inv_std1, bp.ln1_g,
                      dX_in, gb.ln1_g, gb.ln1_b);
  return dX_in;
}

void apply_classifier(const ModelParams& params, ForwardTrace& tr) {
  tr.h1pre = params.Wc1 * tr.r + params.bc1;
  tr.h1act = tr.h1pre.unaryExpr([](double v) { return gelu(v); });
  tr.logit = params.wc2.dot(tr.h1act) + params.bc2;
  tr.y_hat = sigmoid(tr.logit);
}

}  // namespace

ModelOutput model_forward(const ImageRecord& record, const ModelParams& params,
                          const ModelConfig& cfg) {
  validate(cfg);
  if (record.rois.empty()) throw ValidationError("record has no RoIs");
  const auto k = static_cast<Eigen::Index>(record.rois.size());
  const auto a = static_cast<Eigen::Index>(cfg.a);
  const auto d = static_cast<Eigen::Index>(cfg.d);

  ModelOutput out;
  ForwardTrace& tr = out.trace;
  tr.Z.resize(k, a);
  tr.centers.resize(k, 2);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& roi = record.rois[static_cast<std::size_t>(i)];
    if (roi.embedding.size() != a)
      throw ValidationError("embedding dimension mismatch: expected " +
                            std::to_string(a) + ", got " +
                            std::to_string(roi.embedding.size()));
    tr.Z.row(i) = roi.embedding.transpose();
    auto [cx, cy] = box_center(roi.proposal.bbox);
    tr.centers(i, 0) = cx;
    tr.centers(i, 1) = cy;
  }
  if (!tr.Z.allFinite()) throw ValidationError("non-finite embedding");

  tr.X0 = (tr.Z * params.Win.transpose()).rowwise() + params.bin.transpose();

  if (cfg.readout == Readout::maxpool_raw) {
    tr.X_L = tr.X0;
    tr.r_raw.resize(a);
    tr.pool_argmax.assign(static_cast<std::size_t>(a), 0);
    for (Eigen::Index j = 0; j < a; ++j) {
      Eigen::Index row;
      tr.r_raw[j] = tr.Z.col(j).maxCoeff(&row);
      tr.pool_argmax[static_cast<std::size_t>(j)] = row;
    }
    tr.r = params.Win * tr.r_raw + params.bin;
  } else {
    Matrix X = tr.X0;
    tr.blocks.resize(cfg.L);
    for (std::size_t b = 0; b < cfg.L; ++b)
      X = block_forward(X, tr.centers, params.blocks[b], cfg, tr.blocks[b]);
    tr.X_L = X;

    switch (cfg.readout) {
      case Readout::anchor:
        tr.r = tr.X_L.row(0).transpose();
        break;
      case Readout::meanpool:
        tr.r = tr.X_L.colwise().mean().transpose();
        break;
      case Readout::maxpool: {
        tr.r.resize(d);
        tr.pool_argmax.assign(static_cast<std::size_t>(d), 0);
        for (Eigen::Index j = 0; j < d; ++j) {
          Eigen::Index row;
          tr.r[j] = tr.X_L.col(j).maxCoeff(&row);
          tr.pool_argmax[static_cast<std::size_t>(j)] = row;
        }
        break;
      }
      case Readout::maxpool_raw:
        break;  // handled above
    }
  }

  apply_classifier(params, tr);
  if (!tr.X_L.allFinite() || !std::isfinite(tr.y_hat))
    throw ValidationError("non-finite activation");
  out.y_hat = tr.y_hat;
  out.X_L = tr.X_L;
  return out;
}

ModelParams model_backward(const ForwardTrace& trace, double d_y_hat,
                           const Matrix& d_X_L, const ModelParams& params,
                           const ModelConfig& cfg) {
  const Eigen::Index k = trace.Z.rows();
  if (d_X_L.rows() != k || d_X_L.cols() != trace.X_L.cols())
    throw ValidationError("d_X_L shape mismatch");

  ModelParams g = make_params(cfg);

  // Classifier.
  const double dlogit = d_y_hat * trace.y_hat * (1.0 - trace.y_hat);
  g.wc2 += dlogit * trace.h1act;
  g.bc2 += dlogit;
  Vector dh1act = dlogit * params.wc2;
  Vector dh1pre = dh1act.cwiseProduct(
      trace.h1pre.unaryExpr([](double v) { return gelu_grad(v); }));
  g.Wc1 += dh1pre * trace.r.transpose();
  g.bc1 += dh1pre;
  Vector dr = params.Wc1.transpose() * dh1pre;

  Matrix dXL = d_X_L;
  switch (cfg.readout) {
    case Readout::anchor:
      dXL.row(0) += dr.transpose();
      break;
    case Readout::meanpool:
      dXL.rowwise() += (dr / static_cast<double>(k)).transpose();
      break;
    case Readout::maxpool:
      for (Eigen::Index j = 0; j < dr.size(); ++j)
        dXL(trace.pool_argmax[static_cast<std::size_t>(j)], j) += dr[j];
      break;
    case Readout::maxpool_raw: {
      g.Win += dr * trace.r_raw.transpose();
      g.bin += dr;
      // X_L here is just the projected inputs.
      g.Win += dXL.transpose() * trace.Z;
      g.bin += colsum(dXL);
      return g;
    }
  }

  Matrix dX = dXL;
  for (std::size_t b = cfg.L; b-- > 0;)
    dX = block_backward(trace.blocks[b], trace.centers, dX, params.blocks[b],
                        cfg, g.blocks[b]);
  g.Win += dX.transpose() * trace.Z;
  g.bin += colsum(dX);
  return g;
}

}  // namespace roiattn
