#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roiattn/common.hpp"
#include "roiattn/data.hpp"

namespace roiattn {

// Where the classifier reads its vector from:
//   anchor      row 0 of the contextualized sequence X_L
//   meanpool    columnwise mean of X_L
//   maxpool     columnwise max of X_L
//   maxpool_raw columnwise max of the raw input embeddings, then the input
//               projection; no attention at all (depth must be 0). This is the
//               pool-then-classify baseline used by the ablation table.
enum class Readout { anchor, meanpool, maxpool, maxpool_raw };

Readout parse_readout(const std::string& name);
std::string to_string(Readout r);

struct ModelConfig {
  std::size_t a = 32;       // input embedding dim
  std::size_t d = 64;       // model dim
  std::size_t H = 4;        // heads
  std::size_t L = 2;        // blocks; 0 means no attention blocks
  std::size_t mlp_ratio = 4;
  double rope_base = 10000.0;
  double rope_scale = 100.0;  // maps [0,1] box coordinates to angles
  Readout readout = Readout::anchor;
  bool use_rope = true;
};

void validate(const ModelConfig& cfg);

struct BlockParams {
  Vector ln1_g, ln1_b;
  Matrix Wq, Wk, Wv, Wo;  // d x d, row convention q_i = Wq x_i + bq
  Vector bq, bk, bv, bo;
  Vector ln2_g, ln2_b;
  Matrix W1;  // hidden x d
  Vector b1;
  Matrix W2;  // d x hidden
  Vector b2;
};

struct ModelParams {
  Matrix Win;  // d x a
  Vector bin;
  std::vector<BlockParams> blocks;
  Matrix Wc1;  // d/2 x d
  Vector bc1;
  Vector wc2;  // d/2, final scalar head
  double bc2 = 0;
};

// Flat elementwise view over every tensor, in a fixed documented order. data
// points at Eigen's column-major storage; (i,j) sits at data[j*rows + i].
// Shared by the optimizer, the gradient checker, and the checkpoint writer.
struct TensorRef {
  std::string name;
  double* data;
  std::size_t size;
  std::size_t rows, cols;
};
struct ConstTensorRef {
  std::string name;
  const double* data;
  std::size_t size;
  std::size_t rows, cols;
};
std::vector<TensorRef> tensor_refs(ModelParams& p);
std::vector<ConstTensorRef> tensor_refs(const ModelParams& p);

// Zero-allocated parameters with shapes from cfg.
ModelParams make_params(const ModelConfig& cfg);
void set_zero(ModelParams& p);

// Deterministic: weights uniform in +-1/sqrt(fan_in), biases and layer-norm
// shifts zero, layer-norm gains one, final classifier layer all zero (so a
// fresh model outputs exactly 0.5).
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// 2D axial rotary embedding of one head-sized vector. Pairs in the first half
// rotate by angles cx * rope_scale * rope_base^(-4t/d_h), pairs in the second
// half by the same schedule driven by cy. Norm-preserving.
Vector rope_rotate(const Vector& vec, double cx, double cy,
                   const ModelConfig& cfg);

struct AttnTrace {
  Matrix xhat1;   // k x d, normalized block input
  Vector inv_std1;
  Matrix Qrot, Krot, V;  // k x d (Q, K after rotation)
  std::vector<Matrix> P;  // per head, k x k attention probabilities
  Matrix A;  // k x d, concatenated head outputs, input to Wo
};

struct BlockTrace {
  Matrix X_in;
  AttnTrace attn;
  Matrix X_mid;  // after attention residual
  Matrix xhat2;
  Vector inv_std2;
  Matrix Hpre, Hact;  // k x hidden
  Matrix X_out;
};

struct ForwardTrace {
  Matrix Z;        // k x a raw embeddings
  Matrix centers;  // k x 2
  Matrix X0;       // k x d projected inputs
  std::vector<BlockTrace> blocks;
  Matrix X_L;
  Vector r;  // readout vector fed to the classifier
  std::vector<Eigen::Index> pool_argmax;  // maxpool variants: winning row per column
  Vector r_raw;  // maxpool_raw only: pooled raw embedding
  Vector h1pre, h1act;
  double logit = 0, y_hat = 0;
};

// One attention sublayer with pre-norm residual wiring:
// X + Wo * heads(softmax(q_rot k_rot^T / sqrt(d_h)) v). RoPE touches q and k
// only. centers is k x 2.
Matrix attention_forward(const Matrix& X, const Matrix& centers,
                         const BlockParams& params, const ModelConfig& cfg,
                         AttnTrace* trace = nullptr);

struct ModelOutput {
  double y_hat = 0;
  Matrix X_L;
  ForwardTrace trace;
};

ModelOutput model_forward(const ImageRecord& record, const ModelParams& params,
                          const ModelConfig& cfg);

// Exact reverse-mode gradients for every parameter given the upstream loss
// gradients d_loss/d_y_hat and d_loss/d_X_L.
ModelParams model_backward(const ForwardTrace& trace, double d_y_hat,
                           const Matrix& d_X_L, const ModelParams& params,
                           const ModelConfig& cfg);

}  // namespace roiattn
