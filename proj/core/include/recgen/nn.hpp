#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "recgen/rng.hpp"

// Minimal building blocks for small transformers with hand-written
// backpropagation. Activations are (positions x features) matrices; every
// affine map is y = x * W + b with W stored (in x out).
//
// forward() is const and writes intermediates into an optional cache, so an
// immutable module can be evaluated concurrently. backward() consumes that
// cache and accumulates into Param::grad.
namespace recgen::nn {

using Matrix = Eigen::MatrixXd;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string param_name, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(param_name)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

// Parameters in declaration order; this order is the checkpoint order.
using ParamList = std::vector<Param*>;

void fill_normal(Matrix& m, Rng& rng, double stddev);

// Round every parameter to float32 precision (the checkpoint precision), so
// that a saved model reloads bit-identically.
void round_to_storage(const ParamList& params);

bool all_finite(const ParamList& params);

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, bool bias = true);

  void init(Rng& rng, double stddev);
  Matrix forward(const Matrix& x) const;
  // Accumulates weight/bias gradients; returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy);
  void collect(ParamList& out);

  Param weight;
  Param bias;
  bool has_bias = true;
};

class LayerNorm {
 public:
  struct Cache {
    Matrix normalized;
    Eigen::VectorXd inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
  void collect(ParamList& out);

  Param gain;
  Param shift;
  double eps = 1e-5;
};

// Boolean n x n attention pattern: allowed(p, q) means position p may attend
// to position q.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(int size, bool fill = false)
      : size_(size), allowed_(static_cast<std::size_t>(size) * size, fill ? 1 : 0) {}

  static AttentionMask full(int size) { return AttentionMask(size, true); }

  int size() const { return size_; }
  bool allowed(int p, int q) const { return allowed_[static_cast<std::size_t>(p) * size_ + q] != 0; }
  void set(int p, int q, bool v) { allowed_[static_cast<std::size_t>(p) * size_ + q] = v ? 1 : 0; }

  bool operator==(const AttentionMask&) const = default;

 private:
  int size_ = 0;
  std::vector<std::uint8_t> allowed_;
};

// Multi-head self-attention. The input may stack several independent
// segments of equal length mask.size(); attention never crosses segments.
class SelfAttention {
 public:
  struct Cache {
    Matrix input;
    Matrix qkv;
    Matrix context;
    std::vector<Matrix> probs;  // segment-major, then head
  };

  SelfAttention() = default;
  SelfAttention(const std::string& name, int dim, int heads);

  void init(Rng& rng, double stddev, double out_stddev);
  Matrix forward(const Matrix& x, const AttentionMask& mask, Cache* cache) const;
  Matrix backward(const Cache& cache, const AttentionMask& mask, const Matrix& dy);
  void collect(ParamList& out);

  int heads = 1;
  Linear qkv;
  Linear out;
};

// Pre-norm transformer block: x + Attn(LN(x)), then h + MLP(LN(h)), GELU MLP.
class TransformerBlock {
 public:
  struct Cache {
    LayerNorm::Cache ln_attn;
    Matrix ln_attn_out;
    SelfAttention::Cache attn;
    Matrix mid;
    LayerNorm::Cache ln_mlp;
    Matrix ln_mlp_out;
    Matrix hidden_pre;
    Matrix hidden;
  };

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int dim, int heads, int ff_dim);

  void init(Rng& rng, double stddev, double residual_stddev);
  Matrix forward(const Matrix& x, const AttentionMask& mask, Cache* cache) const;
  Matrix backward(const Cache& cache, const AttentionMask& mask, const Matrix& dy);
  void collect(ParamList& out);

  LayerNorm ln_attn;
  SelfAttention attn;
  LayerNorm ln_mlp;
  Linear fc_in;
  Linear fc_out;
};

// tanh approximation of GELU and its derivative.
double gelu(double x);
double gelu_grad(double x);

// Row-wise log-softmax.
Matrix log_softmax_rows(const Matrix& logits);

}  // namespace recgen::nn
