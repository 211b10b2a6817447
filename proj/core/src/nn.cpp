#include "recgen/nn.hpp"

#include <cmath>
#include <limits>

#include "recgen/error.hpp"

namespace recgen::nn {

void fill_normal(Matrix& m, Rng& rng, double stddev) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = stddev * standard_normal(rng);
  }
}

void round_to_storage(const ParamList& params) {
  for (Param* p : params) {
    p->value = p->value.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
  }
}

bool all_finite(const ParamList& params) {
  for (const Param* p : params) {
    if (!p->value.allFinite()) return false;
  }
  return true;
}

double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  constexpr double k = 0.7978845608028654;
  const double inner = k * (x + 0.044715 * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = k * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(const std::string& name, int in, int out_dim, bool bias)
    : weight(name + ".weight", in, out_dim), has_bias(bias) {
  if (bias) this->bias = Param(name + ".bias", 1, out_dim);
}

void Linear::init(Rng& rng, double stddev) {
  fill_normal(weight.value, rng, stddev);
  if (has_bias) bias.value.setZero();
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = x * weight.value;
  if (has_bias) y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  weight.grad.noalias() += x.transpose() * dy;
  if (has_bias) bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value.transpose();
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// LayerNorm

LayerNorm::LayerNorm(const std::string& name, int dim)
    : gain(name + ".gain", 1, dim), shift(name + ".shift", 1, dim) {
  gain.value.setOnes();
}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const Eigen::Index n = x.rows();
  const double inv_d = 1.0 / static_cast<double>(x.cols());
  Matrix normalized(n, x.cols());
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).sum() * inv_d;
    const auto centered = x.row(r).array() - mean;
    const double var = centered.square().sum() * inv_d;
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = centered * inv_std(r);
  }
  Matrix y = normalized.array().rowwise() * gain.value.row(0).array();
  y.rowwise() += shift.value.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::backward(const Cache& cache, const Matrix& dy) {
  const Matrix& xhat = cache.normalized;
  gain.grad.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  shift.grad.row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.value.row(0).array();
  const double inv_d = 1.0 / static_cast<double>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() * inv_d;
    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) * inv_d;
    dx.row(r) = cache.inv_std(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
  }
  return dx;
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gain);
  out.push_back(&shift);
}

// ---------------------------------------------------------------------------
// SelfAttention

SelfAttention::SelfAttention(const std::string& name, int dim, int num_heads)
    : heads(num_heads), qkv(name + ".qkv", dim, 3 * dim), out(name + ".out", dim, dim) {
  if (num_heads <= 0 || dim % num_heads != 0) {
    throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
}

void SelfAttention::init(Rng& rng, double stddev, double out_stddev) {
  qkv.init(rng, stddev);
  out.init(rng, out_stddev);
}

Matrix SelfAttention::forward(const Matrix& x, const AttentionMask& mask, Cache* cache) const {
  const int n = mask.size();
  const Eigen::Index total = x.rows();
  if (n <= 0 || total % n != 0) throw ConfigError("attention input rows do not match mask size");
  const Eigen::Index segments = total / n;
  const Eigen::Index dim = x.cols();
  const Eigen::Index dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix qkv_out = qkv.forward(x);
  Matrix context = Matrix::Zero(total, dim);
  if (cache) cache->probs.clear();

  Matrix scores(n, n);
  for (Eigen::Index s = 0; s < segments; ++s) {
    const Eigen::Index r0 = s * n;
    for (int h = 0; h < heads; ++h) {
      const auto q = qkv_out.block(r0, h * dh, n, dh);
      const auto k = qkv_out.block(r0, dim + h * dh, n, dh);
      const auto v = qkv_out.block(r0, 2 * dim + h * dh, n, dh);
      scores.noalias() = (q * k.transpose()) * scale;
      for (int p = 0; p < n; ++p) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < n; ++c) {
          if (mask.allowed(p, c)) mx = std::max(mx, scores(p, c));
        }
        double sum = 0.0;
        for (int c = 0; c < n; ++c) {
          if (mask.allowed(p, c)) {
            scores(p, c) = std::exp(scores(p, c) - mx);
            sum += scores(p, c);
          } else {
            scores(p, c) = 0.0;
          }
        }
        if (sum > 0.0) scores.row(p) /= sum;
      }
      context.block(r0, h * dh, n, dh).noalias() = scores * v;
      if (cache) cache->probs.push_back(scores);
    }
  }
  Matrix y = out.forward(context);
  if (cache) {
    cache->input = x;
    cache->qkv = std::move(qkv_out);
    cache->context = std::move(context);
  }
  return y;
}

Matrix SelfAttention::backward(const Cache& cache, const AttentionMask& mask, const Matrix& dy) {
  const int n = mask.size();
  const Eigen::Index total = cache.input.rows();
  const Eigen::Index segments = total / n;
  const Eigen::Index dim = cache.input.cols();
  const Eigen::Index dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Matrix dcontext = out.backward(cache.context, dy);
  Matrix dqkv = Matrix::Zero(total, 3 * dim);
  Matrix dprobs(n, n);
  Matrix dscores(n, n);
  for (Eigen::Index s = 0; s < segments; ++s) {
    const Eigen::Index r0 = s * n;
    for (int h = 0; h < heads; ++h) {
      const Matrix& probs = cache.probs[static_cast<std::size_t>(s * heads + h)];
      const auto q = cache.qkv.block(r0, h * dh, n, dh);
      const auto k = cache.qkv.block(r0, dim + h * dh, n, dh);
      const auto v = cache.qkv.block(r0, 2 * dim + h * dh, n, dh);
      const auto dctx = dcontext.block(r0, h * dh, n, dh);

      dprobs.noalias() = dctx * v.transpose();
      dqkv.block(r0, 2 * dim + h * dh, n, dh).noalias() += probs.transpose() * dctx;
      const Eigen::VectorXd row_dot = (dprobs.array() * probs.array()).rowwise().sum();
      dscores = probs.array() * (dprobs.colwise() - row_dot).array();
      dqkv.block(r0, h * dh, n, dh).noalias() += (dscores * k) * scale;
      dqkv.block(r0, dim + h * dh, n, dh).noalias() += (dscores.transpose() * q) * scale;
    }
  }
  return qkv.backward(cache.input, dqkv);
}

void SelfAttention::collect(ParamList& out_params) {
  qkv.collect(out_params);
  out.collect(out_params);
}

// ---------------------------------------------------------------------------
// TransformerBlock

TransformerBlock::TransformerBlock(const std::string& name, int dim, int heads, int ff_dim)
    : ln_attn(name + ".ln_attn", dim),
      attn(name + ".attn", dim, heads),
      ln_mlp(name + ".ln_mlp", dim),
      fc_in(name + ".fc_in", dim, ff_dim),
      fc_out(name + ".fc_out", ff_dim, dim) {}

void TransformerBlock::init(Rng& rng, double stddev, double residual_stddev) {
  attn.init(rng, stddev, residual_stddev);
  fc_in.init(rng, stddev);
  fc_out.init(rng, residual_stddev);
}

Matrix TransformerBlock::forward(const Matrix& x, const AttentionMask& mask, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  c.ln_attn_out = ln_attn.forward(x, &c.ln_attn);
  c.mid = x + attn.forward(c.ln_attn_out, mask, cache ? &c.attn : nullptr);
  c.ln_mlp_out = ln_mlp.forward(c.mid, &c.ln_mlp);
  c.hidden_pre = fc_in.forward(c.ln_mlp_out);
  c.hidden = c.hidden_pre.unaryExpr([](double v) { return gelu(v); });
  return c.mid + fc_out.forward(c.hidden);
}

Matrix TransformerBlock::backward(const Cache& c, const AttentionMask& mask, const Matrix& dy) {
  const Matrix dhidden = fc_out.backward(c.hidden, dy);
  const Matrix dpre =
      dhidden.array() * c.hidden_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
  const Matrix dln_mlp = fc_in.backward(c.ln_mlp_out, dpre);
  const Matrix dmid = dy + ln_mlp.backward(c.ln_mlp, dln_mlp);
  const Matrix dln_attn = attn.backward(c.attn, mask, dmid);
  return dmid + ln_attn.backward(c.ln_attn, dln_attn);
}

void TransformerBlock::collect(ParamList& out) {
  ln_attn.collect(out);
  attn.collect(out);
  ln_mlp.collect(out);
  fc_in.collect(out);
  fc_out.collect(out);
}

}  // namespace recgen::nn
