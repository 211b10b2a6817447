#include "recgen/optim.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "recgen/binary_io.hpp"
#include "recgen/error.hpp"

namespace recgen {

namespace {
constexpr std::string_view kStateMagic = "RGOPTST1";
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

Optimizer::Optimizer(nn::ParamList params, OptimizerSettings settings)
    : params_(std::move(params)), settings_(settings) {
  if (!(settings_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (settings_.kind == OptimizerKind::kAdam) {
    for (const auto* p : params_) {
      first_moment_.push_back(nn::Matrix::Zero(p->value.rows(), p->value.cols()));
      second_moment_.push_back(nn::Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
}

void Optimizer::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

void Optimizer::step() {
  double sq = 0.0;
  for (const auto* p : params_) sq += p->grad.squaredNorm();
  last_grad_norm_ = std::sqrt(sq);
  if (!std::isfinite(last_grad_norm_)) throw DivergenceError("non-finite gradient norm");
  double scale = 1.0;
  if (settings_.clip_norm > 0.0 && last_grad_norm_ > settings_.clip_norm) {
    scale = settings_.clip_norm / last_grad_norm_;
  }
  ++steps_;
  const double lr = settings_.learning_rate;
  if (settings_.kind == OptimizerKind::kSgd) {
    for (auto* p : params_) p->value -= (lr * scale) * p->grad;
  } else {
    const double b1 = settings_.beta1;
    const double b2 = settings_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& m = first_moment_[i];
      auto& v = second_moment_[i];
      const nn::Matrix g = params_[i]->grad * scale;
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
      params_[i]->value.array() -=
          lr * (m.array() / c1) / ((v.array() / c2).sqrt() + settings_.epsilon);
    }
  }
  nn::round_to_storage(params_);
}

void Optimizer::save_state(std::ostream& out) const {
  binary::write_magic(out, kStateMagic);
  binary::write_u32(out, settings_.kind == OptimizerKind::kAdam ? 1u : 0u);
  binary::write_u32(out, static_cast<std::uint32_t>(steps_));
  binary::write_u32(out, static_cast<std::uint32_t>(first_moment_.size()));
  for (std::size_t i = 0; i < first_moment_.size(); ++i) {
    binary::write_tensor(out, first_moment_[i]);
    binary::write_tensor(out, second_moment_[i]);
  }
}

void Optimizer::load_state(std::istream& in) {
  binary::expect_magic(in, kStateMagic, "optimizer state");
  const bool adam = binary::read_u32(in, "optimizer state") == 1u;
  if (adam != (settings_.kind == OptimizerKind::kAdam)) {
    throw ConfigError("optimizer state was written by a different optimizer kind");
  }
  steps_ = binary::read_u32(in, "optimizer state");
  const auto count = binary::read_u32(in, "optimizer state");
  if (count != first_moment_.size()) throw DataError("optimizer state has wrong tensor count");
  for (std::size_t i = 0; i < first_moment_.size(); ++i) {
    binary::read_tensor(in, first_moment_[i], params_[i]->name + ".m");
    binary::read_tensor(in, second_moment_[i], params_[i]->name + ".v");
  }
}

}  // namespace recgen
