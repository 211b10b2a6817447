#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "recgen/nn.hpp"

namespace recgen {

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

// First-order optimizer over a fixed parameter list. Adam moments are kept
// per parameter in declaration order and can be persisted for resumption.
class Optimizer {
 public:
  Optimizer(nn::ParamList params, OptimizerSettings settings);

  void zero_grad();
  // Applies one update from the accumulated gradients, then rounds the
  // parameters to checkpoint precision.
  void step();

  double last_grad_norm() const { return last_grad_norm_; }
  std::int64_t steps() const { return steps_; }
  const OptimizerSettings& settings() const { return settings_; }

  void save_state(std::ostream& out) const;
  void load_state(std::istream& in);

 private:
  nn::ParamList params_;
  OptimizerSettings settings_;
  std::vector<nn::Matrix> first_moment_;
  std::vector<nn::Matrix> second_moment_;
  std::int64_t steps_ = 0;
  double last_grad_norm_ = 0.0;
};

}  // namespace recgen
