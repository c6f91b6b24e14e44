#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "avsr/parameter.hpp"

namespace avsr {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and bias-corrected moments.
///
/// Only trainable parameters are touched; a frozen parameter is never decayed.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {});

  /// One update with the configured learning rate.
  void step(ParameterStore& params) { step(params, config_.lr); }
  /// One update with an explicit learning rate (for warmup schedules).
  void step(ParameterStore& params, double lr);

  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  std::int64_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return config_; }
  const std::unordered_map<std::string, Moments>& moments() const { return moments_; }
  /// Restores a saved optimizer state (used when resuming training).
  void restore(std::int64_t steps_taken, std::unordered_map<std::string, Moments> moments);

 private:
  AdamWConfig config_;
  std::int64_t t_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

}  // namespace avsr
