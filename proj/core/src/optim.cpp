#include "avsr/optim.hpp"

#include <cmath>

#include "avsr/error.hpp"

namespace avsr {

AdamW::AdamW(AdamWConfig config) : config_(config) {
  if (!(config_.lr >= 0.0) || !(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
      !(config_.beta2 >= 0.0 && config_.beta2 < 1.0) || !(config_.eps > 0.0) || !(config_.weight_decay >= 0.0)) {
    throw ConfigError("adamw: hyperparameters out of range");
  }
}

void AdamW::step(ParameterStore& params, double lr) {
  for (const auto& p : params.all()) {
    if (p.trainable() && !p.tensor().has_grad()) throw NumericError("adamw: missing gradient for " + p.name());
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& p : params.all()) {
    if (!p.trainable()) continue;
    auto& mom = moments_[p.name()];
    const std::size_t n = p.tensor().size();
    if (mom.m.size() != n) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    }
    auto w = p.tensor().mutable_values();
    const auto g = p.tensor().grad();
    const double decay = 1.0 - lr * config_.weight_decay;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(g[i])) throw NumericError("adamw: non-finite gradient in " + p.name());
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * g[i];
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      w[i] = w[i] * decay - lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

void AdamW::restore(std::int64_t steps_taken, std::unordered_map<std::string, Moments> moments) {
  if (steps_taken < 0) throw ConfigError("adamw: negative step count");
  for (const auto& [name, mom] : moments) {
    if (mom.m.size() != mom.v.size()) throw ConfigError("adamw: moment sizes differ for " + name);
  }
  t_ = steps_taken;
  moments_ = std::move(moments);
}

}  // namespace avsr
