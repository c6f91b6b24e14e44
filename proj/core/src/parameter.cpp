#include "avsr/parameter.hpp"

#include "avsr/error.hpp"

namespace avsr {

Parameter::Parameter(std::string name, Tensor tensor, bool trainable)
    : name_(std::move(name)), tensor_(std::move(tensor)), trainable_(trainable) {
  tensor_.set_requires_grad(trainable_);
}

void Parameter::set_trainable(bool flag) {
  trainable_ = flag;
  tensor_.set_requires_grad(flag);
  if (!flag) tensor_.clear_grad();
}

Tensor ParameterStore::add(const std::string& name, Tensor tensor, bool trainable) {
  if (name.empty()) throw ConfigError("parameter name must not be empty");
  if (!index_.emplace(name, params_.size()).second) throw ConfigError("duplicate parameter name: " + name);
  params_.emplace_back(name, std::move(tensor), trainable);
  return params_.back().tensor();
}

Parameter& ParameterStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second];
}

std::size_t ParameterStore::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor().size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (p.trainable()) {
      p.tensor().zero_grad();
    } else {
      p.tensor().clear_grad();
    }
  }
}

void ParameterStore::set_trainable(const std::function<bool(const std::string&)>& predicate) {
  for (auto& p : params_) p.set_trainable(predicate(p.name()));
}

}  // namespace avsr
