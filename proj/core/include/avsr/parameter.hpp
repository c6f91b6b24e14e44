#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "avsr/tensor.hpp"

namespace avsr {

/// Named model weight. `trainable` mirrors the tensor's requires_grad flag,
/// so frozen parameters never enter the backward sweep.
class Parameter {
 public:
  Parameter(std::string name, Tensor tensor, bool trainable = true);

  const std::string& name() const { return name_; }
  const Tensor& tensor() const { return tensor_; }
  Tensor& tensor() { return tensor_; }
  bool trainable() const { return trainable_; }
  void set_trainable(bool flag);

 private:
  std::string name_;
  Tensor tensor_;
  bool trainable_;
};

/// Insertion-ordered parameter collection with unique hierarchical names.
class ParameterStore {
 public:
  /// Registers a parameter and returns the (aliasing) tensor handle.
  Tensor add(const std::string& name, Tensor tensor, bool trainable = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;

  /// Zero-fills gradients of trainable parameters and drops gradients of frozen ones.
  void zero_grad();
  void set_trainable(const std::function<bool(const std::string&)>& predicate);

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace avsr
