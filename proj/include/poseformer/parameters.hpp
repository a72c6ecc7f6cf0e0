#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "poseformer/autodiff.hpp"

namespace poseformer {

template <typename T>
struct Parameter {
  std::string name;  // dotted path, e.g. "temporal.layer2.msa.w_q"
  Var<T> var;
  bool trainable = true;
};

/// Ordered registry of named model parameters. Names are unique; order is the
/// registration order and is what checkpoints and optimizer state follow.
template <typename T>
class ParameterStore {
 public:
  Var<T> add(std::string name, Tensor<T> init, bool trainable = true) {
    if (index_.contains(name)) throw UsageError("duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back(Parameter<T>{std::move(name), Var<T>(std::move(init), trainable), trainable});
    return params_.back().var;
  }

  const std::vector<Parameter<T>>& all() const { return params_; }
  std::vector<Parameter<T>>& all() { return params_; }
  std::size_t size() const { return params_.size(); }

  const Parameter<T>* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  Parameter<T>* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace poseformer
