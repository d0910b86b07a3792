#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "rankseg/tensor.hpp"

namespace rankseg {

enum class ParamGroup { kBackbone, kMlHead, kSegHead };

inline const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kBackbone: return "backbone";
    case ParamGroup::kMlHead: return "ml_head";
    case ParamGroup::kSegHead: return "seg_head";
  }
  return "?";
}

template <typename T>
struct ParameterT {
  std::string name;
  TensorT<T> tensor;
  ParamGroup group;
};

template <typename T>
class ParameterRegistryT {
 public:
  TensorT<T> add(const std::string& name, TensorT<T> tensor, ParamGroup group) {
    if (index_.count(name) != 0) {
      throw std::invalid_argument("parameter name already registered: " + name);
    }
    tensor.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back(ParameterT<T>{name, tensor, group});
    return tensor;
  }

  const std::vector<ParameterT<T>>& all() const { return params_; }
  std::vector<ParameterT<T>>& all() { return params_; }

  ParameterT<T>& find(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }
  int64_t group_count(ParamGroup g) const {
    int64_t n = 0;
    for (const auto& p : params_)
      if (p.group == g) n += p.tensor.numel();
    return n;
  }

  void clear_grads() {
    for (auto& p : params_) p.tensor.clear_grad();
  }

 private:
  std::vector<ParameterT<T>> params_;
  std::unordered_map<std::string, size_t> index_;
};

// Standard Adam with a per-group learning-rate multiplier. Grads are cleared
// after the step.
template <typename T>
class AdamT {
 public:
  AdamT(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParameterRegistryT<T>& registry, double base_lr,
            const std::map<ParamGroup, double>& group_lr_multipliers = {}) {
    if (base_lr <= 0) throw std::invalid_argument("adam_step: base_lr must be positive");
    for (const auto& [g, m] : group_lr_multipliers) {
      (void)g;
      if (m <= 0) throw std::invalid_argument("adam_step: lr multiplier must be positive");
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& p : registry.all()) {
      if (!p.tensor.has_grad()) {
        throw std::runtime_error("adam_step: missing grad for parameter " + p.name);
      }
      double lr = base_lr;
      auto it = group_lr_multipliers.find(p.group);
      if (it != group_lr_multipliers.end()) lr *= it->second;

      auto& state = state_[p.name];
      if (state.m.empty()) {
        state.m.assign(p.tensor.data().size(), 0.0);
        state.v.assign(p.tensor.data().size(), 0.0);
      }
      auto& data = p.tensor.data();
      const auto& grad = p.tensor.grad();
      for (size_t i = 0; i < data.size(); ++i) {
        double g = static_cast<double>(grad[i]);
        state.m[i] = beta1_ * state.m[i] + (1.0 - beta1_) * g;
        state.v[i] = beta2_ * state.v[i] + (1.0 - beta2_) * g * g;
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        data[i] = static_cast<T>(static_cast<double>(data[i]) - lr * mhat / (std::sqrt(vhat) + eps_));
      }
      p.tensor.clear_grad();
    }
  }

  int64_t step_count() const { return t_; }

 private:
  struct State {
    std::vector<double> m;
    std::vector<double> v;
  };
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::unordered_map<std::string, State> state_;
};

}  // namespace rankseg
