#pragma once

// Stateful first-order optimizers. One instance serves a whole experiment
// run: its state persists across task boundaries and is never reset. Head
// parameters created mid-run (growing layouts) join lazily with zeroed
// accumulators; existing state is untouched.

#include "clbench/nn.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace clbench {

enum class OptKind { sgd, adagrad, adam };

inline const char* opt_name(OptKind k) {
  switch (k) {
    case OptKind::sgd: return "sgd";
    case OptKind::adagrad: return "adagrad";
    case OptKind::adam: return "adam";
  }
  return "?";
}

struct OptimizerConfig {
  OptKind kind = OptKind::adam;
  float lr = 0.001f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float adagrad_eps = 1e-10f;
};

// ---------------------------------------------------------------------------
// Single-tensor update rules
// ---------------------------------------------------------------------------

template <typename T>
void sgd_step(TensorT<T>& param, const TensorT<T>& grad, T lr) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("sgd_step: param " + param.shape_str() + " vs grad " +
                                grad.shape_str());
  for (std::int64_t i = 0; i < param.numel(); ++i) param[i] -= lr * grad[i];
}

template <typename T>
void adagrad_step(TensorT<T>& param, const TensorT<T>& grad, TensorT<T>& accum, T lr, T eps) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("adagrad_step: param " + param.shape_str() + " vs grad " +
                                grad.shape_str());
  for (std::int64_t i = 0; i < param.numel(); ++i) {
    T g = grad[i];
    accum[i] += g * g;
    param[i] -= lr * g / (std::sqrt(accum[i]) + eps);
  }
}

// `step` is the post-increment global step count (>= 1), shared by all
// parameters of one optimizer instance.
template <typename T>
void adam_step(TensorT<T>& param, const TensorT<T>& grad, TensorT<T>& m, TensorT<T>& v,
               std::int64_t step, T lr, T beta1, T beta2, T eps) {
  if (!param.same_shape(grad))
    throw std::invalid_argument("adam_step: param " + param.shape_str() + " vs grad " +
                                grad.shape_str());
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(step)));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(step)));
  for (std::int64_t i = 0; i < param.numel(); ++i) {
    T g = grad[i];
    m[i] = beta1 * m[i] + (T(1) - beta1) * g;
    v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
    T mhat = m[i] / bc1;
    T vhat = v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// ---------------------------------------------------------------------------
// Optimizer bound to a network's parameter registry
// ---------------------------------------------------------------------------

template <typename T = float>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_count_; }

  // One update over every registered parameter; increments the shared step
  // counter exactly once.
  void step(NetworkT<T>& net, GradientsT<T>& grads) {
    ++step_count_;
    net.for_each_param([&](const std::string& name, TensorT<T>& p) {
      TensorT<T>* g = grads.by_name(name);
      if (g == nullptr || !p.same_shape(*g))
        throw std::invalid_argument("optimizer: gradient missing or mis-shaped for " + name);
      switch (cfg_.kind) {
        case OptKind::sgd:
          sgd_step(p, *g, static_cast<T>(cfg_.lr));
          break;
        case OptKind::adagrad: {
          Slot& s = slot_for(name, p, 1);
          adagrad_step(p, *g, s.a, static_cast<T>(cfg_.lr), static_cast<T>(cfg_.adagrad_eps));
          break;
        }
        case OptKind::adam: {
          Slot& s = slot_for(name, p, 2);
          adam_step(p, *g, s.a, s.b, step_count_, static_cast<T>(cfg_.lr),
                    static_cast<T>(cfg_.beta1), static_cast<T>(cfg_.beta2),
                    static_cast<T>(cfg_.adam_eps));
          break;
        }
      }
    });
  }

  std::vector<std::string> state_keys() const {
    std::vector<std::string> keys;
    keys.reserve(slots_.size());
    for (const auto& [k, _] : slots_) keys.push_back(k);
    return keys;
  }

  const TensorT<T>* accumulator(const std::string& name) const {
    auto it = slots_.find(name);
    return it == slots_.end() ? nullptr : &it->second.a;
  }

 private:
  struct Slot {
    TensorT<T> a;  // adagrad: squared-gradient sum; adam: first moment
    TensorT<T> b;  // adam: second moment
  };

  // Fetch or create the slot; grown parameters (rows appended) keep their
  // old accumulator values and gain zeros for the new rows.
  Slot& slot_for(const std::string& name, const TensorT<T>& p, int tensors) {
    auto it = slots_.find(name);
    if (it == slots_.end()) {
      Slot s;
      s.a = TensorT<T>::zeros(p.shape);
      if (tensors > 1) s.b = TensorT<T>::zeros(p.shape);
      it = slots_.emplace(name, std::move(s)).first;
      return it->second;
    }
    Slot& s = it->second;
    if (s.a.numel() != p.numel()) {
      if (s.a.numel() > p.numel())
        throw std::invalid_argument("optimizer: parameter " + name + " shrank");
      auto grow = [&](TensorT<T>& t) {
        TensorT<T> bigger = TensorT<T>::zeros(p.shape);
        std::copy(t.data.begin(), t.data.end(), bigger.data.begin());
        t = std::move(bigger);
      };
      grow(s.a);
      if (tensors > 1) grow(s.b);
    }
    return s;
  }

  OptimizerConfig cfg_;
  std::int64_t step_count_ = 0;
  std::unordered_map<std::string, Slot> slots_;
};

}  // namespace clbench
