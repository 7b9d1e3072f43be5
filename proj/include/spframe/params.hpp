#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "autodiff.hpp"
#include "error.hpp"
#include "tensor.hpp"

namespace spframe {

// Named trainable tensors plus the (non-trainable) target standardization.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor t) {
    if (!params_.emplace(name, std::move(t)).second) fail<ContractError>("duplicate parameter '" + name + "'");
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail<ContractError>("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail<ContractError>("unknown parameter '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::map<std::string, Tensor>& all() { return params_; }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params_) n += v.size();
    return n;
  }

  double target_mean = 0.0;
  double target_scale = 1.0;

 private:
  std::map<std::string, Tensor> params_;
};

// Registers parameters on a tape the first time they are used.
class ParameterBinder {
 public:
  ParameterBinder(Tape& tape, const ParameterStore& store) : tape_(tape), store_(store) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape_.parameter(name, store_.at(name));
    bound_.emplace(name, v);
    return v;
  }

  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  const ParameterStore& store_;
  std::map<std::string, Var> bound_;
};

// Seeded initializers. Weights are N(0, 1/fan_in).
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor weight(std::size_t rows, std::size_t cols, std::size_t fan_in = 0) {
    if (fan_in == 0) fan_in = rows;
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    Tensor t({rows, cols});
    for (double& x : t.data()) x = normal(rng_);
    return t;
  }

  Tensor normal(std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    Tensor t({rows, cols});
    for (double& x : t.data()) x = normal(rng_);
    return t;
  }

  static Tensor zeros(std::size_t n) { return Tensor({n}); }
  static Tensor ones(std::size_t n) { return Tensor({n}, 1.0); }

 private:
  std::mt19937_64 rng_;
};

}  // namespace spframe
