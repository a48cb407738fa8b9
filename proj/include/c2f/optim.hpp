#pragma once

#include <map>
#include <string>
#include <vector>

#include "c2f/tensor.hpp"

namespace c2f {

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled; skipped for gains/biases/temperature
  bool factored = false;       // factored second moments for rank-2 params
};

// Adam-style adaptive updates with decoupled weight decay. When `factored`
// is set, rank-2 parameters store row/column second-moment factors instead
// of the full table.
class Optimizer {
 public:
  explicit Optimizer(OptimConfig cfg) : cfg_(cfg) {}

  // Applies one update to every (name, tensor) pair using the gradients
  // currently on the tensors, then zeroes the gradients.
  void step(const std::vector<std::pair<std::string, Tensor>>& params,
            double lr);

  // Drops accumulated moments for one parameter (used when the positional
  // table is resampled at a resolution boundary).
  void reset_state(const std::string& name);

  const OptimConfig& config() const { return cfg_; }
  void set_weight_decay(double wd) { cfg_.weight_decay = wd; }

  static bool decay_applies(const std::string& name);

 private:
  struct State {
    long long step = 0;
    std::vector<double> m;
    std::vector<double> v;        // full second moment
    std::vector<double> v_row;    // factored mode, rank-2 params
    std::vector<double> v_col;
  };

  OptimConfig cfg_;
  std::map<std::string, State> states_;
};

}  // namespace c2f
