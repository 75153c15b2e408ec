#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixcl/models.hpp"
#include "mixcl/tensor.hpp"

namespace mixcl {

// Adam with bias correction over a fixed set of named parameters. The state
// aliases the parameter tensors it was built from; adam_step reads their
// accumulated gradients, applies the update, and zeroes the gradients so the
// next iteration starts clean.
struct AdamState {
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Slot> slots;

  explicit AdamState(const NamedTensors& params, double lr = 1e-3);
};

// One Adam update. Every parameter must carry a materialized gradient;
// non-finite gradients raise NumericError naming the parameter and step.
void adam_step(AdamState& state);

// Asserts all gradients finite (no clipping); NumericError names the
// parameter and the given step index.
void check_finite(const NamedTensors& params, std::int64_t step_index);

}  // namespace mixcl
