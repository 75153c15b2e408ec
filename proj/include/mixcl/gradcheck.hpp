#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mixcl/rng.hpp"
#include "mixcl/tensor.hpp"

namespace mixcl {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t coords_checked = 0;
  int worst_leaf = -1;
  std::int64_t worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central-difference check of reverse-mode gradients. `make_loss` must
// rebuild the graph from the given leaves on the tape it receives and return
// a scalar; it is re-evaluated 2 times per checked coordinate. Step size is
// h_scale * max(1, |x|) per coordinate. Relative error per coordinate is
// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
//
// max_coords_per_leaf < 0 checks every coordinate; otherwise that many per
// leaf, chosen uniformly without replacement when `coord_rng` is given and
// evenly strided when it is null.
GradCheckResult grad_check(const std::function<Tensor(Tape&)>& make_loss,
                           const std::vector<Tensor>& leaves,
                           int max_coords_per_leaf = -1,
                           Rng* coord_rng = nullptr, double h_scale = 1e-5);

}  // namespace mixcl
