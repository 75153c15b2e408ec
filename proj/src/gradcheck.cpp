#include "mixcl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mixcl {

GradCheckResult grad_check(const std::function<Tensor(Tape&)>& make_loss,
                           const std::vector<Tensor>& leaves,
                           int max_coords_per_leaf, Rng* coord_rng,
                           double h_scale) {
  if (leaves.empty())
    throw std::invalid_argument("grad_check: no leaves given");
  for (const Tensor& l : leaves) {
    if (!l.defined() || !l.requires_grad())
      throw std::invalid_argument(
          "grad_check: every leaf must be defined with requires_grad set");
    Tensor(l).zero_grad();
  }

  Tape tape;
  Tensor loss = make_loss(tape);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& l : leaves) {
    Tensor t(l);
    t.ensure_grad();
    analytic.push_back(t.grad());
  }

  auto eval = [&make_loss]() {
    Tape t;
    return make_loss(t).value();
  };

  GradCheckResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf(leaves[li]);
    const std::int64_t n = leaf.numel();
    std::vector<std::int64_t> coords;
    if (max_coords_per_leaf < 0 || max_coords_per_leaf >= n) {
      coords.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i)
        coords[static_cast<std::size_t>(i)] = i;
    } else if (coord_rng) {
      std::vector<int> perm = coord_rng->permutation(static_cast<int>(n));
      coords.assign(perm.begin(), perm.begin() + max_coords_per_leaf);
    } else {
      const std::int64_t stride =
          std::max<std::int64_t>(1, n / max_coords_per_leaf);
      for (std::int64_t i = 0;
           i < n && static_cast<int>(coords.size()) < max_coords_per_leaf;
           i += stride)
        coords.push_back(i);
    }

    double* v = leaf.data();
    for (std::int64_t ci : coords) {
      const auto i = static_cast<std::size_t>(ci);
      const double x0 = v[i];
      const double h = h_scale * std::max(1.0, std::fabs(x0));
      v[i] = x0 + h;
      const double fp = eval();
      v[i] = x0 - h;
      const double fm = eval();
      v[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[li][i];
      const double rel =
          std::fabs(a - numeric) / std::max(1e-8, std::fabs(a) + std::fabs(numeric));
      res.coords_checked++;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_leaf = static_cast<int>(li);
        res.worst_coord = ci;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace mixcl
