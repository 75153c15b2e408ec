#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mixcl/common.hpp"

namespace mixcl {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorStorage {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches it
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad, or derived from such a leaf
  const void* tape_tag = nullptr;  // tape that produced this tensor
};

// Dense row-major tensor of 64-bit reals. The handle is a shared pointer to
// its storage: copies alias, which is what the tape's backward closures rely
// on. Leaves created outside a tape have no tape linkage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const { return st_->shape; }
  int ndim() const { return static_cast<int>(st_->shape.size()); }
  int dim(int i) const { return st_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(st_->values.size());
  }

  double* data() { return st_->values.data(); }
  const double* data() const { return st_->values.data(); }
  std::vector<double>& values() { return st_->values; }
  const std::vector<double>& values() const { return st_->values; }

  double value() const;                        // scalar accessor
  double at(std::initializer_list<int> idx) const;

  bool requires_grad() const { return st_->requires_grad; }
  void set_requires_grad(bool rg) {
    st_->requires_grad = rg;
    st_->needs_grad = rg || st_->needs_grad;
  }

  bool has_grad() const { return !st_->grad.empty(); }
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void ensure_grad();  // allocate zero-filled if absent
  void zero_grad();

  std::shared_ptr<TensorStorage>& storage() { return st_; }
  const std::shared_ptr<TensorStorage>& storage() const { return st_; }

 private:
  std::shared_ptr<TensorStorage> st_;
};

// Reverse-mode tape: ops are recorded in execution (hence topological) order;
// backward() replays them exactly once in reverse. A tape is single-use:
// after backward() it must be reset() before recording again.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Tags `output` as produced here and records the backward rule when any
  // input carries gradient requirements.
  void record(std::initializer_list<Tensor> inputs, Tensor& output,
              std::function<void()> backward);

  void backward(const Tensor& loss);
  void reset();

  std::size_t num_ops() const { return nodes_.size(); }
  bool spent() const { return spent_; }

 private:
  std::vector<std::function<void()>> nodes_;
  bool spent_ = false;
};

// ---- elementwise ops (equal shapes, or one operand with numel == 1) ----
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor divide(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, double b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor exp(Tape& tape, const Tensor& a);
Tensor log(Tape& tape, const Tensor& a);
Tensor neg(Tape& tape, const Tensor& a);

// ---- linear algebra / nn ops ----
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);
Tensor relu(Tape& tape, const Tensor& x);
Tensor global_avg_pool(Tape& tape, const Tensor& x);  // [N,C,T] -> [N,C]
Tensor cosine_similarity_matrix(Tape& tape, const Tensor& a, const Tensor& b);

// Same-length zero padding: pad_left defaults to (K-1)/2 and requires odd K;
// pass pad_left explicitly for even K (pad_right is K-1-pad_left).
Tensor conv1d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b,
              int pad_left = -1);

// Running statistics of one batchnorm layer. Normalization uses the biased
// batch variance; the running variance update uses the unbiased estimate,
// matching the common deep-learning convention.
struct BnState {
  std::vector<double> running_mean, running_var;
  std::int64_t num_updates = 0;
  double momentum = 0.1;
  double eps = 1e-5;
  explicit BnState(int channels)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

Tensor batchnorm1d(Tape& tape, const Tensor& x, const Tensor& gamma,
                   const Tensor& beta, BnState& state, Mode mode);

// ---- reductions & structural ops ----
Tensor sum(Tape& tape, const Tensor& x);   // -> scalar
Tensor mean(Tape& tape, const Tensor& x);  // -> scalar
Tensor row_sum(Tape& tape, const Tensor& x);                 // [M,P] -> [M]
Tensor add_rowvec(Tape& tape, const Tensor& x, const Tensor& v);  // +v per row
Tensor sub_colvec(Tape& tape, const Tensor& x, const Tensor& v);  // -v[i] on row i
Tensor gather_pairs(Tape& tape, const Tensor& x,
                    const std::vector<std::pair<int, int>>& indices);
Tensor replace_diagonal(Tape& tape, const Tensor& x, double value);
Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b);
Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape);

}  // namespace mixcl
