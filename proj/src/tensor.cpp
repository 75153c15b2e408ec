#include "mixcl/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "mixcl/kernels.hpp"

namespace mixcl {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d < 0)
      throw std::invalid_argument("negative dimension in shape " +
                                  shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Tensor --

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto st = std::make_shared<TensorStorage>();
  const std::int64_t n = shape_numel(shape);
  st->shape = std::move(shape);
  st->values.assign(static_cast<std::size_t>(n), 0.0);
  st->requires_grad = requires_grad;
  st->needs_grad = requires_grad;
  Tensor t;
  t.storage() = std::move(st);
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = value;
  return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values,
                           bool requires_grad) {
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size()))
    throw std::invalid_argument(
        "from_values: " + std::to_string(values.size()) +
        " values for shape " + shape_str(shape));
  Tensor t = zeros(std::move(shape), requires_grad);
  t.values() = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

double Tensor::value() const {
  if (numel() != 1)
    throw std::invalid_argument("value(): tensor of shape " +
                                shape_str(shape()) + " is not a scalar");
  return st_->values[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != ndim())
    throw std::invalid_argument("at(): " + std::to_string(idx.size()) +
                                " indices for shape " + shape_str(shape()));
  std::int64_t off = 0;
  int axis = 0;
  for (int i : idx) {
    const int d = st_->shape[static_cast<std::size_t>(axis)];
    if (i < 0 || i >= d)
      throw std::out_of_range("at(): index " + std::to_string(i) +
                              " out of range for axis " +
                              std::to_string(axis) + " of shape " +
                              shape_str(shape()));
    off = off * d + i;
    ++axis;
  }
  return st_->values[static_cast<std::size_t>(off)];
}

std::vector<double>& Tensor::grad() {
  if (st_->grad.empty())
    throw std::logic_error("grad(): gradient not materialized");
  return st_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (st_->grad.empty())
    throw std::logic_error("grad(): gradient not materialized");
  return st_->grad;
}

void Tensor::ensure_grad() {
  if (st_->grad.empty()) st_->grad.assign(st_->values.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), 0.0);
}

// ------------------------------------------------------------------ Tape --

void Tape::record(std::initializer_list<Tensor> inputs, Tensor& output,
                  std::function<void()> backward) {
  if (spent_)
    throw std::logic_error(
        "tape already consumed by backward(); reset() before recording");
  bool needs = false;
  for (const Tensor& in : inputs) needs = needs || in.storage()->needs_grad;
  TensorStorage& os = *output.storage();
  os.needs_grad = os.needs_grad || needs;
  os.tape_tag = this;
  if (needs) nodes_.push_back(std::move(backward));
}

void Tape::backward(const Tensor& loss) {
  if (spent_)
    throw std::logic_error("backward() called twice without reset()");
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar");
  if (loss.storage()->tape_tag != this)
    throw std::invalid_argument("backward: loss was not produced on this tape");
  spent_ = true;
  loss.storage()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::reset() {
  nodes_.clear();
  spent_ = false;
}

// ------------------------------------------------------------- op helpers --

namespace {

struct BinInfo {
  bool a_scalar = false, b_scalar = false;
};

BinInfo bin_info(const char* op, const Tensor& a, const Tensor& b) {
  BinInfo info;
  if (a.shape() == b.shape()) return info;
  if (b.numel() == 1) {
    info.b_scalar = true;
    return info;
  }
  if (a.numel() == 1) {
    info.a_scalar = true;
    return info;
  }
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " +
                              shape_str(a.shape()) + " and " +
                              shape_str(b.shape()));
}

void acc_all(Tensor& t, const std::vector<double>& g) {
  t.ensure_grad();
  kernels::axpy(1.0, g.data(), t.grad().data(), g.size());
}

void acc_sum(Tensor& t, const std::vector<double>& g, double sign = 1.0) {
  t.ensure_grad();
  double s = 0.0;
  for (double v : g) s += v;
  t.grad()[0] += sign * s;
}

void check_2d(const char* op, const Tensor& t, const char* which) {
  if (t.ndim() != 2)
    throw std::invalid_argument(std::string(op) + ": " + which +
                                " must be 2-d, got shape " +
                                shape_str(t.shape()));
}

}  // namespace

// ------------------------------------------------------- elementwise ops --

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  const BinInfo info = bin_info("add", a, b);
  Tensor out = Tensor::zeros(info.a_scalar ? b.shape() : a.shape());
  const double *av = a.data(), *bv = b.data();
  double* ov = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i)
    ov[i] = (info.a_scalar ? av[0] : av[i]) + (info.b_scalar ? bv[0] : bv[i]);
  tape.record({a, b}, out, [a = a, b = b, out, info]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (a.storage()->needs_grad)
      info.a_scalar ? acc_sum(a, g) : acc_all(a, g);
    if (b.storage()->needs_grad)
      info.b_scalar ? acc_sum(b, g) : acc_all(b, g);
  });
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  const BinInfo info = bin_info("sub", a, b);
  Tensor out = Tensor::zeros(info.a_scalar ? b.shape() : a.shape());
  const double *av = a.data(), *bv = b.data();
  double* ov = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i)
    ov[i] = (info.a_scalar ? av[0] : av[i]) - (info.b_scalar ? bv[0] : bv[i]);
  tape.record({a, b}, out, [a = a, b = b, out, info]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (a.storage()->needs_grad)
      info.a_scalar ? acc_sum(a, g) : acc_all(a, g);
    if (b.storage()->needs_grad) {
      if (info.b_scalar) {
        acc_sum(b, g, -1.0);
      } else {
        b.ensure_grad();
        kernels::axpy(-1.0, g.data(), b.grad().data(), g.size());
      }
    }
  });
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  const BinInfo info = bin_info("mul", a, b);
  Tensor out = Tensor::zeros(info.a_scalar ? b.shape() : a.shape());
  const double *av = a.data(), *bv = b.data();
  double* ov = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i)
    ov[i] = (info.a_scalar ? av[0] : av[i]) * (info.b_scalar ? bv[0] : bv[i]);
  tape.record({a, b}, out, [a = a, b = b, out, info]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const double *av = a.data(), *bv = b.data();
    if (a.storage()->needs_grad) {
      a.ensure_grad();
      auto& da = a.grad();
      if (info.a_scalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * bv[i];
        da[0] += s;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i)
          da[i] += g[i] * (info.b_scalar ? bv[0] : bv[i]);
      }
    }
    if (b.storage()->needs_grad) {
      b.ensure_grad();
      auto& db = b.grad();
      if (info.b_scalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * av[i];
        db[0] += s;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i)
          db[i] += g[i] * (info.a_scalar ? av[0] : av[i]);
      }
    }
  });
  return out;
}

Tensor divide(Tape& tape, const Tensor& a, const Tensor& b) {
  const BinInfo info = bin_info("divide", a, b);
  const double* bv = b.data();
  for (std::int64_t i = 0; i < b.numel(); ++i)
    if (bv[i] == 0.0)
      throw NumericError("divide: zero divisor at index " + std::to_string(i));
  Tensor out = Tensor::zeros(info.a_scalar ? b.shape() : a.shape());
  const double* av = a.data();
  double* ov = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i)
    ov[i] = (info.a_scalar ? av[0] : av[i]) / (info.b_scalar ? bv[0] : bv[i]);
  tape.record({a, b}, out, [a = a, b = b, out, info]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const double *av = a.data(), *bv = b.data();
    if (a.storage()->needs_grad) {
      a.ensure_grad();
      auto& da = a.grad();
      if (info.a_scalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] / bv[i];
        da[0] += s;
      } else {
        for (std::size_t i = 0; i < g.size(); ++i)
          da[i] += g[i] / (info.b_scalar ? bv[0] : bv[i]);
      }
    }
    if (b.storage()->needs_grad) {
      b.ensure_grad();
      auto& db = b.grad();
      if (info.b_scalar) {
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * av[i];
        db[0] -= s / (bv[0] * bv[0]);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double ai = info.a_scalar ? av[0] : av[i];
          db[i] -= g[i] * ai / (bv[i] * bv[i]);
        }
      }
    }
  });
  return out;
}

Tensor add(Tape& tape, const Tensor& a, double b) {
  Tensor out = Tensor::zeros(a.shape());
  const double* av = a.data();
  double* ov = out.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + b;
  tape.record({a}, out, [a = a, out]() mutable {
    if (!out.has_grad()) return;
    if (a.storage()->needs_grad) acc_all(a, out.grad());
  });
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const double* av = a.data();
  double* ov = out.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = c * av[i];
  tape.record({a}, out, [a = a, out, c]() mutable {
    if (!out.has_grad()) return;
    if (a.storage()->needs_grad) {
      a.ensure_grad();
      kernels::axpy(c, out.grad().data(), a.grad().data(), out.grad().size());
    }
  });
  return out;
}

Tensor exp(Tape& tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* av = a.data();
  double* ov = out.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = std::exp(av[i]);
  tape.record({a}, out, [a = a, out]() mutable {
    if (!out.has_grad()) return;
    if (!a.storage()->needs_grad) return;
    a.ensure_grad();
    const auto& g = out.grad();
    const double* ov = out.data();
    auto& da = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * ov[i];
  });
  return out;
}

Tensor log(Tape& tape, const Tensor& a) {
  const double* av = a.data();
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (!(av[i] > 0.0))
      throw NumericError("log: non-positive input " + std::to_string(av[i]) +
                         " at index " + std::to_string(i));
  Tensor out = Tensor::zeros(a.shape());
  double* ov = out.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = std::log(av[i]);
  tape.record({a}, out, [a = a, out]() mutable {
    if (!out.has_grad()) return;
    if (!a.storage()->needs_grad) return;
    a.ensure_grad();
    const auto& g = out.grad();
    const double* av = a.data();
    auto& da = a.grad();
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / av[i];
  });
  return out;
}

Tensor neg(Tape& tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* av = a.data();
  double* ov = out.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = -av[i];
  tape.record({a}, out, [a = a, out]() mutable {
    if (!out.has_grad()) return;
    if (a.storage()->needs_grad) {
      a.ensure_grad();
      kernels::axpy(-1.0, out.grad().data(), a.grad().data(),
                    out.grad().size());
    }
  });
  return out;
}

// --------------------------------------------------- linear algebra / nn --

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_2d("matmul", a, "left operand");
  check_2d("matmul", b, "right operand");
  if (a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  Tensor out = Tensor::zeros({M, N});
  kernels::matmul(a.data(), b.data(), out.data(), M, K, N);
  tape.record({a, b}, out, [a = a, b = b, out, M, K, N]() mutable {
    if (!out.has_grad()) return;
    const double* g = out.grad().data();
    if (a.storage()->needs_grad) {
      a.ensure_grad();
      kernels::matmul_abt_acc(g, b.data(), a.grad().data(), M, N, K);
    }
    if (b.storage()->needs_grad) {
      b.ensure_grad();
      kernels::matmul_atb_acc(a.data(), g, b.grad().data(), M, K, N);
    }
  });
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(tape, matmul(tape, x, w), b);
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* xv = x.data();
  double* ov = out.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  tape.record({x}, out, [x = x, out]() mutable {
    if (!out.has_grad()) return;
    if (!x.storage()->needs_grad) return;
    x.ensure_grad();
    const auto& g = out.grad();
    const double* xv = x.data();
    auto& dx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) dx[i] += g[i];
  });
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  if (x.ndim() != 3)
    throw std::invalid_argument("global_avg_pool: expected [N,C,T], got " +
                                shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), T = x.dim(2);
  if (T < 1)
    throw std::invalid_argument("global_avg_pool: empty time axis");
  Tensor out = Tensor::zeros({N, C});
  const double* xv = x.data();
  double* ov = out.data();
  for (int r = 0; r < N * C; ++r) {
    double s = 0.0;
    const double* row = xv + static_cast<std::size_t>(r) * T;
    for (int t = 0; t < T; ++t) s += row[t];
    ov[r] = s / T;
  }
  tape.record({x}, out, [x = x, out, N, C, T]() mutable {
    if (!out.has_grad()) return;
    if (!x.storage()->needs_grad) return;
    x.ensure_grad();
    const auto& g = out.grad();
    auto& dx = x.grad();
    for (int r = 0; r < N * C; ++r) {
      const double gv = g[static_cast<std::size_t>(r)] / T;
      double* row = dx.data() + static_cast<std::size_t>(r) * T;
      for (int t = 0; t < T; ++t) row[t] += gv;
    }
  });
  return out;
}

Tensor cosine_similarity_matrix(Tape& tape, const Tensor& a, const Tensor& b) {
  check_2d("cosine_similarity_matrix", a, "first argument");
  check_2d("cosine_similarity_matrix", b, "second argument");
  if (a.dim(1) != b.dim(1))
    throw std::invalid_argument(
        "cosine_similarity_matrix: embedding widths disagree, " +
        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int M = a.dim(0), P = b.dim(0), d = a.dim(1);
  constexpr double kMinNorm = 1e-12;

  auto inv_norms = [d, kMinNorm](const Tensor& t, const char* which) {
    std::vector<double> r(static_cast<std::size_t>(t.dim(0)));
    const double* v = t.data();
    for (int i = 0; i < t.dim(0); ++i) {
      double s = 0.0;
      const double* row = v + static_cast<std::size_t>(i) * d;
      for (int k = 0; k < d; ++k) s += row[k] * row[k];
      const double norm = std::sqrt(s);
      if (norm < kMinNorm)
        throw NumericError(std::string("cosine_similarity_matrix: row ") +
                           std::to_string(i) + " of " + which +
                           " has near-zero norm " + std::to_string(norm));
      r[static_cast<std::size_t>(i)] = 1.0 / norm;
    }
    return r;
  };
  std::vector<double> ra = inv_norms(a, "first argument");
  std::vector<double> rb = inv_norms(b, "second argument");

  Tensor out = Tensor::zeros({M, P});
  kernels::matmul_abt_acc(a.data(), b.data(), out.data(), M, d, P);
  double* ov = out.data();
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < P; ++j)
      ov[static_cast<std::size_t>(i) * P + j] *=
          ra[static_cast<std::size_t>(i)] * rb[static_cast<std::size_t>(j)];

  tape.record({a, b}, out, [a = a, b = b, out, ra, rb, M, P, d]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    const double* sv = out.data();
    const double *av = a.data(), *bv = b.data();
    if (a.storage()->needs_grad) {
      a.ensure_grad();
      auto& da = a.grad();
      for (int i = 0; i < M; ++i) {
        const double rai = ra[static_cast<std::size_t>(i)];
        const double* arow = av + static_cast<std::size_t>(i) * d;
        double* darow = da.data() + static_cast<std::size_t>(i) * d;
        double coef = 0.0;  // sum_j g_ij S_ij
        for (int j = 0; j < P; ++j) {
          const std::size_t ij = static_cast<std::size_t>(i) * P + j;
          const double w = g[ij] * rb[static_cast<std::size_t>(j)] * rai;
          const double* brow = bv + static_cast<std::size_t>(j) * d;
          for (int k = 0; k < d; ++k) darow[k] += w * brow[k];
          coef += g[ij] * sv[ij];
        }
        coef *= rai * rai;
        for (int k = 0; k < d; ++k) darow[k] -= coef * arow[k];
      }
    }
    if (b.storage()->needs_grad) {
      b.ensure_grad();
      auto& db = b.grad();
      for (int j = 0; j < P; ++j) {
        const double rbj = rb[static_cast<std::size_t>(j)];
        const double* brow = bv + static_cast<std::size_t>(j) * d;
        double* dbrow = db.data() + static_cast<std::size_t>(j) * d;
        double coef = 0.0;  // sum_i g_ij S_ij
        for (int i = 0; i < M; ++i) {
          const std::size_t ij = static_cast<std::size_t>(i) * P + j;
          const double w = g[ij] * ra[static_cast<std::size_t>(i)] * rbj;
          const double* arow = av + static_cast<std::size_t>(i) * d;
          for (int k = 0; k < d; ++k) dbrow[k] += w * arow[k];
          coef += g[ij] * sv[ij];
        }
        coef *= rbj * rbj;
        for (int k = 0; k < d; ++k) dbrow[k] -= coef * brow[k];
      }
    }
  });
  return out;
}

Tensor conv1d(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b,
              int pad_left) {
  if (x.ndim() != 3)
    throw std::invalid_argument("conv1d: input must be [N,Cin,T], got " +
                                shape_str(x.shape()));
  if (w.ndim() != 3)
    throw std::invalid_argument("conv1d: kernel must be [Cout,Cin,K], got " +
                                shape_str(w.shape()));
  if (b.ndim() != 1 || b.dim(0) != w.dim(0))
    throw std::invalid_argument("conv1d: bias shape " + shape_str(b.shape()) +
                                " does not match Cout=" +
                                std::to_string(w.dim(0)));
  if (w.dim(1) != x.dim(1))
    throw std::invalid_argument(
        "conv1d: input has " + std::to_string(x.dim(1)) +
        " channels but kernel expects " + std::to_string(w.dim(1)));
  const int N = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  const int Cout = w.dim(0), K = w.dim(2);
  if (K < 1 || T < 1)
    throw std::invalid_argument("conv1d: K and T must be positive, got K=" +
                                std::to_string(K) + " T=" + std::to_string(T));
  if (pad_left < 0) {
    if (K % 2 == 0)
      throw std::invalid_argument(
          "conv1d: even kernel size " + std::to_string(K) +
          " requires an explicit pad_left");
    pad_left = (K - 1) / 2;
  }
  if (pad_left > K - 1)
    throw std::invalid_argument("conv1d: pad_left " + std::to_string(pad_left) +
                                " exceeds K-1=" + std::to_string(K - 1));
  Tensor out = Tensor::zeros({N, Cout, T});
  kernels::conv1d_forward(x.data(), w.data(), b.data(), out.data(), N, Cin,
                          Cout, T, K, pad_left);
  tape.record({x, w, b}, out,
              [x = x, w = w, b = b, out, N, Cin, Cout, T, K, pad_left]() mutable {
                if (!out.has_grad()) return;
                const double* g = out.grad().data();
                if (x.storage()->needs_grad) {
                  x.ensure_grad();
                  kernels::conv1d_backward_input(w.data(), g, x.grad().data(),
                                                 N, Cin, Cout, T, K, pad_left);
                }
                if (w.storage()->needs_grad) {
                  w.ensure_grad();
                  kernels::conv1d_backward_kernel(x.data(), g, w.grad().data(),
                                                  N, Cin, Cout, T, K, pad_left);
                }
                if (b.storage()->needs_grad) {
                  b.ensure_grad();
                  kernels::conv1d_backward_bias(g, b.grad().data(), N, Cout, T);
                }
              });
  return out;
}

Tensor batchnorm1d(Tape& tape, const Tensor& x, const Tensor& gamma,
                   const Tensor& beta, BnState& state, Mode mode) {
  if (x.ndim() != 3)
    throw std::invalid_argument("batchnorm1d: input must be [N,C,T], got " +
                                shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), T = x.dim(2);
  if (gamma.ndim() != 1 || gamma.dim(0) != C || beta.ndim() != 1 ||
      beta.dim(0) != C)
    throw std::invalid_argument(
        "batchnorm1d: gamma/beta must have shape [" + std::to_string(C) +
        "], got " + shape_str(gamma.shape()) + " and " +
        shape_str(beta.shape()));
  if (static_cast<int>(state.running_mean.size()) != C)
    throw std::invalid_argument(
        "batchnorm1d: state tracks " +
        std::to_string(state.running_mean.size()) + " channels, input has " +
        std::to_string(C));

  Tensor out = Tensor::zeros({N, C, T});
  if (mode == Mode::Train) {
    const std::int64_t m = static_cast<std::int64_t>(N) * T;
    if (m < 2)
      throw std::invalid_argument(
          "batchnorm1d: train mode needs at least 2 values per channel, got " +
          std::to_string(m));
    std::vector<double> mean(C), var(C), inv_std(C);
    kernels::channel_mean_var(x.data(), mean.data(), var.data(), N, C, T);
    for (int c = 0; c < C; ++c)
      inv_std[static_cast<std::size_t>(c)] =
          1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + state.eps);
    kernels::bn_apply(x.data(), mean.data(), inv_std.data(), gamma.data(),
                      beta.data(), out.data(), N, C, T);
    const double mom = state.momentum;
    const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
    for (int c = 0; c < C; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      state.running_mean[ci] = (1.0 - mom) * state.running_mean[ci] +
                               mom * mean[ci];
      state.running_var[ci] = (1.0 - mom) * state.running_var[ci] +
                              mom * var[ci] * unbias;
    }
    state.num_updates++;
    tape.record({x, gamma, beta}, out,
                [x = x, gamma = gamma, beta = beta, out, mean, inv_std, N, C, T]() mutable {
                  if (!out.has_grad()) return;
                  const double* g = out.grad().data();
                  const std::size_t nel = out.grad().size();
                  std::vector<double> sx, sg, sb;
                  double *din, *dgamma, *dbeta;
                  if (x.storage()->needs_grad) {
                    x.ensure_grad();
                    din = x.grad().data();
                  } else {
                    sx.assign(nel, 0.0);
                    din = sx.data();
                  }
                  if (gamma.storage()->needs_grad) {
                    gamma.ensure_grad();
                    dgamma = gamma.grad().data();
                  } else {
                    sg.assign(static_cast<std::size_t>(C), 0.0);
                    dgamma = sg.data();
                  }
                  if (beta.storage()->needs_grad) {
                    beta.ensure_grad();
                    dbeta = beta.grad().data();
                  } else {
                    sb.assign(static_cast<std::size_t>(C), 0.0);
                    dbeta = sb.data();
                  }
                  kernels::bn_backward(x.data(), g, mean.data(),
                                       inv_std.data(), gamma.data(), din,
                                       dgamma, dbeta, N, C, T);
                });
    return out;
  }

  // Eval mode: normalize with the running statistics, which must exist.
  if (state.num_updates == 0)
    throw std::logic_error(
        "batchnorm1d: eval mode before any train update or loaded statistics");
  std::vector<double> mean = state.running_mean, inv_std(C);
  for (int c = 0; c < C; ++c)
    inv_std[static_cast<std::size_t>(c)] =
        1.0 / std::sqrt(state.running_var[static_cast<std::size_t>(c)] +
                        state.eps);
  kernels::bn_apply(x.data(), mean.data(), inv_std.data(), gamma.data(),
                    beta.data(), out.data(), N, C, T);
  tape.record({x, gamma, beta}, out,
              [x = x, gamma = gamma, beta = beta, out, mean, inv_std, N, C, T]() mutable {
                if (!out.has_grad()) return;
                const auto& g = out.grad();
                const double* xv = x.data();
                const double* gv = gamma.data();
                const bool nx = x.storage()->needs_grad;
                const bool ng = gamma.storage()->needs_grad;
                const bool nb = beta.storage()->needs_grad;
                if (nx) x.ensure_grad();
                if (ng) gamma.ensure_grad();
                if (nb) beta.ensure_grad();
                for (int c = 0; c < C; ++c) {
                  const auto ci = static_cast<std::size_t>(c);
                  const double is = inv_std[ci], mu = mean[ci];
                  double sum_g = 0.0, sum_gx = 0.0;
                  for (int n = 0; n < N; ++n) {
                    const std::size_t base =
                        (static_cast<std::size_t>(n) * C + ci) * T;
                    for (int t = 0; t < T; ++t) {
                      const double gi = g[base + t];
                      sum_g += gi;
                      sum_gx += gi * (xv[base + t] - mu) * is;
                      if (nx) x.grad()[base + t] += gi * gv[ci] * is;
                    }
                  }
                  if (ng) gamma.grad()[ci] += sum_gx;
                  if (nb) beta.grad()[ci] += sum_g;
                }
              });
  return out;
}

// --------------------------------------------- reductions & structural ops --

Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  const double* xv = x.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) s += xv[i];
  Tensor out = Tensor::scalar(s);
  tape.record({x}, out, [x = x, out]() mutable {
    if (!out.has_grad()) return;
    if (!x.storage()->needs_grad) return;
    x.ensure_grad();
    const double g = out.grad()[0];
    for (double& v : x.grad()) v += g;
  });
  return out;
}

Tensor mean(Tape& tape, const Tensor& x) {
  const std::int64_t n = x.numel();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  double s = 0.0;
  const double* xv = x.data();
  for (std::int64_t i = 0; i < n; ++i) s += xv[i];
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  tape.record({x}, out, [x = x, out, n]() mutable {
    if (!out.has_grad()) return;
    if (!x.storage()->needs_grad) return;
    x.ensure_grad();
    const double g = out.grad()[0] / static_cast<double>(n);
    for (double& v : x.grad()) v += g;
  });
  return out;
}

Tensor row_sum(Tape& tape, const Tensor& x) {
  check_2d("row_sum", x, "input");
  const int M = x.dim(0), P = x.dim(1);
  Tensor out = Tensor::zeros({M});
  const double* xv = x.data();
  double* ov = out.data();
  for (int i = 0; i < M; ++i) {
    double s = 0.0;
    const double* row = xv + static_cast<std::size_t>(i) * P;
    for (int j = 0; j < P; ++j) s += row[j];
    ov[i] = s;
  }
  tape.record({x}, out, [x = x, out, M, P]() mutable {
    if (!out.has_grad()) return;
    if (!x.storage()->needs_grad) return;
    x.ensure_grad();
    const auto& g = out.grad();
    auto& dx = x.grad();
    for (int i = 0; i < M; ++i) {
      const double gi = g[static_cast<std::size_t>(i)];
      double* row = dx.data() + static_cast<std::size_t>(i) * P;
      for (int j = 0; j < P; ++j) row[j] += gi;
    }
  });
  return out;
}

Tensor add_rowvec(Tape& tape, const Tensor& x, const Tensor& v) {
  check_2d("add_rowvec", x, "input");
  if (v.ndim() != 1 || v.dim(0) != x.dim(1))
    throw std::invalid_argument("add_rowvec: vector shape " +
                                shape_str(v.shape()) +
                                " does not match row width of " +
                                shape_str(x.shape()));
  const int M = x.dim(0), P = x.dim(1);
  Tensor out = Tensor::zeros({M, P});
  const double *xv = x.data(), *vv = v.data();
  double* ov = out.data();
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < P; ++j) {
      const std::size_t ij = static_cast<std::size_t>(i) * P + j;
      ov[ij] = xv[ij] + vv[j];
    }
  tape.record({x, v}, out, [x = x, v = v, out, M, P]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (x.storage()->needs_grad) acc_all(x, g);
    if (v.storage()->needs_grad) {
      v.ensure_grad();
      auto& dv = v.grad();
      for (int i = 0; i < M; ++i)
        for (int j = 0; j < P; ++j)
          dv[static_cast<std::size_t>(j)] +=
              g[static_cast<std::size_t>(i) * P + j];
    }
  });
  return out;
}

Tensor sub_colvec(Tape& tape, const Tensor& x, const Tensor& v) {
  check_2d("sub_colvec", x, "input");
  if (v.ndim() != 1 || v.dim(0) != x.dim(0))
    throw std::invalid_argument("sub_colvec: vector shape " +
                                shape_str(v.shape()) +
                                " does not match row count of " +
                                shape_str(x.shape()));
  const int M = x.dim(0), P = x.dim(1);
  Tensor out = Tensor::zeros({M, P});
  const double *xv = x.data(), *vv = v.data();
  double* ov = out.data();
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < P; ++j) {
      const std::size_t ij = static_cast<std::size_t>(i) * P + j;
      ov[ij] = xv[ij] - vv[i];
    }
  tape.record({x, v}, out, [x = x, v = v, out, M, P]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (x.storage()->needs_grad) acc_all(x, g);
    if (v.storage()->needs_grad) {
      v.ensure_grad();
      auto& dv = v.grad();
      for (int i = 0; i < M; ++i) {
        double s = 0.0;
        for (int j = 0; j < P; ++j) s += g[static_cast<std::size_t>(i) * P + j];
        dv[static_cast<std::size_t>(i)] -= s;
      }
    }
  });
  return out;
}

Tensor gather_pairs(Tape& tape, const Tensor& x,
                    const std::vector<std::pair<int, int>>& indices) {
  check_2d("gather_pairs", x, "input");
  const int M = x.dim(0), P = x.dim(1);
  for (const auto& [i, j] : indices)
    if (i < 0 || i >= M || j < 0 || j >= P)
      throw std::invalid_argument("gather_pairs: index (" + std::to_string(i) +
                                  "," + std::to_string(j) +
                                  ") out of range for shape " +
                                  shape_str(x.shape()));
  Tensor out = Tensor::zeros({static_cast<int>(indices.size())});
  const double* xv = x.data();
  double* ov = out.data();
  for (std::size_t t = 0; t < indices.size(); ++t)
    ov[t] = xv[static_cast<std::size_t>(indices[t].first) * P +
               indices[t].second];
  tape.record({x}, out, [x = x, out, indices = indices, P]() mutable {
    if (!out.has_grad()) return;
    if (!x.storage()->needs_grad) return;
    x.ensure_grad();
    const auto& g = out.grad();
    auto& dx = x.grad();
    for (std::size_t t = 0; t < indices.size(); ++t)
      dx[static_cast<std::size_t>(indices[t].first) * P + indices[t].second] +=
          g[t];
  });
  return out;
}

Tensor replace_diagonal(Tape& tape, const Tensor& x, double value) {
  check_2d("replace_diagonal", x, "input");
  if (x.dim(0) != x.dim(1))
    throw std::invalid_argument("replace_diagonal: matrix must be square, got " +
                                shape_str(x.shape()));
  const int M = x.dim(0);
  Tensor out = Tensor::zeros({M, M});
  out.values() = x.values();
  double* ov = out.data();
  for (int i = 0; i < M; ++i)
    ov[static_cast<std::size_t>(i) * M + i] = value;
  tape.record({x}, out, [x = x, out, M]() mutable {
    if (!out.has_grad()) return;
    if (!x.storage()->needs_grad) return;
    x.ensure_grad();
    const auto& g = out.grad();
    auto& dx = x.grad();
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < M; ++j)
        if (i != j)
          dx[static_cast<std::size_t>(i) * M + j] +=
              g[static_cast<std::size_t>(i) * M + j];
  });
  return out;
}

Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b) {
  check_2d("concat_rows", a, "first argument");
  check_2d("concat_rows", b, "second argument");
  if (a.dim(1) != b.dim(1))
    throw std::invalid_argument("concat_rows: column counts disagree, " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int Na = a.dim(0), Nb = b.dim(0), d = a.dim(1);
  Tensor out = Tensor::zeros({Na + Nb, d});
  std::memcpy(out.data(), a.data(), sizeof(double) * a.values().size());
  std::memcpy(out.data() + a.values().size(), b.data(),
              sizeof(double) * b.values().size());
  tape.record({a, b}, out, [a = a, b = b, out]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (a.storage()->needs_grad) {
      a.ensure_grad();
      kernels::axpy(1.0, g.data(), a.grad().data(), a.values().size());
    }
    if (b.storage()->needs_grad) {
      b.ensure_grad();
      kernels::axpy(1.0, g.data() + a.values().size(), b.grad().data(),
                    b.values().size());
    }
  });
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
  const std::int64_t n = shape_numel(new_shape);
  if (n != x.numel())
    throw std::invalid_argument("reshape: cannot view " +
                                shape_str(x.shape()) + " as " +
                                shape_str(new_shape));
  Tensor out = Tensor::zeros(std::move(new_shape));
  out.values() = x.values();
  tape.record({x}, out, [x = x, out]() mutable {
    if (!out.has_grad()) return;
    if (x.storage()->needs_grad) acc_all(x, out.grad());
  });
  return out;
}

}  // namespace mixcl
