#include "mixcl/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mixcl::kernels {

Exec& exec_mode() {
  static Exec mode = Exec::Parallel;
  return mode;
}

namespace {

inline bool parallel() { return exec_mode() == Exec::Parallel; }

// One output row out[t], t in [0,T): correlation of in[ci,:] with w over
// channels. The t-loop is contiguous and vectorizes; k and ci order is fixed
// so the reduction order never depends on threading.
inline void conv1d_row(const double* in, const double* w, double bias,
                       double* out, int Cin, int T, int K, int pad_left) {
  for (int t = 0; t < T; ++t) out[t] = bias;
  for (int ci = 0; ci < Cin; ++ci) {
    const double* x = in + static_cast<std::size_t>(ci) * T;
    const double* wk = w + static_cast<std::size_t>(ci) * K;
    for (int k = 0; k < K; ++k) {
      const double wv = wk[k];
      const int shift = k - pad_left;  // out[t] += wv * x[t+shift]
      const int lo = std::max(0, -shift);
      const int hi = std::min(T, T - shift);
      const double* xs = x + shift;
      for (int t = lo; t < hi; ++t) out[t] += wv * xs[t];
    }
  }
}

// d_in row for one (n, ci): correlation with the flipped kernel.
inline void conv1d_din_row(const double* w, const double* d_out, double* d_in,
                           int Cin, int Cout, int T, int K, int pad_left,
                           int ci) {
  for (int co = 0; co < Cout; ++co) {
    const double* g = d_out + static_cast<std::size_t>(co) * T;
    const double* wk = w + (static_cast<std::size_t>(co) * Cin + ci) * K;
    for (int k = 0; k < K; ++k) {
      const double wv = wk[k];
      const int shift = pad_left - k;  // d_in[s] += wv * d_out[s+shift]
      const int lo = std::max(0, -shift);
      const int hi = std::min(T, T - shift);
      const double* gs = g + shift;
      for (int s = lo; s < hi; ++s) d_in[s] += wv * gs[s];
    }
  }
}

// Weight-gradient slice for one (co, ci): K dot products over (n, t).
inline void conv1d_dw_slice(const double* in, const double* d_out, double* d_w,
                            int N, int Cin, int Cout, int T, int K,
                            int pad_left, int co, int ci) {
  for (int k = 0; k < K; ++k) {
    const int shift = k - pad_left;
    const int lo = std::max(0, -shift);
    const int hi = std::min(T, T - shift);
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* x =
          in + (static_cast<std::size_t>(n) * Cin + ci) * T + shift;
      const double* g = d_out + (static_cast<std::size_t>(n) * Cout + co) * T;
      for (int t = lo; t < hi; ++t) acc += g[t] * x[t];
    }
    d_w[k] += acc;
  }
}

inline void matmul_row(const double* A, const double* B, double* C, int K,
                       int N, bool zero_first) {
  if (zero_first)
    for (int j = 0; j < N; ++j) C[j] = 0.0;
  for (int k = 0; k < K; ++k) {
    const double a = A[k];
    const double* b = B + static_cast<std::size_t>(k) * N;
    for (int j = 0; j < N; ++j) C[j] += a * b[j];
  }
}

}  // namespace

void conv1d_forward(const double* in, const double* w, const double* bias,
                    double* out, int N, int Cin, int Cout, int T, int K,
                    int pad_left) {
  const long long rows = static_cast<long long>(N) * Cout;
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < rows; ++r) {
      const int n = static_cast<int>(r / Cout), co = static_cast<int>(r % Cout);
      conv1d_row(in + static_cast<std::size_t>(n) * Cin * T,
                 w + static_cast<std::size_t>(co) * Cin * K, bias[co],
                 out + static_cast<std::size_t>(r) * T, Cin, T, K, pad_left);
    }
    return;
#endif
  }
  for (long long r = 0; r < rows; ++r) {
    const int n = static_cast<int>(r / Cout), co = static_cast<int>(r % Cout);
    conv1d_row(in + static_cast<std::size_t>(n) * Cin * T,
               w + static_cast<std::size_t>(co) * Cin * K, bias[co],
               out + static_cast<std::size_t>(r) * T, Cin, T, K, pad_left);
  }
}

void conv1d_backward_input(const double* w, const double* d_out, double* d_in,
                           int N, int Cin, int Cout, int T, int K,
                           int pad_left) {
  const long long rows = static_cast<long long>(N) * Cin;
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < rows; ++r) {
      const int n = static_cast<int>(r / Cin), ci = static_cast<int>(r % Cin);
      conv1d_din_row(w, d_out + static_cast<std::size_t>(n) * Cout * T,
                     d_in + static_cast<std::size_t>(r) * T, Cin, Cout, T, K,
                     pad_left, ci);
    }
    return;
#endif
  }
  for (long long r = 0; r < rows; ++r) {
    const int n = static_cast<int>(r / Cin), ci = static_cast<int>(r % Cin);
    conv1d_din_row(w, d_out + static_cast<std::size_t>(n) * Cout * T,
                   d_in + static_cast<std::size_t>(r) * T, Cin, Cout, T, K,
                   pad_left, ci);
  }
}

void conv1d_backward_kernel(const double* in, const double* d_out, double* d_w,
                            int N, int Cin, int Cout, int T, int K,
                            int pad_left) {
  const long long slices = static_cast<long long>(Cout) * Cin;
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long s = 0; s < slices; ++s) {
      const int co = static_cast<int>(s / Cin), ci = static_cast<int>(s % Cin);
      conv1d_dw_slice(in, d_out, d_w + static_cast<std::size_t>(s) * K, N, Cin,
                      Cout, T, K, pad_left, co, ci);
    }
    return;
#endif
  }
  for (long long s = 0; s < slices; ++s) {
    const int co = static_cast<int>(s / Cin), ci = static_cast<int>(s % Cin);
    conv1d_dw_slice(in, d_out, d_w + static_cast<std::size_t>(s) * K, N, Cin,
                    Cout, T, K, pad_left, co, ci);
  }
}

void conv1d_backward_bias(const double* d_out, double* d_bias, int N, int Cout,
                          int T) {
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int co = 0; co < Cout; ++co) {
      double acc = 0.0;
      for (int n = 0; n < N; ++n) {
        const double* g = d_out + (static_cast<std::size_t>(n) * Cout + co) * T;
        for (int t = 0; t < T; ++t) acc += g[t];
      }
      d_bias[co] += acc;
    }
    return;
#endif
  }
  for (int co = 0; co < Cout; ++co) {
    double acc = 0.0;
    for (int n = 0; n < N; ++n) {
      const double* g = d_out + (static_cast<std::size_t>(n) * Cout + co) * T;
      for (int t = 0; t < T; ++t) acc += g[t];
    }
    d_bias[co] += acc;
  }
}

void matmul(const double* A, const double* B, double* C, int M, int K, int N) {
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int m = 0; m < M; ++m)
      matmul_row(A + static_cast<std::size_t>(m) * K, B,
                 C + static_cast<std::size_t>(m) * N, K, N, true);
    return;
#endif
  }
  for (int m = 0; m < M; ++m)
    matmul_row(A + static_cast<std::size_t>(m) * K, B,
               C + static_cast<std::size_t>(m) * N, K, N, true);
}

void matmul_acc(const double* A, const double* B, double* C, int M, int K,
                int N) {
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int m = 0; m < M; ++m)
      matmul_row(A + static_cast<std::size_t>(m) * K, B,
                 C + static_cast<std::size_t>(m) * N, K, N, false);
    return;
#endif
  }
  for (int m = 0; m < M; ++m)
    matmul_row(A + static_cast<std::size_t>(m) * K, B,
               C + static_cast<std::size_t>(m) * N, K, N, false);
}

void matmul_abt_acc(const double* A, const double* B, double* C, int M, int K,
                    int N) {
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int m = 0; m < M; ++m) {
      const double* a = A + static_cast<std::size_t>(m) * K;
      double* c = C + static_cast<std::size_t>(m) * N;
      for (int j = 0; j < N; ++j) {
        const double* b = B + static_cast<std::size_t>(j) * K;
        double acc = 0.0;
        for (int k = 0; k < K; ++k) acc += a[k] * b[k];
        c[j] += acc;
      }
    }
    return;
#endif
  }
  for (int m = 0; m < M; ++m) {
    const double* a = A + static_cast<std::size_t>(m) * K;
    double* c = C + static_cast<std::size_t>(m) * N;
    for (int j = 0; j < N; ++j) {
      const double* b = B + static_cast<std::size_t>(j) * K;
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] += acc;
    }
  }
}

void matmul_atb_acc(const double* A, const double* B, double* C, int M, int K,
                    int N) {
  // C[k,:] += sum_m A[m,k] * B[m,:]; each k-row owned by one thread.
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int k = 0; k < K; ++k) {
      double* c = C + static_cast<std::size_t>(k) * N;
      for (int m = 0; m < M; ++m) {
        const double a = A[static_cast<std::size_t>(m) * K + k];
        const double* b = B + static_cast<std::size_t>(m) * N;
        for (int j = 0; j < N; ++j) c[j] += a * b[j];
      }
    }
    return;
#endif
  }
  for (int k = 0; k < K; ++k) {
    double* c = C + static_cast<std::size_t>(k) * N;
    for (int m = 0; m < M; ++m) {
      const double a = A[static_cast<std::size_t>(m) * K + k];
      const double* b = B + static_cast<std::size_t>(m) * N;
      for (int j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

namespace {

inline void channel_stats_one(const double* in, double* mean, double* var,
                              int N, int C, int T, int c) {
  const long long m = static_cast<long long>(N) * T;
  double s = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* x = in + (static_cast<std::size_t>(n) * C + c) * T;
    for (int t = 0; t < T; ++t) s += x[t];
  }
  const double mu = s / static_cast<double>(m);
  double sq = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* x = in + (static_cast<std::size_t>(n) * C + c) * T;
    for (int t = 0; t < T; ++t) {
      const double d = x[t] - mu;
      sq += d * d;
    }
  }
  mean[c] = mu;
  var[c] = sq / static_cast<double>(m);
}

}  // namespace

void channel_mean_var(const double* in, double* mean, double* var, int N,
                      int C, int T) {
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) channel_stats_one(in, mean, var, N, C, T, c);
    return;
#endif
  }
  for (int c = 0; c < C; ++c) channel_stats_one(in, mean, var, N, C, T, c);
}

void bn_apply(const double* in, const double* mean, const double* inv_std,
              const double* gamma, const double* beta, double* out, int N,
              int C, int T) {
  const long long rows = static_cast<long long>(N) * C;
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < rows; ++r) {
      const int c = static_cast<int>(r % C);
      const double* x = in + static_cast<std::size_t>(r) * T;
      double* y = out + static_cast<std::size_t>(r) * T;
      const double mu = mean[c], is = inv_std[c], g = gamma[c], b = beta[c];
      for (int t = 0; t < T; ++t) y[t] = g * (x[t] - mu) * is + b;
    }
    return;
#endif
  }
  for (long long r = 0; r < rows; ++r) {
    const int c = static_cast<int>(r % C);
    const double* x = in + static_cast<std::size_t>(r) * T;
    double* y = out + static_cast<std::size_t>(r) * T;
    const double mu = mean[c], is = inv_std[c], g = gamma[c], b = beta[c];
    for (int t = 0; t < T; ++t) y[t] = g * (x[t] - mu) * is + b;
  }
}

namespace {

// Standard batch-statistics backward per channel:
//   dxhat = dy * gamma
//   dx    = inv_std/m * (m*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
inline void bn_backward_one(const double* in, const double* d_out,
                            const double* mean, const double* inv_std,
                            const double* gamma, double* d_in, double* d_gamma,
                            double* d_beta, int N, int C, int T, int c) {
  const long long m = static_cast<long long>(N) * T;
  const double mu = mean[c], is = inv_std[c], g = gamma[c];
  double sum_dy = 0.0, sum_dy_xhat = 0.0;
  for (int n = 0; n < N; ++n) {
    const std::size_t off = (static_cast<std::size_t>(n) * C + c) * T;
    const double* x = in + off;
    const double* dy = d_out + off;
    for (int t = 0; t < T; ++t) {
      sum_dy += dy[t];
      sum_dy_xhat += dy[t] * (x[t] - mu) * is;
    }
  }
  if (d_gamma) d_gamma[c] += sum_dy_xhat;
  if (d_beta) d_beta[c] += sum_dy;
  if (!d_in) return;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (int n = 0; n < N; ++n) {
    const std::size_t off = (static_cast<std::size_t>(n) * C + c) * T;
    const double* x = in + off;
    const double* dy = d_out + off;
    double* dx = d_in + off;
    for (int t = 0; t < T; ++t) {
      const double xhat = (x[t] - mu) * is;
      dx[t] += g * is * (dy[t] - inv_m * (sum_dy + xhat * sum_dy_xhat));
    }
  }
}

}  // namespace

void bn_backward(const double* in, const double* d_out, const double* mean,
                 const double* inv_std, const double* gamma, double* d_in,
                 double* d_gamma, double* d_beta, int N, int C, int T) {
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c)
      bn_backward_one(in, d_out, mean, inv_std, gamma, d_in, d_gamma, d_beta,
                      N, C, T, c);
    return;
#endif
  }
  for (int c = 0; c < C; ++c)
    bn_backward_one(in, d_out, mean, inv_std, gamma, d_in, d_gamma, d_beta, N,
                    C, T, c);
}

void pairwise_sq_dists(const double* a, const double* b, double* dist, int M,
                       int P, int d) {
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int i = 0; i < M; ++i) {
      const double* ai = a + static_cast<std::size_t>(i) * d;
      double* row = dist + static_cast<std::size_t>(i) * P;
      for (int j = 0; j < P; ++j) {
        const double* bj = b + static_cast<std::size_t>(j) * d;
        double acc = 0.0;
        for (int k = 0; k < d; ++k) {
          const double diff = ai[k] - bj[k];
          acc += diff * diff;
        }
        row[j] = acc;
      }
    }
    return;
#endif
  }
  for (int i = 0; i < M; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * d;
    double* row = dist + static_cast<std::size_t>(i) * P;
    for (int j = 0; j < P; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * d;
      double acc = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = ai[k] - bj[k];
        acc += diff * diff;
      }
      row[j] = acc;
    }
  }
}

void add_vec(const double* a, const double* b, double* out, std::size_t n) {
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
      out[i] = a[i] + b[i];
    return;
#endif
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  if (parallel()) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
      y[i] += alpha * x[i];
    return;
#endif
  }
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace mixcl::kernels
