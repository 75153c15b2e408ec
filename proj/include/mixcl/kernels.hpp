#pragma once

#include <cstddef>

// Hot numeric kernels on raw double arrays. Every kernel has a serial
// reference implementation and an OpenMP variant; exec_mode() selects which
// one runs. The OpenMP variants parallelize only over indices that own their
// output element, and both variants route each output element through the
// same row-level helper, so parallel results are bit-identical to serial
// regardless of thread count. Tests assert this equality; mixcl_bench
// compares the two.

namespace mixcl::kernels {

enum class Exec { Serial, Parallel };

Exec& exec_mode();

// out[n,co,t] = bias[co] + sum_{ci,k} w[co,ci,k] * in[n,ci,t+k-pad_left]
// (zero padding outside [0,T)). Output length equals input length when
// pad_left + pad_right == K-1; callers guarantee that.
void conv1d_forward(const double* in, const double* w, const double* bias,
                    double* out, int N, int Cin, int Cout, int T, int K,
                    int pad_left);

void conv1d_backward_input(const double* w, const double* d_out, double* d_in,
                           int N, int Cin, int Cout, int T, int K,
                           int pad_left);

// Accumulates into d_w / d_bias.
void conv1d_backward_kernel(const double* in, const double* d_out, double* d_w,
                            int N, int Cin, int Cout, int T, int K,
                            int pad_left);
void conv1d_backward_bias(const double* d_out, double* d_bias, int N, int Cout,
                          int T);

// C[m,n] = sum_k A[m,k] B[k,n]; accumulate variants add into C.
void matmul(const double* A, const double* B, double* C, int M, int K, int N);
void matmul_acc(const double* A, const double* B, double* C, int M, int K,
                int N);
// C += A·Bᵀ  (A[M,K], B[N,K] -> C[M,N])
void matmul_abt_acc(const double* A, const double* B, double* C, int M, int K,
                    int N);
// C += Aᵀ·B  (A[M,K], B[M,N] -> C[K,N])
void matmul_atb_acc(const double* A, const double* B, double* C, int M, int K,
                    int N);

// Per-channel mean and biased variance over the (N,T) axes of in[N,C,T].
void channel_mean_var(const double* in, double* mean, double* var, int N,
                      int C, int T);

// out = gamma[c] * (in - mean[c]) * inv_std[c] + beta[c]
void bn_apply(const double* in, const double* mean, const double* inv_std,
              const double* gamma, const double* beta, double* out, int N,
              int C, int T);

// Train-mode batchnorm backward. xhat-free formulation: recomputes
// (x-mean)*inv_std from the saved inputs. Accumulates into d_in/d_gamma/d_beta.
void bn_backward(const double* in, const double* d_out, const double* mean,
                 const double* inv_std, const double* gamma, double* d_in,
                 double* d_gamma, double* d_beta, int N, int C, int T);

// dist[i,j] = squared euclidean distance between a[i,:] and b[j,:]
void pairwise_sq_dists(const double* a, const double* b, double* dist, int M,
                       int P, int d);

// Apply f to each element; both exec modes use identical per-element order.
template <class F>
void map_inplace(double* x, std::size_t n, F f);

void add_vec(const double* a, const double* b, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);  // y += a*x

}  // namespace mixcl::kernels

// map_inplace stays header-only so the functor inlines.
#ifdef _OPENMP
#include <omp.h>
#endif

namespace mixcl::kernels {

template <class F>
void map_inplace(double* x, std::size_t n, F f) {
  if (exec_mode() == Exec::Parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
      x[i] = f(x[i]);
    return;
#endif
  }
  for (std::size_t i = 0; i < n; ++i) x[i] = f(x[i]);
}

}  // namespace mixcl::kernels
