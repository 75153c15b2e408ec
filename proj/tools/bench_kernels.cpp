// Times each hot kernel in serial and OpenMP mode on a mid-size problem and
// verifies the two produce bit-identical output.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mixcl/kernels.hpp"
#include "mixcl/rng.hpp"

using mixcl::kernels::Exec;
using mixcl::kernels::exec_mode;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

struct Case {
  std::string name;
  std::function<void(std::vector<double>&)> run;  // writes its output buffer
  std::size_t out_size;
};

void report(const Case& c, int reps) {
  std::vector<double> out_serial(c.out_size), out_parallel(c.out_size);
  exec_mode() = Exec::Serial;
  const double ser = time_ms([&] { c.run(out_serial); }, reps);
  exec_mode() = Exec::Parallel;
  const double par = time_ms([&] { c.run(out_parallel); }, reps);
  const bool identical = std::memcmp(out_serial.data(), out_parallel.data(),
                                     c.out_size * sizeof(double)) == 0;
  std::printf("%-28s %10.3f %10.3f %8.2fx   %s\n", c.name.c_str(), ser, par,
              ser / par, identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
  using namespace mixcl;
  int threads = 1;
#ifdef _OPENMP
  threads = omp_get_max_threads();
#endif
  std::printf("kernel benchmark, %d thread(s)\n", threads);
  std::printf("%-28s %10s %10s %9s\n", "kernel", "serial ms", "openmp ms",
              "speedup");

  const int N = 16, Cin = 32, Cout = 64, T = 256, K = 8, pad = 3;
  const int M = 256, Kd = 512, Nd = 256;
  Rng rng(7);
  auto fill = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
  };
  const std::vector<double> conv_in = fill(static_cast<std::size_t>(N) * Cin * T);
  const std::vector<double> conv_w =
      fill(static_cast<std::size_t>(Cout) * Cin * K);
  const std::vector<double> conv_b = fill(static_cast<std::size_t>(Cout));
  const std::vector<double> conv_dout =
      fill(static_cast<std::size_t>(N) * Cout * T);
  const std::vector<double> A = fill(static_cast<std::size_t>(M) * Kd);
  const std::vector<double> B = fill(static_cast<std::size_t>(Kd) * Nd);
  const std::vector<double> bn_gamma = fill(static_cast<std::size_t>(Cin));
  const std::vector<double> bn_beta = fill(static_cast<std::size_t>(Cin));
  std::vector<double> bn_mean(Cin), bn_var(Cin), bn_inv_std(Cin);
  exec_mode() = Exec::Serial;
  kernels::channel_mean_var(conv_in.data(), bn_mean.data(), bn_var.data(), N,
                            Cin, T);
  for (int c = 0; c < Cin; ++c) bn_inv_std[c] = 1.0 / std::sqrt(bn_var[c] + 1e-5);
  const std::vector<double> pa = fill(static_cast<std::size_t>(M) * Kd);
  const std::vector<double> pb = fill(static_cast<std::size_t>(Nd) * Kd);

  const std::vector<Case> cases = {
      {"conv1d_forward",
       [&](std::vector<double>& out) {
         kernels::conv1d_forward(conv_in.data(), conv_w.data(), conv_b.data(),
                                 out.data(), N, Cin, Cout, T, K, pad);
       },
       static_cast<std::size_t>(N) * Cout * T},
      {"conv1d_backward_input",
       [&](std::vector<double>& out) {
         std::fill(out.begin(), out.end(), 0.0);
         kernels::conv1d_backward_input(conv_w.data(), conv_dout.data(),
                                        out.data(), N, Cin, Cout, T, K, pad);
       },
       static_cast<std::size_t>(N) * Cin * T},
      {"conv1d_backward_kernel",
       [&](std::vector<double>& out) {
         std::fill(out.begin(), out.end(), 0.0);
         kernels::conv1d_backward_kernel(conv_in.data(), conv_dout.data(),
                                         out.data(), N, Cin, Cout, T, K, pad);
       },
       static_cast<std::size_t>(Cout) * Cin * K},
      {"matmul",
       [&](std::vector<double>& out) {
         kernels::matmul(A.data(), B.data(), out.data(), M, Kd, Nd);
       },
       static_cast<std::size_t>(M) * Nd},
      {"matmul_abt_acc",
       [&](std::vector<double>& out) {
         std::fill(out.begin(), out.end(), 0.0);
         kernels::matmul_abt_acc(A.data(), pb.data(), out.data(), M, Kd, Nd);
       },
       static_cast<std::size_t>(M) * Nd},
      {"channel_mean_var",
       [&](std::vector<double>& out) {
         kernels::channel_mean_var(conv_in.data(), out.data(),
                                   out.data() + Cin, N, Cin, T);
       },
       static_cast<std::size_t>(2) * Cin},
      {"bn_apply",
       [&](std::vector<double>& out) {
         kernels::bn_apply(conv_in.data(), bn_mean.data(), bn_inv_std.data(),
                           bn_gamma.data(), bn_beta.data(), out.data(), N, Cin,
                           T);
       },
       static_cast<std::size_t>(N) * Cin * T},
      {"pairwise_sq_dists",
       [&](std::vector<double>& out) {
         kernels::pairwise_sq_dists(pa.data(), pb.data(), out.data(), M, Nd,
                                    Kd);
       },
       static_cast<std::size_t>(M) * Nd},
  };
  for (const Case& c : cases) report(c, 5);
  exec_mode() = Exec::Serial;
  return 0;
}
