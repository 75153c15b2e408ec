#include "mixcl/losses.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace mixcl {

namespace {

// Lowest similarity a replaced diagonal can take: exp(x - rowmax) underflows
// to exactly 0, removing self-terms from denominators without inf/NaN.
constexpr double kExcluded = -1e300;

Tensor row_max_const(const Tensor& a, const Tensor* b = nullptr) {
  const int M = a.dim(0), P = a.dim(1);
  Tensor m = Tensor::zeros({M});
  const double* av = a.data();
  const double* bv = b ? b->data() : nullptr;
  double* mv = m.data();
  for (int i = 0; i < M; ++i) {
    double best = -1e308;
    for (int j = 0; j < P; ++j) {
      const std::size_t ij = static_cast<std::size_t>(i) * P + j;
      best = std::max(best, av[ij]);
      if (bv) best = std::max(best, bv[ij]);
    }
    mv[i] = best;
  }
  return m;
}

std::vector<std::pair<int, int>> diagonal_pairs(int n) {
  std::vector<std::pair<int, int>> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = {i, i};
  return out;
}

// Shared core of both mnt_xent overloads: per-anchor log-probabilities of
// the two positives under the joint 2N-term softmax.
std::pair<Tensor, Tensor> mnt_terms(Tape& tape, const Tensor& z1,
                                    const Tensor& z2, const Tensor& z_tilde,
                                    double tau) {
  if (z1.ndim() != 2 || z2.ndim() != 2 || z_tilde.ndim() != 2)
    throw std::invalid_argument("mnt_xent: embeddings must be 2-d");
  if (z1.shape() != z2.shape() || z1.shape() != z_tilde.shape())
    throw std::invalid_argument("mnt_xent: embedding shapes disagree, " +
                                shape_str(z1.shape()) + " / " +
                                shape_str(z2.shape()) + " / " +
                                shape_str(z_tilde.shape()));
  if (!(tau > 0.0))
    throw std::invalid_argument("mnt_xent: tau must be positive, got " +
                                std::to_string(tau));
  const int N = z1.dim(0);
  Tensor s1 = scale(tape, cosine_similarity_matrix(tape, z_tilde, z1),
                    1.0 / tau);
  Tensor s2 = scale(tape, cosine_similarity_matrix(tape, z_tilde, z2),
                    1.0 / tau);
  Tensor m = row_max_const(s1, &s2);  // constant shift, cancels in the ratio
  Tensor s1s = sub_colvec(tape, s1, m);
  Tensor s2s = sub_colvec(tape, s2, m);
  Tensor den = add(tape, row_sum(tape, exp(tape, s1s)),
                   row_sum(tape, exp(tape, s2s)));
  Tensor log_den = log(tape, den);
  const auto diag = diagonal_pairs(N);
  Tensor t1 = sub(tape, gather_pairs(tape, s1s, diag), log_den);
  Tensor t2 = sub(tape, gather_pairs(tape, s2s, diag), log_den);
  return {t1, t2};
}

}  // namespace

Tensor mnt_xent(Tape& tape, const ContrastiveBatchEmbeddings& batch) {
  if (!(batch.lambda >= 0.0 && batch.lambda <= 1.0))
    throw std::invalid_argument("mnt_xent: lambda " +
                                std::to_string(batch.lambda) +
                                " outside [0,1]");
  auto [t1, t2] = mnt_terms(tape, batch.z1, batch.z2, batch.z_tilde,
                            batch.tau);
  Tensor weighted = add(tape, scale(tape, t1, batch.lambda),
                        scale(tape, t2, 1.0 - batch.lambda));
  return mean(tape, neg(tape, weighted));
}

Tensor mnt_xent(Tape& tape, const Tensor& z1, const Tensor& z2,
                const Tensor& z_tilde, const std::vector<double>& lambdas,
                double tau) {
  if (static_cast<int>(lambdas.size()) != z1.dim(0))
    throw std::invalid_argument(
        "mnt_xent: " + std::to_string(lambdas.size()) + " lambdas for " +
        std::to_string(z1.dim(0)) + " samples");
  for (double l : lambdas)
    if (!(l >= 0.0 && l <= 1.0))
      throw std::invalid_argument("mnt_xent: lambda " + std::to_string(l) +
                                  " outside [0,1]");
  auto [t1, t2] = mnt_terms(tape, z1, z2, z_tilde, tau);
  const int N = z1.dim(0);
  std::vector<double> comp(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) comp[i] = 1.0 - lambdas[i];
  Tensor lam = Tensor::from_values({N}, lambdas);
  Tensor lam_c = Tensor::from_values({N}, std::move(comp));
  Tensor weighted =
      add(tape, mul(tape, t1, lam), mul(tape, t2, lam_c));
  return mean(tape, neg(tape, weighted));
}

Tensor nt_xent(Tape& tape, const Tensor& z_a, const Tensor& z_b, double tau) {
  if (z_a.ndim() != 2 || z_b.ndim() != 2 || z_a.shape() != z_b.shape())
    throw std::invalid_argument("nt_xent: views must share a 2-d shape, got " +
                                shape_str(z_a.shape()) + " and " +
                                shape_str(z_b.shape()));
  if (!(tau > 0.0))
    throw std::invalid_argument("nt_xent: tau must be positive, got " +
                                std::to_string(tau));
  const int N = z_a.dim(0);
  if (N < 2)
    throw std::invalid_argument("nt_xent: need N >= 2, got N=" +
                                std::to_string(N) + " (no negatives)");
  Tensor z = concat_rows(tape, z_a, z_b);
  Tensor s = scale(tape, cosine_similarity_matrix(tape, z, z), 1.0 / tau);
  Tensor sx = replace_diagonal(tape, s, kExcluded);
  Tensor m = row_max_const(sx);
  Tensor ss = sub_colvec(tape, sx, m);
  Tensor den = row_sum(tape, exp(tape, ss));
  std::vector<std::pair<int, int>> pos(static_cast<std::size_t>(2 * N));
  for (int i = 0; i < N; ++i) {
    pos[static_cast<std::size_t>(i)] = {i, i + N};
    pos[static_cast<std::size_t>(i + N)] = {i + N, i};
  }
  Tensor positives = gather_pairs(tape, ss, pos);
  return mean(tape, neg(tape, sub(tape, positives, log(tape, den))));
}

Tensor mse_reconstruction(Tape& tape, const Tensor& x_hat, const Tensor& x) {
  if (x_hat.shape() != x.shape())
    throw std::invalid_argument("mse_reconstruction: shape mismatch " +
                                shape_str(x_hat.shape()) + " vs " +
                                shape_str(x.shape()));
  Tensor d = sub(tape, x_hat, x);
  return mean(tape, mul(tape, d, d));
}

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits,
                             const std::vector<int>& labels) {
  if (logits.ndim() != 2)
    throw std::invalid_argument("softmax_cross_entropy: logits must be [N,K]");
  const int N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw std::invalid_argument("softmax_cross_entropy: " +
                                std::to_string(labels.size()) +
                                " labels for " + std::to_string(N) + " rows");
  std::vector<std::pair<int, int>> truth(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= K)
      throw std::invalid_argument(
          "softmax_cross_entropy: label " + std::to_string(y) +
          " out of range [0," + std::to_string(K) + ") at row " +
          std::to_string(i));
    truth[static_cast<std::size_t>(i)] = {i, y};
  }
  Tensor m = row_max_const(logits);
  Tensor ls = sub_colvec(tape, logits, m);
  Tensor lse = log(tape, row_sum(tape, exp(tape, ls)));
  Tensor true_shifted = gather_pairs(tape, ls, truth);
  return mean(tape, sub(tape, lse, true_shifted));
}

}  // namespace mixcl
