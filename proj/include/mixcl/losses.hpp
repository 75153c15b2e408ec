#pragma once

#include <vector>

#include "mixcl/tensor.hpp"

namespace mixcl {

// Embeddings entering the mixup contrastive loss: z1/z2 from the two source
// minibatches, z_tilde from the mixed minibatch, plus the draw lambda and
// temperature tau.
struct ContrastiveBatchEmbeddings {
  Tensor z1, z2, z_tilde;  // each [N,d]
  double lambda = 0.5;
  double tau = 0.5;
};

// Mixup contrastive loss. Per anchor i, with s1_ik = cos(zt_i, z1_k)/tau,
// s2_ik = cos(zt_i, z2_k)/tau and one shared denominator
// sum_k exp(s1_ik) + exp(s2_ik) over all k (no exclusion):
//   l_i = -lambda*log(exp(s1_ii)/den) - (1-lambda)*log(exp(s2_ii)/den).
// Returns the mean over i, log-sum-exp stabilized.
Tensor mnt_xent(Tape& tape, const ContrastiveBatchEmbeddings& batch);

// Per-sample-lambda variant: row i weighted by lambdas[i].
Tensor mnt_xent(Tape& tape, const Tensor& z1, const Tensor& z2,
                const Tensor& z_tilde, const std::vector<double>& lambdas,
                double tau);

// SimCLR loss over the 2N views [za; zb]: positive pairs (i, i+N),
// denominator over the other 2N-1 similarities (self excluded), mean over
// all 2N anchors.
Tensor nt_xent(Tape& tape, const Tensor& z_a, const Tensor& z_b, double tau);

Tensor mse_reconstruction(Tape& tape, const Tensor& x_hat, const Tensor& x);

Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits,
                             const std::vector<int>& labels);

}  // namespace mixcl
