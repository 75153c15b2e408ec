#pragma once

#include <vector>

#include "mixcl/data.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/tensor.hpp"

namespace mixcl {

// One mixup training batch: mixed = lambda*view1 + (1-lambda)*view2, a
// single lambda shared across the batch.
struct MixupBatch {
  Tensor view1, view2, mixed;  // each [N,C,T]
  double lambda = 0.0;
};

Tensor mixup_combine(const Tensor& view1, const Tensor& view2, double lambda);
Tensor gaussian_noise_aug(const Tensor& x, Rng& rng, double variance);
Tensor dropout_noise_aug(const Tensor& x, Rng& rng, double rate);

// Gathers the two index sets from the dataset and mixes them with one
// lambda ~ Beta(alpha, alpha).
MixupBatch make_mixup_batch(const TimeSeriesDataset& dataset,
                            const std::vector<int>& indices1,
                            const std::vector<int>& indices2, Rng& rng,
                            double alpha);

// Per-sample-lambda variant (ablation): row i of mixed uses lambdas[i].
struct MixupBatchPerSample {
  Tensor view1, view2, mixed;
  std::vector<double> lambdas;
};
MixupBatchPerSample make_mixup_batch_per_sample(
    const TimeSeriesDataset& dataset, const std::vector<int>& indices1,
    const std::vector<int>& indices2, Rng& rng, double alpha);

// Copies the given rows of dataset.samples into a [B,C,T] tensor.
Tensor gather_samples(const TimeSeriesDataset& dataset,
                      const std::vector<int>& indices);

}  // namespace mixcl
