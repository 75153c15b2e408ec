#include "mixcl/augment.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace mixcl {

Tensor mixup_combine(const Tensor& view1, const Tensor& view2, double lambda) {
  if (view1.shape() != view2.shape())
    throw std::invalid_argument("mixup_combine: shape mismatch " +
                                shape_str(view1.shape()) + " vs " +
                                shape_str(view2.shape()));
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("mixup_combine: lambda " +
                                std::to_string(lambda) + " outside [0,1]");
  Tensor out = Tensor::zeros(view1.shape());
  // Canonicalize the coefficient pair so (lam, mu) and its swap are the same
  // two doubles: 1-mu is exact (Sterbenz, mu in [1/2, 1] or lam already 0/1),
  // which makes mixup(a, b, l) == mixup(b, a, 1-l) hold bit-for-bit.
  const double mu = 1.0 - lambda;
  const double lam = 1.0 - mu;
  const double *a = view1.data(), *b = view2.data();
  double* o = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i)
    o[i] = lam * a[i] + mu * b[i];
  return out;
}

Tensor gaussian_noise_aug(const Tensor& x, Rng& rng, double variance) {
  if (variance < 0.0)
    throw std::invalid_argument("gaussian_noise_aug: negative variance " +
                                std::to_string(variance));
  Tensor out = Tensor::from_values(x.shape(), x.values());
  if (variance == 0.0) return out;
  const double sd = std::sqrt(variance);
  double* o = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) o[i] += rng.normal(0.0, sd);
  return out;
}

Tensor dropout_noise_aug(const Tensor& x, Rng& rng, double rate) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("dropout_noise_aug: rate " +
                                std::to_string(rate) + " outside [0,1)");
  Tensor out = Tensor::from_values(x.shape(), x.values());
  if (rate == 0.0) return out;
  double* o = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i)
    if (rng.uniform() < rate) o[i] = 0.0;
  return out;
}

Tensor gather_samples(const TimeSeriesDataset& dataset,
                      const std::vector<int>& indices) {
  const int C = dataset.channels(), T = dataset.length();
  const int B = static_cast<int>(indices.size());
  Tensor out = Tensor::zeros({B, C, T});
  const double* src = dataset.samples.data();
  double* dst = out.data();
  const std::size_t row = static_cast<std::size_t>(C) * T;
  for (int b = 0; b < B; ++b) {
    const int idx = indices[static_cast<std::size_t>(b)];
    if (idx < 0 || idx >= dataset.size())
      throw std::invalid_argument("gather_samples: index " +
                                  std::to_string(idx) +
                                  " out of range for dataset of size " +
                                  std::to_string(dataset.size()));
    std::memcpy(dst + static_cast<std::size_t>(b) * row, src + idx * row,
                sizeof(double) * row);
  }
  return out;
}

MixupBatch make_mixup_batch(const TimeSeriesDataset& dataset,
                            const std::vector<int>& indices1,
                            const std::vector<int>& indices2, Rng& rng,
                            double alpha) {
  if (indices1.size() != indices2.size())
    throw std::invalid_argument("make_mixup_batch: index arrays of lengths " +
                                std::to_string(indices1.size()) + " and " +
                                std::to_string(indices2.size()));
  MixupBatch batch;
  batch.view1 = gather_samples(dataset, indices1);
  batch.view2 = gather_samples(dataset, indices2);
  batch.lambda = rng.beta_symmetric(alpha);
  batch.mixed = mixup_combine(batch.view1, batch.view2, batch.lambda);
  return batch;
}

MixupBatchPerSample make_mixup_batch_per_sample(
    const TimeSeriesDataset& dataset, const std::vector<int>& indices1,
    const std::vector<int>& indices2, Rng& rng, double alpha) {
  if (indices1.size() != indices2.size())
    throw std::invalid_argument("make_mixup_batch: index arrays of lengths " +
                                std::to_string(indices1.size()) + " and " +
                                std::to_string(indices2.size()));
  MixupBatchPerSample batch;
  batch.view1 = gather_samples(dataset, indices1);
  batch.view2 = gather_samples(dataset, indices2);
  const int B = batch.view1.dim(0);
  const std::size_t row = batch.view1.values().size() / std::max(1, B);
  batch.lambdas.resize(static_cast<std::size_t>(B));
  batch.mixed = Tensor::zeros(batch.view1.shape());
  const double *a = batch.view1.data(), *b = batch.view2.data();
  double* o = batch.mixed.data();
  for (int i = 0; i < B; ++i) {
    const double lam = rng.beta_symmetric(alpha);
    batch.lambdas[static_cast<std::size_t>(i)] = lam;
    const double mu = 1.0 - lam;
    for (std::size_t k = 0; k < row; ++k) {
      const std::size_t off = static_cast<std::size_t>(i) * row + k;
      o[off] = lam * a[off] + mu * b[off];
    }
  }
  return batch;
}

}  // namespace mixcl
