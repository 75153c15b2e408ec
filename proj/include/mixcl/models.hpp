#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mixcl/rng.hpp"
#include "mixcl/tensor.hpp"

namespace mixcl {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct ConvBlock {
  Tensor w, b, gamma, beta;
  BnState bn;
  ConvBlock(int cout, int cin, int k);
};

// FCN encoder f: conv(K=8) -> BN -> ReLU, conv(K=5) -> BN -> ReLU,
// conv(K=3) -> BN -> ReLU, global average pool. Filters 128/256/128, so the
// representation h is 128-dimensional for any input length.
struct FcnEncoderParams {
  int in_channels;
  ConvBlock block1, block2, block3;

  explicit FcnEncoderParams(int channels);
  NamedTensors trainable();
  NamedTensors state() const;  // trainable + BN running stats + counters
  void load_state(const NamedTensors& file);
};

// Projection head g: linear 128->128, ReLU, linear 128->128.
struct ProjectionHeadParams {
  Tensor w1, b1, w2, b2;
  ProjectionHeadParams();
  NamedTensors trainable();
  NamedTensors state() const;
  void load_state(const NamedTensors& file);
};

// Decoder for the autoencoder baseline: linear 128->256, ReLU,
// linear 256->C*T, reshaped to [N,C,T].
struct DecoderParams {
  int channels, length;
  Tensor w1, b1, w2, b2;
  DecoderParams(int channels, int length);
  NamedTensors trainable();
  NamedTensors state() const;
  void load_state(const NamedTensors& file);
};

// Linear classification head 128 -> num_classes.
struct ClassifierParams {
  int num_classes;
  Tensor w, b;
  explicit ClassifierParams(int num_classes);
  NamedTensors trainable();
  NamedTensors state() const;
  void load_state(const NamedTensors& file);
};

Tensor fcn_encode(Tape& tape, FcnEncoderParams& params, const Tensor& x,
                  Mode mode);                                  // -> [N,128]
Tensor project(Tape& tape, ProjectionHeadParams& params, const Tensor& h);
Tensor decode(Tape& tape, DecoderParams& params, const Tensor& h);
Tensor classify(Tape& tape, ClassifierParams& params, const Tensor& h);

// Weights ~ normal(0, sqrt(2/fan_in)), biases 0, BN gamma 1 / beta 0,
// running statistics reset.
void he_normal_init(Rng& rng, FcnEncoderParams& params);
void he_normal_init(Rng& rng, ProjectionHeadParams& params);
void he_normal_init(Rng& rng, DecoderParams& params);
void he_normal_init(Rng& rng, ClassifierParams& params);

// Binary weight file: magic "MCLW", u32 version=1, u32 tensor count, then
// per tensor u16 name length, name bytes, u8 ndim, u32 dims, f64 values
// row-major. All integers and values little-endian.
void save_weights(const NamedTensors& tensors, const std::string& path);
NamedTensors load_weights(const std::string& path);

}  // namespace mixcl
