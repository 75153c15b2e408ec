#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mixcl/data.hpp"
#include "mixcl/eval.hpp"
#include "mixcl/models.hpp"

namespace mixcl {

struct TrainConfig {
  std::string method = "mcl";  // mcl | cl-gauss | cl-drop | ae
  double alpha = 0.2;          // mixup Beta(alpha, alpha)
  double tau = 0.5;
  double noise = 0.25;  // gaussian variance (cl-gauss) or dropout rate (cl-drop)
  int epochs = -1;      // -1 -> 1000 self-supervised, 250 autoencoder
  int batch_size = 64;  // clamped to <= N
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int num_runs = 5;
  bool per_sample_lambda = false;  // ablation: one lambda per anchor

  int resolved_epochs() const {
    if (epochs >= 0) return epochs;
    return method == "ae" ? 250 : 1000;
  }
};

struct SslResult {
  FcnEncoderParams encoder;
  ProjectionHeadParams head;
  std::vector<double> loss_history;  // mean loss per epoch
  explicit SslResult(int channels) : encoder(channels) {}
};

struct AeResult {
  FcnEncoderParams encoder;
  DecoderParams decoder;
  std::vector<double> loss_history;
  AeResult(int channels, int length)
      : encoder(channels), decoder(channels, length) {}
};

// Contrastive pretraining (method mcl, cl-gauss or cl-drop) on an already
// normalized train split. Each epoch consumes two fresh index permutations
// in batches; batches of size 1 are skipped with a warning.
SslResult train_ssl(const TrainConfig& config, const TimeSeriesDataset& train);

// Autoencoder baseline: encoder + decoder under MSE reconstruction.
AeResult train_ae(const TrainConfig& config, const TimeSeriesDataset& train);

// method: hc | ed | encoder. encoder requires a weight file holding enc.*
// tensors (input channels must match the dataset).
Tensor extract_features(const std::string& method, const TimeSeriesDataset& d,
                        const std::string& weights_path = "");

// Eval-mode encoder features, computed in bounded-size chunks. -> [N,128]
Tensor encoder_features(FcnEncoderParams& enc, const TimeSeriesDataset& d);

struct TransferConfig {
  std::string pretext_dir;  // empty or "none" when not pretraining here
  std::string target_dir;
  std::string init = "random";  // random | pretrained
  std::string weights_path;     // pretrained encoder weights, skips pretext
  int epochs = 100;
  int num_runs = 5;
  std::uint64_t seed = 0;
  TrainConfig pretext;  // settings for the pretext stage when one runs
};

struct TransferRun {
  std::uint64_t seed = 0;
  // Test accuracy per fine-tuning epoch; curve[0] is the pre-training-free
  // epoch-0 point when BN statistics allow evaluating the untrained model
  // (pretrained init), otherwise the curve starts at epoch 1.
  std::vector<double> curve;
  bool has_epoch0 = false;
  double final_accuracy = 0.0;
};

struct TransferResult {
  std::string init;
  std::vector<TransferRun> runs;
  double mean_final = 0.0;
  double std_final = 0.0;  // sample std over runs (0 when num_runs == 1)
};

TransferResult transfer_finetune(const TransferConfig& config);

void write_transfer_json(const TransferResult& res, const std::string& path);

struct BenchmarkConfig {
  std::string archive_root;
  std::vector<std::string> datasets;
  std::vector<std::string> methods;  // hc | ed | mcl | cl-gauss | cl-drop | ae
  TrainConfig train;                 // seed acts as the master seed
};

// Per dataset x method: load, train if learned (num_runs derived seeds),
// extract features, 1NN. Failures are recorded in the report, not fatal.
EvalReport benchmark_run(const BenchmarkConfig& config);

// Directories under root that contain <Name>_TRAIN.tsv or .ts, sorted.
std::vector<std::string> list_archive_datasets(const std::string& root);

// Feature CSV: header "label,f0,...", then one row per sample with the
// integer label first. Values are written with 17 significant digits, so a
// write/read round-trip is lossless.
void write_features_csv(const std::string& path, const Tensor& feats,
                        const std::vector<int>& labels);
std::pair<Tensor, std::vector<int>> read_features_csv(const std::string& path);

}  // namespace mixcl
