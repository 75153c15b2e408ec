#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mixcl/common.hpp"
#include "mixcl/tensor.hpp"

namespace mixcl {

enum class Split { Train, Test };

struct TimeSeriesDataset {
  std::string name;
  Split split = Split::Train;
  Tensor samples;                         // [N,C,T], NaN-free after loading
  std::vector<int> labels;                // length N, values in [0, K)
  std::vector<std::string> label_names;   // class index -> original token
  std::vector<int> length_mask;           // per-sample original length <= T

  int size() const { return samples.dim(0); }
  int channels() const { return samples.dim(1); }
  int length() const { return samples.dim(2); }
  int num_classes() const { return static_cast<int>(label_names.size()); }
};

// One parsed record before imputation/padding: channels[c] holds the raw
// value sequence (NaN = missing), label is the original token.
struct RawRecord {
  std::vector<std::vector<double>> channels;
  std::string label;
};

struct RawParse {
  std::vector<RawRecord> records;
  int channels = 0;
  std::vector<std::string> declared_vocab;  // .ts @classLabel order; else empty
  std::string problem_name;
};

RawParse parse_ucr_tsv_raw(const std::string& path);
RawParse parse_ts_raw(const std::string& path);

// Single-file parses build their own label vocabulary: sorted original
// values for TSV, declared header order for .ts.
TimeSeriesDataset parse_ucr_tsv(const std::string& path);
TimeSeriesDataset parse_ts_file(const std::string& path);

// Loads <dir>/<Name>_TRAIN.tsv|.ts and the matching _TEST file, where Name
// is the directory's basename. The label vocabulary is built from the train
// split and must cover the test split; T is the max length over both.
std::pair<TimeSeriesDataset, TimeSeriesDataset> load_dataset_dir(
    const std::string& dir);

struct PaddedBatch {
  Tensor samples;            // [N,C,T]
  std::vector<int> lengths;  // original per-record lengths
};

// Linear interpolation for interior NaN, nearest-valid fill at the edges,
// zero padding up to target_T.
PaddedBatch impute_and_pad(const std::vector<RawRecord>& records,
                           int target_T);

// Per sample, per channel over the valid (unpadded) steps: subtract mean,
// divide by population std; channels with std < 1e-8 become zeros.
TimeSeriesDataset znormalize(const TimeSeriesDataset& d);

// Per channel over valid steps: max, min, population variance, mean.
Tensor handcrafted_features(const TimeSeriesDataset& d);  // [N, 4C]
Tensor raw_features(const TimeSeriesDataset& d);          // [N, C*T]

}  // namespace mixcl
