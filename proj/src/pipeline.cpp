#include "mixcl/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "mixcl/augment.hpp"
#include "mixcl/common.hpp"
#include "mixcl/losses.hpp"
#include "mixcl/optimizer.hpp"
#include "mixcl/rng.hpp"

namespace mixcl {

namespace {

std::vector<int> take(const std::vector<int>& perm, int start, int len) {
  return std::vector<int>(perm.begin() + start, perm.begin() + start + len);
}

NamedTensors concat(NamedTensors a, NamedTensors b) {
  for (auto& p : b) a.push_back(std::move(p));
  return a;
}

void require_finite_loss(double v, const char* what, int epoch, int batch) {
  if (!std::isfinite(v))
    throw NumericError(std::string(what) + " loss is " + fmt_g17(v) +
                       " at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch));
}

void validate_common(const TrainConfig& c, const TimeSeriesDataset& train) {
  if (train.size() < 2)
    throw std::invalid_argument("train: need at least 2 samples, got " +
                                std::to_string(train.size()));
  if (c.batch_size < 1)
    throw std::invalid_argument("train: batch size must be >= 1");
  if (c.resolved_epochs() < 1)
    throw std::invalid_argument("train: epochs must be >= 1");
  if (c.lr <= 0.0) throw std::invalid_argument("train: lr must be positive");
  if (c.tau <= 0.0) throw std::invalid_argument("train: tau must be positive");
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double* row = logits.data() + static_cast<std::size_t>(i) * k;
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

double classify_accuracy(FcnEncoderParams& enc, ClassifierParams& cls,
                         const TimeSeriesDataset& test) {
  Tensor h = encoder_features(enc, test);
  Tape tape;
  Tensor logits = classify(tape, cls, h);
  return accuracy(argmax_rows(logits), test.labels);
}

}  // namespace

SslResult train_ssl(const TrainConfig& config,
                    const TimeSeriesDataset& train) {
  const bool is_mcl = config.method == "mcl";
  const bool is_gauss = config.method == "cl-gauss";
  const bool is_drop = config.method == "cl-drop";
  if (!is_mcl && !is_gauss && !is_drop)
    throw std::invalid_argument("train_ssl: method '" + config.method +
                                "' (expected mcl, cl-gauss or cl-drop)");
  validate_common(config, train);
  if (is_mcl && config.alpha <= 0.0)
    throw std::invalid_argument("train_ssl: alpha must be positive");
  const int n = train.size();
  const int batch = std::min(config.batch_size, n);
  if (batch < 2)
    throw std::invalid_argument(
        "train_ssl: effective batch size 1; contrastive losses need pairs");

  SslResult result(train.channels());
  Rng winit = Rng::substream(config.seed, stream::kWeightInit);
  he_normal_init(winit, result.encoder);
  he_normal_init(winit, result.head);
  Rng shuffle = Rng::substream(config.seed, stream::kDataShuffle);
  Rng lambda_rng = Rng::substream(config.seed, stream::kLambda);
  Rng noise_rng = Rng::substream(config.seed, stream::kNoise);

  AdamState adam(concat(result.encoder.trainable(), result.head.trainable()),
                 config.lr);
  bool warned = false;
  const int epochs = config.resolved_epochs();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<int> perm1 = shuffle.permutation(n);
    const std::vector<int> perm2 = shuffle.permutation(n);
    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += batch) {
      const int b = std::min(batch, n - start);
      if (b < 2) {
        if (!warned) {
          std::cerr << "warning: skipping batch of size 1 (contrastive loss "
                       "needs at least 2 samples)\n";
          warned = true;
        }
        continue;
      }
      Tape tape;
      Tensor loss;
      if (is_mcl) {
        const std::vector<int> idx1 = take(perm1, start, b);
        const std::vector<int> idx2 = take(perm2, start, b);
        if (config.per_sample_lambda) {
          MixupBatchPerSample mb = make_mixup_batch_per_sample(
              train, idx1, idx2, lambda_rng, config.alpha);
          Tensor z1 = project(tape, result.head,
                              fcn_encode(tape, result.encoder, mb.view1,
                                         Mode::Train));
          Tensor z2 = project(tape, result.head,
                              fcn_encode(tape, result.encoder, mb.view2,
                                         Mode::Train));
          Tensor zt = project(tape, result.head,
                              fcn_encode(tape, result.encoder, mb.mixed,
                                         Mode::Train));
          loss = mnt_xent(tape, z1, z2, zt, mb.lambdas, config.tau);
        } else {
          MixupBatch mb =
              make_mixup_batch(train, idx1, idx2, lambda_rng, config.alpha);
          ContrastiveBatchEmbeddings emb;
          emb.z1 = project(tape, result.head,
                           fcn_encode(tape, result.encoder, mb.view1,
                                      Mode::Train));
          emb.z2 = project(tape, result.head,
                           fcn_encode(tape, result.encoder, mb.view2,
                                      Mode::Train));
          emb.z_tilde = project(tape, result.head,
                                fcn_encode(tape, result.encoder, mb.mixed,
                                           Mode::Train));
          emb.lambda = mb.lambda;
          emb.tau = config.tau;
          loss = mnt_xent(tape, emb);
        }
      } else {
        const Tensor x = gather_samples(train, take(perm1, start, b));
        Tensor v1, v2;
        if (is_gauss) {
          v1 = gaussian_noise_aug(x, noise_rng, config.noise);
          v2 = gaussian_noise_aug(x, noise_rng, config.noise);
        } else {
          v1 = dropout_noise_aug(x, noise_rng, config.noise);
          v2 = dropout_noise_aug(x, noise_rng, config.noise);
        }
        Tensor za = project(tape, result.head,
                            fcn_encode(tape, result.encoder, v1, Mode::Train));
        Tensor zb = project(tape, result.head,
                            fcn_encode(tape, result.encoder, v2, Mode::Train));
        loss = nt_xent(tape, za, zb, config.tau);
      }
      require_finite_loss(loss.value(), "contrastive", epoch, batches);
      tape.backward(loss);
      adam_step(adam);
      loss_sum += loss.value();
      ++batches;
    }
    result.loss_history.push_back(loss_sum / batches);
  }
  return result;
}

AeResult train_ae(const TrainConfig& config, const TimeSeriesDataset& train) {
  if (config.method != "ae")
    throw std::invalid_argument("train_ae: method '" + config.method +
                                "' (expected ae)");
  validate_common(config, train);
  const int n = train.size();
  const int batch = std::min(config.batch_size, n);

  AeResult result(train.channels(), train.length());
  Rng winit = Rng::substream(config.seed, stream::kWeightInit);
  he_normal_init(winit, result.encoder);
  he_normal_init(winit, result.decoder);
  Rng shuffle = Rng::substream(config.seed, stream::kDataShuffle);

  AdamState adam(
      concat(result.encoder.trainable(), result.decoder.trainable()),
      config.lr);
  const int epochs = config.resolved_epochs();
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<int> perm = shuffle.permutation(n);
    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += batch) {
      const int b = std::min(batch, n - start);
      Tape tape;
      const Tensor x = gather_samples(train, take(perm, start, b));
      Tensor h = fcn_encode(tape, result.encoder, x, Mode::Train);
      Tensor x_hat = decode(tape, result.decoder, h);
      Tensor loss = mse_reconstruction(tape, x_hat, x);
      require_finite_loss(loss.value(), "reconstruction", epoch, batches);
      tape.backward(loss);
      adam_step(adam);
      loss_sum += loss.value();
      ++batches;
    }
    result.loss_history.push_back(loss_sum / batches);
  }
  return result;
}

Tensor encoder_features(FcnEncoderParams& enc, const TimeSeriesDataset& d) {
  constexpr int kChunk = 256;  // bounds conv activation memory
  const int n = d.size();
  Tensor out = Tensor::zeros({n, 128});
  for (int start = 0; start < n; start += kChunk) {
    const int b = std::min(kChunk, n - start);
    std::vector<int> idx(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    Tape tape;
    const Tensor x = gather_samples(d, idx);
    Tensor h = fcn_encode(tape, enc, x, Mode::Eval);
    std::memcpy(out.data() + static_cast<std::size_t>(start) * 128, h.data(),
                static_cast<std::size_t>(b) * 128 * sizeof(double));
  }
  return out;
}

Tensor extract_features(const std::string& method, const TimeSeriesDataset& d,
                        const std::string& weights_path) {
  if (method == "hc") return handcrafted_features(d);
  if (method == "ed") return raw_features(d);
  if (method == "encoder") {
    if (weights_path.empty())
      throw std::invalid_argument(
          "extract_features: encoder method requires a weights file");
    const NamedTensors file = load_weights(weights_path);
    FcnEncoderParams enc(d.channels());
    enc.load_state(file);
    return encoder_features(enc, d);
  }
  throw std::invalid_argument("extract_features: unknown method '" + method +
                              "' (expected hc, ed or encoder)");
}

TransferResult transfer_finetune(const TransferConfig& config) {
  if (config.init != "random" && config.init != "pretrained")
    throw std::invalid_argument("transfer: init '" + config.init +
                                "' (expected random or pretrained)");
  if (config.epochs < 1)
    throw std::invalid_argument("transfer: epochs must be >= 1");
  if (config.num_runs < 1)
    throw std::invalid_argument("transfer: runs must be >= 1");

  auto [target_train_raw, target_test_raw] = load_dataset_dir(config.target_dir);
  const TimeSeriesDataset target_train = znormalize(target_train_raw);
  const TimeSeriesDataset target_test = znormalize(target_test_raw);
  const int channels = target_train.channels();
  const int num_classes = target_train.num_classes();
  if (num_classes < 2)
    throw std::invalid_argument("transfer: target dataset has " +
                                std::to_string(num_classes) +
                                " classes; need at least 2");

  // Pretrained weights come from a file or from one pretext training run
  // shared by all fine-tuning runs (runs differ in head init and batching).
  NamedTensors pre_weights;
  bool have_pre = false;
  if (config.init == "pretrained") {
    if (!config.weights_path.empty()) {
      pre_weights = load_weights(config.weights_path);
    } else if (!config.pretext_dir.empty() && config.pretext_dir != "none") {
      auto [pre_train_raw, pre_test] = load_dataset_dir(config.pretext_dir);
      (void)pre_test;
      const TimeSeriesDataset pre_train = znormalize(pre_train_raw);
      TrainConfig pc = config.pretext;
      if (pc.method == "ae") {
        pre_weights = train_ae(pc, pre_train).encoder.state();
      } else {
        pre_weights = train_ssl(pc, pre_train).encoder.state();
      }
    } else {
      throw std::invalid_argument(
          "transfer: pretrained init needs a weights file or a pretext "
          "dataset");
    }
    have_pre = true;
    for (const auto& [name, t] : pre_weights) {
      if (name == "enc.conv1.w" && t.dim(1) != channels)
        throw DataError("transfer: encoder expects " + std::to_string(t.dim(1)) +
                        " input channels, target dataset has " +
                        std::to_string(channels));
      if (name == "cls.fc.w" && t.dim(1) != num_classes)
        throw DataError("transfer: weight file classifier has " +
                        std::to_string(t.dim(1)) +
                        " classes, target dataset has " +
                        std::to_string(num_classes));
    }
  }

  TransferResult result;
  result.init = config.init;
  const int n = target_train.size();
  const int batch = std::min(64, n);
  std::vector<double> finals;
  for (int r = 0; r < config.num_runs; ++r) {
    const std::uint64_t run_seed =
        Rng::substream(config.seed, stream::kRun, static_cast<std::uint64_t>(r))
            .next_u64();
    Rng winit = Rng::substream(run_seed, stream::kWeightInit);
    Rng shuffle = Rng::substream(run_seed, stream::kDataShuffle);

    FcnEncoderParams enc(channels);
    if (have_pre)
      enc.load_state(pre_weights);
    else
      he_normal_init(winit, enc);
    ClassifierParams cls(num_classes);
    he_normal_init(winit, cls);

    TransferRun run;
    run.seed = run_seed;
    if (have_pre) {
      // BN statistics exist, so the untrained head can be evaluated.
      run.curve.push_back(classify_accuracy(enc, cls, target_test));
      run.has_epoch0 = true;
    }
    AdamState adam(concat(enc.trainable(), cls.trainable()), 1e-3);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      const std::vector<int> perm = shuffle.permutation(n);
      for (int start = 0; start < n; start += batch) {
        const int b = std::min(batch, n - start);
        const std::vector<int> idx = take(perm, start, b);
        std::vector<int> labels(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i)
          labels[static_cast<std::size_t>(i)] =
              target_train.labels[static_cast<std::size_t>(
                  idx[static_cast<std::size_t>(i)])];
        Tape tape;
        const Tensor x = gather_samples(target_train, idx);
        Tensor h = fcn_encode(tape, enc, x, Mode::Train);
        Tensor logits = classify(tape, cls, h);
        Tensor loss = softmax_cross_entropy(tape, logits, labels);
        require_finite_loss(loss.value(), "fine-tune", epoch, start / batch);
        tape.backward(loss);
        adam_step(adam);
      }
      run.curve.push_back(classify_accuracy(enc, cls, target_test));
    }
    run.final_accuracy = run.curve.back();
    finals.push_back(run.final_accuracy);
    result.runs.push_back(std::move(run));
  }
  result.mean_final = mean_of(finals);
  result.std_final = sample_std(finals);
  return result;
}

void write_transfer_json(const TransferResult& res, const std::string& path) {
  std::ostringstream out;
  out << "{\n  \"init\": \"" << res.init << "\",\n  \"num_runs\": "
      << res.runs.size() << ",\n  \"mean_final\": " << fmt_g17(res.mean_final)
      << ",\n  \"std_final\": " << fmt_g17(res.std_final)
      << ",\n  \"runs\": [";
  for (std::size_t r = 0; r < res.runs.size(); ++r) {
    const TransferRun& run = res.runs[r];
    out << (r ? ",\n    " : "\n    ") << "{\"seed\": " << run.seed
        << ", \"has_epoch0\": " << (run.has_epoch0 ? "true" : "false")
        << ", \"final_accuracy\": " << fmt_g17(run.final_accuracy)
        << ", \"curve\": [";
    for (std::size_t i = 0; i < run.curve.size(); ++i)
      out << (i ? ", " : "") << fmt_g17(run.curve[i]);
    out << "]}";
  }
  out << (res.runs.empty() ? "]" : "\n  ]") << "\n}\n";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  const std::string s = out.str();
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw DataError("failed writing " + path);
}

std::vector<std::string> list_archive_datasets(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw DataError("archive root " + root + " is not a directory");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (fs::exists(entry.path() / (name + "_TRAIN.tsv")) ||
        fs::exists(entry.path() / (name + "_TRAIN.ts")))
      names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  return names;
}

EvalReport benchmark_run(const BenchmarkConfig& config) {
  if (config.datasets.empty())
    throw std::invalid_argument("benchmark: no datasets given");
  if (config.methods.empty())
    throw std::invalid_argument("benchmark: no methods given");
  for (const std::string& m : config.methods)
    if (m != "hc" && m != "ed" && m != "mcl" && m != "cl-gauss" &&
        m != "cl-drop" && m != "ae")
      throw std::invalid_argument("benchmark: unknown method '" + m + "'");

  std::vector<EvalRow> rows;
  std::vector<std::string> errors;
  for (const std::string& ds : config.datasets) {
    TimeSeriesDataset train, test;
    try {
      std::tie(train, test) =
          load_dataset_dir(config.archive_root + "/" + ds);
    } catch (const std::exception& e) {
      errors.push_back(ds + ": " + e.what());
      continue;
    }
    for (const std::string& m : config.methods) {
      try {
        if (m == "hc" || m == "ed") {
          // Deterministic methods run once on the data as shipped.
          const Tensor ftr = extract_features(m, train);
          const Tensor fte = extract_features(m, test);
          const double acc =
              accuracy(one_nn_classify(ftr, train.labels, fte), test.labels);
          rows.push_back({ds, m, 0, acc});
          continue;
        }
        const TimeSeriesDataset ntr = znormalize(train);
        const TimeSeriesDataset nte = znormalize(test);
        for (int r = 0; r < config.train.num_runs; ++r) {
          const std::uint64_t seed =
              Rng::substream(config.train.seed, stream::kJob,
                             fnv1a64(ds + "/" + m) +
                                 static_cast<std::uint64_t>(r))
                  .next_u64();
          TrainConfig tc = config.train;
          tc.method = m;
          tc.seed = seed;
          Tensor ftr, fte;
          if (m == "ae") {
            AeResult res = train_ae(tc, ntr);
            ftr = encoder_features(res.encoder, ntr);
            fte = encoder_features(res.encoder, nte);
          } else {
            SslResult res = train_ssl(tc, ntr);
            ftr = encoder_features(res.encoder, ntr);
            fte = encoder_features(res.encoder, nte);
          }
          const double acc =
              accuracy(one_nn_classify(ftr, ntr.labels, fte), nte.labels);
          rows.push_back({ds, m, seed, acc});
        }
      } catch (const std::exception& e) {
        errors.push_back(ds + "/" + m + ": " + e.what());
      }
    }
  }
  return make_report(std::move(rows), std::move(errors));
}

void write_features_csv(const std::string& path, const Tensor& feats,
                        const std::vector<int>& labels) {
  if (feats.ndim() != 2)
    throw std::invalid_argument("write_features_csv: features must be 2-d");
  const int n = feats.dim(0), d = feats.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("write_features_csv: " +
                                std::to_string(labels.size()) +
                                " labels for " + std::to_string(n) + " rows");
  std::ostringstream out;
  out << "label";
  for (int j = 0; j < d; ++j) out << ",f" << j;
  out << '\n';
  for (int i = 0; i < n; ++i) {
    out << labels[static_cast<std::size_t>(i)];
    const double* row = feats.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) out << ',' << fmt_g17(row[j]);
    out << '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  const std::string s = out.str();
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw DataError("failed writing " + path);
}

std::pair<Tensor, std::vector<int>> read_features_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw DataError(path + ": empty feature file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  int d = -1;
  {
    int commas = 0;
    for (char c : line)
      if (c == ',') ++commas;
    d = commas;
    if (line.rfind("label", 0) != 0)
      throw DataError(path + ": expected header starting with 'label'");
  }
  std::vector<double> values;
  std::vector<int> labels;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const char* p = line.data();
    const char* end = p + line.size();
    int label = 0;
    auto [lp, lec] = std::from_chars(p, end, label);
    if (lec != std::errc() || lp == end || *lp != ',')
      throw DataError(path + ":" + std::to_string(lineno) + ": bad label");
    p = lp + 1;
    int got = 0;
    while (true) {
      double v = 0.0;
      auto [vp, vec] = std::from_chars(p, end, v);
      if (vec != std::errc())
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": bad feature value");
      values.push_back(v);
      ++got;
      if (vp == end) break;
      if (*vp != ',')
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": expected ',' after value");
      p = vp + 1;
    }
    if (got != d)
      throw DataError(path + ":" + std::to_string(lineno) + ": row has " +
                      std::to_string(got) + " features, header declares " +
                      std::to_string(d));
    labels.push_back(label);
  }
  if (labels.empty()) throw DataError(path + ": no feature rows");
  const int n = static_cast<int>(labels.size());
  return {Tensor::from_values({n, d}, values), labels};
}

}  // namespace mixcl
