#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mixcl/common.hpp"
#include "mixcl/data.hpp"
#include "mixcl/eval.hpp"
#include "mixcl/models.hpp"
#include "mixcl/pipeline.hpp"

namespace {

using namespace mixcl;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_train(const TrainConfig& cfg, const std::string& dataset_dir,
              const std::string& out_path) {
  auto [train_raw, test_raw] = load_dataset_dir(dataset_dir);
  (void)test_raw;
  const TimeSeriesDataset train = znormalize(train_raw);
  NamedTensors weights;
  std::vector<double> history;
  if (cfg.method == "ae") {
    AeResult res = train_ae(cfg, train);
    weights = res.encoder.state();
    for (auto& p : res.decoder.state()) weights.push_back(std::move(p));
    history = std::move(res.loss_history);
  } else {
    SslResult res = train_ssl(cfg, train);
    weights = res.encoder.state();
    for (auto& p : res.head.state()) weights.push_back(std::move(p));
    history = std::move(res.loss_history);
  }
  save_weights(weights, out_path);
  std::cout << "trained " << cfg.method << " on " << train.name << " ("
            << train.size() << " samples, " << history.size()
            << " epochs): loss " << fmt_g17(history.front()) << " -> "
            << fmt_g17(history.back()) << "\nweights written to " << out_path
            << "\n";
  return 0;
}

int cmd_features(const std::string& method, const std::string& dataset_dir,
                 const std::string& split, const std::string& weights,
                 const std::string& out_path) {
  auto [train, test] = load_dataset_dir(dataset_dir);
  TimeSeriesDataset d = (split == "train") ? std::move(train) : std::move(test);
  // Learned features expect the same normalization used in training; the
  // deterministic baselines run on the data as shipped.
  if (method == "encoder") d = znormalize(d);
  const Tensor feats = extract_features(method, d, weights);
  write_features_csv(out_path, feats, d.labels);
  std::cout << "wrote " << feats.dim(0) << " x " << feats.dim(1)
            << " features to " << out_path << "\n";
  return 0;
}

int cmd_eval_1nn(const std::string& train_csv, const std::string& test_csv,
                 const std::string& out_path) {
  auto [train_feats, train_labels] = read_features_csv(train_csv);
  auto [test_feats, test_labels] = read_features_csv(test_csv);
  const std::vector<int> pred =
      one_nn_classify(train_feats, train_labels, test_feats);
  const double acc = accuracy(pred, test_labels);
  std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + out_path + " for writing");
  f << "{\n  \"accuracy\": " << fmt_g17(acc)
    << ",\n  \"num_train\": " << train_feats.dim(0)
    << ",\n  \"num_test\": " << test_feats.dim(0) << "\n}\n";
  if (!f) throw DataError("failed writing " + out_path);
  std::cout << "1NN accuracy " << fmt_g17(acc) << " (written to " << out_path
            << ")\n";
  return 0;
}

int cmd_transfer(const TransferConfig& cfg, const std::string& out_path) {
  const TransferResult res = transfer_finetune(cfg);
  write_transfer_json(res, out_path);
  std::cout << "transfer (" << res.init << ", " << res.runs.size()
            << " runs): final accuracy " << fmt_g17(res.mean_final) << " +- "
            << fmt_g17(res.std_final) << "\nreport written to " << out_path
            << "\n";
  return 0;
}

int cmd_benchmark(const BenchmarkConfig& cfg, const std::string& out_path,
                  const std::string& format) {
  const EvalReport rep = benchmark_run(cfg);
  emit_report(rep, format, out_path);
  std::cout << "benchmark: " << rep.rows.size() << " rows over "
            << rep.datasets.size() << " datasets x " << rep.methods.size()
            << " methods";
  if (!rep.errors.empty())
    std::cout << " (" << rep.errors.size() << " job failures recorded)";
  std::cout << "\nreport written to " << out_path << "\n";
  for (const std::string& e : rep.errors) std::cerr << "error: " << e << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixup contrastive representation learning for time series"};
  app.require_subcommand(1);

  // train
  TrainConfig tc;
  std::string train_dataset, train_out;
  CLI::App* train = app.add_subcommand("train", "self-supervised pretraining");
  train->add_option("--method", tc.method, "mcl | cl-gauss | cl-drop | ae")
      ->check(CLI::IsMember({"mcl", "cl-gauss", "cl-drop", "ae"}));
  train->add_option("--dataset", train_dataset, "dataset directory")
      ->required();
  train->add_option("--epochs", tc.epochs,
                    "training epochs (default 1000, ae 250)");
  train->add_option("--batch-size", tc.batch_size, "batch size (clamped to N)");
  train->add_option("--alpha", tc.alpha, "mixup Beta(alpha, alpha) parameter");
  train->add_option("--tau", tc.tau, "softmax temperature");
  train->add_option("--lr", tc.lr, "Adam learning rate");
  train->add_option("--seed", tc.seed, "master seed");
  train->add_option("--out", train_out, "output weights path")->required();

  // features
  std::string feat_method = "hc", feat_dataset, feat_split = "train",
              feat_weights, feat_out;
  CLI::App* features = app.add_subcommand("features", "feature extraction");
  features->add_option("--method", feat_method, "hc | ed | encoder")
      ->check(CLI::IsMember({"hc", "ed", "encoder"}));
  features->add_option("--weights", feat_weights,
                       "encoder weights (required for --method encoder)");
  features->add_option("--dataset", feat_dataset, "dataset directory")
      ->required();
  features->add_option("--split", feat_split, "which split to featurize")
      ->check(CLI::IsMember({"train", "test"}));
  features->add_option("--out", feat_out, "output CSV path")->required();

  // eval-1nn
  std::string enn_train, enn_test, enn_out;
  CLI::App* eval1nn =
      app.add_subcommand("eval-1nn", "1-nearest-neighbor evaluation");
  eval1nn->add_option("--train-feats", enn_train, "training feature CSV")
      ->required();
  eval1nn->add_option("--test-feats", enn_test, "test feature CSV")
      ->required();
  eval1nn->add_option("--out", enn_out, "output JSON path")->required();

  // transfer
  TransferConfig xc;
  std::string xfer_out;
  CLI::App* transfer =
      app.add_subcommand("transfer", "pretrain + supervised fine-tuning");
  transfer->add_option("--pretext", xc.pretext_dir,
                       "pretext dataset directory, or 'none'");
  transfer->add_option("--target", xc.target_dir, "target dataset directory")
      ->required();
  transfer->add_option("--init", xc.init, "random | pretrained")
      ->check(CLI::IsMember({"random", "pretrained"}));
  transfer->add_option("--weights", xc.weights_path,
                       "pretrained encoder weights (skips pretext training)");
  transfer->add_option("--epochs", xc.epochs, "fine-tuning epochs");
  transfer->add_option("--runs", xc.num_runs, "fine-tuning runs");
  transfer->add_option("--seed", xc.seed, "master seed");
  transfer->add_option("--pretext-epochs", xc.pretext.epochs,
                       "pretext training epochs (default 1000)");
  transfer->add_option("--out", xfer_out, "output JSON path")->required();

  // benchmark
  BenchmarkConfig bc;
  std::string bench_datasets = "all", bench_methods = "hc,ed", bench_out,
              bench_format = "csv";
  CLI::App* benchmark =
      app.add_subcommand("benchmark", "multi-dataset evaluation");
  benchmark->add_option("--archive", bc.archive_root, "archive root directory")
      ->required();
  benchmark->add_option("--datasets", bench_datasets,
                        "comma list of dataset names, or 'all'");
  benchmark->add_option("--methods", bench_methods,
                        "comma list of hc,ed,mcl,cl-gauss,cl-drop,ae");
  benchmark->add_option("--runs", bc.train.num_runs,
                        "seeds per learned method");
  benchmark->add_option("--out", bench_out, "output report path")->required();
  benchmark->add_option("--format", bench_format, "csv | json")
      ->check(CLI::IsMember({"csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) return cmd_train(tc, train_dataset, train_out);
    if (features->parsed())
      return cmd_features(feat_method, feat_dataset, feat_split, feat_weights,
                          feat_out);
    if (eval1nn->parsed()) return cmd_eval_1nn(enn_train, enn_test, enn_out);
    if (transfer->parsed()) {
      xc.pretext.seed = xc.seed;
      return cmd_transfer(xc, xfer_out);
    }
    if (benchmark->parsed()) {
      bc.methods = split_list(bench_methods);
      bc.datasets = bench_datasets == "all"
                        ? list_archive_datasets(bc.archive_root)
                        : split_list(bench_datasets);
      return cmd_benchmark(bc, bench_out, bench_format);
    }
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
