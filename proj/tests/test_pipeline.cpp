#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mixcl/common.hpp"
#include "mixcl/data.hpp"
#include "mixcl/models.hpp"
#include "mixcl/pipeline.hpp"
#include "mixcl/rng.hpp"

using namespace mixcl;
namespace fs = std::filesystem;

namespace {

struct TmpDir {
  fs::path path;
  TmpDir() {
    path = fs::temp_directory_path() /
           ("mixcl_pipe_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TmpDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string file(const std::string& name, const std::string& content) const {
    const fs::path p = path / name;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p.string();
  }
};

// Two-class sine/ramp toy set, already normalized for training entry points.
TimeSeriesDataset toy_dataset(int n, int t, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(n) * t);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = i % 2;
    for (int s = 0; s < t; ++s) {
      const double base = (i % 2 == 0)
                              ? std::sin(0.7 * s + 0.3 * i)
                              : 0.2 * s - 1.0;
      v[static_cast<std::size_t>(i) * t + s] = base + 0.05 * rng.normal();
    }
  }
  TimeSeriesDataset d;
  d.name = "toy";
  d.samples = Tensor::from_values({n, 1, t}, std::move(v));
  d.labels = std::move(labels);
  d.label_names = {"0", "1"};
  d.length_mask.assign(static_cast<std::size_t>(n), t);
  return znormalize(d);
}

std::string toy_tsv(int n, int t, std::uint64_t seed) {
  const TimeSeriesDataset d = toy_dataset(n, t, seed);
  std::ostringstream out;
  for (int i = 0; i < n; ++i) {
    out << d.labels[static_cast<std::size_t>(i)] + 1;
    for (int s = 0; s < t; ++s) out << '\t' << d.samples.at({i, 0, s});
    out << '\n';
  }
  return out.str();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

bool same_state(const NamedTensors& a, const NamedTensors& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) return false;
    if (a[i].second.values() != b[i].second.values()) return false;
  }
  return true;
}

TrainConfig tiny_config(const std::string& method, int epochs) {
  TrainConfig c;
  c.method = method;
  c.epochs = epochs;
  c.batch_size = 8;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("train_ssl reduces the contrastive loss on toy data") {
  const TimeSeriesDataset train = toy_dataset(6, 12);
  TrainConfig c = tiny_config("mcl", 20);
  c.lr = 2e-3;
  SslResult res = train_ssl(c, train);
  REQUIRE(res.loss_history.size() == 20);
  for (double l : res.loss_history) CHECK(std::isfinite(l));
  CHECK(res.loss_history.back() < res.loss_history.front());
}

TEST_CASE("train_ssl is bit-deterministic in the seed") {
  const TimeSeriesDataset train = toy_dataset(4, 8);
  const TrainConfig c = tiny_config("mcl", 2);
  SslResult a = train_ssl(c, train);
  SslResult b = train_ssl(c, train);
  CHECK(a.loss_history == b.loss_history);
  CHECK(same_state(a.encoder.state(), b.encoder.state()));
  CHECK(same_state(a.head.state(), b.head.state()));

  TrainConfig other = c;
  other.seed = 8;
  SslResult o = train_ssl(other, train);
  CHECK(a.loss_history != o.loss_history);
}

TEST_CASE("train_ssl per-sample lambda and the two CL baselines run") {
  const TimeSeriesDataset train = toy_dataset(4, 8);

  TrainConfig ps = tiny_config("mcl", 2);
  ps.per_sample_lambda = true;
  SslResult a = train_ssl(ps, train);
  REQUIRE(a.loss_history.size() == 2);
  CHECK(std::isfinite(a.loss_history.back()));

  for (const char* m : {"cl-gauss", "cl-drop"}) {
    SslResult r = train_ssl(tiny_config(m, 2), train);
    REQUIRE(r.loss_history.size() == 2);
    CHECK(std::isfinite(r.loss_history.back()));
  }
}

TEST_CASE("train_ssl validation") {
  const TimeSeriesDataset train = toy_dataset(4, 8);
  CHECK_THROWS_AS(train_ssl(tiny_config("bogus", 2), train),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_ssl(tiny_config("ae", 2), train),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_ssl(tiny_config("mcl", 0), train),
                  std::invalid_argument);

  TrainConfig bad_lr = tiny_config("mcl", 2);
  bad_lr.lr = 0.0;
  CHECK_THROWS_AS(train_ssl(bad_lr, train), std::invalid_argument);

  TrainConfig bad_tau = tiny_config("mcl", 2);
  bad_tau.tau = 0.0;
  CHECK_THROWS_AS(train_ssl(bad_tau, train), std::invalid_argument);

  TrainConfig bad_alpha = tiny_config("mcl", 2);
  bad_alpha.alpha = -1.0;
  CHECK_THROWS_AS(train_ssl(bad_alpha, train), std::invalid_argument);

  TrainConfig b1 = tiny_config("mcl", 2);
  b1.batch_size = 1;
  CHECK_THROWS_AS(train_ssl(b1, train), std::invalid_argument);

  CHECK_THROWS_AS(train_ssl(tiny_config("mcl", 2), toy_dataset(1, 8)),
                  std::invalid_argument);
}

TEST_CASE("train_ssl skips a trailing batch of one with a single warning") {
  const TimeSeriesDataset train = toy_dataset(5, 8);
  TrainConfig c = tiny_config("mcl", 3);
  c.batch_size = 2;  // 2 + 2 + 1 per epoch
  std::ostringstream captured;
  std::streambuf* old = std::cerr.rdbuf(captured.rdbuf());
  SslResult res = train_ssl(c, train);
  std::cerr.rdbuf(old);
  REQUIRE(res.loss_history.size() == 3);
  for (double l : res.loss_history) CHECK(std::isfinite(l));
  const std::string text = captured.str();
  const std::size_t first = text.find("skipping batch of size 1");
  REQUIRE(first != std::string::npos);
  CHECK(text.find("skipping batch of size 1", first + 1) == std::string::npos);
}

TEST_CASE("train_ae reduces reconstruction error and validates input") {
  const TimeSeriesDataset train = toy_dataset(6, 12);
  TrainConfig c = tiny_config("ae", 12);
  c.lr = 2e-3;
  AeResult res = train_ae(c, train);
  REQUIRE(res.loss_history.size() == 12);
  CHECK(res.loss_history.back() < res.loss_history.front());

  CHECK_THROWS_AS(train_ae(tiny_config("mcl", 2), train),
                  std::invalid_argument);

  // Same-seed determinism for the autoencoder path too.
  TrainConfig c2 = tiny_config("ae", 2);
  CHECK(train_ae(c2, train).loss_history ==
        train_ae(c2, train).loss_history);
}

TEST_CASE("extract_features dispatch, shapes, and errors") {
  const TimeSeriesDataset d = toy_dataset(3, 10);

  Tensor hc = extract_features("hc", d);
  CHECK(hc.dim(0) == 3);
  CHECK(hc.dim(1) == 4);

  Tensor ed = extract_features("ed", d);
  CHECK(ed.dim(0) == 3);
  CHECK(ed.dim(1) == 10);

  TmpDir tmp;
  const std::string wpath = (tmp.path / "enc.bin").string();
  SslResult res = train_ssl(tiny_config("mcl", 1), toy_dataset(4, 10));
  save_weights(res.encoder.state(), wpath);
  Tensor enc = extract_features("encoder", d, wpath);
  CHECK(enc.dim(0) == 3);
  CHECK(enc.dim(1) == 128);

  CHECK_THROWS_AS(extract_features("encoder", d), std::invalid_argument);
  CHECK_THROWS_AS(extract_features("pca", d), std::invalid_argument);

  // Weight file trained on a different channel count.
  TimeSeriesDataset wide = d;
  wide.samples = Tensor::from_values({3, 2, 5}, d.samples.values());
  CHECK_THROWS_AS(extract_features("encoder", wide, wpath), DataError);
}

TEST_CASE("encoder_features equals a direct eval forward across chunks") {
  const int n = 300, t = 8;  // crosses the internal 256-row chunk boundary
  const TimeSeriesDataset d = toy_dataset(n, t);
  FcnEncoderParams enc(1);
  Rng winit = Rng::substream(3, stream::kWeightInit);
  he_normal_init(winit, enc);
  // Eval-mode batchnorm requires initialised running stats; the default
  // mean-0 / var-1 stats are fine for this identity check.
  enc.block1.bn.num_updates = 1;
  enc.block2.bn.num_updates = 1;
  enc.block3.bn.num_updates = 1;

  Tensor chunked = encoder_features(enc, d);
  REQUIRE(chunked.dim(0) == n);
  REQUIRE(chunked.dim(1) == 128);

  Tape tape;
  Tensor direct = fcn_encode(tape, enc, d.samples, Mode::Eval);
  REQUIRE(direct.dim(0) == n);
  for (std::size_t i = 0; i < chunked.values().size(); ++i)
    CHECK(chunked.values()[i] == direct.values()[i]);
}

TEST_CASE("feature CSV round-trips bitwise") {
  TmpDir tmp;
  Rng rng(5);
  std::vector<double> v(12);
  for (double& x : v) x = rng.normal() * 1e3;
  v[3] = 0.1;
  v[7] = -1.0 / 3.0;
  const Tensor feats = Tensor::from_values({3, 4}, v);
  const std::vector<int> labels{2, 0, 1};

  const std::string path = (tmp.path / "f.csv").string();
  write_features_csv(path, feats, labels);
  auto [back, lback] = read_features_csv(path);
  CHECK(lback == labels);
  REQUIRE(back.dim(0) == 3);
  REQUIRE(back.dim(1) == 4);
  CHECK(back.values() == feats.values());

  const std::string text = slurp(path);
  CHECK(text.rfind("label,f0,f1,f2,f3\n", 0) == 0);

  SUBCASE("validation") {
    CHECK_THROWS_AS(write_features_csv(path, Tensor::zeros({2, 2, 2}), labels),
                    std::invalid_argument);
    CHECK_THROWS_AS(write_features_csv(path, feats, {1, 2}),
                    std::invalid_argument);
    CHECK_THROWS_AS(read_features_csv((tmp.path / "absent.csv").string()),
                    DataError);

    const std::string bad1 = tmp.file("bad1.csv", "label,f0\nx,1\n");
    CHECK_THROWS_AS(read_features_csv(bad1), DataError);
    const std::string bad2 = tmp.file("bad2.csv", "label,f0,f1\n1,2\n");
    CHECK_THROWS_AS(read_features_csv(bad2), DataError);
    const std::string bad3 = tmp.file("bad3.csv", "nope\n");
    CHECK_THROWS_AS(read_features_csv(bad3), DataError);
    const std::string bad4 = tmp.file("bad4.csv", "label,f0\n");
    CHECK_THROWS_AS(read_features_csv(bad4), DataError);
  }
}

TEST_CASE("list_archive_datasets finds well-formed dataset directories") {
  TmpDir tmp;
  tmp.file("B/B_TRAIN.tsv", "1\t1\t2\n");
  tmp.file("B/B_TEST.tsv", "1\t1\t2\n");
  tmp.file("A/A_TRAIN.ts", "@classLabel true x\n@data\n1,2:x\n");
  tmp.file("Junk/readme.txt", "not a dataset\n");
  tmp.file("loose.tsv", "1\t1\n");
  const std::vector<std::string> names =
      list_archive_datasets(tmp.path.string());
  CHECK(names == std::vector<std::string>{"A", "B"});
  CHECK_THROWS_AS(list_archive_datasets((tmp.path / "missing").string()),
                  DataError);
}

TEST_CASE("benchmark_run over a toy archive") {
  TmpDir tmp;
  tmp.file("Toy/Toy_TRAIN.tsv", toy_tsv(6, 8, 11));
  tmp.file("Toy/Toy_TEST.tsv", toy_tsv(4, 8, 12));

  BenchmarkConfig bc;
  bc.archive_root = tmp.path.string();
  bc.datasets = {"Toy"};
  bc.methods = {"hc", "ed"};

  SUBCASE("deterministic methods produce one row each at seed 0") {
    EvalReport rep = benchmark_run(bc);
    CHECK(rep.errors.empty());
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].method == "hc");
    CHECK(rep.rows[1].method == "ed");
    CHECK(rep.rows[0].seed == 0);
    CHECK(rep.rows[1].seed == 0);
    CHECK(rep.datasets == std::vector<std::string>{"Toy"});
    REQUIRE(rep.average_rank.size() == 2);  // one complete dataset
    CHECK(rep.significance_p.empty());      // needs two
    for (const EvalRow& r : rep.rows) {
      CHECK(r.accuracy >= 0.0);
      CHECK(r.accuracy <= 1.0);
    }
  }

  SUBCASE("learned method: derived per-run seeds, reproducible rows") {
    bc.methods = {"mcl"};
    bc.train = tiny_config("mcl", 2);
    bc.train.num_runs = 2;
    EvalReport rep = benchmark_run(bc);
    CHECK(rep.errors.empty());
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].seed != 0);
    CHECK(rep.rows[0].seed != rep.rows[1].seed);

    EvalReport again = benchmark_run(bc);
    REQUIRE(again.rows.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(again.rows[i].seed == rep.rows[i].seed);
      CHECK(again.rows[i].accuracy == rep.rows[i].accuracy);
    }
  }

  SUBCASE("a missing dataset is recorded, not fatal") {
    bc.datasets = {"Nope", "Toy"};
    EvalReport rep = benchmark_run(bc);
    REQUIRE(rep.errors.size() == 1);
    CHECK(rep.errors[0].rfind("Nope:", 0) == 0);
    CHECK(rep.rows.size() == 2);  // Toy still ran
  }

  SUBCASE("validation") {
    BenchmarkConfig empty = bc;
    empty.datasets.clear();
    CHECK_THROWS_AS(benchmark_run(empty), std::invalid_argument);
    BenchmarkConfig nom = bc;
    nom.methods.clear();
    CHECK_THROWS_AS(benchmark_run(nom), std::invalid_argument);
    BenchmarkConfig unk = bc;
    unk.methods = {"svm"};
    CHECK_THROWS_AS(benchmark_run(unk), std::invalid_argument);
  }
}

TEST_CASE("transfer_finetune") {
  TmpDir tmp;
  tmp.file("Pre/Pre_TRAIN.tsv", toy_tsv(4, 8, 21));
  tmp.file("Pre/Pre_TEST.tsv", toy_tsv(2, 8, 22));
  tmp.file("Tgt/Tgt_TRAIN.tsv", toy_tsv(6, 8, 23));
  tmp.file("Tgt/Tgt_TEST.tsv", toy_tsv(4, 8, 24));

  TransferConfig xc;
  xc.pretext_dir = (tmp.path / "Pre").string();
  xc.target_dir = (tmp.path / "Tgt").string();
  xc.epochs = 2;
  xc.num_runs = 2;
  xc.seed = 5;
  xc.pretext = tiny_config("mcl", 2);

  SUBCASE("pretrained init records an epoch-0 point") {
    xc.init = "pretrained";
    TransferResult res = transfer_finetune(xc);
    CHECK(res.init == "pretrained");
    REQUIRE(res.runs.size() == 2);
    double sum = 0.0;
    for (const TransferRun& run : res.runs) {
      CHECK(run.has_epoch0);
      REQUIRE(run.curve.size() == 3);  // epoch 0 + 2 fine-tune epochs
      CHECK(run.final_accuracy == run.curve.back());
      sum += run.final_accuracy;
    }
    CHECK(res.mean_final == doctest::Approx(sum / 2).epsilon(1e-15));
    CHECK(res.runs[0].seed != res.runs[1].seed);

    const std::string jpath = (tmp.path / "transfer.json").string();
    write_transfer_json(res, jpath);
    const std::string text = slurp(jpath);
    CHECK(text.find("\"init\": \"pretrained\"") != std::string::npos);
    CHECK(text.find("\"has_epoch0\": true") != std::string::npos);
    CHECK(text.find("\"num_runs\": 2") != std::string::npos);
  }

  SUBCASE("random init starts the curve at epoch 1") {
    xc.init = "random";
    TransferResult res = transfer_finetune(xc);
    REQUIRE(res.runs.size() == 2);
    for (const TransferRun& run : res.runs) {
      CHECK_FALSE(run.has_epoch0);
      REQUIRE(run.curve.size() == 2);
    }
  }

  SUBCASE("weights file replaces the pretext stage") {
    SslResult pre = train_ssl(tiny_config("mcl", 1), toy_dataset(4, 8));
    const std::string wpath = (tmp.path / "pre.bin").string();
    save_weights(pre.encoder.state(), wpath);
    xc.init = "pretrained";
    xc.pretext_dir.clear();
    xc.weights_path = wpath;
    TransferResult res = transfer_finetune(xc);
    REQUIRE(res.runs.size() == 2);
    CHECK(res.runs[0].has_epoch0);
  }

  SUBCASE("validation") {
    TransferConfig bad = xc;
    bad.init = "warm";
    CHECK_THROWS_AS(transfer_finetune(bad), std::invalid_argument);
    bad = xc;
    bad.epochs = 0;
    CHECK_THROWS_AS(transfer_finetune(bad), std::invalid_argument);
    bad = xc;
    bad.init = "pretrained";
    bad.pretext_dir = "none";
    CHECK_THROWS_AS(transfer_finetune(bad), std::invalid_argument);
  }
}
