#include "mixcl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "mixcl/common.hpp"
#include "mixcl/kernels.hpp"

namespace mixcl {

std::vector<int> one_nn_classify(const Tensor& train_feats,
                                 const std::vector<int>& train_labels,
                                 const Tensor& test_feats) {
  if (train_feats.ndim() != 2 || test_feats.ndim() != 2)
    throw std::invalid_argument("one_nn_classify: features must be 2-d");
  if (train_feats.dim(1) != test_feats.dim(1))
    throw std::invalid_argument(
        "one_nn_classify: feature widths disagree, " +
        shape_str(train_feats.shape()) + " vs " +
        shape_str(test_feats.shape()));
  const int ntr = train_feats.dim(0), nte = test_feats.dim(0);
  const int d = train_feats.dim(1);
  if (ntr < 1)
    throw std::invalid_argument("one_nn_classify: empty training set");
  if (static_cast<int>(train_labels.size()) != ntr)
    throw std::invalid_argument("one_nn_classify: " +
                                std::to_string(train_labels.size()) +
                                " labels for " + std::to_string(ntr) +
                                " training rows");
  std::vector<double> dist(static_cast<std::size_t>(nte) * ntr);
  kernels::pairwise_sq_dists(test_feats.data(), train_feats.data(),
                             dist.data(), nte, ntr, d);
  std::vector<int> pred(static_cast<std::size_t>(nte));
  for (int i = 0; i < nte; ++i) {
    const double* row = dist.data() + static_cast<std::size_t>(i) * ntr;
    int best = 0;
    for (int j = 1; j < ntr; ++j)
      if (row[j] < row[best]) best = j;  // strict: ties keep the lowest index
    pred[static_cast<std::size_t>(i)] =
        train_labels[static_cast<std::size_t>(best)];
  }
  return pred;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("accuracy: " + std::to_string(pred.size()) +
                                " predictions vs " +
                                std::to_string(truth.size()) + " labels");
  if (pred.empty())
    throw std::invalid_argument("accuracy: empty label arrays");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<double> average_ranks(
    const std::vector<std::vector<double>>& accuracies) {
  const std::size_t D = accuracies.size();
  if (D < 1) throw std::invalid_argument("average_ranks: no datasets");
  const std::size_t M = accuracies[0].size();
  if (M < 2) throw std::invalid_argument("average_ranks: need >= 2 methods");
  std::vector<double> sums(M, 0.0);
  for (std::size_t di = 0; di < D; ++di) {
    const std::vector<double>& row = accuracies[di];
    if (row.size() != M)
      throw std::invalid_argument("average_ranks: ragged accuracy matrix");
    for (double v : row)
      if (!std::isfinite(v))
        throw std::invalid_argument(
            "average_ranks: non-finite accuracy in dataset row " +
            std::to_string(di));
    std::vector<std::size_t> order(M);
    for (std::size_t i = 0; i < M; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return row[a] < row[b];
    });
    // ascending positions 1..M: worst -> 1, best -> M; ties share the mean
    std::size_t i = 0;
    while (i < M) {
      std::size_t j = i;
      while (j + 1 < M && row[order[j + 1]] == row[order[i]]) ++j;
      const double shared = (static_cast<double>(i + 1) +
                             static_cast<double>(j + 1)) / 2.0;
      for (std::size_t k = i; k <= j; ++k) sums[order[k]] += shared;
      i = j + 1;
    }
  }
  for (double& s : sums) s /= static_cast<double>(D);
  return sums;
}

// ------------------------------------------------------------ t statistics --

namespace {

// Continued fraction for the regularized incomplete beta (Lentz's method).
double beta_cont_frac(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 1e-15, kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

double reg_inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0))
    return bt * beta_cont_frac(a, b, x) / a;
  return 1.0 - bt * beta_cont_frac(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_two_sided_p(double t, double df) {
  if (df <= 0.0)
    throw std::invalid_argument("student_t_two_sided_p: df must be positive");
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  double p = reg_inc_beta(df / 2.0, 0.5, x);
  return std::min(1.0, std::max(0.0, p));
}

TTestResult paired_t_test(const std::vector<double>& a,
                          const std::vector<double>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired_t_test: arrays of lengths " +
                                std::to_string(a.size()) + " and " +
                                std::to_string(b.size()));
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("paired_t_test: need n >= 2 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dev = (a[i] - b[i]) - mean;
    ss += dev * dev;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTestResult res;
  if (sd == 0.0) {
    if (mean == 0.0) return {0.0, 1.0};
    return {mean > 0 ? std::numeric_limits<double>::infinity()
                     : -std::numeric_limits<double>::infinity(),
            0.0};
  }
  res.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  res.p = student_t_two_sided_p(res.t, static_cast<double>(n - 1));
  return res;
}

// ------------------------------------------------------------------ report --

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt17(double v) { return fmt_g17(v); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::string json_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

int index_of(std::vector<std::string>& axis, const std::string& v) {
  for (std::size_t i = 0; i < axis.size(); ++i)
    if (axis[i] == v) return static_cast<int>(i);
  axis.push_back(v);
  return static_cast<int>(axis.size()) - 1;
}

}  // namespace

EvalReport make_report(std::vector<EvalRow> rows,
                       std::vector<std::string> errors) {
  EvalReport rep;
  rep.rows = std::move(rows);
  rep.errors = std::move(errors);
  for (const EvalRow& r : rep.rows) {
    index_of(rep.datasets, r.dataset);
    index_of(rep.methods, r.method);
  }
  const std::size_t D = rep.datasets.size(), M = rep.methods.size();
  std::vector<std::vector<double>> sum(D, std::vector<double>(M, 0.0));
  std::vector<std::vector<int>> cnt(D, std::vector<int>(M, 0));
  for (const EvalRow& r : rep.rows) {
    const int di = index_of(rep.datasets, r.dataset);
    const int mi = index_of(rep.methods, r.method);
    sum[di][mi] += r.accuracy;
    cnt[di][mi] += 1;
  }
  rep.mean_accuracy.assign(D, std::vector<double>(M, kNaN));
  for (std::size_t di = 0; di < D; ++di)
    for (std::size_t mi = 0; mi < M; ++mi)
      if (cnt[di][mi] > 0) rep.mean_accuracy[di][mi] = sum[di][mi] / cnt[di][mi];

  std::vector<std::vector<double>> complete;
  for (std::size_t di = 0; di < D; ++di) {
    bool full = true;
    for (std::size_t mi = 0; mi < M; ++mi)
      if (std::isnan(rep.mean_accuracy[di][mi])) full = false;
    if (full) complete.push_back(rep.mean_accuracy[di]);
  }
  if (M >= 2 && !complete.empty()) rep.average_rank = average_ranks(complete);
  if (M >= 2 && complete.size() >= 2) {
    rep.significance_p.assign(M, std::vector<double>(M, 1.0));
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < M; ++j) {
        std::vector<double> ai(complete.size()), bj(complete.size());
        for (std::size_t k = 0; k < complete.size(); ++k) {
          ai[k] = complete[k][i];
          bj[k] = complete[k][j];
        }
        rep.significance_p[i][j] = paired_t_test(ai, bj).p;
      }
  }
  return rep;
}

void emit_report(const EvalReport& rep, const std::string& format,
                 const std::string& path) {
  std::ostringstream out;
  if (format == "csv") {
    out << "dataset,method,seed,accuracy\n";
    for (const EvalRow& r : rep.rows)
      out << csv_field(r.dataset) << ',' << csv_field(r.method) << ','
          << r.seed << ',' << fmt17(r.accuracy) << '\n';
    out << "\n# mean_accuracy\ndataset,method,mean\n";
    for (std::size_t di = 0; di < rep.datasets.size(); ++di)
      for (std::size_t mi = 0; mi < rep.methods.size(); ++mi)
        if (!std::isnan(rep.mean_accuracy[di][mi]))
          out << csv_field(rep.datasets[di]) << ','
              << csv_field(rep.methods[mi]) << ','
              << fmt17(rep.mean_accuracy[di][mi]) << '\n';
    if (!rep.average_rank.empty()) {
      out << "\n# average_rank\nmethod,rank\n";
      for (std::size_t mi = 0; mi < rep.methods.size(); ++mi)
        out << csv_field(rep.methods[mi]) << ','
            << fmt17(rep.average_rank[mi]) << '\n';
    }
    if (!rep.significance_p.empty()) {
      out << "\n# significance_p\nmethod_a,method_b,p\n";
      for (std::size_t i = 0; i < rep.methods.size(); ++i)
        for (std::size_t j = 0; j < rep.methods.size(); ++j)
          out << csv_field(rep.methods[i]) << ',' << csv_field(rep.methods[j])
              << ',' << fmt17(rep.significance_p[i][j]) << '\n';
    }
    if (!rep.errors.empty()) {
      out << "\n# errors\nmessage\n";
      for (const std::string& e : rep.errors) out << csv_field(e) << '\n';
    }
  } else if (format == "json") {
    out << "{\n  \"rows\": [";
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
      const EvalRow& r = rep.rows[i];
      out << (i ? ",\n    " : "\n    ") << "{\"dataset\": \""
          << json_escape(r.dataset) << "\", \"method\": \""
          << json_escape(r.method) << "\", \"seed\": " << r.seed
          << ", \"accuracy\": " << fmt17(r.accuracy) << "}";
    }
    out << (rep.rows.empty() ? "]" : "\n  ]");
    auto emit_str_list = [&](const char* key,
                             const std::vector<std::string>& v) {
      out << ",\n  \"" << key << "\": [";
      for (std::size_t i = 0; i < v.size(); ++i)
        out << (i ? ", " : "") << "\"" << json_escape(v[i]) << "\"";
      out << "]";
    };
    emit_str_list("datasets", rep.datasets);
    emit_str_list("methods", rep.methods);
    out << ",\n  \"mean_accuracy\": [";
    for (std::size_t di = 0; di < rep.mean_accuracy.size(); ++di) {
      out << (di ? ", " : "") << "[";
      for (std::size_t mi = 0; mi < rep.mean_accuracy[di].size(); ++mi) {
        const double v = rep.mean_accuracy[di][mi];
        out << (mi ? ", " : "");
        if (std::isnan(v)) out << "null";
        else out << fmt17(v);
      }
      out << "]";
    }
    out << "]";
    out << ",\n  \"average_rank\": [";
    for (std::size_t i = 0; i < rep.average_rank.size(); ++i)
      out << (i ? ", " : "") << fmt17(rep.average_rank[i]);
    out << "]";
    out << ",\n  \"significance_p\": [";
    for (std::size_t i = 0; i < rep.significance_p.size(); ++i) {
      out << (i ? ", " : "") << "[";
      for (std::size_t j = 0; j < rep.significance_p[i].size(); ++j)
        out << (j ? ", " : "") << fmt17(rep.significance_p[i][j]);
      out << "]";
    }
    out << "]";
    emit_str_list("errors", rep.errors);
    out << "\n}\n";
  } else {
    throw std::invalid_argument("emit_report: unknown format '" + format +
                                "' (expected csv or json)");
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path + " for writing");
  const std::string s = out.str();
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!f) throw DataError("failed writing " + path);
}

EvalReport read_report_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": invalid report JSON: " + e.what());
  }
  try {
    EvalReport rep;
    for (const auto& r : j.at("rows")) {
      EvalRow row;
      row.dataset = r.at("dataset").get<std::string>();
      row.method = r.at("method").get<std::string>();
      row.seed = r.at("seed").get<std::uint64_t>();
      row.accuracy = r.at("accuracy").get<double>();
      rep.rows.push_back(std::move(row));
    }
    rep.datasets = j.at("datasets").get<std::vector<std::string>>();
    rep.methods = j.at("methods").get<std::vector<std::string>>();
    for (const auto& row : j.at("mean_accuracy")) {
      std::vector<double> vals;
      for (const auto& v : row)
        vals.push_back(v.is_null() ? kNaN : v.get<double>());
      rep.mean_accuracy.push_back(std::move(vals));
    }
    rep.average_rank = j.at("average_rank").get<std::vector<double>>();
    for (const auto& row : j.at("significance_p"))
      rep.significance_p.push_back(row.get<std::vector<double>>());
    rep.errors = j.at("errors").get<std::vector<std::string>>();
    return rep;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": report JSON missing fields: " + e.what());
  }
}

}  // namespace mixcl
