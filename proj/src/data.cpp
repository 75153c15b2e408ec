#include "mixcl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace mixcl {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

// Numeric token parse; "?" and NaN spellings turn into NaN (missing value).
double parse_value(const std::string& tok, const std::string& path, int line,
                   int col) {
  const std::string t = trim(tok);
  if (t == "?") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size())
    throw DataError(path + ":" + std::to_string(line) + ": column " +
                    std::to_string(col) + ": cannot parse '" + t +
                    "' as a number");
  return v;
}

bool parse_bool(const std::string& tok) {
  std::string t = trim(tok);
  for (char& c : t) c = static_cast<char>(std::tolower(c));
  return t == "true";
}

std::ifstream open_or_throw(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

// Sorted-by-value vocabulary for TSV labels: numeric order when every label
// parses as a number (UCR labels are integers, sometimes negative),
// lexicographic otherwise.
std::vector<std::string> sorted_vocab(const std::vector<RawRecord>& records) {
  std::vector<std::string> vocab;
  for (const RawRecord& r : records)
    if (std::find(vocab.begin(), vocab.end(), r.label) == vocab.end())
      vocab.push_back(r.label);
  bool all_numeric = true;
  std::vector<double> nums(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const std::string& t = vocab[i];
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), nums[i]);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
      all_numeric = false;
      break;
    }
  }
  std::vector<std::size_t> order(vocab.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (all_numeric)
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return nums[a] != nums[b] ? nums[a] < nums[b] : vocab[a] < vocab[b];
    });
  else
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return vocab[a] < vocab[b]; });
  std::vector<std::string> out(vocab.size());
  for (std::size_t i = 0; i < order.size(); ++i) out[i] = vocab[order[i]];
  return out;
}

std::vector<int> map_labels(const std::vector<RawRecord>& records,
                            const std::vector<std::string>& vocab,
                            const std::string& context) {
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < vocab.size(); ++i)
    index[vocab[i]] = static_cast<int>(i);
  std::vector<int> out;
  out.reserve(records.size());
  for (const RawRecord& r : records) {
    auto it = index.find(r.label);
    if (it == index.end())
      throw DataError(context + ": label '" + r.label +
                      "' is not in the vocabulary");
    out.push_back(it->second);
  }
  return out;
}

int max_length(const RawParse& p) {
  int t = 0;
  for (const RawRecord& r : p.records)
    for (const auto& ch : r.channels)
      t = std::max(t, static_cast<int>(ch.size()));
  return t;
}

TimeSeriesDataset assemble(const RawParse& parse,
                           const std::vector<std::string>& vocab, int target_T,
                           std::string name, Split split,
                           const std::string& context) {
  TimeSeriesDataset d;
  d.name = std::move(name);
  d.split = split;
  d.label_names = vocab;
  d.labels = map_labels(parse.records, vocab, context);
  PaddedBatch padded = impute_and_pad(parse.records, target_T);
  d.samples = std::move(padded.samples);
  d.length_mask = std::move(padded.lengths);
  return d;
}

}  // namespace

RawParse parse_ucr_tsv_raw(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  RawParse parse;
  parse.channels = 1;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<std::string> tokens = split(line, '\t');
    // A trailing tab produces one empty final token; drop it.
    if (tokens.size() > 1 && trim(tokens.back()).empty()) tokens.pop_back();
    if (tokens.size() < 2)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected a label and at least one value");
    RawRecord rec;
    rec.label = trim(tokens[0]);
    if (rec.label.empty())
      throw DataError(path + ":" + std::to_string(lineno) + ": empty label");
    rec.channels.resize(1);
    rec.channels[0].reserve(tokens.size() - 1);
    for (std::size_t i = 1; i < tokens.size(); ++i)
      rec.channels[0].push_back(
          parse_value(tokens[i], path, lineno, static_cast<int>(i + 1)));
    parse.records.push_back(std::move(rec));
  }
  if (parse.records.empty()) throw DataError(path + ": no records");
  return parse;
}

RawParse parse_ts_raw(const std::string& path) {
  std::ifstream in = open_or_throw(path);
  RawParse parse;
  std::string line;
  int lineno = 0;
  bool in_data = false;
  bool saw_class_label = false;
  bool declared_univariate = false, has_univariate = false;
  bool declared_equal_length = false, has_equal_length = false;
  int declared_dims = -1, declared_series_length = -1;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;

    if (!in_data) {
      if (t[0] != '@')
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": expected a header line starting with '@'");
      std::istringstream hs(t);
      std::string key;
      hs >> key;
      for (char& c : key) c = static_cast<char>(std::tolower(c));
      if (key == "@data") {
        in_data = true;
      } else if (key == "@problemname") {
        hs >> parse.problem_name;
      } else if (key == "@univariate") {
        std::string v;
        hs >> v;
        declared_univariate = parse_bool(v);
        has_univariate = true;
      } else if (key == "@equallength") {
        std::string v;
        hs >> v;
        declared_equal_length = parse_bool(v);
        has_equal_length = true;
      } else if (key == "@dimensions") {
        hs >> declared_dims;
      } else if (key == "@serieslength") {
        hs >> declared_series_length;
      } else if (key == "@classlabel") {
        std::string v;
        hs >> v;
        saw_class_label = true;
        if (!parse_bool(v))
          throw DataError(path + ":" + std::to_string(lineno) +
                          ": @classLabel false, but class labels are required");
        std::string lab;
        while (hs >> lab) parse.declared_vocab.push_back(lab);
        if (parse.declared_vocab.empty())
          throw DataError(path + ":" + std::to_string(lineno) +
                          ": @classLabel true without any label values");
      }
      // Unrecognized headers (e.g. @timeStamps) are skipped.
      continue;
    }

    std::vector<std::string> fields = split(t, ':');
    if (fields.size() < 2)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": record has no ':'-separated class label");
    RawRecord rec;
    rec.label = trim(fields.back());
    fields.pop_back();
    rec.channels.resize(fields.size());
    for (std::size_t c = 0; c < fields.size(); ++c) {
      std::vector<std::string> vals = split(fields[c], ',');
      rec.channels[c].reserve(vals.size());
      for (std::size_t i = 0; i < vals.size(); ++i)
        rec.channels[c].push_back(parse_value(
            vals[i], path, lineno, static_cast<int>(i + 1)));
    }
    const int C = static_cast<int>(rec.channels.size());
    if (parse.records.empty()) {
      parse.channels = C;
    } else if (C != parse.channels) {
      throw DataError(path + ":" + std::to_string(lineno) + ": record has " +
                      std::to_string(C) + " dimensions, expected " +
                      std::to_string(parse.channels));
    }
    parse.records.push_back(std::move(rec));
  }

  if (!in_data) throw DataError(path + ": missing @data header");
  if (parse.records.empty()) throw DataError(path + ": no records after @data");
  if (!saw_class_label)
    throw DataError(path + ": missing @classLabel header");
  if (has_univariate && declared_univariate && parse.channels != 1)
    throw DataError(path + ": @univariate true, but records have " +
                    std::to_string(parse.channels) + " dimensions");
  if (declared_dims >= 0 && declared_dims != parse.channels)
    throw DataError(path + ": @dimensions " + std::to_string(declared_dims) +
                    " does not match parsed dimension count " +
                    std::to_string(parse.channels));
  if (has_equal_length && declared_equal_length) {
    const int want = declared_series_length;
    for (std::size_t r = 0; r < parse.records.size(); ++r)
      for (const auto& ch : parse.records[r].channels) {
        const int len = static_cast<int>(ch.size());
        if (want >= 0 && len != want)
          throw DataError(path + ": record " + std::to_string(r + 1) +
                          " has length " + std::to_string(len) +
                          ", @seriesLength says " + std::to_string(want));
      }
  }
  return parse;
}

TimeSeriesDataset parse_ucr_tsv(const std::string& path) {
  RawParse parse = parse_ucr_tsv_raw(path);
  return assemble(parse, sorted_vocab(parse.records), max_length(parse),
                  std::filesystem::path(path).stem().string(), Split::Train,
                  path);
}

TimeSeriesDataset parse_ts_file(const std::string& path) {
  RawParse parse = parse_ts_raw(path);
  return assemble(parse, parse.declared_vocab, max_length(parse),
                  parse.problem_name.empty()
                      ? std::filesystem::path(path).stem().string()
                      : parse.problem_name,
                  Split::Train, path);
}

std::pair<TimeSeriesDataset, TimeSeriesDataset> load_dataset_dir(
    const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path p(dir);
  std::string name = p.filename().string();
  if (name.empty()) name = p.parent_path().filename().string();
  if (name.empty()) throw DataError("cannot derive a dataset name from " + dir);

  std::string ext;
  for (const char* cand : {".tsv", ".ts"}) {
    if (fs::exists(p / (name + "_TRAIN" + cand))) {
      ext = cand;
      break;
    }
  }
  if (ext.empty())
    throw DataError("no " + name + "_TRAIN.tsv or " + name + "_TRAIN.ts in " +
                    dir);
  const std::string train_path = (p / (name + "_TRAIN" + ext)).string();
  const std::string test_path = (p / (name + "_TEST" + ext)).string();
  if (!fs::exists(test_path)) throw DataError("missing " + test_path);

  const bool is_tsv = ext == ".tsv";
  RawParse train_raw =
      is_tsv ? parse_ucr_tsv_raw(train_path) : parse_ts_raw(train_path);
  RawParse test_raw =
      is_tsv ? parse_ucr_tsv_raw(test_path) : parse_ts_raw(test_path);
  if (train_raw.channels != test_raw.channels)
    throw DataError(name + ": train has " +
                    std::to_string(train_raw.channels) +
                    " channels, test has " +
                    std::to_string(test_raw.channels));

  const std::vector<std::string> vocab =
      is_tsv ? sorted_vocab(train_raw.records) : train_raw.declared_vocab;
  const int target_T = std::max(max_length(train_raw), max_length(test_raw));
  TimeSeriesDataset train = assemble(train_raw, vocab, target_T, name,
                                     Split::Train, train_path);
  TimeSeriesDataset test =
      assemble(test_raw, vocab, target_T, name, Split::Test, test_path);
  return {std::move(train), std::move(test)};
}

PaddedBatch impute_and_pad(const std::vector<RawRecord>& records,
                           int target_T) {
  const int N = static_cast<int>(records.size());
  if (N == 0) throw DataError("impute_and_pad: no records");
  const int C = static_cast<int>(records[0].channels.size());
  PaddedBatch out;
  out.samples = Tensor::zeros({N, C, target_T});
  out.lengths.resize(static_cast<std::size_t>(N));
  double* dst = out.samples.data();

  for (int n = 0; n < N; ++n) {
    const RawRecord& rec = records[static_cast<std::size_t>(n)];
    const int L = static_cast<int>(rec.channels[0].size());
    for (const auto& ch : rec.channels)
      if (static_cast<int>(ch.size()) != L)
        throw DataError("record " + std::to_string(n + 1) +
                        ": channels have differing lengths");
    if (L == 0)
      throw DataError("record " + std::to_string(n + 1) + " is empty");
    if (L > target_T)
      throw DataError("record " + std::to_string(n + 1) + " is longer (" +
                      std::to_string(L) + ") than target length " +
                      std::to_string(target_T));
    out.lengths[static_cast<std::size_t>(n)] = L;

    for (int c = 0; c < C; ++c) {
      std::vector<double> v = rec.channels[static_cast<std::size_t>(c)];
      int first_valid = -1, last_valid = -1;
      for (int t = 0; t < L; ++t)
        if (!std::isnan(v[static_cast<std::size_t>(t)])) {
          if (first_valid < 0) first_valid = t;
          last_valid = t;
        }
      if (first_valid < 0)
        throw DataError("record " + std::to_string(n + 1) + " channel " +
                        std::to_string(c + 1) + " is entirely NaN");
      for (int t = 0; t < first_valid; ++t)
        v[static_cast<std::size_t>(t)] =
            v[static_cast<std::size_t>(first_valid)];
      for (int t = last_valid + 1; t < L; ++t)
        v[static_cast<std::size_t>(t)] =
            v[static_cast<std::size_t>(last_valid)];
      int t = first_valid;
      while (t <= last_valid) {
        if (!std::isnan(v[static_cast<std::size_t>(t)])) {
          ++t;
          continue;
        }
        int gap_end = t;
        while (std::isnan(v[static_cast<std::size_t>(gap_end)])) ++gap_end;
        const int lo = t - 1;
        const double a = v[static_cast<std::size_t>(lo)];
        const double b = v[static_cast<std::size_t>(gap_end)];
        const double span = gap_end - lo;
        for (int s = t; s < gap_end; ++s)
          v[static_cast<std::size_t>(s)] = a + (b - a) * (s - lo) / span;
        t = gap_end + 1;
      }
      double* row = dst + (static_cast<std::size_t>(n) * C + c) * target_T;
      for (int s = 0; s < L; ++s) row[s] = v[static_cast<std::size_t>(s)];
    }
  }
  return out;
}

TimeSeriesDataset znormalize(const TimeSeriesDataset& d) {
  TimeSeriesDataset out = d;
  out.samples = Tensor::from_values(d.samples.shape(), d.samples.values());
  const int N = d.size(), C = d.channels(), T = d.length();
  double* v = out.samples.data();
  for (int n = 0; n < N; ++n) {
    const int L = d.length_mask.empty()
                      ? T
                      : d.length_mask[static_cast<std::size_t>(n)];
    for (int c = 0; c < C; ++c) {
      double* row = v + (static_cast<std::size_t>(n) * C + c) * T;
      double mean = 0.0;
      for (int t = 0; t < L; ++t) mean += row[t];
      mean /= L;
      double var = 0.0;
      for (int t = 0; t < L; ++t) {
        const double dlt = row[t] - mean;
        var += dlt * dlt;
      }
      var /= L;
      const double sd = std::sqrt(var);
      if (sd < 1e-8) {
        for (int t = 0; t < L; ++t) row[t] = 0.0;
      } else {
        for (int t = 0; t < L; ++t) row[t] = (row[t] - mean) / sd;
      }
    }
  }
  return out;
}

Tensor handcrafted_features(const TimeSeriesDataset& d) {
  const int N = d.size(), C = d.channels(), T = d.length();
  Tensor out = Tensor::zeros({N, 4 * C});
  const double* v = d.samples.data();
  double* f = out.data();
  for (int n = 0; n < N; ++n) {
    const int L = d.length_mask.empty()
                      ? T
                      : d.length_mask[static_cast<std::size_t>(n)];
    for (int c = 0; c < C; ++c) {
      const double* row = v + (static_cast<std::size_t>(n) * C + c) * T;
      double mx = row[0], mn = row[0], mean = 0.0;
      for (int t = 0; t < L; ++t) {
        mx = std::max(mx, row[t]);
        mn = std::min(mn, row[t]);
        mean += row[t];
      }
      mean /= L;
      double var = 0.0;
      for (int t = 0; t < L; ++t) {
        const double dlt = row[t] - mean;
        var += dlt * dlt;
      }
      var /= L;
      double* slot = f + (static_cast<std::size_t>(n) * 4 * C + 4 * c);
      slot[0] = mx;
      slot[1] = mn;
      slot[2] = var;
      slot[3] = mean;
    }
  }
  return out;
}

Tensor raw_features(const TimeSeriesDataset& d) {
  return Tensor::from_values({d.size(), d.channels() * d.length()},
                             d.samples.values());
}

}  // namespace mixcl
