#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixcl/tensor.hpp"

namespace mixcl {

// Euclidean 1NN: each test row gets the label of its nearest training row,
// ties broken by lowest training index.
std::vector<int> one_nn_classify(const Tensor& train_feats,
                                 const std::vector<int>& train_labels,
                                 const Tensor& test_feats);

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

// accuracies[dataset][method] -> per-method mean rank; within one dataset
// the best method gets rank M, the worst rank 1, ties share the mean of
// their positions.
std::vector<double> average_ranks(
    const std::vector<std::vector<double>>& accuracies);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
};

// Two-sided paired t-test on a-b with n-1 degrees of freedom. Degenerate
// conventions: zero variance with zero mean -> (0, 1); zero variance with
// nonzero mean -> (+-inf, 0).
TTestResult paired_t_test(const std::vector<double>& a,
                          const std::vector<double>& b);

// Two-sided tail mass of Student's t via the regularized incomplete beta
// function I_x(df/2, 1/2) at x = df/(df + t^2).
double student_t_two_sided_p(double t, double df);

struct EvalRow {
  std::string dataset;
  std::string method;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<std::string> datasets;  // aggregation axes, appearance order
  std::vector<std::string> methods;
  // mean over seeds, NaN where a (dataset, method) pair has no rows
  std::vector<std::vector<double>> mean_accuracy;  // [dataset][method]
  std::vector<double> average_rank;                // [method]; empty if M<2
  std::vector<std::vector<double>> significance_p;  // [method][method]
  std::vector<std::string> errors;  // per-job failures, non-fatal
};

// Builds the aggregates from raw rows. Ranks and the significance matrix
// use only datasets where every method has a mean; significance needs at
// least two such datasets.
EvalReport make_report(std::vector<EvalRow> rows,
                       std::vector<std::string> errors = {});

// format "csv" or "json"; floats carry 17 significant digits either way.
void emit_report(const EvalReport& report, const std::string& format,
                 const std::string& path);

EvalReport read_report_json(const std::string& path);

}  // namespace mixcl
