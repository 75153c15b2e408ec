#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "mixcl/common.hpp"
#include "mixcl/eval.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/tensor.hpp"

using namespace mixcl;

namespace {

// Exact CDF of Student's t with 2 degrees of freedom:
// F(t) = 1/2 + t / (2*sqrt(t^2 + 2)), so the two-sided p for t > 0 is
// 2*(1 - F(t)) = 1 - t/sqrt(t^2 + 2).
double two_sided_p_df2(double t) {
  t = std::fabs(t);
  return 1.0 - t / std::sqrt(t * t + 2.0);
}

// Exact CDF with 1 degree of freedom (Cauchy): F(t) = 1/2 + atan(t)/pi.
double two_sided_p_df1(double t) {
  t = std::fabs(t);
  return 1.0 - 2.0 * std::atan(t) / 3.14159265358979323846;
}

std::string tmp_json_path() {
  static int counter = 0;
  return (std::filesystem::temp_directory_path() /
          ("mixcl_eval_test_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter++) + ".json"))
      .string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("one_nn_classify nearest neighbour and tie handling") {
  const Tensor train = Tensor::from_values({3, 2}, {0, 0,   // label 7
                                                    4, 0,   // label 8
                                                    0, 4});  // label 9
  const std::vector<int> labels{7, 8, 9};

  SUBCASE("plain nearest") {
    const Tensor test = Tensor::from_values({3, 2}, {1, 0, 3.9, 0, 0.2, 3.5});
    CHECK(one_nn_classify(train, labels, test) == std::vector<int>{7, 8, 9});
  }

  SUBCASE("exact tie goes to the lowest training index") {
    // (2,0) is equidistant from rows 0 and 1; (0,2) from rows 0 and 2.
    const Tensor test = Tensor::from_values({2, 2}, {2, 0, 0, 2});
    CHECK(one_nn_classify(train, labels, test) == std::vector<int>{7, 7});
  }

  SUBCASE("validation") {
    const Tensor test = Tensor::from_values({1, 3}, {0, 0, 0});
    CHECK_THROWS_AS(one_nn_classify(train, labels, test),
                    std::invalid_argument);  // width mismatch
    CHECK_THROWS_AS(one_nn_classify(train, {7, 8}, Tensor::zeros({1, 2})),
                    std::invalid_argument);  // label count mismatch
    CHECK_THROWS_AS(
        one_nn_classify(Tensor::zeros({0, 2}), {}, Tensor::zeros({1, 2})),
        std::invalid_argument);  // empty train set
  }
}

TEST_CASE("accuracy") {
  CHECK(accuracy({1, 2, 3, 4}, {1, 2, 0, 4}) == doctest::Approx(0.75));
  CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(accuracy({1}, {1, 2}), std::invalid_argument);
}

TEST_CASE("average_ranks") {
  SUBCASE("distinct values: best method gets rank M") {
    // One dataset, methods scoring 0.2 < 0.5 < 0.9 -> ranks 1, 2, 3.
    const auto r = average_ranks({{0.2, 0.5, 0.9}});
    REQUIRE(r.size() == 3);
    CHECK(r[0] == doctest::Approx(1.0));
    CHECK(r[1] == doctest::Approx(2.0));
    CHECK(r[2] == doctest::Approx(3.0));
  }

  SUBCASE("ties share the mean of their positions") {
    const auto r = average_ranks({{0.9, 0.9, 0.1}});
    CHECK(r[0] == doctest::Approx(2.5));
    CHECK(r[1] == doctest::Approx(2.5));
    CHECK(r[2] == doctest::Approx(1.0));
  }

  SUBCASE("full tie gives everyone the same mean position") {
    const auto r = average_ranks({{0.5, 0.5, 0.5, 0.5}});
    for (double v : r) CHECK(v == doctest::Approx(2.5));
  }

  SUBCASE("averaged over datasets") {
    // Method 0 wins dataset 0 (rank 2), loses dataset 1 (rank 1): mean 1.5.
    const auto r = average_ranks({{0.9, 0.1}, {0.1, 0.9}});
    CHECK(r[0] == doctest::Approx(1.5));
    CHECK(r[1] == doctest::Approx(1.5));
  }

  SUBCASE("validation") {
    CHECK_THROWS_AS(average_ranks({}), std::invalid_argument);
    CHECK_THROWS_AS(average_ranks({{0.5}}), std::invalid_argument);
    CHECK_THROWS_AS(average_ranks({{0.5, 0.5}, {0.5}}),
                    std::invalid_argument);  // ragged
    const double nan = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(average_ranks({{0.5, nan}}), std::invalid_argument);
  }
}

TEST_CASE("student_t_two_sided_p against closed forms") {
  for (double t : {0.0, 0.3, 1.0, 2.5, 7.0, 40.0}) {
    CHECK(student_t_two_sided_p(t, 2.0) ==
          doctest::Approx(two_sided_p_df2(t)).epsilon(1e-10));
    CHECK(student_t_two_sided_p(-t, 2.0) ==
          doctest::Approx(two_sided_p_df2(t)).epsilon(1e-10));
    CHECK(student_t_two_sided_p(t, 1.0) ==
          doctest::Approx(two_sided_p_df1(t)).epsilon(1e-10));
  }
  CHECK(student_t_two_sided_p(0.0, 5.0) == doctest::Approx(1.0));
  CHECK(student_t_two_sided_p(std::numeric_limits<double>::infinity(), 3.0) ==
        0.0);
  CHECK_THROWS_AS(student_t_two_sided_p(1.0, 0.0), std::invalid_argument);
  // Large-df limit approaches the normal tail: p(1.96, 1e6) ~ 0.05.
  CHECK(student_t_two_sided_p(1.959963985, 1e6) ==
        doctest::Approx(0.05).epsilon(1e-3));
}

TEST_CASE("paired_t_test hand example") {
  // Differences 1, 2, 3: mean 2, sd 1, t = 2/(1/sqrt(3)) = 2*sqrt(3), df 2.
  const TTestResult r =
      paired_t_test({2.0, 4.0, 6.0}, {1.0, 2.0, 3.0});
  CHECK(r.t == doctest::Approx(3.4641016151377544).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(0.0742).epsilon(1e-3 / 0.0742));
  CHECK(r.p == doctest::Approx(two_sided_p_df2(r.t)).epsilon(1e-12));
}

TEST_CASE("paired_t_test antisymmetry and conventions") {
  const std::vector<double> a{0.91, 0.84, 0.77, 0.95};
  const std::vector<double> b{0.88, 0.86, 0.70, 0.99};
  const TTestResult ab = paired_t_test(a, b);
  const TTestResult ba = paired_t_test(b, a);
  CHECK(ab.t == doctest::Approx(-ba.t).epsilon(1e-14));
  CHECK(ab.p == doctest::Approx(ba.p).epsilon(1e-14));

  // Identical samples: t = 0, p = 1.
  const TTestResult same = paired_t_test(a, a);
  CHECK(same.t == 0.0);
  CHECK(same.p == 1.0);

  // Constant nonzero difference: +-inf, p = 0.
  const TTestResult up = paired_t_test({2.0, 3.0}, {1.0, 2.0});
  CHECK(std::isinf(up.t));
  CHECK(up.t > 0);
  CHECK(up.p == 0.0);
  const TTestResult down = paired_t_test({1.0, 2.0}, {2.0, 3.0});
  CHECK(down.t < 0);
  CHECK(std::isinf(down.t));

  CHECK_THROWS_AS(paired_t_test({1.0}, {2.0}), std::invalid_argument);
  CHECK_THROWS_AS(paired_t_test({1.0, 2.0}, {2.0}), std::invalid_argument);
}

TEST_CASE("paired_t_test false positive rate sits near the nominal 5%") {
  Rng rng(1234);
  const int trials = 10000, n = 8;
  int rejections = 0;
  std::vector<double> a(n), b(n);
  for (int trial = 0; trial < trials; ++trial) {
    for (int i = 0; i < n; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    if (paired_t_test(a, b).p < 0.05) ++rejections;
  }
  const double rate = static_cast<double>(rejections) / trials;
  CHECK(rate > 0.04);
  CHECK(rate < 0.06);
}

TEST_CASE("make_report aggregation") {
  std::vector<EvalRow> rows{
      {"D1", "m1", 0, 0.8},  {"D1", "m1", 1, 0.9},  // mean 0.85
      {"D1", "m2", 0, 0.6},
      {"D2", "m1", 0, 0.5},  {"D2", "m2", 0, 0.7},
      {"D3", "m2", 0, 0.4},  // m1 missing on D3
  };
  EvalReport rep = make_report(rows, {"D4/m1: boom"});

  CHECK(rep.datasets == std::vector<std::string>{"D1", "D2", "D3"});
  CHECK(rep.methods == std::vector<std::string>{"m1", "m2"});
  REQUIRE(rep.mean_accuracy.size() == 3);
  CHECK(rep.mean_accuracy[0][0] == doctest::Approx(0.85));
  CHECK(rep.mean_accuracy[0][1] == doctest::Approx(0.6));
  CHECK(rep.mean_accuracy[1][0] == doctest::Approx(0.5));
  CHECK(rep.mean_accuracy[1][1] == doctest::Approx(0.7));
  CHECK(std::isnan(rep.mean_accuracy[2][0]));
  CHECK(rep.mean_accuracy[2][1] == doctest::Approx(0.4));

  // Ranks over the complete datasets only (D1: m1 wins; D2: m2 wins).
  REQUIRE(rep.average_rank.size() == 2);
  CHECK(rep.average_rank[0] == doctest::Approx(1.5));
  CHECK(rep.average_rank[1] == doctest::Approx(1.5));

  // Significance over the 2 complete datasets; diagonal p = 1.
  REQUIRE(rep.significance_p.size() == 2);
  CHECK(rep.significance_p[0][0] == doctest::Approx(1.0));
  CHECK(rep.significance_p[1][1] == doctest::Approx(1.0));
  const TTestResult direct = paired_t_test({0.85, 0.5}, {0.6, 0.7});
  CHECK(rep.significance_p[0][1] == doctest::Approx(direct.p).epsilon(1e-14));
  CHECK(rep.significance_p[1][0] == doctest::Approx(direct.p).epsilon(1e-14));

  CHECK(rep.errors == std::vector<std::string>{"D4/m1: boom"});
}

TEST_CASE("make_report gating: single method, single complete dataset") {
  SUBCASE("one method: no ranks, no significance") {
    EvalReport rep = make_report({{"D1", "m1", 0, 0.8}});
    CHECK(rep.average_rank.empty());
    CHECK(rep.significance_p.empty());
  }

  SUBCASE("one complete dataset: ranks yes, significance no") {
    EvalReport rep = make_report({{"D1", "m1", 0, 0.8}, {"D1", "m2", 0, 0.6}});
    REQUIRE(rep.average_rank.size() == 2);
    CHECK(rep.average_rank[0] == doctest::Approx(2.0));
    CHECK(rep.average_rank[1] == doctest::Approx(1.0));
    CHECK(rep.significance_p.empty());
  }

  SUBCASE("no complete dataset: neither") {
    EvalReport rep =
        make_report({{"D1", "m1", 0, 0.8}, {"D2", "m2", 0, 0.6}});
    CHECK(rep.average_rank.empty());
    CHECK(rep.significance_p.empty());
  }

  SUBCASE("empty rows") {
    EvalReport rep = make_report({});
    CHECK(rep.datasets.empty());
    CHECK(rep.mean_accuracy.empty());
  }
}

TEST_CASE("emit_report json round-trips exactly") {
  std::vector<EvalRow> rows{
      {"D1", "m1", 3, 0.12345678901234567},
      {"D1", "m2", 3, 1.0 / 3.0},
      {"D2", "m1", 4, 0.5},
      {"D2", "m2", 4, std::nextafter(0.5, 1.0)},
      {"D3", "m2", 5, 0.25},  // leaves D3/m1 as NaN
  };
  EvalReport rep = make_report(rows, {"an error"});
  const std::string path = tmp_json_path();
  emit_report(rep, "json", path);

  EvalReport back = read_report_json(path);
  std::remove(path.c_str());

  CHECK(back.datasets == rep.datasets);
  CHECK(back.methods == rep.methods);
  REQUIRE(back.rows.size() == rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    CHECK(back.rows[i].dataset == rep.rows[i].dataset);
    CHECK(back.rows[i].method == rep.rows[i].method);
    CHECK(back.rows[i].seed == rep.rows[i].seed);
    CHECK(back.rows[i].accuracy == rep.rows[i].accuracy);  // bit-exact
  }
  for (std::size_t d = 0; d < rep.mean_accuracy.size(); ++d)
    for (std::size_t m = 0; m < rep.mean_accuracy[d].size(); ++m) {
      if (std::isnan(rep.mean_accuracy[d][m]))
        CHECK(std::isnan(back.mean_accuracy[d][m]));
      else
        CHECK(back.mean_accuracy[d][m] == rep.mean_accuracy[d][m]);
    }
  CHECK(back.average_rank == rep.average_rank);
  CHECK(back.significance_p == rep.significance_p);
  CHECK(back.errors == rep.errors);
}

TEST_CASE("emit_report csv shape") {
  std::vector<EvalRow> rows{
      {"D1", "m1", 0, 0.8}, {"D1", "m2", 0, 0.6},
      {"D2", "m1", 1, 0.5}, {"D2", "m2", 1, 0.7},
  };
  EvalReport rep = make_report(rows);
  const std::string path = tmp_json_path();
  emit_report(rep, "csv", path);
  const std::string text = slurp(path);
  std::remove(path.c_str());

  CHECK(text.find("dataset,method,seed,accuracy") != std::string::npos);
  CHECK(text.find("D1,m1,0,0.8") != std::string::npos);
  CHECK(text.find("# mean_accuracy") != std::string::npos);
  CHECK(text.find("# average_rank") != std::string::npos);
  CHECK(text.find("# significance_p") != std::string::npos);

  CHECK_THROWS_AS(emit_report(rep, "xml", tmp_json_path()),
                  std::invalid_argument);
}

TEST_CASE("read_report_json rejects malformed input") {
  const std::string path = tmp_json_path();
  {
    std::ofstream out(path);
    out << "{ not json";
  }
  try {
    read_report_json(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(path) != std::string::npos);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_report_json(path), DataError);  // now missing
}
