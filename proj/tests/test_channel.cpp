#include <algorithm>
#include <cmath>
#include <numeric>
#include <map>
#include <random>
#include <sstream>
#include <tuple>

#include "codeaudit/channel.hpp"
#include "codeaudit/util.hpp"
#include "doctest.h"

using namespace codeaudit;
using namespace codeaudit::channel;
using Eigen::MatrixXd;

namespace {

// Plain-loop mutual information of a joint table.
double brute_mi(const MatrixXd& P) {
  const Eigen::VectorXd r = P.rowwise().sum(), c = P.colwise().sum().transpose();
  double s = 0.0;
  for (int i = 0; i < P.rows(); ++i)
    for (int j = 0; j < P.cols(); ++j)
      if (P(i, j) > 0) s += P(i, j) * std::log(P(i, j) / (r(i) * c(j)));
  return s;
}

// Plug-in I(A; C | B) from counts of (a, b, c) triples.
double brute_cmi(const std::vector<std::tuple<int, int, int>>& triples) {
  std::map<std::tuple<int, int, int>, double> abc;
  std::map<std::pair<int, int>, double> ab, bc;
  std::map<int, double> b;
  const double T = static_cast<double>(triples.size());
  for (auto [x, y, z] : triples) {
    abc[{x, y, z}] += 1 / T;
    ab[{x, y}] += 1 / T;
    bc[{y, z}] += 1 / T;
    b[y] += 1 / T;
  }
  double s = 0.0;
  for (auto& [k, p] : abc) {
    auto [x, y, z] = k;
    s += p * std::log(p * b[y] / (ab[{x, y}] * bc[{y, z}]));
  }
  return s;
}

}  // namespace

TEST_SUITE("channel") {
  TEST_CASE("table_from_pairs") {
    std::vector<LabelPair> diag{{0, 0}, {1, 1}};
    const auto t = table_from_pairs(diag, 2);
    CHECK(t(0, 0) == 0.5);
    CHECK(t(1, 1) == 0.5);
    CHECK(t.sample_count() == 2);
    std::vector<LabelPair> anti{{0, 1}, {1, 0}};
    CHECK(summarize(table_from_pairs(anti, 2)).agreement == 0.0);
    std::vector<LabelPair> bad{{0, 2}};
    CHECK_THROWS_AS(table_from_pairs(bad, 2), InvalidArgument);
    CHECK_THROWS_AS(table_from_pairs({}, 2), InvalidArgument);
  }

  TEST_CASE("sampled table within multinomial error") {
    MatrixXd truth(3, 3);
    truth << 0.2, 0.05, 0.05, 0.1, 0.3, 0.0, 0.05, 0.05, 0.2;
    std::vector<double> flat(truth.data(), truth.data() + 9);
    std::discrete_distribution<int> pick(flat.begin(), flat.end());
    std::mt19937_64 rng(3);
    std::vector<LabelPair> pairs;
    const int n = 10000;
    for (int t = 0; t < n; ++t) {
      const int k = pick(rng);  // column-major index
      pairs.push_back({k % 3, k / 3});
    }
    const auto tab = table_from_pairs(pairs, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double sd = std::sqrt(truth(i, j) * (1 - truth(i, j)) / n);
        CHECK(std::abs(tab(i, j) - truth(i, j)) <= 3 * sd + 1e-15);
      }
  }

  TEST_CASE("invalid tables rejected") {
    CHECK_THROWS_AS(JointCodeTable(MatrixXd::Constant(2, 2, 0.3), 0), InvalidArgument);
    MatrixXd neg(2, 2);
    neg << 1.5, -0.5, 0, 0;
    CHECK_THROWS_AS(JointCodeTable(neg, 0), InvalidArgument);
    CHECK_THROWS_AS(JointCodeTable(MatrixXd::Zero(2, 3), 0), InvalidArgument);
  }

  TEST_CASE("summaries of stress tables") {
    const auto id = summarize(stress_table({StressKind::identity, 4, {}, {}}));
    CHECK(id.agreement == doctest::Approx(1.0));
    CHECK(id.r_eff == doctest::Approx(std::log(4.0)));
    CHECK(id.h_enc == doctest::Approx(std::log(4.0)));
    CHECK(id.h_dec == doctest::Approx(std::log(4.0)));
    CHECK(id.active_enc == 4);
    CHECK(id.active_dec == 4);

    const auto col = summarize(stress_table({StressKind::collapse, 3, {}, {}}));
    CHECK(col.agreement == 1.0);
    CHECK(col.r_eff == 0.0);
    CHECK(col.active_enc == 1);
    CHECK(col.active_dec == 1);

    const auto der = summarize(stress_table({StressKind::derangement, 3, {}, {}}));
    CHECK(der.agreement == 0.0);
    CHECK(der.matched_agreement == doctest::Approx(1.0));
    CHECK(der.r_eff == doctest::Approx(std::log(3.0)));
  }

  TEST_CASE("marginal impossibility is exact for K = 2..8") {
    for (int K = 2; K <= 8; ++K) {
      const auto a = summarize(stress_table({StressKind::identity, K, {}, {}}));
      const auto b = summarize(stress_table({StressKind::derangement, K, {}, {}}));
      CHECK(a.agreement == 1.0);
      CHECK(b.agreement == 0.0);
      CHECK(a.enc_marginal == b.enc_marginal);
      CHECK(a.dec_marginal == b.dec_marginal);
      CHECK(a.h_enc == b.h_enc);
      CHECK(a.h_dec == b.h_dec);
      CHECK(a.r_eff == b.r_eff);
      CHECK(a.active_enc == b.active_enc);
      CHECK(a.active_dec == b.active_dec);
    }
  }

  TEST_CASE("non-uniform impossibility") {
    const std::vector<double> w{0.5, 0.3, 0.2};
    const auto a = summarize(stress_table({StressKind::weighted_identity, 3, {}, w}));
    const auto b = summarize(stress_table({StressKind::weighted_permutation, 3, {}, w}));
    CHECK(a.agreement == 1.0);
    CHECK(b.agreement == 0.0);
    CHECK(a.h_enc == b.h_enc);
    CHECK(a.h_dec == b.h_dec);
    CHECK(a.r_eff == b.r_eff);
    CHECK(a.r_eff == doctest::Approx(a.h_enc));
  }

  TEST_CASE("stress_table argument checks") {
    CHECK_THROWS_AS(stress_table({StressKind::derangement, 3, {0, 2, 1}, {}}), InvalidArgument);
    CHECK_THROWS_AS(stress_table({StressKind::weighted_identity, 3, {}, {0.5, 0.5, 0.5}}), InvalidArgument);
    CHECK_THROWS_AS(stress_table({StressKind::derangement, 1, {}, {}}), InvalidArgument);
    CHECK_THROWS_AS(parse_stress_kind("bogus"), InvalidArgument);
    CHECK(parse_stress_kind(to_string(StressKind::many_to_one)) == StressKind::many_to_one);
  }

  TEST_CASE("row_normalize") {
    const auto id2 = row_normalize(table_from_pairs(std::vector<LabelPair>{{0, 0}, {1, 1}}, 2));
    CHECK(id2.matrix.isApprox(MatrixXd::Identity(2, 2)));
    const auto m2o = row_normalize(stress_table({StressKind::many_to_one, 4, {}, {}}));
    for (int i = 0; i < 4; ++i) CHECK(m2o.matrix(i, 0) == 1.0);
    const auto col = row_normalize(stress_table({StressKind::collapse, 3, {}, {}}));
    CHECK_FALSE(col.uniform_fill[0]);
    CHECK(col.uniform_fill[1]);
    CHECK(col.matrix(2, 1) == doctest::Approx(1.0 / 3));
  }

  TEST_CASE("random tables: MI, bounds, matching") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
      const int K = 2 + t % 9;
      MatrixXd W(K, K);
      for (int i = 0; i < K * K; ++i) W.data()[i] = u(rng) < 0.3 ? 0.0 : u(rng);
      W(0, 0) += 0.1;
      const auto tab = JointCodeTable::from_weights(W, 0);
      const auto r = summarize(tab);
      CHECK(r.r_eff == doctest::Approx(brute_mi(tab.cells())).epsilon(1e-10));
      CHECK(r.r_eff <= std::min(r.h_enc, r.h_dec) + 1e-12);
      CHECK(r.matched_agreement >= r.agreement - 1e-15);
      CHECK(r.interference == doctest::Approx(1.0 - r.agreement));
      // Relabel rows and columns by the same permutation: raw agreement unchanged.
      std::vector<int> p(K);
      std::iota(p.begin(), p.end(), 0);
      std::shuffle(p.begin(), p.end(), rng);
      MatrixXd R(K, K);
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) R(p[i], p[j]) = tab(i, j);
      CHECK(summarize(JointCodeTable(R, 0)).agreement == doctest::Approx(r.agreement).epsilon(1e-14));
    }
  }

  TEST_CASE("matching: exhaustive and Hungarian agree") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 20; ++t) {
      // K = 8 goes exhaustive; append a tiny ninth label so the same optimum is found by assignment.
      MatrixXd W8(8, 8);
      for (int i = 0; i < 64; ++i) W8.data()[i] = u(rng);
      const double s8 = best_matching(W8).first;
      MatrixXd W9 = MatrixXd::Zero(9, 9);
      W9.topLeftCorner(8, 8) = W8;
      CHECK(best_matching(W9).first == doctest::Approx(s8).epsilon(1e-12));
    }
    std::vector<int> perm{2, 0, 3, 1};
    const auto m = summarize(stress_table({StressKind::weighted_permutation, 4, perm, {0.1, 0.2, 0.3, 0.4}}));
    CHECK(m.matched_agreement == doctest::Approx(1.0));
    CHECK(m.matched_perm == perm);
  }

  TEST_CASE("R_eff vanishes exactly when channel rows coincide") {
    Eigen::RowVector3d row(0.2, 0.5, 0.3);
    MatrixXd T(3, 3);
    T.row(0) = 0.5 * row;
    T.row(1) = 0.3 * row;
    T.row(2) = 0.2 * row;
    CHECK(std::abs(summarize(JointCodeTable::from_weights(T, 0)).r_eff) <= 1e-10);
    T(0, 0) += 0.01;
    CHECK(summarize(JointCodeTable::from_weights(T, 0)).r_eff > 1e-10);
  }

  TEST_CASE("lagged interference") {
    LabeledSequence same;
    std::mt19937_64 rng(2);
    for (int t = 0; t < 500; ++t) {
      const int c = static_cast<int>(rng() % 3);
      same.push_back({c, c});
    }
    CHECK(lagged_interference(same, 1, 3) == doctest::Approx(0.0).epsilon(1e-14));

    // Decoder reads the previous encoder label; all K^2 (enc_{t-1}, enc_t) pairs equally often.
    const int K = 3;
    LabeledSequence lagged;
    std::vector<int> enc;
    for (int rep = 0; rep < 20; ++rep)
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) {
          enc.push_back(a);
          enc.push_back(b);
        }
    lagged.push_back({enc[0], 0});
    for (std::size_t t = 1; t < enc.size(); ++t) lagged.push_back({enc[t], enc[t - 1]});
    std::vector<std::tuple<int, int, int>> tr;
    for (std::size_t t = 1; t < lagged.size(); ++t) tr.push_back({lagged[t - 1].first, lagged[t].first, lagged[t].second});
    const double v = lagged_interference(lagged, 1, K);
    CHECK(v == doctest::Approx(brute_cmi(tr)).epsilon(1e-12));
    CHECK(v == doctest::Approx(std::log(3.0)).epsilon(0.02));

    LabeledSequence markov;
    int state = 0;
    for (int t = 0; t < 400; ++t) {
      if (rng() % 10 < 3) state = 1 - state;
      markov.push_back({state, static_cast<int>(rng() % 4 == 0 ? 1 - state : state)});
    }
    std::vector<std::tuple<int, int, int>> tr2;
    for (std::size_t t = 2; t < markov.size(); ++t) tr2.push_back({markov[t - 2].first, markov[t].first, markov[t].second});
    CHECK(std::abs(lagged_interference(markov, 2, 2) - brute_cmi(tr2)) <= 1e-12);
    CHECK_THROWS_AS(lagged_interference(markov, 0, 2), InvalidArgument);
    CHECK_THROWS_AS(lagged_interference(LabeledSequence{{0, 0}}, 1, 2), InvalidArgument);
  }

  TEST_CASE("table csv round trip and json keys") {
    const auto t = stress_table({StressKind::weighted_identity, 3, {}, {0.5, 0.3, 0.2}});
    std::stringstream ss;
    write_table_csv(ss, t);
    const auto back = read_table_csv(ss);
    CHECK(back.cells() == t.cells());
    std::stringstream bad("2\n0.5,0.5\n");
    CHECK_THROWS_AS(read_table_csv(bad), FormatError);
    const auto j = to_json(summarize(t));
    for (const char* k : {"K", "A", "A_matched", "perm", "R_eff", "R_eff_norm", "H_enc", "H_dec", "active_enc",
                          "active_dec", "interference"})
      CHECK(j.contains(k));
  }
}
