#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "codeaudit/gmm.hpp"
#include "codeaudit/synth.hpp"
#include "codeaudit/util.hpp"
#include "doctest.h"

using namespace codeaudit;
using namespace codeaudit::synth;
using Eigen::MatrixXd;

namespace {
std::string csv_of(const Dataset& ds) {
  std::ostringstream s;
  write_csv(s, ds);
  return s.str();
}
}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("noise-free moons lie on the half-circles") {
    const auto ds = gen_moons(101, 0.0, 3);
    int outer = 0;
    for (int n = 0; n < ds.N(); ++n) {
      const double x = ds.features(n, 0), y = ds.features(n, 1);
      if (ds.labels[n] == 0) {
        ++outer;
        CHECK(x * x + y * y == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(y >= -1e-12);
      } else {
        CHECK((x - 1) * (x - 1) + (y - 0.5) * (y - 0.5) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(y <= 0.5 + 1e-12);
      }
    }
    CHECK(outer == 50);
    CHECK(gen_moons(100, 0.1, 0).labels.size() == 100);
    CHECK_THROWS_AS(gen_moons(1, 0.1, 0), InvalidArgument);
  }

  TEST_CASE("generators are deterministic per seed") {
    CHECK(csv_of(gen_moons(500, 0.1, 0)) == csv_of(gen_moons(500, 0.1, 0)));
    CHECK(csv_of(gen_moons(500, 0.1, 0)) != csv_of(gen_moons(500, 0.1, 1)));
    Setting1Options o;
    o.N = 200;
    CHECK(csv_of(gen_setting1(o)) == csv_of(gen_setting1(o)));
    CHECK(csv_of(blob_preset("wine", 0, 2)) == csv_of(blob_preset("wine", 0, 2)));
  }

  TEST_CASE("blobs") {
    MatrixXd c(1, 3);
    c << 0.5, -1, 2;
    const auto same = gen_blobs(10, c, 0.0, 1);
    for (int n = 0; n < 10; ++n) CHECK(same.features.row(n) == c.row(0));

    MatrixXd C(3, 2);
    C << -4, 0, 4, 0, 0, 5;
    const auto ds = gen_blobs(600, C, 0.5, 2);
    codemaps::GmmOptions go;
    go.K = 3;
    const auto g = codemaps::fit_gmm(ds.features, go);
    for (int k = 0; k < 3; ++k) {
      Eigen::VectorXd m = Eigen::VectorXd::Zero(2);
      int cnt = 0;
      for (int n = 0; n < ds.N(); ++n)
        if (ds.labels[n] == k) m += ds.features.row(n).transpose(), ++cnt;
      m /= cnt;
      CHECK(cnt == 200);
      double best = 1e9;
      for (const auto& comp : g.components) best = std::min(best, (comp.mean - m).norm());
      CHECK(best <= 0.05);
    }
    CHECK_THROWS_AS(gen_blobs(10, MatrixXd(0, 2), 1.0, 0), InvalidArgument);
  }

  TEST_CASE("presets have benchmark shapes and unit range") {
    for (auto [name, D, N, C] : {std::tuple{"wine", 13, 178, 3}, {"cancer", 30, 569, 2}, {"digits", 64, 1797, 10}}) {
      const auto ds = blob_preset(name, 0, 0);
      CHECK(ds.D() == D);
      CHECK(ds.N() == N);
      CHECK(*std::max_element(ds.labels.begin(), ds.labels.end()) == C - 1);
      CHECK(ds.features.minCoeff() >= 0.0);
      CHECK(ds.features.maxCoeff() <= 1.0);
      CHECK(ds.meta["scaling"]["method"] == "minmax");
    }
    CHECK_THROWS_AS(blob_preset("iris", 0, 0), InvalidArgument);
  }

  TEST_CASE("setting1 defaults and structure") {
    Setting1Options o;
    const auto ds = gen_setting1(o);
    CHECK(ds.vocab == 16);
    CHECK(ds.positions == 8);
    CHECK(ds.meta["vocab"] == 16);
    CHECK(ds.meta["positions"] == 8);
    CHECK(ds.meta["sigma_star2"] == 0.04);
    CHECK(ds.meta["lattice"][0] == 5);
    CHECK(ds.meta["lattice"][1] == 2);
    CHECK(ds.features.minCoeff() >= 0);
    CHECK(ds.features.maxCoeff() <= 15);
    MatrixXd Q(8, 2);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 2; ++j) Q(i, j) = ds.meta["basis"][i][j].get<double>();
    CHECK(((Q.transpose() * Q) - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-12);
    // Each bin gets about N / V samples per position.
    const double N = ds.N(), expect = N / 16;
    for (int l = 0; l < 8; ++l)
      for (int v = 0; v < 16; ++v) {
        const double cnt = (ds.features.col(l).array() == v).count();
        CHECK(std::abs(cnt - expect) <= 4 * std::sqrt(expect) + 2);
      }
    CHECK(lattice_shape(10) == std::pair{5, 2});
    CHECK(lattice_shape(9) == std::pair{3, 3});
  }

  TEST_CASE("setting1 without token noise is a function of the latent draw") {
    Setting1Options o;
    o.N = 300;
    o.sigma_tok2 = 0.0;
    const auto ds = gen_setting1(o);
    for (int n = 0; n < ds.N(); ++n) {
      const Eigen::Vector2d z(ds.meta["latent"][n][0].get<double>(), ds.meta["latent"][n][1].get<double>());
      for (int l = 0; l < 8; ++l) {
        const double s = ds.meta["basis"][l][0].get<double>() * z(0) + ds.meta["basis"][l][1].get<double>() * z(1);
        const auto edges = ds.meta["edges"][l].get<std::vector<double>>();
        CHECK(ds.features(n, l) == quantile_bin(s, edges));
      }
    }
    CHECK(quantile_bin(0.5, {0.0, 0.5, 1.0}) == 2);
    CHECK(quantile_bin(-1.0, {0.0, 0.5, 1.0}) == 0);
  }

  TEST_CASE("one-hot model inputs") {
    Setting1Options o;
    o.N = 20;
    const auto ds = gen_setting1(o);
    const MatrixXd X = model_inputs(ds);
    CHECK(X.cols() == 8 * 16);
    for (int n = 0; n < 20; ++n) CHECK(X.row(n).sum() == 8.0);
    for (int l = 0; l < 8; ++l) CHECK(X(0, l * 16 + static_cast<int>(ds.features(0, l))) == 1.0);
  }

  TEST_CASE("csv round trip and sidecar") {
    const auto ds = gen_moons(50, 0.1, 4);
    std::stringstream s;
    write_csv(s, ds);
    const auto back = read_csv(s);
    CHECK(back.features == ds.features);
    CHECK(back.labels == ds.labels);

    Setting1Options o;
    o.N = 30;
    const auto tok = gen_setting1(o);
    const auto path = (std::filesystem::temp_directory_path() / "codeaudit_synth_test.csv").string();
    write_dataset(path, tok);
    const auto t2 = read_dataset(path);
    CHECK(t2.kind == FeatureKind::tokens);
    CHECK(t2.vocab == 16);
    CHECK(t2.positions == 8);
    CHECK(t2.features == tok.features);
    std::remove(path.c_str());
    std::remove((path + ".meta.json").c_str());
  }

  TEST_CASE("malformed csv reports a position") {
    std::stringstream bad("continuous:a,continuous:b\n1,2\n3,oops\n");
    try {
      read_csv(bad, "d.csv");
      FAIL("no error");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).rfind("d.csv:3:2:", 0) == 0);
    }
    std::stringstream ragged("continuous:a,continuous:b\n1\n");
    CHECK_THROWS_AS(read_csv(ragged), FormatError);
    std::stringstream kind("weird:a\n1\n");
    CHECK_THROWS_AS(read_csv(kind), FormatError);
  }

  TEST_CASE("z-score standardization is recorded") {
    auto ds = gen_moons(200, 0.1, 1);
    zscore(ds);
    CHECK(ds.meta["scaling"]["method"] == "zscore");
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(ds.features.col(j).mean()) <= 1e-12);
      const double var = (ds.features.col(j).array() - ds.features.col(j).mean()).square().mean();
      CHECK(var == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}
