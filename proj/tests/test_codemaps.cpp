#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "codeaudit/codemaps.hpp"
#include "codeaudit/gmm.hpp"
#include "codeaudit/util.hpp"
#include "doctest.h"

using namespace codeaudit;
using namespace codeaudit::codemaps;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

GmmSummary summary_of(const std::vector<VectorXd>& means, const std::vector<MatrixXd>& covs,
                      const std::vector<double>& weights) {
  GmmSummary s;
  for (std::size_t c = 0; c < means.size(); ++c) s.components.push_back({means[c], covs[c], weights[c]});
  return s;
}

VectorXd v2(double a, double b) { return (VectorXd(2) << a, b).finished(); }

MatrixXd blobs(const MatrixXd& centers, int per, double sd, std::uint64_t seed, std::vector<int>& truth) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  MatrixXd X(centers.rows() * per, centers.cols());
  truth.clear();
  for (int c = 0; c < centers.rows(); ++c)
    for (int i = 0; i < per; ++i) {
      for (int j = 0; j < centers.cols(); ++j) X(c * per + i, j) = centers(c, j) + n(rng);
      truth.push_back(c);
    }
  return X;
}

}  // namespace

TEST_SUITE("gmm") {
  TEST_CASE("two separated blobs recover per-label sample means") {
    MatrixXd C(2, 2);
    C << -3, 0, 3, 1;
    std::vector<int> truth;
    const MatrixXd X = blobs(C, 300, 0.5, 1, truth);
    GmmOptions o;
    o.K = 2;
    o.seed = 4;
    const auto g = fit_gmm(X, o);
    for (int c = 0; c < 2; ++c) {
      VectorXd m = VectorXd::Zero(2);
      int n = 0;
      for (int i = 0; i < X.rows(); ++i)
        if (truth[i] == c) m += X.row(i).transpose(), ++n;
      m /= n;
      double best = 1e9;
      for (const auto& comp : g.components) best = std::min(best, (comp.mean - m).norm());
      CHECK(best <= 0.05);
    }
    for (std::size_t t = 1; t < g.fit_log.size(); ++t) CHECK(g.fit_log[t] >= g.fit_log[t - 1] - 1e-9);
  }

  TEST_CASE("K = 1 is the sample mean and covariance") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    MatrixXd X(200, 3);
    for (int i = 0; i < X.size(); ++i) X.data()[i] = n(rng);
    X.col(1) += 0.5 * X.col(0);
    GmmOptions o;
    o.K = 1;
    const auto g = fit_gmm(X, o);
    const VectorXd m = X.colwise().mean().transpose();
    const MatrixXd Xc = X.rowwise() - m.transpose();
    const MatrixXd S = Xc.transpose() * Xc / static_cast<double>(X.rows());
    CHECK((g.components[0].mean - m).norm() <= 1e-10);
    CHECK((g.components[0].covariance - S).norm() <= 1e-10);
    CHECK(g.components[0].weight == doctest::Approx(1.0));
  }

  TEST_CASE("nested K ordering and covariance choice") {
    MatrixXd C(2, 2);
    C << -2, 0, 2, 0;
    std::vector<int> truth;
    const MatrixXd X = blobs(C, 150, 0.6, 3, truth);
    GmmOptions o;
    o.K = 2;
    const auto g2 = fit_gmm(X, o);
    o.K = 3;
    const auto g3 = fit_gmm(X, o);
    CHECK(gmm_mean_log_likelihood(g3, X) >= gmm_mean_log_likelihood(g2, X) - 1e-9);
    CHECK(g2.covariance == CovarianceType::full);
    MatrixXd Y(50, 5);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (int i = 0; i < Y.size(); ++i) Y.data()[i] = n(rng);
    o.K = 2;
    const auto gd = fit_gmm(Y, o);
    CHECK(gd.covariance == CovarianceType::diagonal);
    const MatrixXd& S = gd.components[0].covariance;
    CHECK((S - MatrixXd(S.diagonal().asDiagonal())).norm() == 0.0);
  }

  TEST_CASE("degenerate data and argument checks") {
    const MatrixXd X = MatrixXd::Constant(10, 2, 0.7);
    GmmOptions o;
    o.K = 2;
    const auto g = fit_gmm(X, o);
    CHECK(g.degenerate);
    o.K = 11;
    CHECK_THROWS_AS(fit_gmm(X, o), InvalidArgument);
  }

  TEST_CASE("json round trip") {
    MatrixXd C(3, 2);
    C << -2, 0, 2, 0, 0, 2;
    std::vector<int> truth;
    const MatrixXd X = blobs(C, 60, 0.4, 8, truth);
    GmmOptions o;
    o.K = 3;
    const auto g = fit_gmm(X, o);
    const auto back = gmm_from_json(to_json(g));
    REQUIRE(back.K() == 3);
    for (int c = 0; c < 3; ++c) {
      CHECK(back.components[c].mean == g.components[c].mean);
      CHECK(back.components[c].covariance == g.components[c].covariance);
      CHECK(back.components[c].weight == g.components[c].weight);
    }
    CHECK(parse_covariance("diag") == CovarianceType::diagonal);
    CHECK_THROWS_AS(parse_covariance("spherical"), InvalidArgument);
  }
}

TEST_SUITE("codemaps") {
  TEST_CASE("encoder: symmetric tie and additive weights") {
    const MatrixXd I = MatrixXd::Identity(2, 2);
    EncoderCodeMap sym(summary_of({v2(-1, 0), v2(1, 0)}, {I, I}, {0.5, 0.5}));
    CHECK(sym.regime() == EncoderRegime::isotropic_uniform);
    CHECK(sym.label(v2(0, 0)) == 0);

    EncoderCodeMap aw(summary_of({v2(-1, 0), v2(1, 0)}, {I, I}, {0.9, 0.1}));
    CHECK(aw.regime() == EncoderRegime::additively_weighted);
    // (x+1)^2 - 2 log 0.9 = (x-1)^2 - 2 log 0.1  =>  x = log(9) / 2.
    const double boundary = std::log(9.0) / 2;
    CHECK(boundary == doctest::Approx(1.0986).epsilon(1e-4));
    CHECK(aw.label(v2(1.0, 0)) == 0);
    CHECK(aw.label(v2(1.2, 0)) == 1);
    CHECK(aw.label(v2(boundary - 1e-9, 0)) == 0);
    CHECK(aw.label(v2(boundary + 1e-9, 0)) == 1);
    CHECK_THROWS_AS(EncoderCodeMap(aw.summary(), EncoderRegime::isotropic_uniform), InvalidArgument);
  }

  TEST_CASE("encoder: quadric boundary found by dense scan") {
    MatrixXd S1 = MatrixXd::Identity(2, 2), S2(2, 2);
    S2 << 3.0, 0.4, 0.4, 0.5;
    EncoderCodeMap m(summary_of({v2(-1, 0), v2(1.5, 0.3)}, {S1, S2}, {0.4, 0.6}));
    CHECK(m.regime() == EncoderRegime::mahalanobis_quadric);
    auto phi = [&](const VectorXd& z, int c) {
      const auto& comp = m.summary().components[c];
      const VectorXd d = z - comp.mean;
      return 0.5 * d.dot(comp.covariance.inverse() * d) + 0.5 * std::log(comp.covariance.determinant()) -
             std::log(comp.weight);
    };
    int flips = 0;
    for (int i = 0; i <= 4000; ++i) {
      const VectorXd z = v2(-4 + 8.0 * i / 4000, 0.2);
      const double diff = phi(z, 0) - phi(z, 1);
      const int expect = diff <= 0 ? 0 : 1;
      if (std::abs(diff) > 1e-9) CHECK(m.label(z) == expect);
      if (i > 0 && m.label(z) != m.label(v2(-4 + 8.0 * (i - 1) / 4000, 0.2))) ++flips;
    }
    CHECK(flips >= 1);
  }

  TEST_CASE("encoder: isotropic reduction and weight monotonicity") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.0, 2.0);
    std::vector<VectorXd> means;
    for (int c = 0; c < 5; ++c) means.push_back(v2(n(rng), n(rng)));
    const MatrixXd S = 0.7 * MatrixXd::Identity(2, 2);
    EncoderCodeMap m(summary_of(means, std::vector<MatrixXd>(5, S), std::vector<double>(5, 0.2)));
    CHECK(m.regime() == EncoderRegime::isotropic_uniform);
    for (int t = 0; t < 10000; ++t) {
      const VectorXd z = v2(n(rng), n(rng));
      int best = 0;
      for (int c = 1; c < 5; ++c)
        if ((z - means[c]).squaredNorm() < (z - means[best]).squaredNorm()) best = c;
      CHECK(m.label(z) == best);
    }
    // Raise the weight of component 2; points it owned stay owned.
    std::vector<double> w{0.1, 0.1, 0.6, 0.1, 0.1};
    EncoderCodeMap heavy(summary_of(means, std::vector<MatrixXd>(5, S), w));
    CHECK(heavy.regime() == EncoderRegime::additively_weighted);
    for (int t = 0; t < 2000; ++t) {
      const VectorXd z = v2(n(rng), n(rng));
      if (m.label(z) == 2) CHECK(heavy.label(z) == 2);
    }
  }

  TEST_CASE("decoder labels and reformulations") {
    MatrixXd P(2, 2);
    P << 0.9, 0.1, 0.1, 0.9;
    DecoderCodeMap d(P, BregmanGenerator::bernoulli());
    CHECK(d.label(v2(0.8, 0.2)) == 0);
    CHECK(d.label(v2(0.1, 0.9)) == 1);
    CHECK(d.divergences(v2(0.1, 0.9))(1) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(d.label(v2(0.5, 0.5)) == 0);
    CHECK(d.affine_label(v2(0.5, 0.5)) == 0);
    CHECK(d.dual_label(v2(0.5, 0.5)) == 0);
    // Direct evaluation of both divergences for x = (0.8, 0.2).
    auto kl = [](double x, double y) { return x * std::log(x / y) + (1 - x) * std::log((1 - x) / (1 - y)); };
    CHECK(d.divergences(v2(0.8, 0.2))(0) == doctest::Approx(2 * kl(0.8, 0.9)).epsilon(1e-12));
    CHECK(d.divergences(v2(0.8, 0.2))(1) == doctest::Approx(kl(0.8, 0.1) + kl(0.2, 0.9)).epsilon(1e-12));

    DecoderCodeMap one(P.topRows(1), BregmanGenerator::bernoulli());
    CHECK(one.label(v2(0.3, 0.3)) == 0);
    CHECK(one.affine_label(v2(0.3, 0.3)) == 0);
    CHECK_THROWS_AS(DecoderCodeMap(MatrixXd::Constant(2, 3, 0.4), BregmanGenerator::bernoulli()),
                    InvalidArgument);
  }

  TEST_CASE("three rules agree on random non-tie queries") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int M = 6, K = 5;
    MatrixXd P(K, M);
    for (int i = 0; i < P.size(); ++i) P.data()[i] = 0.02 + 0.96 * u(rng);
    DecoderCodeMap d(P, BregmanGenerator::bernoulli());
    int agree_affine = 0, agree_dual = 0, ties = 0, nontie = 0;
    for (int t = 0; t < 10000; ++t) {
      VectorXd x(M);
      for (int k = 0; k < M; ++k) x(k) = u(rng);
      if (d.is_tie(x)) {
        ++ties;
        continue;
      }
      ++nontie;
      agree_affine += d.affine_label(x) == d.label(x);
      agree_dual += d.dual_label(x) == d.label(x);
    }
    CHECK(agree_affine == nontie);
    CHECK(agree_dual == nontie);
    CHECK(ties <= 10);
  }

  TEST_CASE("categorical generator is a sum of per-position KL") {
    const auto g = BregmanGenerator::categorical(2, 3);
    VectorXd x(6), y(6);
    x << 0.2, 0.3, 0.5, 0.6, 0.3, 0.1;
    y << 0.1, 0.6, 0.3, 0.3, 0.3, 0.4;
    double kl = 0.0;
    for (int i = 0; i < 6; ++i) kl += x(i) * std::log(x(i) / y(i));
    CHECK(g.divergence(x, y) == doctest::Approx(kl).epsilon(1e-12));
    CHECK(g.dual_divergence(g.grad(y), g.grad(x)) == doctest::Approx(kl).epsilon(1e-10));
    MatrixXd P(2, 6);
    P.row(0) = x.transpose();
    P.row(1) = y.transpose();
    DecoderCodeMap d(P, g);
    std::mt19937_64 rng(4);
    std::gamma_distribution<double> gam(1.0);
    for (int t = 0; t < 2000; ++t) {
      VectorXd q(6);
      for (int l = 0; l < 2; ++l) {
        double s = 0;
        for (int v = 0; v < 3; ++v) s += q(3 * l + v) = gam(rng);
        q.segment(3 * l, 3) /= s;
      }
      if (d.is_tie(q)) continue;
      CHECK(d.affine_label(q) == d.label(q));
      CHECK(d.dual_label(q) == d.label(q));
    }
  }

  TEST_CASE("Legendre pair round trip") {
    const auto g = BregmanGenerator::bernoulli();
    VectorXd d(5);
    d << 1e-7, 0.01, 0.5, 0.77, 1 - 1e-7;
    CHECK((g.grad_dual(g.grad(d)) - d).cwiseAbs().maxCoeff() <= 1e-10);
  }

  TEST_CASE("tie sets are rare under continuous queries") {
    std::mt19937_64 rng(29);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MatrixXd P(4, 3);
    for (int i = 0; i < P.size(); ++i) P.data()[i] = 0.05 + 0.9 * u(rng);
    DecoderCodeMap d(P, BregmanGenerator::bernoulli());
    int ties = 0;
    for (int t = 0; t < 10000; ++t) ties += d.is_tie(Eigen::Vector3d(u(rng), u(rng), u(rng)));
    CHECK(ties <= 10);
  }

  TEST_CASE("fisher mismatch: proportional metric") {
    MatrixXd S(2, 2);
    S << 2.0, 0.3, 0.3, 0.5;
    // Linear decoder d(z) = 0.5 + B z at mu = 0: G = 4 B^T B. Pick B^T B = S^-1 / 2 so G = 2 S^-1.
    const MatrixXd Bt = Eigen::LLT<MatrixXd>(S.inverse() / 2).matrixU();
    MatrixXd Bf = MatrixXd::Zero(3, 2);
    Bf.topRows(2) = Bt;
    auto dec = [&](const VectorXd& z) { return VectorXd((0.5 + (Bf * z).array()).matrix()); };
    const auto fm = fisher_mismatch(summary_of({v2(0, 0)}, {S}, {1.0}), dec, BregmanGenerator::bernoulli());
    CHECK(fm.components[0].kappa <= 1e-6);
    CHECK(fm.components[0].a_star == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(fm.components[0].kappa_inv_defined);
    const Eigen::EigenSolver<MatrixXd> es(S * fm.components[0].G.inverse());
    double ki = 0.0;
    for (int i = 0; i < 2; ++i) ki += std::pow(std::log(es.eigenvalues()(i).real()), 2);
    CHECK(fm.components[0].kappa_inv == doctest::Approx(ki).epsilon(1e-8));
    const Eigen::SelfAdjointEigenSolver<MatrixXd> se(S);
    // Sigma G^-1 = Sigma (2 Sigma^-1)^-1 = Sigma^2 / 2.
    double ki2 = 0.0;
    for (int i = 0; i < 2; ++i) ki2 += std::pow(std::log(se.eigenvalues()(i) * se.eigenvalues()(i) / 2.0), 2);
    CHECK(fm.components[0].kappa_inv == doctest::Approx(ki2).epsilon(1e-6));
  }

  TEST_CASE("fisher mismatch: singular metric and exact Jacobian hook") {
    const MatrixXd S = MatrixXd::Identity(2, 2);
    auto dec = [](const VectorXd& z) { return VectorXd::Constant(3, 0.5 + 0.1 * z(0)); };
    const auto fm = fisher_mismatch(summary_of({v2(0, 0)}, {S}, {1.0}), dec, BregmanGenerator::bernoulli());
    CHECK_FALSE(fm.components[0].kappa_inv_defined);
    CHECK(std::isfinite(fm.components[0].kappa));
    JacobianFunction jac = [](const VectorXd&) {
      MatrixXd J = MatrixXd::Zero(3, 2);
      J.col(0).setConstant(0.1);
      return J;
    };
    const auto fm2 =
        fisher_mismatch(summary_of({v2(0, 0)}, {S}, {1.0}), dec, BregmanGenerator::bernoulli(), 1e-4, jac);
    CHECK((fm2.components[0].G - fm.components[0].G).norm() <= 1e-8);
  }

  TEST_CASE("finite-difference Jacobian of a smooth map") {
    auto f = [](const VectorXd& z) { return Eigen::Vector2d(std::sin(z(0)) * z(1), std::exp(0.3 * z(1))).eval(); };
    const VectorXd z = v2(0.4, -1.3);
    MatrixXd J(2, 2);
    J << std::cos(0.4) * -1.3, std::sin(0.4), 0.0, 0.3 * std::exp(0.3 * -1.3);
    CHECK((finite_difference_jacobian(f, z, 1e-5) - J).cwiseAbs().maxCoeff() <= 1e-8);
  }

  TEST_CASE("decoder regularity scalars") {
    MatrixXd P(2, 2);
    P << 0.8, 0.3, 0.2, 0.7;
    DecoderCodeMap d(P, BregmanGenerator::bernoulli());
    auto dec = [](const VectorXd& z) {
      VectorXd out(2);
      for (int k = 0; k < 2; ++k) out(k) = 1.0 / (1.0 + std::exp(-z(k)));
      return out;
    };
    MatrixXd Z(50, 2);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    for (int i = 0; i < Z.size(); ++i) Z.data()[i] = n(rng);
    const auto r = decoder_regularity(d, Z, dec);
    CHECK(r.L > 0.0);
    CHECK(r.L <= 0.25 + 1e-9);  // sigmoid slope bound
    CHECK(r.gamma >= 0.0);
  }

  TEST_CASE("code map json round trip") {
    const MatrixXd I = MatrixXd::Identity(2, 2);
    EncoderCodeMap e(summary_of({v2(-1, 0), v2(1, 0.5)}, {I, 2 * I}, {0.3, 0.7}));
    const auto e2 = encoder_map_from_json(to_json(e));
    CHECK(e2.regime() == e.regime());
    MatrixXd P(2, 3);
    P << 0.9, 0.1, 0.4, 0.2, 0.6, 0.5;
    DecoderCodeMap d(P, BregmanGenerator::bernoulli());
    const auto d2 = decoder_map_from_json(to_json(d));
    CHECK(d2.prototypes() == d.prototypes());
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int t = 0; t < 500; ++t) {
      const VectorXd z = v2(u(rng), u(rng));
      CHECK(e2.label(z) == e.label(z));
      const VectorXd x = Eigen::Vector3d(0.5 + u(rng) / 7, 0.5 + u(rng) / 7, 0.5 + u(rng) / 7);
      CHECK(d2.label(x) == d.label(x));
    }
  }
}
