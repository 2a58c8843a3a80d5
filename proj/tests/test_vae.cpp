#include <cmath>
#include <random>
#include <sstream>

#include "codeaudit/util.hpp"
#include "codeaudit/vae.hpp"
#include "doctest.h"

using namespace codeaudit;
using namespace codeaudit::vae;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd gaussian(int r, int c, std::uint64_t seed) {
  auto rng = stream_rng(seed, 99);
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < M.size(); ++i) M.data()[i] = n(rng);
  return M;
}

MatrixXd binary_data(int N, int D, std::uint64_t seed) {
  auto rng = stream_rng(seed, 98);
  std::bernoulli_distribution b(0.4);
  MatrixXd X(N, D);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = b(rng);
  return X;
}

MatrixXd token_data(int N, int L, int V, std::uint64_t seed) {
  auto rng = stream_rng(seed, 97);
  std::uniform_int_distribution<int> t(0, V - 1);
  MatrixXd X = MatrixXd::Zero(N, L * V);
  for (int n = 0; n < N; ++n)
    for (int l = 0; l < L; ++l) X(n, l * V + t(rng)) = 1.0;
  return X;
}

VaeSpec small_spec(Likelihood lik) {
  VaeSpec s;
  s.latent_dim = 2;
  s.hidden = {5, 4};
  s.likelihood = lik;
  if (lik == Likelihood::categorical) {
    s.vocab = 3;
    s.positions = 2;
    s.input_dim = 6;
  } else {
    s.input_dim = 4;
  }
  return s;
}

// Largest coordinate-wise relative error against central differences.
double gradient_error(const VaeModel& base, const MatrixXd& X, const MatrixXd& noise, double beta) {
  VectorXd g;
  base.loss_and_gradient(X, noise, beta, g);
  const VectorXd theta = base.parameters();
  VaeModel m = base;
  double worst = 0.0;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    VectorXd t = theta;
    t(i) += h;
    m.set_parameters(t);
    const double up = m.loss(X, noise, beta);
    t(i) -= 2 * h;
    m.set_parameters(t);
    const double dn = m.loss(X, noise, beta);
    const double fd = (up - dn) / (2 * h);
    worst = std::max(worst, std::abs(fd - g(i)) / std::max({std::abs(fd), std::abs(g(i)), 1e-6}));
  }
  return worst;
}

}  // namespace

TEST_SUITE("vae") {
  TEST_CASE("analytic gradient matches central differences") {
    for (auto lik : {Likelihood::bernoulli, Likelihood::categorical}) {
      for (std::uint64_t seed : {1u, 2u, 3u}) {
        const VaeSpec s = small_spec(lik);
        const VaeModel m(s, seed);
        const MatrixXd X = lik == Likelihood::bernoulli ? binary_data(6, 4, seed) : token_data(6, 2, 3, seed);
        const MatrixXd noise = gaussian(6, 2, seed);
        CAPTURE(to_string(lik));
        CHECK(gradient_error(m, X, noise, 1.0) <= 1e-4);
        CHECK(gradient_error(m, X, noise, 0.3) <= 1e-4);
      }
    }
  }

  TEST_CASE("rate examples") {
    const VaeSpec s = small_spec(Likelihood::bernoulli);
    const VaeModel m(s, 4);
    const MatrixXd X = binary_data(3, 4, 4);
    MatrixXd mu, lv;
    m.encode(X, mu, lv);
    const auto terms = m.elbo_terms(X, mu, 1.0);
    for (int n = 0; n < 3; ++n) {
      double r = 0.0;
      for (int j = 0; j < 2; ++j) r += 0.5 * (mu(n, j) * mu(n, j) + std::exp(lv(n, j)) - 1 - lv(n, j));
      CHECK(terms.rate(n) == doctest::Approx(r).epsilon(1e-12));
      CHECK(terms.elbo(n) == doctest::Approx(terms.recon(n) - terms.rate(n)).epsilon(1e-12));
    }

    // Zero encoder weights and biases give q = N(0, I), so the rate vanishes;
    // a logvar bias of log 2 in one unit gives 0.5 (2 - 1 - log 2).
    VaeModel z = m;
    VectorXd theta = z.parameters();
    theta.head(static_cast<Eigen::Index>(z.encoder().parameter_count())).setZero();
    z.set_parameters(theta);
    CHECK(mean_rate(z, X) == doctest::Approx(0.0).epsilon(1e-15));
    Mlp enc = z.encoder();
    enc.layers().back().b(2) = std::log(2.0);
    const VaeModel z2(s, enc, z.decoder());
    CHECK(mean_rate(z2, X) == doctest::Approx(0.5 * (1 - std::log(2.0))).epsilon(1e-12));
    CHECK(active_units(z, X) == 0);
  }

  TEST_CASE("bernoulli log-likelihood saturates at the clip") {
    VaeSpec s = small_spec(Likelihood::bernoulli);
    const VaeModel m(s, 5);
    Mlp dec = m.decoder();
    for (auto& L : dec.layers()) L.W.setZero(), L.b.setZero();
    dec.layers().back().b << 50, -50, 50, -50;
    const VaeModel sat(s, m.encoder(), dec);
    MatrixXd X(1, 4);
    X << 1, 0, 1, 0;
    const double ll = sat.log_likelihood(X, MatrixXd::Zero(1, 2))(0, 0);
    CHECK(ll == doctest::Approx(4 * std::log1p(-s.epsilon)).epsilon(1e-12));
    CHECK(std::abs(ll) <= 1e-6);
    const MatrixXd d = sat.decode(MatrixXd::Zero(1, 2));
    CHECK(d.minCoeff() == s.epsilon);
    CHECK(d.maxCoeff() == 1.0 - s.epsilon);
  }

  TEST_CASE("categorical outputs are per-position distributions") {
    const VaeSpec s = small_spec(Likelihood::categorical);
    const VaeModel m(s, 6);
    const MatrixXd d = m.decode(gaussian(5, 2, 6));
    for (int n = 0; n < 5; ++n)
      for (int l = 0; l < 2; ++l) CHECK(d.row(n).segment(3 * l, 3).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("decoder Jacobian matches finite differences") {
    for (auto lik : {Likelihood::bernoulli, Likelihood::categorical}) {
      const VaeModel m(small_spec(lik), 7);
      const VectorXd z = gaussian(2, 1, 7).col(0);
      const MatrixXd J = *m.decoder_jacobian(z);
      for (int j = 0; j < 2; ++j) {
        VectorXd a = z, b = z;
        a(j) += 1e-6;
        b(j) -= 1e-6;
        const VectorXd fd = (m.decode_one(a) - m.decode_one(b)) / 2e-6;
        CHECK((fd - J.col(j)).cwiseAbs().maxCoeff() <= 1e-7);
      }
    }
  }

  TEST_CASE("training") {
    const VaeSpec s = small_spec(Likelihood::bernoulli);
    const MatrixXd X = binary_data(40, 4, 8);
    TrainConfig c;
    c.epochs = 0;
    SUBCASE("zero learning rate leaves parameters unchanged") {
      c.lr = 0.0;
      c.epochs = 5;
      const VaeModel m(s, 8);
      CHECK(train(m, X, c).model.parameters() == m.parameters());
    }
    SUBCASE("deterministic and decreasing") {
      c.epochs = 300;
      c.lr = 1e-2;
      c.eval_every = 50;
      const auto a = train(VaeModel(s, 8), X, c);
      const auto b = train(VaeModel(s, 8), X, c);
      CHECK(a.model.parameters() == b.model.parameters());
      REQUIRE(a.curve.size() == 7);
      CHECK(a.curve.front().epoch == 0);
      CHECK(a.curve.back().epoch == 299);
      CHECK(a.curve.back().loss < a.curve.front().loss);
      std::ostringstream csv;
      write_curve_csv(csv, a.curve);
      CHECK(csv.str().rfind("epoch,loss,recon,rate,AU\n", 0) == 0);
    }
    SUBCASE("minibatches and warmup") {
      c.epochs = 20;
      c.batch_size = 16;
      c.warmup_epochs = 10;
      const auto a = train(VaeModel(s, 8), X, c);
      const auto b = train(VaeModel(s, 8), X, c);
      CHECK(a.model.parameters() == b.model.parameters());
    }
  }

  TEST_CASE("active unit count") {
    const VaeSpec s = small_spec(Likelihood::bernoulli);
    const VaeModel m(s, 9);
    const MatrixXd X = binary_data(50, 4, 9);
    int prev = 3;
    for (double t : {0.0, 1e-6, 1e-4, 1e-2, 1.0, 100.0}) {
      const int au = active_units(m, X, t);
      CHECK(au <= prev);
      CHECK(au >= 0);
      prev = au;
    }
    CHECK(active_units(m, X, 0.0) == 2);
    CHECK(active_units(m, X, 100.0) == 0);
  }

  TEST_CASE("input validation") {
    const VaeModel b(small_spec(Likelihood::bernoulli), 1);
    CHECK_THROWS_AS(b.check_inputs(MatrixXd::Zero(2, 3)), InvalidArgument);
    MatrixXd nan = MatrixXd::Zero(2, 4);
    nan(1, 1) = std::nan("");
    CHECK_THROWS_AS(b.check_inputs(nan), InvalidArgument);
    const VaeModel c(small_spec(Likelihood::categorical), 1);
    MatrixXd two = token_data(2, 2, 3, 1);
    CHECK_NOTHROW(c.check_inputs(two));
    two(0, 0) = two(0, 1) = two(0, 2) = 1.0;
    CHECK_THROWS_AS(c.check_inputs(two), InvalidArgument);
    VaeSpec bad = small_spec(Likelihood::categorical);
    bad.input_dim = 7;
    CHECK_THROWS_AS(VaeModel(bad, 0), InvalidArgument);
  }

  TEST_CASE("snapshots round trip byte-identically") {
    for (auto lik : {Likelihood::bernoulli, Likelihood::categorical}) {
      const VaeModel m(small_spec(lik), 10);
      const nlohmann::json training = {{"epochs", 3}};
      const std::string s1 = snapshot_string(m, training);
      const VaeModel r = restore_snapshot_string(s1);
      CHECK(snapshot_string(r, training) == s1);
      CHECK(r.parameters() == m.parameters());
      const MatrixXd X = lik == Likelihood::bernoulli ? binary_data(4, 4, 1) : token_data(4, 2, 3, 1);
      const MatrixXd Z = gaussian(4, 2, 3);
      CHECK(r.elbo_terms(X, Z, 1.0).elbo == m.elbo_terms(X, Z, 1.0).elbo);

      auto j = nlohmann::json::parse(s1);
      CHECK(j["format"] == "codeaudit-vae");
      std::string w = j["decoder"][0]["W"].get<std::string>();
      w[2] = w[2] == 'A' ? 'B' : 'A';
      j["decoder"][0]["W"] = w;
      CHECK_THROWS_AS(restore_snapshot_string(j.dump(1)), FormatError);
      CHECK_THROWS_AS(restore_snapshot_string("{"), FormatError);
      auto v = nlohmann::json::parse(s1);
      v["version"] = 99;
      CHECK_THROWS_AS(restore_snapshot_string(v.dump()), FormatError);
    }
  }
}
