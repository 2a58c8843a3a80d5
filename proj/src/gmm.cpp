#include "codeaudit/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "codeaudit/util.hpp"

namespace codeaudit::codemaps {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd floor_covariance(const MatrixXd& S, double floor, CovarianceType type) {
  if (type == CovarianceType::diagonal) {
    VectorXd d = S.diagonal().cwiseMax(floor);
    return d.asDiagonal();
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (S + S.transpose()));
  const VectorXd lam = es.eigenvalues().cwiseMax(floor);
  MatrixXd out = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

// log N(x; mu, Sigma) for every row of X.
VectorXd log_gaussian_rows(const MatrixXd& X, const GaussianComponent& c) {
  const Eigen::Index d = X.cols();
  Eigen::LLT<MatrixXd> llt(c.covariance);
  if (llt.info() != Eigen::Success) throw NumericalError("covariance not positive definite");
  const MatrixXd L = llt.matrixL();
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  MatrixXd centered = (X.rowwise() - c.mean.transpose()).transpose();  // d x N
  const MatrixXd solved = L.triangularView<Eigen::Lower>().solve(centered);
  const VectorXd maha = solved.colwise().squaredNorm().transpose();
  const double norm = -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
  return (norm - 0.5 * maha.array()).matrix();
}

struct EStep {
  MatrixXd resp;  // N x K
  double mean_ll = 0.0;
};

EStep e_step(const MatrixXd& X, const std::vector<GaussianComponent>& comps) {
  const Eigen::Index N = X.rows();
  const int K = static_cast<int>(comps.size());
  MatrixXd logp(N, K);
  for (int c = 0; c < K; ++c) {
    logp.col(c) = log_gaussian_rows(X, comps[c]).array() + std::log(comps[c].weight);
  }
  EStep out{MatrixXd(N, K), 0.0};
  double total = 0.0;
  for (Eigen::Index n = 0; n < N; ++n) {
    const double m = logp.row(n).maxCoeff();
    const double lse = m + std::log((logp.row(n).array() - m).exp().sum());
    out.resp.row(n) = (logp.row(n).array() - lse).exp();
    total += lse;
  }
  out.mean_ll = total / static_cast<double>(N);
  return out;
}

void m_step(const MatrixXd& X, const MatrixXd& resp, double floor, CovarianceType type,
            std::vector<GaussianComponent>& comps) {
  const double N = static_cast<double>(X.rows());
  const int K = static_cast<int>(comps.size());
  double weight_total = 0.0;
  for (int c = 0; c < K; ++c) {
    const double Nc = resp.col(c).sum();
    if (Nc > 1e-10) {
      const VectorXd mean = (X.transpose() * resp.col(c)) / Nc;
      const MatrixXd centered = X.rowwise() - mean.transpose();
      const MatrixXd S = (centered.transpose() * resp.col(c).asDiagonal() * centered) / Nc;
      comps[c].mean = mean;
      comps[c].covariance = floor_covariance(S, floor, type);
    }
    // An emptied component keeps its last mean/covariance with a tiny weight.
    comps[c].weight = std::max(Nc, 1e-12) / N;
    weight_total += comps[c].weight;
  }
  for (auto& c : comps) c.weight /= weight_total;
}

std::vector<int> kmeanspp_centers(const MatrixXd& X, int K, std::mt19937_64& rng) {
  const Eigen::Index N = X.rows();
  std::vector<int> centers;
  std::uniform_int_distribution<Eigen::Index> pick(0, N - 1);
  centers.push_back(static_cast<int>(pick(rng)));
  VectorXd d2 = (X.rowwise() - X.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < K) {
    const double total = d2.sum();
    int next = 0;
    if (total <= 0.0) {
      next = static_cast<int>(pick(rng));
    } else {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      for (Eigen::Index n = 0; n < N; ++n) {
        target -= d2(n);
        if (target <= 0.0) {
          next = static_cast<int>(n);
          break;
        }
        next = static_cast<int>(n);
      }
    }
    centers.push_back(next);
    d2 = d2.cwiseMin((X.rowwise() - X.row(next)).rowwise().squaredNorm());
  }
  return centers;
}

struct FitResult {
  std::vector<GaussianComponent> comps;
  std::vector<double> log;
};

FitResult single_fit(const MatrixXd& X, const GmmOptions& opt, CovarianceType type,
                     std::mt19937_64& rng) {
  const Eigen::Index N = X.rows();
  const int K = opt.K;
  const auto centers = kmeanspp_centers(X, K, rng);
  MatrixXd resp = MatrixXd::Zero(N, K);
  for (Eigen::Index n = 0; n < N; ++n) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < K; ++c) {
      const double dd = (X.row(n) - X.row(centers[c])).squaredNorm();
      if (dd < best_d) {
        best_d = dd;
        best = c;
      }
    }
    resp(n, best) = 1.0;
  }
  FitResult fit;
  fit.comps.resize(K);
  const Eigen::Index d = X.cols();
  for (int c = 0; c < K; ++c) {
    fit.comps[c].mean = X.row(centers[c]).transpose();
    fit.comps[c].covariance = MatrixXd::Identity(d, d);
    fit.comps[c].weight = 1.0 / K;
  }
  m_step(X, resp, opt.covariance_floor, type, fit.comps);
  for (int it = 0; it < opt.max_iter; ++it) {
    const EStep e = e_step(X, fit.comps);
    fit.log.push_back(e.mean_ll);
    const std::size_t t = fit.log.size();
    if (t >= 2 && fit.log[t - 1] - fit.log[t - 2] < opt.tol) break;
    m_step(X, e.resp, opt.covariance_floor, type, fit.comps);
  }
  return fit;
}

}  // namespace

std::string to_string(CovarianceType t) {
  switch (t) {
    case CovarianceType::full: return "full";
    case CovarianceType::diagonal: return "diagonal";
    case CovarianceType::automatic: return "auto";
  }
  return "unknown";
}

CovarianceType parse_covariance(const std::string& name) {
  if (name == "full") return CovarianceType::full;
  if (name == "diagonal" || name == "diag") return CovarianceType::diagonal;
  if (name == "auto") return CovarianceType::automatic;
  throw InvalidArgument("unknown covariance type '" + name + "'");
}

GmmSummary fit_gmm(const MatrixXd& X, const GmmOptions& opt) {
  const Eigen::Index N = X.rows();
  const Eigen::Index d = X.cols();
  if (opt.K < 1) throw InvalidArgument("GMM needs K >= 1");
  if (d < 1) throw InvalidArgument("GMM needs latent dimension >= 1");
  if (N < opt.K) {
    throw InvalidArgument("GMM needs at least K samples (K=" + std::to_string(opt.K) +
                          ", N=" + std::to_string(N) + ")");
  }
  if (!X.allFinite()) throw InvalidArgument("GMM samples must be finite");
  if (opt.restarts < 1 || opt.max_iter < 1) throw InvalidArgument("restarts and max_iter must be >= 1");

  GmmSummary out;
  out.covariance = opt.covariance == CovarianceType::automatic
                       ? (d <= 3 ? CovarianceType::full : CovarianceType::diagonal)
                       : opt.covariance;

  const VectorXd mean = X.colwise().mean().transpose();
  const double spread = (X.rowwise() - mean.transpose()).cwiseAbs().maxCoeff();
  if (spread == 0.0) {
    out.degenerate = true;
    for (int c = 0; c < opt.K; ++c) {
      out.components.push_back(
          {mean, opt.covariance_floor * MatrixXd::Identity(d, d), 1.0 / opt.K});
    }
    out.fit_log.push_back(gmm_mean_log_likelihood(out, X));
    return out;
  }

  double best_ll = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < opt.restarts; ++r) {
    auto rng = stream_rng(opt.seed, static_cast<std::uint64_t>(r));
    FitResult fit = single_fit(X, opt, out.covariance, rng);
    if (fit.log.back() > best_ll) {
      best_ll = fit.log.back();
      out.components = std::move(fit.comps);
      out.fit_log = std::move(fit.log);
    }
  }
  return out;
}

double gmm_mean_log_likelihood(const GmmSummary& gmm, const MatrixXd& X) {
  return e_step(X, gmm.components).mean_ll;
}

nlohmann::json to_json(const GmmSummary& gmm) {
  nlohmann::json j;
  j["K"] = gmm.K();
  j["dim"] = gmm.dim();
  j["covariance_type"] = to_string(gmm.covariance);
  j["degenerate"] = gmm.degenerate;
  j["fit_log"] = gmm.fit_log;
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : gmm.components) {
    nlohmann::json cj;
    cj["weight"] = c.weight;
    cj["mean"] = std::vector<double>(c.mean.begin(), c.mean.end());
    std::vector<double> cov;
    for (Eigen::Index r = 0; r < c.covariance.rows(); ++r)
      for (Eigen::Index s = 0; s < c.covariance.cols(); ++s) cov.push_back(c.covariance(r, s));
    cj["covariance"] = cov;  // row-major
    comps.push_back(cj);
  }
  j["components"] = comps;
  return j;
}

GmmSummary gmm_from_json(const nlohmann::json& j) {
  GmmSummary g;
  try {
    g.covariance = parse_covariance(j.at("covariance_type").get<std::string>());
    g.degenerate = j.value("degenerate", false);
    g.fit_log = j.value("fit_log", std::vector<double>{});
    const int dim = j.at("dim").get<int>();
    for (const auto& cj : j.at("components")) {
      GaussianComponent c;
      c.weight = cj.at("weight").get<double>();
      const auto mean = cj.at("mean").get<std::vector<double>>();
      const auto cov = cj.at("covariance").get<std::vector<double>>();
      if (static_cast<int>(mean.size()) != dim || static_cast<int>(cov.size()) != dim * dim) {
        throw FormatError("gmm json: component shape mismatch");
      }
      c.mean = Eigen::Map<const VectorXd>(mean.data(), dim);
      c.covariance.resize(dim, dim);
      for (int r = 0; r < dim; ++r)
        for (int s = 0; s < dim; ++s) c.covariance(r, s) = cov[r * dim + s];
      g.components.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("gmm json: ") + e.what());
  }
  if (g.components.empty()) throw FormatError("gmm json: no components");
  return g;
}

}  // namespace codeaudit::codemaps
