#include "codeaudit/codemaps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "codeaudit/util.hpp"

namespace codeaudit::codemaps {

using Eigen::MatrixXd;
using Eigen::VectorXd;

int argmin_lowest(const VectorXd& scores) {
  if (scores.size() == 0) throw InvalidArgument("argmin of an empty score vector");
  int best = 0;
  double best_v = scores(0);
  for (Eigen::Index c = 1; c < scores.size(); ++c) {
    const double tol = 1e-12 * std::max(1.0, std::abs(best_v));
    if (scores(c) < best_v - tol) {
      best = static_cast<int>(c);
      best_v = scores(c);
    }
  }
  return best;
}

std::string to_string(EncoderRegime r) {
  switch (r) {
    case EncoderRegime::isotropic_uniform: return "isotropic_uniform";
    case EncoderRegime::additively_weighted: return "additively_weighted";
    case EncoderRegime::mahalanobis_quadric: return "mahalanobis_quadric";
  }
  return "unknown";
}

EncoderRegime parse_encoder_regime(const std::string& name) {
  if (name == "isotropic_uniform") return EncoderRegime::isotropic_uniform;
  if (name == "additively_weighted") return EncoderRegime::additively_weighted;
  if (name == "mahalanobis_quadric" || name == "mahalanobis") return EncoderRegime::mahalanobis_quadric;
  throw InvalidArgument("unknown encoder regime '" + name + "'");
}

std::optional<double> shared_isotropic_variance(const GmmSummary& s, double rel_tol) {
  if (s.components.empty()) return std::nullopt;
  const double s2 = s.components[0].covariance(0, 0);
  for (const auto& c : s.components) {
    const Eigen::Index d = c.covariance.rows();
    const MatrixXd target = s2 * MatrixXd::Identity(d, d);
    if ((c.covariance - target).cwiseAbs().maxCoeff() > rel_tol * std::abs(s2)) return std::nullopt;
  }
  return s2;
}

namespace {

bool equal_weights(const GmmSummary& s) {
  const double w0 = s.components[0].weight;
  for (const auto& c : s.components)
    if (std::abs(c.weight - w0) > 1e-12 * w0) return false;
  return true;
}

}  // namespace

EncoderCodeMap::EncoderCodeMap(GmmSummary summary, std::optional<EncoderRegime> regime)
    : summary_(std::move(summary)) {
  if (summary_.components.empty()) throw InvalidArgument("encoder map needs at least one component");
  const int d = summary_.dim();
  double total = 0.0;
  for (const auto& c : summary_.components) {
    if (c.mean.size() != d || c.covariance.rows() != d || c.covariance.cols() != d)
      throw InvalidArgument("encoder map: inconsistent component shapes");
    if (!(c.weight > 0.0 && c.weight <= 1.0)) throw InvalidArgument("encoder map: weight outside (0,1]");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("encoder map: weights do not sum to 1");

  const auto s2 = shared_isotropic_variance(summary_);
  const bool uniform = equal_weights(summary_);
  EncoderRegime natural = EncoderRegime::mahalanobis_quadric;
  if (s2 && uniform) natural = EncoderRegime::isotropic_uniform;
  else if (s2) natural = EncoderRegime::additively_weighted;
  regime_ = regime.value_or(natural);
  if (regime_ == EncoderRegime::isotropic_uniform && natural != EncoderRegime::isotropic_uniform)
    throw InvalidArgument("isotropic_uniform regime needs equal s^2 I covariances and equal weights");
  if (regime_ == EncoderRegime::additively_weighted && !s2)
    throw InvalidArgument("additively_weighted regime needs equal s^2 I covariances");
  if (s2) sigma2_ = *s2;

  for (const auto& c : summary_.components) {
    Eigen::LLT<MatrixXd> llt(c.covariance);
    if (llt.info() != Eigen::Success) throw InvalidArgument("encoder map: covariance not SPD");
    const MatrixXd L = llt.matrixL();
    log_det_.push_back(2.0 * L.diagonal().array().log().sum());
    precision_.push_back(llt.solve(MatrixXd::Identity(d, d)));
  }
}

VectorXd EncoderCodeMap::potentials(const VectorXd& z) const {
  VectorXd phi(K());
  for (int c = 0; c < K(); ++c) {
    const auto& comp = summary_.components[c];
    const VectorXd diff = z - comp.mean;
    phi(c) = 0.5 * diff.dot(precision_[c] * diff) + 0.5 * log_det_[c] - std::log(comp.weight);
  }
  return phi;
}

VectorXd EncoderCodeMap::scores(const VectorXd& z) const {
  if (z.size() != dim()) throw InvalidArgument("encoder map: latent dimension mismatch");
  switch (regime_) {
    case EncoderRegime::isotropic_uniform: {
      VectorXd s(K());
      for (int c = 0; c < K(); ++c) s(c) = (z - summary_.components[c].mean).squaredNorm();
      return s;
    }
    case EncoderRegime::additively_weighted: {
      VectorXd s(K());
      for (int c = 0; c < K(); ++c) {
        const auto& comp = summary_.components[c];
        s(c) = (z - comp.mean).squaredNorm() - 2.0 * sigma2_ * std::log(comp.weight);
      }
      return s;
    }
    case EncoderRegime::mahalanobis_quadric: return potentials(z);
  }
  return potentials(z);
}

int EncoderCodeMap::label(const VectorXd& z) const { return argmin_lowest(scores(z)); }

std::vector<int> EncoderCodeMap::labels(const MatrixXd& Z) const {
  std::vector<int> out(Z.rows());
  for (Eigen::Index n = 0; n < Z.rows(); ++n) out[n] = label(Z.row(n).transpose());
  return out;
}

// ---------------------------------------------------------------------------

BregmanGenerator BregmanGenerator::categorical(int positions, int vocab) {
  if (positions < 1 || vocab < 2) throw InvalidArgument("categorical generator needs positions >= 1, vocab >= 2");
  return {GeneratorKind::categorical, positions, vocab};
}

std::string to_string(GeneratorKind k) {
  return k == GeneratorKind::bernoulli ? "bernoulli" : "categorical";
}

namespace {

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }
double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }
double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

double BregmanGenerator::F(const VectorXd& d) const {
  double s = 0.0;
  if (kind == GeneratorKind::bernoulli) {
    for (double v : d) s += xlogx(v) + xlogx(1.0 - v);
  } else {
    for (double v : d) s += xlogx(v) - v;
  }
  return s;
}

VectorXd BregmanGenerator::grad(const VectorXd& d) const {
  VectorXd g(d.size());
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    g(k) = kind == GeneratorKind::bernoulli ? std::log(d(k)) - std::log1p(-d(k)) : std::log(d(k));
  }
  return g;
}

double BregmanGenerator::F_dual(const VectorXd& t) const {
  double s = 0.0;
  for (double v : t) s += kind == GeneratorKind::bernoulli ? softplus(v) : std::exp(v);
  return s;
}

VectorXd BregmanGenerator::grad_dual(const VectorXd& t) const {
  VectorXd g(t.size());
  for (Eigen::Index k = 0; k < t.size(); ++k)
    g(k) = kind == GeneratorKind::bernoulli ? sigmoid(t(k)) : std::exp(t(k));
  return g;
}

VectorXd BregmanGenerator::hessian_diag(const VectorXd& d) const {
  VectorXd h(d.size());
  for (Eigen::Index k = 0; k < d.size(); ++k)
    h(k) = kind == GeneratorKind::bernoulli ? 1.0 / (d(k) * (1.0 - d(k))) : 1.0 / d(k);
  return h;
}

double BregmanGenerator::divergence(const VectorXd& x, const VectorXd& y) const {
  double s = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double a = x(k), b = y(k);
    if (kind == GeneratorKind::bernoulli) {
      s += xlogx(a) - a * std::log(b) + xlogx(1.0 - a) - (1.0 - a) * std::log1p(-b);
    } else {
      s += xlogx(a) - a * std::log(b) - a + b;
    }
  }
  return std::max(s, 0.0);
}

double BregmanGenerator::dual_divergence(const VectorXd& a, const VectorXd& b) const {
  return F_dual(a) - F_dual(b) - grad_dual(b).dot(a - b);
}

VectorXd clip_output(const VectorXd& d, double eps) {
  return d.cwiseMax(eps).cwiseMin(1.0 - eps);
}

DecoderCodeMap::DecoderCodeMap(MatrixXd prototypes, BregmanGenerator generator, double eps)
    : generator_(generator), eps_(eps) {
  if (prototypes.rows() < 1 || prototypes.cols() < 1) throw InvalidArgument("decoder map needs prototypes");
  if (!(eps > 0.0 && eps < 0.5)) throw InvalidArgument("decoder map: epsilon outside (0, 0.5)");
  if (!prototypes.allFinite()) throw InvalidArgument("decoder map: non-finite prototype");
  if (generator_.kind == GeneratorKind::categorical &&
      prototypes.cols() != static_cast<Eigen::Index>(generator_.positions) * generator_.vocab)
    throw InvalidArgument("decoder map: prototype width != positions * vocab");
  prototypes_ = prototypes.cwiseMax(eps).cwiseMin(1.0 - eps);
  const int K = static_cast<int>(prototypes_.rows());
  for (int i = 0; i < K; ++i)
    for (int j = i + 1; j < K; ++j)
      if (generator_.divergence(prototypes_.row(i).transpose(), prototypes_.row(j).transpose()) <= 0.0)
        throw InvalidArgument("decoder map: prototypes " + std::to_string(i) + " and " +
                              std::to_string(j) + " coincide");
  theta_.resize(K, prototypes_.cols());
  a_.resize(K);
  for (int c = 0; c < K; ++c) {
    const VectorXd d = prototypes_.row(c).transpose();
    const VectorXd t = generator_.grad(d);
    theta_.row(c) = t.transpose();
    a_(c) = d.dot(t) - generator_.F(d);
  }
  centers_ = theta_ / 2.0;
  weights_ = theta_.rowwise().squaredNorm() / 4.0 - a_;
}

VectorXd DecoderCodeMap::divergences(const VectorXd& x_raw) const {
  if (x_raw.size() != output_dim()) throw InvalidArgument("decoder map: output dimension mismatch");
  const VectorXd x = clip_output(x_raw, eps_);
  VectorXd d(K());
  for (int c = 0; c < K(); ++c) d(c) = generator_.divergence(x, prototypes_.row(c).transpose());
  return d;
}

int DecoderCodeMap::label(const VectorXd& x) const { return argmin_lowest(divergences(x)); }

std::vector<int> DecoderCodeMap::labels(const MatrixXd& X) const {
  std::vector<int> out(X.rows());
  for (Eigen::Index n = 0; n < X.rows(); ++n) out[n] = label(X.row(n).transpose());
  return out;
}

int DecoderCodeMap::affine_label(const VectorXd& x_raw) const {
  if (x_raw.size() != output_dim()) throw InvalidArgument("decoder map: output dimension mismatch");
  const VectorXd x = clip_output(x_raw, eps_);
  VectorXd s(K());
  for (int c = 0; c < K(); ++c) s(c) = (x - centers_.row(c).transpose()).squaredNorm() - weights_(c);
  return argmin_lowest(s);
}

int DecoderCodeMap::dual_label(const VectorXd& x_raw) const {
  if (x_raw.size() != output_dim()) throw InvalidArgument("decoder map: output dimension mismatch");
  const VectorXd theta_x = generator_.grad(clip_output(x_raw, eps_));
  VectorXd s(K());
  for (int c = 0; c < K(); ++c) s(c) = generator_.dual_divergence(theta_.row(c).transpose(), theta_x);
  return argmin_lowest(s);
}

double DecoderCodeMap::tie_gap(const VectorXd& x) const {
  if (K() < 2) return kInf;
  VectorXd d = divergences(x);
  std::sort(d.begin(), d.end());
  return d(1) - d(0);
}

double DecoderCodeMap::bisector_distance(const VectorXd& x_raw) const {
  const VectorXd x = clip_output(x_raw, eps_);
  const int own = label(x);
  double best = kInf;
  for (int c = 0; c < K(); ++c) {
    if (c == own) continue;
    const VectorXd normal = (theta_.row(own) - theta_.row(c)).transpose();
    const double nn = normal.norm();
    if (nn == 0.0) continue;
    best = std::min(best, std::abs(normal.dot(x) - (a_(own) - a_(c))) / nn);
  }
  return best;
}

// ---------------------------------------------------------------------------

MatrixXd finite_difference_jacobian(const LatentFunction& f, const VectorXd& z, double step) {
  if (!(step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  const Eigen::Index d = z.size();
  MatrixXd J;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double h = step * std::max(1.0, std::abs(z(i)));
    VectorXd zp = z, zm = z;
    zp(i) += h;
    zm(i) -= h;
    const VectorXd col = (f(zp) - f(zm)) / (2.0 * h);
    if (i == 0) J.resize(col.size(), d);
    J.col(i) = col;
  }
  return J;
}

FisherMismatch fisher_mismatch(const GmmSummary& summary, const LatentFunction& decoder,
                               const BregmanGenerator& generator, double fd_step,
                               const JacobianFunction& jacobian, double eps) {
  if (!(fd_step > 0.0)) throw InvalidArgument("fisher_mismatch: fd_step must be positive");
  FisherMismatch out;
  for (const auto& comp : summary.components) {
    const VectorXd dc = clip_output(decoder(comp.mean), eps);
    const MatrixXd J = jacobian ? jacobian(comp.mean) : finite_difference_jacobian(decoder, comp.mean, fd_step);
    if (J.rows() != dc.size()) throw InvalidArgument("fisher_mismatch: Jacobian shape mismatch");
    ComponentMismatch cm;
    cm.G = J.transpose() * generator.hessian_diag(dc).asDiagonal() * J;
    cm.G = 0.5 * (cm.G + cm.G.transpose());
    const Eigen::Index d = comp.covariance.rows();
    const MatrixXd prec = comp.covariance.llt().solve(MatrixXd::Identity(d, d));
    const double gg = cm.G.squaredNorm();
    cm.a_star = gg > 0.0 ? (prec.cwiseProduct(cm.G)).sum() / gg : 0.0;
    cm.kappa = (prec - cm.a_star * cm.G).norm();

    Eigen::SelfAdjointEigenSolver<MatrixXd> ges(cm.G, Eigen::EigenvaluesOnly);
    const double gmax = ges.eigenvalues().cwiseAbs().maxCoeff();
    if (gmax == 0.0 || ges.eigenvalues().minCoeff() <= 1e-12 * gmax) {
      cm.kappa_inv_defined = false;
      cm.kappa_inv = std::numeric_limits<double>::quiet_NaN();
    } else {
      // Sigma v = lambda G v has the eigenvalues of Sigma G^-1.
      Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> gen(comp.covariance, cm.G,
                                                             Eigen::EigenvaluesOnly);
      cm.kappa_inv = gen.eigenvalues().array().log().square().sum();
    }
    out.weighted_kappa += comp.weight * cm.kappa;
    out.components.push_back(std::move(cm));
  }
  return out;
}

DecoderRegularity decoder_regularity(const DecoderCodeMap& map, const MatrixXd& Z,
                                     const LatentFunction& decoder, double fd_step,
                                     const JacobianFunction& jacobian) {
  if (Z.rows() == 0) throw InvalidArgument("decoder_regularity: no latent points");
  std::vector<double> dist(Z.rows());
  double norm_sum = 0.0;
  for (Eigen::Index n = 0; n < Z.rows(); ++n) {
    const VectorXd z = Z.row(n).transpose();
    const MatrixXd J = jacobian ? jacobian(z) : finite_difference_jacobian(decoder, z, fd_step);
    Eigen::JacobiSVD<MatrixXd> svd(J);
    norm_sum += svd.singularValues()(0);
    dist[n] = map.bisector_distance(decoder(z));
  }
  std::sort(dist.begin(), dist.end());
  // Linear interpolation between order statistics.
  const double pos = 0.05 * static_cast<double>(dist.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, dist.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  DecoderRegularity r;
  r.L = norm_sum / static_cast<double>(Z.rows());
  r.gamma = (std::isinf(dist[lo]) || std::isinf(dist[hi])) ? dist[lo]
                                                           : dist[lo] + frac * (dist[hi] - dist[lo]);
  return r;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const EncoderCodeMap& map) {
  nlohmann::json j;
  j["type"] = "encoder";
  j["regime"] = to_string(map.regime());
  j["tie_rule"] = "lowest_index";
  j["gmm"] = to_json(map.summary());
  return j;
}

EncoderCodeMap encoder_map_from_json(const nlohmann::json& j) {
  try {
    if (j.at("type").get<std::string>() != "encoder") throw FormatError("not an encoder map");
    return EncoderCodeMap(gmm_from_json(j.at("gmm")), parse_encoder_regime(j.at("regime").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("encoder map json: ") + e.what());
  }
}

nlohmann::json to_json(const DecoderCodeMap& map) {
  nlohmann::json j;
  j["type"] = "decoder";
  j["generator"] = to_string(map.generator().kind);
  j["positions"] = map.generator().positions;
  j["vocab"] = map.generator().vocab;
  j["epsilon"] = map.epsilon();
  j["tie_rule"] = "lowest_index";
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index c = 0; c < map.prototypes().rows(); ++c) {
    const VectorXd r = map.prototypes().row(c).transpose();
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  j["prototypes"] = rows;
  return j;
}

DecoderCodeMap decoder_map_from_json(const nlohmann::json& j) {
  try {
    if (j.at("type").get<std::string>() != "decoder") throw FormatError("not a decoder map");
    const auto kind = j.at("generator").get<std::string>();
    BregmanGenerator g = kind == "bernoulli"
                             ? BregmanGenerator::bernoulli()
                             : BregmanGenerator::categorical(j.at("positions").get<int>(), j.at("vocab").get<int>());
    const auto rows = j.at("prototypes").get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw FormatError("decoder map json: no prototypes");
    MatrixXd P(rows.size(), rows[0].size());
    for (std::size_t c = 0; c < rows.size(); ++c) {
      if (rows[c].size() != rows[0].size()) throw FormatError("decoder map json: ragged prototypes");
      for (std::size_t k = 0; k < rows[c].size(); ++k) P(c, k) = rows[c][k];
    }
    return DecoderCodeMap(P, g, j.at("epsilon").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("decoder map json: ") + e.what());
  }
}

nlohmann::json to_json(const FisherMismatch& fm) {
  nlohmann::json j;
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : fm.components) {
    nlohmann::json cj{{"kappa", c.kappa}, {"a_star", c.a_star}, {"kappa_inv_defined", c.kappa_inv_defined}};
    cj["kappa_inv"] = c.kappa_inv_defined ? nlohmann::json(c.kappa_inv) : nlohmann::json(nullptr);
    comps.push_back(cj);
  }
  j["components"] = comps;
  j["weighted_kappa"] = fm.weighted_kappa;
  return j;
}

}  // namespace codeaudit::codemaps
