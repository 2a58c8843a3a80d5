#include "codeaudit/gridaudit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "codeaudit/util.hpp"

namespace codeaudit::gridaudit {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(QuadratureRule r) { return r == QuadratureRule::volume ? "volume" : "grid_weight"; }

QuadratureRule parse_quadrature(const std::string& name) {
  if (name == "volume") return QuadratureRule::volume;
  if (name == "grid_weight") return QuadratureRule::grid_weight;
  throw InvalidArgument("unknown quadrature rule '" + name + "'");
}

bool GridPosteriorSet::any_violation() const {
  return std::any_of(ac_violation.begin(), ac_violation.end(), [](bool b) { return b; });
}

namespace {

// Normalizes a row of log weights in place; returns its log-sum-exp.
template <typename Row>
double normalize_log_row(Row&& row) {
  const double m = row.maxCoeff();
  if (!std::isfinite(m)) throw NumericalError("grid row has no finite mass");
  const double lse = m + std::log((row.array() - m).exp().sum());
  row.array() -= lse;
  return lse;
}

void finish_example(GridPosteriorSet& s, Eigen::Index n) {
  double kl = 0.0;
  bool violation = false;
  for (Eigen::Index g = 0; g < s.log_q.cols(); ++g) {
    const double lq = s.log_q(n, g);
    if (lq == -kInf) continue;
    const double lp = s.log_p(n, g);
    if (lp == -kInf) {
      violation = true;
      continue;
    }
    kl += std::exp(lq) * (lq - lp);
  }
  s.delta(n) = violation ? kInf : std::max(kl, 0.0);
  s.ac_violation[n] = violation;
}

}  // namespace

GridPosteriorSet GridPosteriorSet::from_distributions(const MatrixXd& q, const MatrixXd& p) {
  if (q.rows() != p.rows() || q.cols() != p.cols() || q.size() == 0)
    throw InvalidArgument("posterior set: q and p must have the same non-empty shape");
  if ((q.array() < 0.0).any() || (p.array() < 0.0).any())
    throw InvalidArgument("posterior set: negative weight");
  GridPosteriorSet s;
  s.log_q = q.array().log();
  s.log_p = p.array().log();
  s.log_marginal = VectorXd::Zero(q.rows());
  s.delta.resize(q.rows());
  s.ac_violation.assign(q.rows(), false);
  for (Eigen::Index n = 0; n < q.rows(); ++n) {
    normalize_log_row(s.log_q.row(n));
    normalize_log_row(s.log_p.row(n));
    finish_example(s, n);
  }
  return s;
}

VectorXd log_normal_diag(const MatrixXd& Z, const VectorXd& mu, const VectorXd& logvar) {
  const double d = static_cast<double>(Z.cols());
  const Eigen::ArrayXd inv_var = (-logvar.array()).exp();
  const double norm = -0.5 * (d * std::log(2.0 * std::numbers::pi) + logvar.sum());
  VectorXd out(Z.rows());
  for (Eigen::Index g = 0; g < Z.rows(); ++g) {
    const Eigen::ArrayXd diff = Z.row(g).transpose().array() - mu.array();
    out(g) = norm - 0.5 * (diff.square() * inv_var).sum();
  }
  return out;
}

GridPosteriorSet grid_posteriors(const LatentModel& model, const MatrixXd& X, const LatentGrid& grid,
                                 QuadratureRule rule, int jobs) {
  if (grid.dim() != model.latent_dim()) throw InvalidArgument("grid dimension != latent dimension");
  const Eigen::Index N = X.rows();
  const Eigen::Index M = grid.size();
  GridPosteriorSet s;
  s.rule = rule;
  s.log_q.resize(N, M);
  s.log_p.resize(N, M);
  s.log_marginal.resize(N);
  s.delta.resize(N);
  s.ac_violation.assign(N, false);
  MatrixXd mu, logvar;
  model.encode(X, mu, logvar);
  const Eigen::RowVectorXd log_w = grid.weights.array().log().matrix().transpose();

  constexpr Eigen::Index kChunk = 32;
  const std::size_t chunks = static_cast<std::size_t>((N + kChunk - 1) / kChunk);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChunk;
    const Eigen::Index count = std::min(kChunk, N - begin);
    const MatrixXd ll = model.log_likelihood(X.middleRows(begin, count), grid.points);
    for (Eigen::Index r = 0; r < count; ++r) {
      const Eigen::Index n = begin + r;
      s.log_p.row(n) = ll.row(r) + log_w;
      s.log_marginal(n) = normalize_log_row(s.log_p.row(n));
      Eigen::RowVectorXd lq = log_normal_diag(grid.points, mu.row(n).transpose(), logvar.row(n).transpose()).transpose();
      if (rule == QuadratureRule::grid_weight) lq += log_w;
      normalize_log_row(lq);
      s.log_q.row(n) = lq;
      finish_example(s, n);
    }
  });
  return s;
}

GridLabels grid_labels(const LatentGrid& grid, const codemaps::EncoderCodeMap& enc,
                       const codemaps::DecoderCodeMap& dec, const LatentModel& model) {
  GridLabels out;
  out.enc = enc.labels(grid.points);
  out.dec = dec.labels(model.decode(grid.points));
  return out;
}

namespace {

struct ExampleWork {
  ExampleRow row;
  MatrixXd table_q;
  MatrixXd table_p;
};

// KL of the conditionals of q and p on a subset, with conditioning masses
// taken in log space.
double conditional_kl(const Eigen::RowVectorXd& lq, const Eigen::RowVectorXd& lp,
                      const std::vector<bool>& in_set, bool member, double log_mq, double log_mp) {
  double kl = 0.0;
  for (Eigen::Index g = 0; g < lq.size(); ++g) {
    if (in_set[g] != member || lq(g) == -kInf) continue;
    const double cq = lq(g) - log_mq;
    const double cp = lp(g) - log_mp;
    if (cp == -kInf) return kInf;
    kl += std::exp(cq) * (cq - cp);
  }
  return kl;
}

}  // namespace

AuditReport audit_exact(const GridPosteriorSet& post, const GridLabels& labels, int K, int jobs) {
  const int N = post.N();
  const int M = post.M();
  if (N < 1) throw InvalidArgument("audit: no examples");
  if (static_cast<int>(labels.enc.size()) != M || static_cast<int>(labels.dec.size()) != M)
    throw InvalidArgument("audit: label count != grid size");
  std::vector<bool> E(M);
  for (int g = 0; g < M; ++g) {
    if (labels.enc[g] < 0 || labels.enc[g] >= K || labels.dec[g] < 0 || labels.dec[g] >= K)
      throw InvalidArgument("audit: label outside [0, K)");
    E[g] = labels.enc[g] != labels.dec[g];
  }

  std::vector<ExampleWork> work(N);
  parallel_for(static_cast<std::size_t>(N), jobs, [&](std::size_t idx) {
    const auto n = static_cast<Eigen::Index>(idx);
    const Eigen::RowVectorXd lq = post.log_q.row(n);
    const Eigen::RowVectorXd lp = post.log_p.row(n);
    ExampleWork& w = work[idx];
    w.table_q = MatrixXd::Zero(K, K);
    w.table_p = MatrixXd::Zero(K, K);
    std::vector<double> lq_in, lq_out, lp_in, lp_out;
    for (int g = 0; g < M; ++g) {
      const double q = std::exp(lq(g));
      const double p = std::exp(lp(g));
      w.table_q(labels.enc[g], labels.dec[g]) += q;
      w.table_p(labels.enc[g], labels.dec[g]) += p;
      (E[g] ? lq_in : lq_out).push_back(lq(g));
      (E[g] ? lp_in : lp_out).push_back(lp(g));
    }
    ExampleRow& r = w.row;
    r.ac_violation = post.ac_violation[idx];
    const double log_eq = log_sum_exp(lq_in), log_eqc = log_sum_exp(lq_out);
    const double log_ep = log_sum_exp(lp_in), log_epc = log_sum_exp(lp_out);
    r.eta_q = std::min(1.0, std::exp(log_eq));
    r.eta_p = std::min(1.0, std::exp(log_ep));
    r.delta = post.delta(n);
    r.d_bin = infokl::d_bin(r.eta_q, r.eta_p);
    const double in = log_eq == -kInf ? 0.0 : conditional_kl(lq, lp, E, true, log_eq, log_ep);
    const double out = log_eqc == -kInf ? 0.0 : conditional_kl(lq, lp, E, false, log_eqc, log_epc);
    const double mq = std::exp(log_eq), mqc = std::exp(log_eqc);
    r.rho = (mq > 0.0 ? mq * in : 0.0) + (mqc > 0.0 ? mqc * out : 0.0);
  });

  AuditReport rep;
  rep.grid_size = M;
  rep.quadrature = to_string(post.rule);
  rep.table_q = MatrixXd::Zero(K, K);
  rep.table_p = MatrixXd::Zero(K, K);
  double sum_delta = 0.0, sum_eq = 0.0, sum_ep = 0.0, sum_dbin = 0.0, sum_rho = 0.0;
  for (int n = 0; n < N; ++n) {
    const ExampleRow& r = work[n].row;
    sum_delta += r.delta;
    sum_eq += r.eta_q;
    sum_ep += r.eta_p;
    sum_dbin += r.d_bin;
    sum_rho += r.rho;
    rep.table_q += work[n].table_q;
    rep.table_p += work[n].table_p;
    if (r.ac_violation) ++rep.ac_violation_count;
    rep.per_example.push_back(r);
  }
  const double Nd = static_cast<double>(N);
  rep.table_q /= Nd;
  rep.table_p /= Nd;
  rep.delta_bar = sum_delta / Nd;
  rep.eta_q_bar = sum_eq / Nd;
  rep.eta_p_bar = sum_ep / Nd;
  rep.A_q = 1.0 - rep.eta_q_bar;
  rep.A_p = 1.0 - rep.eta_p_bar;
  rep.d_bin = infokl::d_bin(rep.eta_q_bar, rep.eta_p_bar);
  const double mean_dbin = sum_dbin / Nd;
  rep.J = mean_dbin - rep.d_bin;
  rep.rho_bar = rep.delta_bar - mean_dbin;
  rep.rho_bar_direct = sum_rho / Nd;
  rep.ac_violation = rep.ac_violation_count > 0;
  if (std::isfinite(rep.delta_bar)) {
    rep.rho_route_gap = std::abs(rep.rho_bar - rep.rho_bar_direct);
    rep.closure_residual = std::abs(rep.delta_bar - (rep.d_bin + rep.J + rep.rho_bar_direct));
  } else {
    rep.rho_route_gap = kInf;
    rep.closure_residual = kInf;
  }
  rep.fubini_gap = std::abs(rep.table_q.trace() - rep.A_q);

  double cpk = 0.0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) cpk += infokl::kl_term(rep.table_q(i, j), rep.table_p(i, j));
  rep.code_pair_kl = cpk;
  constexpr double slack = 1e-10;
  rep.coarsening_ok = rep.d_bin <= rep.code_pair_kl + slack && rep.code_pair_kl <= rep.delta_bar + slack;
  rep.valid = !rep.ac_violation && rep.delta_bar >= rep.d_bin - kValidityTolerance;
  rep.bounds = infokl::all_bounds(rep.eta_p_bar, rep.delta_bar);
  return rep;
}

AuditReport audit_exact(const GridPosteriorSet& post, const codemaps::EncoderCodeMap& enc,
                        const codemaps::DecoderCodeMap& dec, const LatentModel& model,
                        const LatentGrid& grid, int jobs) {
  if (enc.K() != dec.K()) throw InvalidArgument("audit: encoder and decoder maps differ in K");
  if (post.M() != grid.size()) throw InvalidArgument("audit: posterior set does not match the grid");
  AuditReport r = audit_exact(post, grid_labels(grid, enc, dec, model), enc.K(), jobs);
  r.grid_weighting = to_string(grid.weighting);
  return r;
}

std::pair<double, double> event_probabilities(const GridPosteriorSet& post, const std::vector<bool>& event) {
  if (static_cast<int>(event.size()) != post.M()) throw InvalidArgument("event size != grid size");
  double q = 0.0, p = 0.0;
  for (int n = 0; n < post.N(); ++n)
    for (int g = 0; g < post.M(); ++g)
      if (event[g]) {
        q += std::exp(post.log_q(n, g));
        p += std::exp(post.log_p(n, g));
      }
  return {std::min(1.0, q / post.N()), std::min(1.0, p / post.N())};
}

double mean_code_agreement(const LatentModel& model, const MatrixXd& X,
                           const codemaps::EncoderCodeMap& enc, const codemaps::DecoderCodeMap& dec) {
  if (X.rows() == 0) throw InvalidArgument("mean_code_agreement: no examples");
  MatrixXd mu, logvar;
  model.encode(X, mu, logvar);
  const auto e = enc.labels(mu);
  const auto d = dec.labels(model.decode(mu));
  std::size_t agree = 0;
  for (std::size_t n = 0; n < e.size(); ++n) agree += e[n] == d[n];
  return static_cast<double>(agree) / static_cast<double>(e.size());
}

FreeEnergyStack free_energy_stack(const AuditReport& r, double reconstruction_term) {
  FreeEnergyStack s;
  s.floor = reconstruction_term;
  s.d_bin = r.d_bin;
  s.J = r.J;
  s.rho = r.rho_bar_direct;
  s.closure_residual = r.closure_residual;
  return s;
}

namespace {

nlohmann::json matrix_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const VectorXd r = m.row(i).transpose();
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

// JSON has no infinity; infinite values go out as null.
nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json inversion_json(const infokl::BoundInversion& b) {
  return {{"p_star", num(b.p_star)}, {"vacuous", b.vacuous}, {"tolerance", b.tolerance}};
}

}  // namespace

nlohmann::json to_json(const AuditReport& r) {
  nlohmann::json j;
  j["delta_bar_G"] = num(r.delta_bar);
  j["d_bin"] = num(r.d_bin);
  j["J_E"] = num(r.J);
  j["rho_bar_E"] = num(r.rho_bar);
  j["rho_bar_E_direct"] = num(r.rho_bar_direct);
  j["rho_route_gap"] = num(r.rho_route_gap);
  j["closure_residual"] = num(r.closure_residual);
  j["eta_q_bar"] = r.eta_q_bar;
  j["eta_p_bar"] = r.eta_p_bar;
  j["A_q"] = r.A_q;
  j["A_p"] = r.A_p;
  j["A_mu"] = r.A_mu >= 0.0 ? nlohmann::json(r.A_mu) : nlohmann::json(nullptr);
  j["code_pair_KL"] = num(r.code_pair_kl);
  j["coarsening_ok"] = r.coarsening_ok;
  j["valid"] = r.valid;
  j["validity_tolerance"] = kValidityTolerance;
  j["ac_violation"] = r.ac_violation;
  j["ac_violation_count"] = r.ac_violation_count;
  j["fubini_gap"] = r.fubini_gap;
  j["bounds"] = {{"tightest", inversion_json(r.bounds.tightest)},
                 {"pinsker", r.bounds.pinsker},
                 {"bretagnolle_huber", r.bounds.bretagnolle_huber}};
  j["table_q"] = matrix_json(r.table_q);
  j["table_p"] = matrix_json(r.table_p);
  j["grid_weighting"] = r.grid_weighting;
  j["quadrature"] = r.quadrature;
  j["grid_size"] = r.grid_size;
  j["examples"] = r.per_example.size();
  j["mode"] = "grid_exact";
  return j;
}

nlohmann::json to_json(const FreeEnergyStack& s) {
  return {{"floor", num(s.floor)}, {"d_bin", num(s.d_bin)}, {"J_E", num(s.J)},
          {"rho_bar_E", num(s.rho)}, {"closure_residual", num(s.closure_residual)}};
}

void write_per_example_csv(std::ostream& out, const AuditReport& r) {
  out << "index,delta_G,eta_q,eta_p,d_bin,rho,ac_violation\n";
  for (std::size_t n = 0; n < r.per_example.size(); ++n) {
    const auto& e = r.per_example[n];
    out << n << ',' << format_double(e.delta) << ',' << format_double(e.eta_q) << ','
        << format_double(e.eta_p) << ',' << format_double(e.d_bin) << ',' << format_double(e.rho) << ','
        << (e.ac_violation ? 1 : 0) << '\n';
  }
}

}  // namespace codeaudit::gridaudit
