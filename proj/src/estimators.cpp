#include "codeaudit/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "codeaudit/gridaudit.hpp"
#include "codeaudit/infokl.hpp"
#include "codeaudit/util.hpp"

namespace codeaudit::estimators {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Draws {
  MatrixXd Z;      // K x d
  VectorXd log_w;  // log p(x|z) + log p(z) - log q(z|x)
};

Draws draw_weights(const LatentModel& model, const MatrixXd& x, const VectorXd& mu, const VectorXd& lv,
                   int K, std::mt19937_64& rng) {
  Draws d;
  d.Z = sample_posterior(mu, lv, K, rng);
  const VectorXd ll = model.log_likelihood(x, d.Z).row(0).transpose();
  const VectorXd zero = VectorXd::Zero(mu.size());
  const VectorXd log_prior = gridaudit::log_normal_diag(d.Z, zero, zero);
  const VectorXd log_q = gridaudit::log_normal_diag(d.Z, mu, lv);
  d.log_w = ll + log_prior - log_q;
  return d;
}

std::vector<bool> disagreements(const MatrixXd& Z, const LatentModel& model, const codemaps::EncoderCodeMap& enc,
                                const codemaps::DecoderCodeMap& dec) {
  const auto e = enc.labels(Z);
  const auto c = dec.labels(model.decode(Z));
  std::vector<bool> out(e.size());
  for (std::size_t k = 0; k < e.size(); ++k) out[k] = e[k] != c[k];
  return out;
}

}  // namespace

MatrixXd sample_posterior(const VectorXd& mu, const VectorXd& logvar, int count, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const VectorXd sd = (0.5 * logvar.array()).exp();
  MatrixXd Z(count, mu.size());
  for (int k = 0; k < count; ++k)
    for (Eigen::Index j = 0; j < mu.size(); ++j) Z(k, j) = mu(j) + sd(j) * normal(rng);
  return Z;
}

double effective_sample_size(const std::vector<double>& w) {
  double s = 0.0;
  for (double v : w) s += v * v;
  return s > 0.0 ? 1.0 / s : kNaN;
}

SnisResult snis_eta_p(const LatentModel& model, const MatrixXd& X, const codemaps::EncoderCodeMap& enc,
                      const codemaps::DecoderCodeMap& dec, int K, std::uint64_t seed, int jobs) {
  if (K < 2) throw InvalidArgument("snis_eta_p needs K_samples >= 2");
  if (X.rows() < 1) throw InvalidArgument("snis_eta_p: empty batch");
  const Eigen::Index N = X.rows();
  MatrixXd mu, lv;
  model.encode(X, mu, lv);
  SnisResult r;
  r.K_samples = K;
  r.eta_p.assign(N, kNaN);
  r.ess.assign(N, kNaN);
  r.eta_q_mc.assign(N, kNaN);
  r.excluded.assign(N, false);
  parallel_for(static_cast<std::size_t>(N), jobs, [&](std::size_t n) {
    auto rng = stream_rng(seed, n);
    const Draws d = draw_weights(model, X.row(n), mu.row(n).transpose(), lv.row(n).transpose(), K, rng);
    const auto E = disagreements(d.Z, model, enc, dec);
    std::size_t hits = 0;
    for (bool b : E) hits += b;
    r.eta_q_mc[n] = static_cast<double>(hits) / K;
    const std::vector<double> lw(d.log_w.begin(), d.log_w.end());
    const double lse = log_sum_exp(lw);
    if (!std::isfinite(lse)) {
      r.excluded[n] = true;
      return;
    }
    std::vector<double> w(K);
    double eta = 0.0;
    for (int k = 0; k < K; ++k) {
      w[k] = std::exp(lw[k] - lse);
      if (E[k]) eta += w[k];
    }
    r.eta_p[n] = std::min(1.0, eta);
    r.ess[n] = effective_sample_size(w);
  });

  double sum = 0.0, sum_ess = 0.0, sum_q = 0.0;
  int used = 0;
  for (Eigen::Index n = 0; n < N; ++n) {
    sum_q += r.eta_q_mc[n];
    if (r.excluded[n]) {
      ++r.excluded_count;
      continue;
    }
    sum += r.eta_p[n];
    sum_ess += r.ess[n];
    ++used;
  }
  r.eta_q_mean = sum_q / static_cast<double>(N);
  if (used == 0) {
    r.eta_p_mean = r.eta_p_se = r.ci_low = r.ci_high = r.ess_mean = kNaN;
    return r;
  }
  r.eta_p_mean = sum / used;
  r.ess_mean = sum_ess / used;
  double ss = 0.0;
  for (Eigen::Index n = 0; n < N; ++n)
    if (!r.excluded[n]) ss += (r.eta_p[n] - r.eta_p_mean) * (r.eta_p[n] - r.eta_p_mean);
  r.eta_p_se = used > 1 ? std::sqrt(ss / (used - 1) / used) : 0.0;
  r.ci_low = r.eta_p_mean - 1.96 * r.eta_p_se;
  r.ci_high = r.eta_p_mean + 1.96 * r.eta_p_se;
  return r;
}

IwaeDiagnostic iwae_gap_diagnostic(const LatentModel& model, const MatrixXd& X, int K, std::uint64_t seed,
                                   int jobs) {
  if (K < 1) throw InvalidArgument("iwae_gap_diagnostic needs K_samples >= 1");
  if (X.rows() < 1) throw InvalidArgument("iwae_gap_diagnostic: empty batch");
  const Eigen::Index N = X.rows();
  MatrixXd mu, lv;
  model.encode(X, mu, lv);
  std::vector<double> iwae(N, kNaN), elbo(N, kNaN);
  parallel_for(static_cast<std::size_t>(N), jobs, [&](std::size_t n) {
    auto rng = stream_rng(seed, n);
    const Draws d = draw_weights(model, X.row(n), mu.row(n).transpose(), lv.row(n).transpose(), K, rng);
    const std::vector<double> lw(d.log_w.begin(), d.log_w.end());
    const double lse = log_sum_exp(lw);
    if (!std::isfinite(lse) || !d.log_w.allFinite()) return;
    iwae[n] = lse - std::log(static_cast<double>(K));
    elbo[n] = d.log_w.mean();
  });
  IwaeDiagnostic out;
  out.K_samples = K;
  double si = 0.0, se = 0.0, sg = 0.0;
  int used = 0;
  for (Eigen::Index n = 0; n < N; ++n) {
    if (std::isnan(iwae[n])) {
      ++out.excluded_count;
      continue;
    }
    si += iwae[n];
    se += elbo[n];
    sg += iwae[n] - elbo[n];
    ++used;
  }
  if (used == 0) {
    out.iwae = out.elbo = out.gap = kNaN;
    return out;
  }
  out.iwae = si / used;
  out.elbo = se / used;
  out.gap = sg / used;
  return out;
}

McAgreement mc_agreement(const LatentModel& model, const MatrixXd& X, const codemaps::EncoderCodeMap& enc,
                         const codemaps::DecoderCodeMap& dec, int S, std::uint64_t seed, int jobs) {
  if (S < 1) throw InvalidArgument("mc_agreement needs samples_per_example >= 1");
  if (X.rows() < 1) throw InvalidArgument("mc_agreement: empty batch");
  const Eigen::Index N = X.rows();
  MatrixXd mu, lv;
  model.encode(X, mu, lv);
  std::vector<long long> agree(N, 0);
  parallel_for(static_cast<std::size_t>(N), jobs, [&](std::size_t n) {
    auto rng = stream_rng(seed, n);
    const MatrixXd Z = sample_posterior(mu.row(n).transpose(), lv.row(n).transpose(), S, rng);
    for (bool b : disagreements(Z, model, enc, dec)) agree[n] += !b;
  });
  McAgreement a;
  long long total = 0;
  for (auto v : agree) total += v;
  a.draws = static_cast<long long>(N) * S;
  a.A = static_cast<double>(total) / static_cast<double>(a.draws);
  a.se = std::sqrt(a.A * (1.0 - a.A) / static_cast<double>(a.draws));
  return a;
}

namespace {
nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace

nlohmann::json snis_audit_json(const SnisResult& s, const IwaeDiagnostic& d) {
  nlohmann::json j;
  const double A_q = 1.0 - s.eta_q_mean;
  double dbin = kNaN;
  if (std::isfinite(s.eta_p_mean)) dbin = infokl::d_bin(s.eta_q_mean, std::clamp(s.eta_p_mean, 0.0, 1.0));
  j["delta_iwae"] = num(d.gap);
  j["eta_p_snis"] = num(s.eta_p_mean);
  j["ess_over_k"] = num(s.ess_mean / s.K_samples);
  j["A_q"] = A_q;
  j["d_bin"] = num(dbin);
  j["residual_budget"] = num(d.gap - dbin);
  j["mode"] = "audited (heuristic delta)";
  j["grid_exact_valid"] = nullptr;
  j["excluded"] = s.excluded_count;
  j["K_samples"] = s.K_samples;
  j["eta_p_ci"] = {num(s.ci_low), num(s.ci_high)};
  return j;
}

nlohmann::json to_json(const SnisResult& r) {
  return {{"K_samples", r.K_samples},       {"eta_p_mean", num(r.eta_p_mean)}, {"eta_p_se", num(r.eta_p_se)},
          {"ci", {num(r.ci_low), num(r.ci_high)}}, {"ess_mean", num(r.ess_mean)},
          {"eta_q_mean", r.eta_q_mean},     {"excluded", r.excluded_count}};
}

nlohmann::json to_json(const IwaeDiagnostic& d) {
  return {{"K_samples", d.K_samples}, {"iwae", num(d.iwae)}, {"elbo", num(d.elbo)},
          {"gap", num(d.gap)},        {"heuristic", d.heuristic}, {"excluded", d.excluded_count}};
}

nlohmann::json to_json(const McAgreement& a) {
  return {{"A_q_mc", a.A}, {"se", a.se}, {"draws", a.draws}};
}

}  // namespace codeaudit::estimators
