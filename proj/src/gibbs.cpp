#include "codeaudit/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "codeaudit/infokl.hpp"
#include "codeaudit/util.hpp"

namespace codeaudit::gibbs {

using Eigen::MatrixXd;
using Eigen::VectorXd;

DiscreteJoint DiscreteJoint::from_conditionals(const MatrixXd& cond, VectorXd w) {
  const Eigen::Index N = cond.rows(), M = cond.cols();
  if (N < 1 || M < 1) throw InvalidArgument("joint: empty conditional table");
  if ((cond.array() < 0.0).any() || !cond.allFinite()) throw InvalidArgument("joint: invalid conditional");
  if (w.size() == 0) w = VectorXd::Constant(N, 1.0 / static_cast<double>(N));
  if (w.size() != N || (w.array() < 0.0).any() || !(w.sum() > 0.0))
    throw InvalidArgument("joint: invalid data weights");
  DiscreteJoint j;
  j.data_weights = w / w.sum();
  j.forward = cond;
  for (Eigen::Index n = 0; n < N; ++n) {
    const double s = cond.row(n).sum();
    if (!(s > 0.0)) throw InvalidArgument("joint: conditional row with no mass");
    j.forward.row(n) /= s;
  }
  j.gamma = j.data_weights.asDiagonal() * j.forward;
  j.marginal = j.gamma.colwise().sum().transpose();
  j.reverse = MatrixXd::Zero(M, N);
  j.zero_marginal.assign(M, false);
  for (Eigen::Index g = 0; g < M; ++g) {
    if (j.marginal(g) > 0.0) {
      j.reverse.row(g) = j.gamma.col(g).transpose() / j.marginal(g);
    } else {
      j.zero_marginal[g] = true;
    }
  }
  return j;
}

DiscreteJoint q_joint(const gridaudit::GridPosteriorSet& post) {
  return DiscreteJoint::from_conditionals(post.log_q.array().exp().matrix());
}

DiscreteJoint p_joint(const gridaudit::GridPosteriorSet& post) {
  return DiscreteJoint::from_conditionals(post.log_p.array().exp().matrix());
}

GibbsKernels build_kernels(const DiscreteJoint& q, const DiscreteJoint& p) {
  if (q.N() != p.N() || q.M() != p.M()) throw InvalidArgument("kernels: joints must share examples and grid");
  GibbsKernels k;
  k.Kq = q.reverse * q.forward;
  k.Kp = p.reverse * p.forward;
  for (bool z : q.zero_marginal) k.zero_rows_q += z;
  for (bool z : p.zero_marginal) k.zero_rows_p += z;
  return k;
}

namespace {

double row_kl(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) <= 0.0) continue;
    if (b(i) <= 0.0) return kInf;
    s += a(i) * std::log(a(i) / b(i));
  }
  return std::max(s, 0.0);
}

}  // namespace

double expected_row_kl(const MatrixXd& A, const MatrixXd& B, const VectorXd& mu) {
  double s = 0.0;
  for (Eigen::Index g = 0; g < A.rows(); ++g) {
    if (mu(g) <= 0.0) continue;
    const double kl = row_kl(A.row(g), B.row(g));
    if (std::isinf(kl)) return kInf;
    s += mu(g) * kl;
  }
  return s;
}

double joint_delta_bar(const DiscreteJoint& q, const DiscreteJoint& p) {
  return expected_row_kl(q.forward, p.forward, q.data_weights);
}

double marginal_kl(const DiscreteJoint& q, const DiscreteJoint& p) {
  return row_kl(q.marginal.transpose(), p.marginal.transpose());
}

double lifted_kl_average(const DiscreteJoint& q, const DiscreteJoint& p) {
  const int N = q.N(), M = q.M();
  std::vector<double> forward_kl(N);
  for (int n = 0; n < N; ++n) forward_kl[n] = row_kl(q.forward.row(n), p.forward.row(n));
  double total = 0.0;
  for (int g = 0; g < M; ++g) {
    if (q.marginal(g) <= 0.0) continue;
    double inner = 0.0;
    for (int n = 0; n < N; ++n) {
      const double rq = q.reverse(g, n);
      if (rq <= 0.0) continue;
      const double rp = p.reverse(g, n);
      if (rp <= 0.0 || std::isinf(forward_kl[n])) return kInf;
      inner += rq * (std::log(rq / rp) + forward_kl[n]);
    }
    total += q.marginal(g) * inner;
  }
  return total;
}

OneStep one_step_mismatch(const GibbsKernels& k, const VectorXd& q_bar, double delta_bar, double kl_marginals) {
  OneStep s;
  s.lhs = expected_row_kl(k.Kq, k.Kp, q_bar);
  s.rhs = 2.0 * delta_bar - kl_marginals;
  s.ac_violation = std::isinf(s.lhs);
  s.holds = !s.ac_violation && s.lhs <= s.rhs + kBoundSlack;
  return s;
}

PathMismatch path_mismatch(const GibbsKernels& k, const VectorXd& q_bar, int H, double delta_bar,
                           double kl_marginals) {
  if (H < 1) throw InvalidArgument("path_mismatch needs H >= 1");
  PathMismatch p;
  p.H = H;
  const Eigen::RowVectorXd q0 = q_bar.transpose();
  p.stationarity_residual = (q0 * k.Kq - q0).cwiseAbs().sum();
  p.stationary = p.stationarity_residual <= 1e-8;
  Eigen::RowVectorXd mu = q0;
  for (int t = 1; t <= H; ++t) {
    const double step = expected_row_kl(k.Kq, k.Kp, mu.transpose());
    p.per_step.push_back(step);
    p.path_kl += step;
    mu = mu * k.Kq;
  }
  p.bound = static_cast<double>(H) * (2.0 * delta_bar - kl_marginals);
  p.holds = std::isfinite(p.path_kl) && p.path_kl <= p.bound + kBoundSlack * H;
  return p;
}

double path_kl_enumeration(const GibbsKernels& k, const VectorXd& q_bar, int H) {
  const int M = static_cast<int>(k.Kq.rows());
  if (H < 0) throw InvalidArgument("path enumeration needs H >= 0");
  if (std::pow(static_cast<double>(M), H + 1) > 1e7) throw InvalidArgument("path enumeration too large");
  double total = 0.0;
  bool infinite = false;
  std::function<void(int, int, double, double)> walk = [&](int t, int z, double pq, double pp) {
    if (pq <= 0.0) return;
    if (t == H) {
      if (pp <= 0.0) infinite = true;
      else total += pq * std::log(pq / pp);
      return;
    }
    for (int z2 = 0; z2 < M; ++z2) walk(t + 1, z2, pq * k.Kq(z, z2), pp * k.Kp(z, z2));
  };
  for (int z = 0; z < M; ++z) walk(0, z, q_bar(z), q_bar(z));
  return infinite ? kInf : total;
}

HorizonAgreement horizon_agreement(const GibbsKernels& k, const VectorXd& q_bar,
                                   const gridaudit::GridLabels& labels, int H, double delta_bar,
                                   double kl_marginals) {
  if (H < 0) throw InvalidArgument("horizon_agreement needs H >= 0");
  const Eigen::Index M = k.Kq.rows();
  if (static_cast<Eigen::Index>(labels.enc.size()) != M || static_cast<Eigen::Index>(labels.dec.size()) != M)
    throw InvalidArgument("horizon_agreement: label count != grid size");
  Eigen::RowVectorXd mq = q_bar.transpose(), mp = q_bar.transpose();
  for (int t = 0; t < H; ++t) {
    mq = mq * k.Kq;
    mp = mp * k.Kp;
  }
  HorizonAgreement h;
  h.H = H;
  // Mismatch and match masses kept apart so an all-mismatch labelling gives
  // exactly 1 on both chains.
  double eq = 0.0, ep = 0.0, aq = 0.0, ap = 0.0;
  for (Eigen::Index g = 0; g < M; ++g)
    if (labels.enc[g] != labels.dec[g]) {
      eq += mq(g);
      ep += mp(g);
    } else {
      aq += mq(g);
      ap += mp(g);
    }
  eq = eq + aq > 0.0 ? std::clamp(eq / (eq + aq), 0.0, 1.0) : 0.0;
  ep = ep + ap > 0.0 ? std::clamp(ep / (ep + ap), 0.0, 1.0) : 0.0;
  h.A_H = 1.0 - eq;
  h.eta_p_H = ep;
  h.d_bin = infokl::d_bin(eq, ep);
  h.path_kl = H == 0 ? 0.0 : path_mismatch(k, q_bar, H, delta_bar, kl_marginals).path_kl;
  h.bound = static_cast<double>(H) * (2.0 * delta_bar - kl_marginals);
  h.holds = h.d_bin <= h.bound + kBoundSlack * std::max(H, 1);
  return h;
}

namespace {
nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace

nlohmann::json to_json(const OneStep& s) {
  return {{"lhs", num(s.lhs)}, {"rhs", num(s.rhs)}, {"holds", s.holds}, {"ac_violation", s.ac_violation}};
}

nlohmann::json to_json(const PathMismatch& p) {
  nlohmann::json steps = nlohmann::json::array();
  for (double v : p.per_step) steps.push_back(num(v));
  return {{"H", p.H},
          {"path_kl", num(p.path_kl)},
          {"bound", num(p.bound)},
          {"per_step", steps},
          {"holds", p.holds},
          {"stationarity_residual", p.stationarity_residual},
          {"stationary", p.stationary}};
}

nlohmann::json to_json(const HorizonAgreement& h) {
  return {{"H", h.H},           {"A_H", h.A_H},         {"eta_p_H", h.eta_p_H}, {"d_bin", num(h.d_bin)},
          {"path_kl", num(h.path_kl)}, {"bound", num(h.bound)}, {"holds", h.holds}};
}

}  // namespace codeaudit::gibbs
