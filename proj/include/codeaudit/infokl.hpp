#pragma once

// Binary KL divergence, its closed-form lower bounds, and the bisection that
// inverts the disagreement certificate into an upper bound on 1 - A.

namespace codeaudit::infokl {

/// KL(Ber(p) || Ber(q)) in nats, with 0 log 0 = 0. Returns +inf when the
/// divergence is infinite (q on the boundary of [0,1] and p != q).
/// Arguments outside [0,1] throw InvalidArgument.
double d_bin(double p, double q);

/// a log(a / b) - a + b for a, b >= 0, evaluated without cancellation when
/// a is close to b. Non-negative; +inf when b == 0 < a. Summed over two
/// distributions it gives their KL divergence.
double kl_term(double a, double b);

/// min(1, q + sqrt(gap / 2)).
double pinsker_upper(double q, double gap);

/// min(1, q + sqrt(1 - exp(-gap))).
double bretagnolle_huber_upper(double q, double gap);

/// Upper end of the bisection bracket.
inline constexpr double kBisectionCeiling = 1.0 - 1e-12;

struct BoundInversion {
  double reference_rate = 0.0;  // q
  double gap = 0.0;             // nats
  double tolerance = 0.0;
  double p_star = 0.0;          // in [q, 1]
  bool vacuous = false;         // gap > -log q, p_star = 1
};

/// Largest p in [q, 1) with d_bin(p || q) <= gap, found by bracket halving on
/// [q, 1 - 1e-12] until the bracket is narrower than `tolerance`. Requires
/// q in (0,1), gap >= 0, tolerance > 0.
BoundInversion invert_bound(double q, double gap, double tolerance = 1e-10);

/// All three upper bounds on the disagreement rate for a given reference
/// rate and gap.
struct BoundSet {
  BoundInversion tightest;
  double pinsker = 0.0;
  double bretagnolle_huber = 0.0;
};

/// The three bounds together. Boundary reference rates do not throw:
/// q = 0 gives p_star = 0 and q = 1 gives the vacuous p_star = 1.
BoundSet all_bounds(double q, double gap, double tolerance = 1e-10);

}  // namespace codeaudit::infokl
