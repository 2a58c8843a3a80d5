#include "codeaudit/infokl.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "codeaudit/util.hpp"

namespace codeaudit::infokl {

namespace {

void require_probability(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw InvalidArgument(std::string(name) + " must lie in [0,1], got " + format_double(v));
  }
}

}  // namespace

double kl_term(double a, double b) {
  if (a == 0.0) return b;
  if (b == 0.0) return kInf;
  // b * phi(x) with x = (a - b) / b and phi(x) = (1 + x) log1p(x) - x.
  const double x = (a - b) / b;
  if (std::abs(x) < 1e-2) {
    // phi(x) = sum_{n >= 2} (-1)^n x^n / (n (n - 1))
    double s = 0.0, xn = x;
    for (int n = 2; n <= 12; ++n) {
      xn *= x;
      s += (n % 2 ? -xn : xn) / (n * (n - 1.0));
    }
    return b * s;
  }
  return std::max(0.0, b * ((1.0 + x) * std::log1p(x) - x));
}

double d_bin(double p, double q) {
  require_probability(p, "p");
  require_probability(q, "q");
  if (p == q) return 0.0;
  if ((q == 0.0 && p > 0.0) || (q == 1.0 && p < 1.0)) return kInf;
  return kl_term(p, q) + kl_term(1.0 - p, 1.0 - q);
}

double pinsker_upper(double q, double gap) {
  if (!(gap >= 0.0)) throw InvalidArgument("gap must be non-negative");
  return std::min(1.0, q + std::sqrt(gap / 2.0));
}

double bretagnolle_huber_upper(double q, double gap) {
  if (!(gap >= 0.0)) throw InvalidArgument("gap must be non-negative");
  return std::min(1.0, q + std::sqrt(-std::expm1(-gap)));
}

BoundInversion invert_bound(double q, double gap, double tolerance) {
  if (!(q > 0.0 && q < 1.0)) {
    throw InvalidArgument("reference rate must lie in (0,1), got " + format_double(q));
  }
  if (!(gap >= 0.0)) throw InvalidArgument("gap must be non-negative");
  if (!(tolerance > 0.0)) throw InvalidArgument("tolerance must be positive");

  BoundInversion out{q, gap, tolerance, 1.0, false};
  if (gap > -std::log(q)) {
    out.vacuous = true;
    return out;
  }
  double lo = q;
  double hi = kBisectionCeiling;
  while (hi - lo > tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;  // bracket at floating-point resolution
    if (d_bin(mid, q) <= gap) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  out.p_star = lo;
  return out;
}

BoundSet all_bounds(double q, double gap, double tolerance) {
  BoundSet out;
  out.pinsker = pinsker_upper(q, gap);
  out.bretagnolle_huber = bretagnolle_huber_upper(q, gap);
  if (std::isinf(gap)) {
    out.tightest = BoundInversion{q, gap, tolerance, 1.0, true};
  } else if (q > 0.0 && q < 1.0) {
    out.tightest = invert_bound(q, gap, tolerance);
  } else if (q == 0.0) {
    // d_bin(p || 0) is infinite for every p > 0, so a finite gap forces p = 0.
    out.tightest = BoundInversion{q, gap, tolerance, 0.0, false};
  } else {
    out.tightest = BoundInversion{q, gap, tolerance, 1.0, true};
  }
  return out;
}

}  // namespace codeaudit::infokl
