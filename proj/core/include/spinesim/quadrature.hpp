#pragma once

#include <cmath>
#include <functional>
#include <type_traits>

#include <Eigen/Core>

#include "spinesim/error.hpp"

namespace spinesim {

namespace detail {

inline double quad_err(double x) { return std::fabs(x); }

template <class T, class = void>
struct QuadValue {
  using type = double;
};
template <class T>
struct QuadValue<T, std::enable_if_t<!std::is_arithmetic_v<T>>> {
  using type = typename T::PlainObject;
};

template <class Derived>
double quad_err(const Eigen::MatrixBase<Derived>& x) {
  return x.template lpNorm<Eigen::Infinity>();
}

template <class F, class T>
T simpson_step(F& f, double a, double b, const T& fa, const T& fm, const T& fb, const T& whole, double tol, int depth,
               int& evals) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const T flm = f(lm);
  const T frm = f(rm);
  evals += 2;
  const T left = ((m - a) / 6.0) * (fa + 4.0 * flm + fm);
  const T right = ((b - m) / 6.0) * (fm + 4.0 * frm + fb);
  const T both = left + right;
  const T delta = both - whole;
  if (quad_err(delta) <= 15.0 * tol) return T(both + delta / 15.0);
  if (depth <= 0 || !(m > a && m < b)) throw NumericalError("adaptive_simpson: tolerance not met");
  return T(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, evals) +
           simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, evals));
}

}  // namespace detail

// Adaptive Simpson with Richardson correction. Works for scalar and Eigen vector
// integrands. Throws NumericalError when the recursion limit is hit.
template <class F>
auto adaptive_simpson(F&& f, double a, double b, double tol, int max_depth = 60) {
  using T = std::decay_t<decltype(f(a))>;
  using R = typename detail::QuadValue<T>::type;
  const R fa = f(a);
  if (a == b) return R(0.0 * fa);
  int evals = 1;
  // Seed with a fixed split so smooth bumps inside [a, b] are not missed.
  constexpr int kPanels = 8;
  R total = 0.0 * fa;
  for (int i = 0; i < kPanels; ++i) {
    const double lo = a + (b - a) * i / kPanels;
    const double hi = (i + 1 == kPanels) ? b : a + (b - a) * (i + 1) / kPanels;
    const R flo = f(lo);
    const R fhi = f(hi);
    const R fmid = f(0.5 * (lo + hi));
    const R s = ((hi - lo) / 6.0) * (flo + 4.0 * fmid + fhi);
    total = R(total + detail::simpson_step(f, lo, hi, flo, fmid, fhi, s, tol / kPanels, max_depth, evals));
  }
  return total;
}

// Double-exponential (tanh-sinh) quadrature for integrands with integrable
// endpoint singularities such as log(b - x). f is never evaluated at a or b.
double integrate_tanh_sinh(const std::function<double(double)>& f, double a, double b, double tol = 1e-12);

}  // namespace spinesim
