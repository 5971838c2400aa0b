#include "spinesim/quadrature.hpp"

#include <boost/math/quadrature/tanh_sinh.hpp>

namespace spinesim {

double integrate_tanh_sinh(const std::function<double(double)>& f, double a, double b, double tol) {
  if (a == b) return 0.0;
  boost::math::quadrature::tanh_sinh<double> ts;
  double err = 0.0, l1 = 0.0;
  const double v = ts.integrate(f, a, b, tol, &err, &l1);
  // The error estimate bottoms out at the integrand's own round-off, so only a
  // clearly unconverged result is rejected.
  if (!(err <= std::sqrt(std::max(tol, 1e-16)) * std::max(1.0, l1)))
    throw NumericalError("tanh-sinh quadrature: tolerance not met");
  return v;
}

}  // namespace spinesim
