#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "spinesim/error.hpp"
#include "spinesim/many2few.hpp"
#include "spinesim/moments.hpp"

using namespace spinesim;

namespace {

double joint_z(const Estimate& a, const Estimate& b) { return (a.mean - b.mean) / std::sqrt(a.se * a.se + b.se * b.se); }

Vec ones(int d) { return Vec::Ones(d); }

Vec indicator(int d, int x) {
  Vec v = Vec::Zero(d);
  v[x] = 1.0;
  return v;
}

EstimatorOptions opts(std::uint64_t seed) {
  EstimatorOptions o;
  o.seed = seed;
  o.workers = 2;
  return o;
}

}  // namespace

TEST_SUITE("many2few") {
  TEST_CASE("functional validation") {
    const auto m = fixtures::m2();
    CHECK_THROWS(product_functional({ones(2), ones(2)}, {1.0, 2.0}).validate(m));
    CHECK_THROWS(product_functional({ones(3)}, {1.0}).validate(m));
    CHECK_THROWS(product_functional({ones(2), ones(2), ones(2)}, {1, 1, 1}, true).validate(m));
    CHECK_NOTHROW(product_functional({ones(2), ones(2)}, {2.0, 1.0}).validate(m));
    CHECK(product_functional({ones(2), ones(2)}, {2.0, 2.0}).equal_times());
  }

  TEST_CASE("tuple sums on single trees") {
    const auto m = fixtures::m2();
    const Vec f = indicator(2, 0), g = (Vec(2) << 0.3, 1.7).finished();
    for (int i = 0; i < 200; ++i) {
      RngStream r(1, i);
      const Tree t = simulate(m, 0, 3.0, r);
      double xf = 0, xg = 0, xfg = 0, yg = 0;
      for (const auto& p : population_at(t, 3.0)) {
        xf += f[p.state];
        xg += g[p.state];
        xfg += f[p.state] * g[p.state];
      }
      for (const auto& p : population_at(t, 1.5)) yg += g[p.state];
      CHECK(lhs_sum(t, product_functional({f}, {3.0})) == doctest::Approx(xf));
      CHECK(lhs_sum(t, product_functional({f, g}, {3.0, 3.0})) == doctest::Approx(xf * xg));
      CHECK(lhs_sum(t, product_functional({f, g}, {3.0, 3.0}, true)) == doctest::Approx(xf * xg - xfg));
      CHECK(lhs_sum(t, product_functional({f, g}, {3.0, 1.5})) == doctest::Approx(xf * yg));
    }
  }

  TEST_CASE("genealogy tuple sum by direct enumeration") {
    const auto m = fixtures::m1();
    auto F = [](double u) { return 1.0 + u * u; };
    for (int i = 0; i < 200; ++i) {
      RngStream r(2, i);
      const Tree t = simulate(m, 0, 4.0, r);
      const auto a = t.alive_indices(4.0), b = t.alive_indices(2.0);
      for (bool inv : {false, true}) {
        double expect = 0.0;
        for (int v : a)
          for (int w : b) {
            if (t.is_ancestor_or_self(w, v)) continue;
            double y = F(t.mrca_split_time(v, w) / 4.0);
            if (inv) {
              double nhat = 0;
              for (int x : a) nhat += !t.is_ancestor_or_self(w, x);
              y /= static_cast<double>(b.size()) * nhat;
            }
            expect += y;
          }
        CHECK(lhs_sum(t, genealogy_functional(F, 4.0, 2.0, inv)) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("tuple enumeration cap") {
    const auto m = binary_model(0.1);
    RngStream r(3, 0);
    const Tree t = simulate(m, 0, 8.0, r);
    REQUIRE(t.count_alive(8.0) > 20);
    CHECK_THROWS_AS(lhs_sum(t, product_functional({ones(1), ones(1)}, {8.0, 8.0}), 10), SimulationError);
  }

  TEST_CASE("lhs examples on the critical binary model") {
    const auto m = fixtures::m1();
    const int n = 40000;
    const auto one = lhs_estimate(m, 0, product_functional({ones(1)}, {2.0}), n, opts(4));
    CHECK(std::fabs(z_score(one, 1.0)) < 3);
    const auto two = lhs_estimate(m, 0, product_functional({ones(1), ones(1)}, {2.0, 2.0}), n, opts(5));
    CHECK(std::fabs(z_score(two, 3.0)) < 3);
    const auto tt = lhs_estimate(m, 0, product_functional({ones(1), ones(1)}, {2.0, 1.0}), n, opts(6));
    CHECK(std::fabs(z_score(tt, 2.0)) < 3);
  }

  TEST_CASE("rhs examples") {
    for (const auto& m : {fixtures::m1(), fixtures::m2()}) {
      const auto e = compute_eigen(m);
      const SpineModel sm(m, e);
      const int d = m.d();
      const int n = 40000;
      for (int x = 0; x < d; ++x) {
        const auto fs = product_functional({indicator(d, x)}, {2.0});
        const double oracle = semigroup_matrix(m, 2.0)(0, x);
        const auto r = rhs_estimate(sm, 0, fs, n, opts(7));
        CHECK(std::fabs(z_score(r.estimate, oracle)) < 3);
      }
      // k = 1: no distinctness constraint binds, so both weights coincide tree by tree.
      for (int i = 0; i < 300; ++i) {
        RngStream r(7, i);
        const std::vector<double> s{2.0};
        const auto mt = simulate_qk(sm, 0, 1, s, r);
        CHECK(separated_factor(mt, sm, 2.0) == doctest::Approx(rhs_factor_general(mt, sm, s)).epsilon(1e-12));
      }
    }
    const auto m = fixtures::m1();
    const auto e = compute_eigen(m);
    const SpineModel sm(m, e);
    const auto sq = rhs_estimate(sm, 0, product_functional({ones(1), ones(1)}, {2.0, 2.0}), 40000, opts(8));
    CHECK(std::fabs(z_score(sq.estimate, 3.0)) < 3);
    CHECK(sq.route_max_rel_diff < 1e-12);
    const auto dist =
        rhs_separated_estimate(sm, 0, product_functional({ones(1), ones(1)}, {2.0, 2.0}, true), 40000, opts(9));
    CHECK(std::fabs(z_score(dist.estimate, 2.0)) < 3);
  }

  TEST_CASE("equal-time closed form matches the general weight") {
    for (const auto& m : {fixtures::m1(), fixtures::m2()}) {
      const auto e = compute_eigen(m);
      const SpineModel sm(m, e);
      for (int k = 1; k <= 3; ++k) {
        const std::vector<double> s(k, 2.5);
        for (int i = 0; i < 300; ++i) {
          RngStream r(10, i);
          const auto mt = simulate_qk(sm, 0, k, s, r);
          const double g = rhs_factor_general(mt, sm, s);
          const double c = rhs_factor_equal_time(mt, sm, 2.5);
          CHECK(c == doctest::Approx(g).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("separated weight on a flat eigenfunction") {
    // phi = 1 everywhere: only the rate exponential survives.
    const auto m = fixtures::symmetric2();
    const auto e = compute_eigen(m);
    const SpineModel sm(m, e);
    for (int i = 0; i < 300; ++i) {
      RngStream r(11, i);
      const std::vector<double> s{2.0, 2.0};
      const auto mt = simulate_qk(sm, 0, 2, s, r);
      const double f = separated_factor(mt, sm, 2.0);
      if (mt.leaves[0] == mt.leaves[1]) {
        CHECK(f == 0.0);
        continue;
      }
      const auto in = skeleton_integrals(mt, sm, 2.0);
      CHECK(f == doctest::Approx(std::exp(in.rate_excess)).epsilon(1e-12));
    }
  }

  TEST_CASE("lhs and rhs agree on the reference model") {
    const auto m = fixtures::m2();
    const auto e = compute_eigen(m);
    const SpineModel sm(m, e);
    const int n = 40000;
    const Vec f = indicator(2, 0), g = indicator(2, 1);
    const auto fs = product_functional({f, g}, {1.0, 1.0});
    const auto l = lhs_estimate(m, 0, fs, n, opts(12));
    const auto r = rhs_estimate(sm, 0, fs, n, opts(13));
    const double oracle = second_moment_oracle(m, f, g, 1.0)[0];
    CHECK(std::fabs(z_score(l, oracle)) < 3);
    CHECK(std::fabs(z_score(r.estimate, oracle)) < 3);
    CHECK(std::fabs(joint_z(l, r.estimate)) < 3);

    const auto tt = product_functional({f, g}, {1.5, 0.75});
    const double oracle2 = two_time_moment_oracle(m, g, f, 0.75, 1.5)[0];
    const auto l2 = lhs_estimate(m, 0, tt, n, opts(14));
    const auto r2 = rhs_estimate(sm, 0, tt, n, opts(15));
    CHECK(std::fabs(z_score(l2, oracle2)) < 3);
    CHECK(std::fabs(z_score(r2.estimate, oracle2)) < 3);
  }

  TEST_CASE("genealogy functional across estimators") {
    const auto m = fixtures::m1();
    const auto e = compute_eigen(m);
    const SpineModel sm(m, e);
    const auto fs = genealogy_functional([](double u) { return u; }, 3.0, 1.5, false);
    const auto l = lhs_estimate(m, 0, fs, 40000, opts(16));
    const auto r = rhs_estimate(sm, 0, fs, 40000, opts(17));
    CHECK(std::fabs(joint_z(l, r.estimate)) < 3);
  }

  TEST_CASE("estimates do not depend on the worker count") {
    const auto m = fixtures::m2();
    const auto e = compute_eigen(m);
    const SpineModel sm(m, e);
    const auto fs = product_functional({ones(2), ones(2)}, {1.0, 0.5});
    auto o1 = opts(18), o4 = opts(18);
    o1.workers = 1;
    o4.workers = 4;
    const auto a = rhs_estimate(sm, 0, fs, 3000, o1).estimate;
    const auto b = rhs_estimate(sm, 0, fs, 3000, o4).estimate;
    CHECK(a.mean == b.mean);
    CHECK(a.se == b.se);
    const std::vector<double> s{1.0, 1.0};
    CHECK(martingale_mean(sm, 0, 2, s, 3000, o1).mean == martingale_mean(sm, 0, 2, s, 3000, o4).mean);
  }

  TEST_CASE("martingale means") {
    for (const auto& m : {fixtures::m1(), fixtures::m2()}) {
      const auto e = compute_eigen(m);
      const SpineModel sm(m, e);
      for (const auto& s : {std::vector<double>{1.0}, std::vector<double>{2.0, 2.0}, std::vector<double>{2.0, 1.0}}) {
        for (auto conv : {MarkConvention::kRetire, MarkConvention::kFollowThrough}) {
          auto o = opts(19);
          o.convention = conv;
          const auto est = martingale_mean(sm, 0, static_cast<int>(s.size()), s, 20000, o);
          CHECK(std::fabs(z_score(est, 1.0)) < 3);
        }
      }
    }
  }
}
