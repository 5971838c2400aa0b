#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "spinesim/rng.hpp"
#include "spinesim/stats.hpp"

using namespace spinesim;

TEST_SUITE("stats") {
  TEST_CASE("mc_mean examples") {
    const std::vector<double> c(10, 3.5);
    const auto e = mc_mean(c);
    CHECK(e.mean == 3.5);
    CHECK(e.se == 0.0);
    const std::vector<double> two{0.0, 2.0};
    const auto t = mc_mean(two);
    CHECK(t.mean == 1.0);
    CHECK(t.se == doctest::Approx(1.0));
    CHECK_THROWS_AS(mc_mean(std::vector<double>{1.0}), std::invalid_argument);

    RngStream r(1, 1);
    std::vector<double> u(1000000);
    for (auto& x : u) x = r.uniform();
    const auto eu = mc_mean(u);
    CHECK(std::fabs(eu.mean - 0.5) < 3 * eu.se);
  }

  TEST_CASE("merge is exact") {
    RngStream r(2, 0);
    std::vector<double> xs(10001);
    for (auto& x : xs) x = r.exponential(1.0) * 1e6 - 3e5;
    Accumulator all, a, b, c;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      all.add(xs[i]);
      (i % 3 == 0 ? a : i % 3 == 1 ? b : c).add(xs[i]);
    }
    Accumulator ab = a;
    ab.merge(b);
    ab.merge(c);
    Accumulator bc = b;
    bc.merge(c);
    bc.merge(a);
    CHECK(ab.mean() == all.mean());
    CHECK(ab.se() == all.se());
    CHECK(bc.mean() == all.mean());
    CHECK(bc.se() == all.se());
    const auto direct = mc_mean(xs);
    CHECK(direct.mean == all.mean());
    CHECK(direct.se == all.se());
  }

  TEST_CASE("exact sum cancels") {
    ExactSum s;
    s.add(1e100);
    s.add(1.0);
    s.add(-1e100);
    CHECK(s.value() == 1.0);
  }

  TEST_CASE("ks test level and power") {
    auto cdf = [](double x) { return x <= 0 ? 0.0 : 1.0 - std::exp(-x); };
    int accept = 0;
    for (int rep = 0; rep < 100; ++rep) {
      RngStream r(100, rep);
      std::vector<double> xs(10000);
      for (auto& x : xs) x = -std::log(r.uniform_pos());
      accept += ks_test(xs, cdf).p > 0.01;
    }
    CHECK(accept >= 98);

    RngStream r(7, 7);
    std::vector<double> shifted(10000);
    for (auto& x : shifted) x = 0.1 - std::log(r.uniform_pos());
    CHECK(ks_test(shifted, cdf).p < 1e-6);

    const auto one = ks_test({0.0}, [](double x) { return 0.5 + 0.5 * std::tanh(x); });
    CHECK(one.d == doctest::Approx(0.5));
    CHECK_THROWS(ks_test({}, cdf));
  }

  TEST_CASE("kolmogorov tail") {
    CHECK(kolmogorov_sf(1.3581) == doctest::Approx(0.05).epsilon(1e-3));
    CHECK(kolmogorov_sf(1.6276) == doctest::Approx(0.01).epsilon(1e-3));
    CHECK(kolmogorov_sf(0.0) == doctest::Approx(1.0));
    CHECK(ks_critical_1pct(10000) == doctest::Approx(1.6276 / 100).epsilon(1e-3));
  }

  TEST_CASE("chi square") {
    CHECK(chi_square_sf(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-9));
    CHECK(chi_square_sf(18.307038053275146, 10) == doctest::Approx(0.05).epsilon(1e-9));
    const std::vector<std::uint64_t> counts{250, 250, 500};
    const std::vector<double> probs{0.25, 0.25, 0.5};
    const auto r = chi_square_test(counts, probs);
    CHECK(r.stat == doctest::Approx(0.0));
    CHECK(r.dof == 2);
    CHECK(r.p == doctest::Approx(1.0));
  }

  TEST_CASE("empirical laplace examples") {
    const std::vector<double> thetas{0.0, 0.5, 2.0};
    const std::vector<double> mus{0.0, 1.0};
    const std::vector<std::array<double, 2>> zero(50, {0.0, 0.0});
    for (const auto& c : empirical_laplace(zero, thetas, mus)) {
      CHECK(c.value == 1.0);
      CHECK(c.se == 0.0);
    }
    RngStream r(9, 3);
    std::vector<std::array<double, 2>> ex(200000);
    for (auto& s : ex) s = {r.exponential(1.0), r.exponential(1.0)};
    const auto cells = empirical_laplace(ex, thetas, mus);
    REQUIRE(cells.size() == 6);
    for (const auto& c : cells) {
      const double exact = 1.0 / ((1 + c.theta) * (1 + c.mu));
      if (c.theta == 0.0 && c.mu == 0.0) {
        CHECK(c.value == 1.0);
        CHECK(c.se == 0.0);
      } else {
        CHECK(std::fabs(c.value - exact) < 3 * c.se);
      }
    }
  }
}
