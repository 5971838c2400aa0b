#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "spinesim/error.hpp"
#include "spinesim/moments.hpp"

using namespace spinesim;

namespace {

// Sum over all N^k labeled placements of k marks of the product of phi over touched children.
double brute_bracket(const std::vector<int>& children, const Vec& phi, int k) {
  const int n = static_cast<int>(children.size());
  if (n == 0) return 0.0;
  double total = 0.0;
  std::vector<int> place(k, 0);
  while (true) {
    std::set<int> touched(place.begin(), place.end());
    double w = 1.0;
    for (int c : touched) w *= phi[children[c]];
    total += w;
    int i = 0;
    while (i < k && ++place[i] == n) place[i++] = 0;
    if (i == k) break;
  }
  return total;
}

// Binomial tolerance check: count/n against p within 4 sigma.
void check_freq(std::uint64_t count, std::uint64_t n, double p) {
  const double se = std::sqrt(p * (1 - p) / n);
  CHECK(std::fabs(static_cast<double>(count) / n - p) <= 4 * se + 1e-15);
}

BranchingModel two_three_model() {
  Mat q = Mat::Zero(1, 1);
  return build_model({"x"}, q, Vec::Ones(1), {{OffspringAtom{0.5, {}}, OffspringAtom{0.3, {0, 0}}, OffspringAtom{0.2, {0, 0, 0}}}});
}

}  // namespace

TEST_SUITE("moments") {
  TEST_CASE("bracket examples") {
    const Vec one = Vec::Ones(1);
    const std::vector<int> two{0, 0};
    CHECK(bracket_kn(two, one, 2, 2) == doctest::Approx(2.0));
    CHECK(bracket_kn(two, one, 2, 1) == doctest::Approx(2.0));
    const std::vector<int> none;
    for (int k = 1; k <= 3; ++k)
      for (int n = 1; n <= k; ++n) CHECK(bracket_kn(none, one, k, n) == 0.0);
    CHECK(bracket_kn(two, one, 3, 3) == 0.0);
  }

  TEST_CASE("bracket decomposition against labeled placements") {
    Vec phi(3);
    phi << 1.0, 0.37, 0.81;
    const std::vector<std::vector<int>> configs{{0, 1}, {2, 2}, {0, 1, 2}, {1, 1, 0, 2}, {2, 0, 2, 1}};
    for (const auto& c : configs) {
      for (int k = 1; k <= 3; ++k) {
        double s = 0.0;
        for (int n = 1; n <= k; ++n) s += bracket_kn(c, phi, k, n);
        CHECK(s == doctest::Approx(brute_bracket(c, phi, k)).epsilon(1e-13));
      }
    }
  }

  TEST_CASE("moment examples on the critical binary model") {
    const auto m = fixtures::m1();
    const Vec phi = Vec::Ones(1);
    CHECK(m_kn(m, phi, 0, 2, 2) == doctest::Approx(1.0));
    CHECK(m_kn(m, phi, 0, 2, 1) == doctest::Approx(1.0));
    CHECK(m_kn(m, phi, 0, 1, 1) == doctest::Approx(1.0));
    CHECK(m_k(m, phi, 0, 1) == doctest::Approx(1.0));
    CHECK(m_k(m, phi, 0, 2) == doctest::Approx(2.0));
    CHECK(m_kn(m, phi, 0, 3, 3) == 0.0);  // n above the largest atom
    const auto pd = fixtures::pure_death();
    for (int k = 1; k <= 3; ++k) CHECK(m_k(pd, phi, 0, k) == 0.0);
  }

  TEST_CASE("local case identity m_k = E[N^k]") {
    const auto m = two_three_model();
    const Vec phi = Vec::Ones(1);
    for (int k = 1; k <= 3; ++k) {
      const double expect = 0.3 * std::pow(2.0, k) + 0.2 * std::pow(3.0, k);
      CHECK(m_k(m, phi, 0, k) == doctest::Approx(expect).epsilon(1e-13));
    }
  }

  TEST_CASE("moment table structure") {
    for (const auto& m : {fixtures::m2(), fixtures::symmetric2(), two_three_model()}) {
      const auto e = compute_eigen(m);
      const MomentTable tab(m, e.phi, 3);
      for (int x = 0; x < m.d(); ++x) {
        for (int k = 1; k <= 3; ++k) {
          double s = 0.0;
          for (int n = 1; n <= k; ++n) {
            CHECK(tab.m_kn(x, k, n) >= 0.0);
            CHECK(tab.m_kn(x, k, n) == doctest::Approx(m_kn(m, e.phi, x, k, n)).epsilon(1e-13));
            s += tab.m_kn(x, k, n);
            const auto& cdf = tab.biased_atom_cdf(x, k, n);
            if (tab.m_kn(x, k, n) > 0.0) {
              REQUIRE(!cdf.empty());
              // Unnormalised cumulative table; its total is the normalising constant.
              CHECK(cdf.back() == doctest::Approx(tab.m_kn(x, k, n) * std::pow(e.phi[x], n)).epsilon(1e-12));
              for (std::size_t i = 1; i < cdf.size(); ++i) CHECK(cdf[i] >= cdf[i - 1]);
            }
          }
          CHECK(tab.m_k(x, k) == doctest::Approx(s).epsilon(1e-13));
        }
      }
    }
  }

  TEST_CASE("biased offspring sampling") {
    const auto m1 = fixtures::m1();
    const Vec one = Vec::Ones(1);
    RngStream rng(7, 1);
    for (int i = 0; i < 100; ++i) {
      CHECK(biased_offspring_sample(m1, one, 0, 2, 2, rng) == 1);
      CHECK(biased_offspring_sample(m1, one, 0, 1, 1, rng) == 1);
    }
    CHECK_THROWS_WITH_AS(biased_offspring_sample(fixtures::pure_death(), one, 0, 1, 1, rng),
                         doctest::Contains("no valid offspring configuration"), SimulationError);

    // Odds 0.3*2 : 0.2*6 for the two- and three-child atoms.
    const auto m = two_three_model();
    const int n = 100000;
    std::uint64_t threes = 0;
    for (int i = 0; i < n; ++i) threes += biased_offspring_sample(m, one, 0, 2, 2, rng) == 2;
    check_freq(threes, n, 1.2 / 1.8);
  }

  TEST_CASE("mark partition frequencies") {
    RngStream rng(11, 2);
    const int n = 100000;
    SUBCASE("two marks split over two children") {
      const std::vector<int> kids{0, 0};
      std::uint64_t first = 0;
      for (int i = 0; i < n; ++i) {
        const auto out = mark_partition_sample(kids, Vec::Ones(1), 0b11, 2, rng);
        REQUIRE(out.size() == 2);
        CHECK(((out[0] == 0b01 && out[1] == 0b10) || (out[0] == 0b10 && out[1] == 0b01)));
        first += out[0] == 0b01;
      }
      check_freq(first, n, 0.5);
    }
    SUBCASE("one mark, weights proportional to phi") {
      Vec phi(2);
      phi << 1.0, 0.25;
      const std::vector<int> kids{0, 1};
      std::uint64_t first = 0;
      for (int i = 0; i < n; ++i) first += mark_partition_sample(kids, phi, 0b1, 1, rng)[0] == 0b1;
      check_freq(first, n, 1.0 / 1.25);
    }
    SUBCASE("three marks to one child") {
      Vec phi(2);
      phi << 1.0, 0.5;
      const std::vector<int> kids{1, 0};
      std::uint64_t second = 0;
      for (int i = 0; i < n; ++i) {
        const auto out = mark_partition_sample(kids, phi, 0b111, 1, rng);
        CHECK(((out[0] == 0b111 && out[1] == 0) || (out[0] == 0 && out[1] == 0b111)));
        second += out[1] == 0b111;
      }
      check_freq(second, n, 1.0 / 1.5);
    }
    SUBCASE("uniform over labeled configurations") {
      // (2,1) composition over 2 children: labeled placements {12|3}, {13|2}, {23|1} and mirrors.
      const std::vector<int> kids{0, 0};
      std::map<std::pair<int, int>, std::uint64_t> counts;
      for (int i = 0; i < n; ++i) {
        const auto out = mark_partition_sample(kids, Vec::Ones(1), 0b111, 2, rng);
        counts[{out[0], out[1]}]++;
      }
      CHECK(counts.size() == 6);
      for (const auto& [k, c] : counts) check_freq(c, n, 1.0 / 6.0);
    }
    CHECK_THROWS(mark_partition_sample(std::vector<int>{0, 0}, Vec::Ones(1), 0b111, 3, rng));
  }

  TEST_CASE("second moment oracle examples") {
    const Vec one = Vec::Ones(1);
    for (double t : {0.5, 1.0, 3.0})
      CHECK(second_moment_oracle(fixtures::m1(), one, one, t)[0] == doctest::Approx(1.0 + t).epsilon(1e-9));
    for (double t : {0.5, 2.0})
      CHECK(second_moment_oracle(fixtures::pure_death(), one, one, t)[0] == doctest::Approx(std::exp(-t)).epsilon(1e-9));
    const auto m = fixtures::m2();
    Vec f(2), g(2);
    f << 1.0, 0.3;
    g << 0.2, 2.0;
    const Vec u0 = second_moment_oracle(m, f, g, 0.0);
    CHECK(u0[0] == doctest::Approx(0.2));
    CHECK(u0[1] == doctest::Approx(0.6));
  }

  TEST_CASE("two time oracle examples") {
    const Vec one = Vec::Ones(1);
    CHECK(two_time_moment_oracle(fixtures::m1(), one, one, 1.0, 2.0)[0] == doctest::Approx(2.0).epsilon(1e-9));
    const auto m = fixtures::m2();
    Vec f(2), g(2);
    f << 1.0, 0.3;
    g << 0.2, 2.0;
    const Vec same = two_time_moment_oracle(m, f, g, 1.5, 1.5);
    const Vec direct = second_moment_oracle(m, f, g, 1.5);
    CHECK((same - direct).lpNorm<Eigen::Infinity>() < 1e-12);
    const Vec start = two_time_moment_oracle(m, f, g, 0.0, 2.0);
    const Vec expect = f.cwiseProduct(semigroup_matrix(m, 2.0) * g);
    CHECK((start - expect).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK_THROWS(two_time_moment_oracle(m, f, g, 2.0, 1.0));
  }
}
