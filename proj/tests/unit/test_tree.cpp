#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "fixtures.hpp"
#include "spinesim/error.hpp"
#include "spinesim/moments.hpp"
#include "spinesim/stats.hpp"
#include "spinesim/tree.hpp"

using namespace spinesim;

namespace {

void check_structure(const Tree& t) {
  REQUIRE(t.size() >= 1);
  CHECK(t.nodes[0].parent == -1);
  CHECK(t.nodes[0].birth == 0.0);
  for (std::size_t v = 0; v < t.size(); ++v) {
    const auto& n = t.nodes[v];
    CHECK(t.jump_time[n.jump_begin] == n.birth);
    CHECK(t.jump_state[n.jump_begin] == n.state0);
    for (auto j = n.jump_begin + 1; j < n.jump_end; ++j) CHECK(t.jump_time[j] > t.jump_time[j - 1]);
    if (n.death != kAlive) CHECK(n.birth < n.death);
    for (int c = 0; c < n.n_children; ++c) {
      const int ch = n.first_child + c;
      CHECK(t.nodes[ch].parent == static_cast<int>(v));
      CHECK(t.nodes[ch].birth == n.death);
      CHECK(t.nodes[ch].ordinal == c + 1);
      auto lab = t.label(static_cast<int>(v));
      lab.push_back(c + 1);
      CHECK(t.label(ch) == lab);
      CHECK(t.find(lab) == ch);
    }
  }
}

}  // namespace

TEST_SUITE("tree") {
  TEST_CASE("pure death root lifetime is exponential") {
    const auto m = fixtures::pure_death();
    std::vector<double> life;
    for (int i = 0; i < 20000; ++i) {
      RngStream r(1, i);
      const Tree t = simulate(m, 0, 1e9, r);
      CHECK(t.size() == 1);
      CHECK(t.nodes[0].n_children == 0);
      life.push_back(t.nodes[0].death);
    }
    CHECK(ks_test(life, [](double x) { return 1.0 - std::exp(-x); }).p > 1e-3);
  }

  TEST_CASE("root and population at time zero") {
    const auto m = fixtures::m2();
    RngStream r(2, 0);
    const Tree t = simulate(m, 1, 5.0, r);
    CHECK(t.root_state == 1);
    CHECK(t.label(0).empty());
    const auto p0 = population_at(t, 0.0);
    REQUIRE(p0.size() == 1);
    CHECK(p0[0].label.empty());
    CHECK(p0[0].state == 1);
    CHECK_THROWS_AS(population_at(t, 5.5), std::out_of_range);
  }

  TEST_CASE("structure of sampled trees") {
    const auto m = fixtures::m2();
    for (int i = 0; i < 300; ++i) {
      RngStream r(3, i);
      const Tree t = simulate(m, 0, 6.0, r);
      check_structure(t);
      CHECK(population_at(t, 6.0).size() == t.count_alive(6.0));
    }
  }

  TEST_CASE("population splits over complementary subtrees") {
    const auto m = fixtures::m1();
    int checked = 0;
    for (int i = 0; i < 500 && checked < 50; ++i) {
      RngStream r(4, i);
      const Tree t = simulate(m, 0, 8.0, r);
      if (t.nodes[0].n_children != 2 || t.count_alive(8.0) == 0) continue;
      ++checked;
      const int w = t.nodes[0].first_child;
      std::size_t in = 0, out = 0;
      for (int v : t.alive_indices(8.0)) (t.is_ancestor_or_self(w, v) ? in : out)++;
      CHECK(in + out == t.count_alive(8.0));
      std::size_t sub = 0;
      for (int v = w; v < t.subtree_end[w]; ++v) sub += t.alive_at(v, 8.0);
      CHECK(sub == in);
    }
    CHECK(checked > 10);
  }

  TEST_CASE("extinction empties the population") {
    const auto m = fixtures::m1();
    for (int i = 0; i < 200; ++i) {
      RngStream r(5, i);
      const Tree t = simulate(m, 0, 30.0, r);
      double last = 0.0;
      bool alive = false;
      for (const auto& n : t.nodes) {
        if (n.death == kAlive) alive = true;
        else last = std::max(last, n.death);
      }
      if (!alive) CHECK(population_at(t, std::min(30.0, last + 1e-9)).empty());
    }
  }

  TEST_CASE("mrca split times") {
    const auto m = fixtures::m1();
    for (int i = 0; i < 200; ++i) {
      RngStream r(6, i);
      const Tree t = simulate(m, 0, 6.0, r);
      if (t.nodes[0].n_children != 2) continue;
      const int a = t.nodes[0].first_child, b = a + 1;
      CHECK(t.mrca_split_time(a, b) == t.nodes[0].death);
      CHECK(t.mrca(a, b) == 0);
      if (t.nodes[a].n_children == 2 && t.nodes[b].n_children == 2) {
        const int aa = t.nodes[a].first_child, bb = t.nodes[b].first_child;
        CHECK(t.mrca_split_time(aa, aa + 1) == t.nodes[a].death);
        CHECK(t.mrca_split_time(aa, bb) == t.nodes[0].death);
        CHECK(t.mrca_split_time(aa, a) == t.nodes[a].death);
      }
      if (t.nodes[a].death != kAlive) CHECK(t.mrca_split_time(a, a) == t.nodes[a].death);
    }
  }

  TEST_CASE("first and second moments") {
    const auto m = fixtures::m2();
    const int n = 100000;
    for (double t : {1.0, 5.0}) {
      const Mat pt = semigroup_matrix(m, t);
      Vec ind0 = Vec::Zero(2), ind1 = Vec::Zero(2);
      ind0[0] = 1.0;
      ind1[1] = 1.0;
      const Vec u01 = second_moment_oracle(m, ind0, ind1, t);
      const Vec u00 = second_moment_oracle(m, ind0, ind0, t);
      Accumulator a0, a1, p01, p00;
      for (int i = 0; i < n; ++i) {
        RngStream r(7, i);
        const Tree tr = simulate(m, 0, t, r);
        double c0 = 0, c1 = 0;
        for (const auto& p : population_at(tr, t)) (p.state == 0 ? c0 : c1) += 1.0;
        a0.add(c0);
        a1.add(c1);
        p01.add(c0 * c1);
        p00.add(c0 * c0);
      }
      CHECK(std::fabs(z_score(a0.estimate(), pt(0, 0))) < 3);
      CHECK(std::fabs(z_score(a1.estimate(), pt(0, 1))) < 3);
      CHECK(std::fabs(z_score(p01.estimate(), u01[0])) < 3);
      CHECK(std::fabs(z_score(p00.estimate(), u00[0])) < 3);
    }
  }

  TEST_CASE("critical binary survival") {
    const auto m = fixtures::m1();
    for (double t : {2.0, 10.0, 50.0}) {
      Accumulator s;
      for (int i = 0; i < 20000; ++i) {
        RngStream r(8, i);
        s.add(simulate(m, 0, t, r).count_alive(t) > 0 ? 1.0 : 0.0);
      }
      CHECK(std::fabs(z_score(s.estimate(), 2.0 / (2.0 + t))) < 3);
    }
  }

  TEST_CASE("conditioning") {
    const auto m = fixtures::m1();
    RngStream r(9, 0);
    std::uint64_t attempts = 0;
    const int n = 300;
    for (int i = 0; i < n; ++i) {
      const auto c = sample_conditioned(m, 0, 198.0, r, 100000);
      CHECK(c.tree.count_alive(198.0) > 0);
      attempts += c.attempts;
    }
    // Acceptance rate 1%: mean attempts 100, sd about 100.
    CHECK(static_cast<double>(attempts) / n == doctest::Approx(100.0).epsilon(0.2));
    RngStream r2(9, 1);
    CHECK_THROWS_AS(sample_conditioned(fixtures::pure_death(), 0, 100.0, r2, 1), SimulationError);
    const auto sup = binary_model(0.01);
    RngStream r3(9, 2);
    CHECK(sample_conditioned(sup, 0, 3.0, r3, 10).attempts <= 2);
  }

  TEST_CASE("node cap") {
    const auto sup = binary_model(0.05);
    RngStream r(10, 0);
    SimOptions opt;
    opt.max_nodes = 1000;
    CHECK_THROWS_AS(simulate(sup, 0, 50.0, r, opt), SimulationError);
  }
}
