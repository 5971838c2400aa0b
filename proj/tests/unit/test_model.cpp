#include <cmath>
#include <functional>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "fixtures.hpp"
#include "spinesim/error.hpp"

using namespace spinesim;

namespace {

std::string model_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const ModelError& e) {
    return e.what();
  }
  return "";
}

// Sigma by explicit enumeration of ordered pairs of offspring in every atom.
double sigma_brute(const BranchingModel& m, const EigenTriple& e) {
  double s = 0.0;
  for (int x = 0; x < m.d(); ++x) {
    double v = 0.0;
    for (const auto& a : m.offspring[x])
      for (std::size_t i = 0; i < a.children.size(); ++i)
        for (std::size_t j = 0; j < a.children.size(); ++j)
          if (i != j) v += a.p * e.phi[a.children[i]] * e.phi[a.children[j]];
    s += e.phi_tilde[x] * m.beta[x] * v;
  }
  return s;
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("critical binary model is valid") {
    const auto m = fixtures::m1();
    CHECK(m.d() == 1);
    CHECK(m.max_offspring() == 2);
  }

  TEST_CASE("single-offspring atom is rejected") {
    Mat q = Mat::Zero(1, 1);
    const auto msg = model_error([&] { build_model({"x"}, q, Vec::Ones(1), {{OffspringAtom{1.0, {0}}}}); });
    CHECK(msg.find("single-offspring atom forbidden") != std::string::npos);
    CHECK(msg.find("offspring[0][0].children") != std::string::npos);
  }

  TEST_CASE("row sum 0.1 is not a generator") {
    Mat q(2, 2);
    q << -1.0, 1.1, 1.0, -1.0;
    std::vector<OffspringAtom> atoms{{0.5, {}}, {0.5, {0, 1}}};
    const auto msg = model_error([&] { build_model({"1", "2"}, q, Vec::Ones(2), {atoms, atoms}); });
    CHECK(msg.find("not a generator") != std::string::npos);
    CHECK(msg.find("Q[0]") != std::string::npos);
  }

  TEST_CASE("other validation failures") {
    Mat q = Mat::Zero(1, 1);
    CHECK(model_error([&] { build_model({"x"}, q, Vec::Constant(1, -1.0), {{OffspringAtom{1.0, {}}}}); })
              .find("negative rate") != std::string::npos);
    CHECK(model_error([&] {
            build_model({"x"}, q, Vec::Ones(1), {{OffspringAtom{0.5, {}}, OffspringAtom{0.4, {0, 0}}}});
          }).find("not 1") != std::string::npos);
    CHECK(model_error([&] {
            build_model({"x"}, q, Vec::Ones(1), {{OffspringAtom{0.5, {}}, OffspringAtom{0.5, {0, 0, 0}}}}, 2);
          }).find("exceeds n_max") != std::string::npos);
    CHECK(model_error([&] {
            build_model({"x"}, q, Vec::Ones(1), {{OffspringAtom{1.5, {}}, OffspringAtom{-0.5, {0, 0}}}});
          }).find("negative probability") != std::string::npos);
  }

  TEST_CASE("mean generator examples") {
    CHECK(mean_generator(fixtures::m1())(0, 0) == doctest::Approx(0.0));
    CHECK(mean_generator(fixtures::pure_death())(0, 0) == doctest::Approx(-1.0));
    const Mat a = mean_generator(fixtures::symmetric2());
    CHECK(std::fabs(a.row(0).sum()) < 1e-14);
    CHECK(std::fabs(a.row(1).sum()) < 1e-14);
  }

  TEST_CASE("eigen triple examples") {
    const auto e1 = compute_eigen(fixtures::m1());
    CHECK(std::fabs(e1.lambda) < 1e-12);
    CHECK(e1.phi[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e1.phi_tilde[0] == doctest::Approx(1.0).epsilon(1e-12));

    const auto e2 = compute_eigen(binary_model(0.4));
    CHECK(e2.lambda == doctest::Approx(0.2).epsilon(1e-12));

    const auto e3 = compute_eigen(fixtures::symmetric2());
    CHECK(e3.phi[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e3.phi[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e3.phi_tilde[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(e3.phi_tilde[1] == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("eigen invariants on the two-state reference model") {
    const auto m = fixtures::m2();
    const auto e = compute_eigen(m);
    const Mat a = mean_generator(m);
    CHECK((a * e.phi - e.lambda * e.phi).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((a.transpose() * e.phi_tilde - e.lambda * e.phi_tilde).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK(e.phi.dot(e.phi_tilde) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(e.phi.minCoeff() > 0.0);
    CHECK(std::fabs(e.lambda) <= 1e-10);
    CHECK(std::fabs(e.mass - 1.0) > 1e-3);
    for (double t : {0.5, 1.0, 5.0}) {
      const Mat pt = semigroup_matrix(m, t);
      CHECK((pt * e.phi - std::exp(e.lambda * t) * e.phi).lpNorm<Eigen::Infinity>() < 1e-8);
      CHECK((pt.transpose() * e.phi_tilde - std::exp(e.lambda * t) * e.phi_tilde).lpNorm<Eigen::Infinity>() < 1e-8);
    }
  }

  TEST_CASE("semigroup identities off criticality") {
    const auto m = binary_model(0.4);
    const auto e = compute_eigen(m);
    for (double t : {0.5, 1.0, 5.0})
      CHECK(semigroup_matrix(m, t)(0, 0) == doctest::Approx(std::exp(0.2 * t)).epsilon(1e-10));
  }

  TEST_CASE("power iteration agrees with the dense solver") {
    // A 70-state ring with local moves, above the dense threshold.
    const int d = 70;
    Mat q = Mat::Zero(d, d);
    for (int x = 0; x < d; ++x) {
      q(x, (x + 1) % d) = 1.0 + 0.01 * x;
      q(x, (x + d - 1) % d) = 0.5;
      q(x, x) = -(1.5 + 0.01 * x);
    }
    Vec b(d);
    std::vector<std::vector<OffspringAtom>> off(d);
    for (int x = 0; x < d; ++x) {
      b[x] = 1.0 + 0.5 * std::sin(x);
      off[x] = {{0.45, {}}, {0.55, {x, (x + 3) % d}}};
    }
    const auto m = build_model(std::vector<std::string>(d, "s"), q, b, off);
    const auto e = compute_eigen(m);
    const Mat a = mean_generator(m);
    CHECK((a * e.phi - e.lambda * e.phi).lpNorm<Eigen::Infinity>() < 1e-9);
    const Eigen::EigenSolver<Mat> es(a);
    double best = -1e300;
    for (int i = 0; i < d; ++i) best = std::max(best, es.eigenvalues()[i].real());
    CHECK(e.lambda == doctest::Approx(best).epsilon(1e-9));
  }

  TEST_CASE("sigma examples and brute force") {
    CHECK(compute_eigen(fixtures::m1()).sigma == doctest::Approx(1.0).epsilon(1e-12));
    const auto pd = compute_eigen(fixtures::pure_death());
    CHECK(pd.sigma == doctest::Approx(0.0));
    CHECK_THROWS_AS(require_positive_sigma(pd), ModelError);
    const auto s2 = fixtures::symmetric2();
    const auto e2 = compute_eigen(s2);
    CHECK(e2.sigma == doctest::Approx(sigma_brute(s2, e2)).epsilon(1e-12));
    CHECK(e2.sigma == doctest::Approx(1.0).epsilon(1e-12));
    const auto m2 = fixtures::m2();
    const auto em2 = compute_eigen(m2);
    CHECK(em2.sigma == doctest::Approx(sigma_brute(m2, em2)).epsilon(1e-12));
  }

  TEST_CASE("mixing defect") {
    const auto m = fixtures::m1();
    CHECK(mixing_defect(m, compute_eigen(m), 0.0) == doctest::Approx(0.0));
    const auto s = fixtures::symmetric2();
    CHECK(mixing_defect(s, compute_eigen(s), 20.0) < 1e-6);
    const auto pd = fixtures::pure_death();
    CHECK(std::isfinite(mixing_defect(pd, compute_eigen(pd), 3.0)));
    for (const auto& mm : {fixtures::symmetric2(), fixtures::m2()}) {
      const auto e = compute_eigen(mm);
      double prev = INFINITY;
      for (double t : {1.0, 2.0, 4.0, 8.0, 16.0}) {
        const double d = mixing_defect(mm, e, t);
        CHECK(d <= prev + 1e-10);  // expm round-off floor
        prev = d;
      }
    }
  }

  TEST_CASE("calibrate_critical drives lambda to zero") {
    const auto m = calibrate_critical(binary_model(0.3));
    CHECK(std::fabs(compute_eigen(m).lambda) <= 1e-10);
    CHECK(m.offspring[0][0].p == doctest::Approx(0.5).epsilon(1e-8));
  }

  TEST_CASE("model files") {
    const auto m = parse_model(R"({"states": 1, "Q": [[0]], "beta": [1],
      "offspring": [[{"p": 0.5, "children": []}, {"p": 0.5, "children": [1, 1]}]]})");
    CHECK(m.d() == 1);
    CHECK(m.offspring[0][1].children == std::vector<int>{0, 0});
    try {
      parse_model(R"({"states": ["a"], "Q": [[0]], "beta": [1],
        "offspring": [[{"p": 1.0, "children": ["a"]}]]})");
      FAIL("expected an error");
    } catch (const ModelError& e) {
      CHECK(e.path() == "offspring[0][0].children");
    }
    CHECK_THROWS_AS(parse_model(R"({"states": ["a"], "Q": [[0]], "beta": [1]})"), ModelError);
    CHECK_THROWS_AS(parse_model("not json"), ModelError);
    const auto m1 = load_model(fixtures::config_path("models/m1.json"));
    CHECK(compute_eigen(m1).sigma == doctest::Approx(1.0));
  }
}
