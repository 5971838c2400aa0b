#include <benchmark/benchmark.h>

#include <vector>

#include "spinesim/census.hpp"
#include "spinesim/genealogy.hpp"
#include "spinesim/many2few.hpp"
#include "spinesim/model.hpp"
#include "spinesim/rng.hpp"
#include "spinesim/spine.hpp"
#include "spinesim/tree.hpp"

using namespace spinesim;

static void BM_PhiloxBlock(benchmark::State& st) {
  Philox4x32::Counter c{0, 0, 0, 0};
  for (auto _ : st) {
    c = Philox4x32::block(c, {1, 2});
    benchmark::DoNotOptimize(c);
  }
}
BENCHMARK(BM_PhiloxBlock);

static void BM_SimulateTree(benchmark::State& st) {
  const auto m = binary_model(0.5);
  const double t = static_cast<double>(st.range(0));
  Tree tree;
  std::uint64_t i = 0, nodes = 0;
  for (auto _ : st) {
    RngStream rng(7, i++);
    simulate_into(tree, m, 0, t, rng);
    nodes += tree.size();
  }
  st.counters["nodes/s"] = benchmark::Counter(static_cast<double>(nodes), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_SimulateTree)->Arg(10)->Arg(50)->Arg(200);

static void BM_Census(benchmark::State& st) {
  const auto m = binary_model(0.5);
  const CensusSampler cs(m);
  const double times[1] = {static_cast<double>(st.range(0))};
  std::int64_t tot[1];
  std::uint64_t i = 0;
  for (auto _ : st) {
    RngStream rng(7, i++);
    benchmark::DoNotOptimize(cs.run(0, times, rng, tot));
  }
}
BENCHMARK(BM_Census)->Arg(50)->Arg(200);

static void BM_SpineTreeAndWeight(benchmark::State& st) {
  const auto m = binary_model(0.5);
  const auto e = compute_eigen(m);
  const SpineModel sm(m, e, 3);
  const std::vector<double> s{5.0, 5.0};
  MarkedTree mt;
  std::uint64_t i = 0;
  for (auto _ : st) {
    RngStream rng(9, i++);
    simulate_qk_into(mt, sm, 0, 2, s, rng);
    benchmark::DoNotOptimize(rhs_factor_general(mt, sm, s));
  }
}
BENCHMARK(BM_SpineTreeAndWeight);

static void BM_FaClosedForm(benchmark::State& st) {
  double u = 0.0;
  for (auto _ : st) {
    benchmark::DoNotOptimize(f_a(0.5, u));
    u = u > 0.49 ? 0.0 : u + 1e-3;
  }
}
BENCHMARK(BM_FaClosedForm);

static void BM_FaThetaIntegral(benchmark::State& st) {
  double u = 0.0;
  for (auto _ : st) {
    benchmark::DoNotOptimize(f_a_theta_integral(0.5, u));
    u = u > 0.49 ? 0.0 : u + 1e-3;
  }
}
BENCHMARK(BM_FaThetaIntegral);

BENCHMARK_MAIN();
