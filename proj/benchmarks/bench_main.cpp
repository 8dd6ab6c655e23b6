#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "condssl/clustering.hpp"
#include "condssl/contrastive.hpp"
#include "condssl/survival.hpp"

using namespace condssl;

namespace {

Matrix gaussian_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z;
  Matrix m(n, dim);
  for (double& v : m.data) v = z(rng);
  return m;
}

std::vector<SurvivalRecord> survival_data(std::size_t n, std::size_t dim) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z;
  std::exponential_distribution<double> e(1.0);
  std::vector<SurvivalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    for (double& v : x) v = z(rng);
    const double rate = 0.2 * std::exp(0.5 * x[0]);
    out.push_back({static_cast<std::int64_t>(i), x, i % 3 != 0, static_cast<int>(e(rng) / rate)});
  }
  return out;
}

void BM_LossAndGradient(benchmark::State& st) {
  const auto batch = static_cast<std::size_t>(st.range(0));
  const auto queue = static_cast<std::size_t>(st.range(1));
  Rng rng(1);
  EncoderState state = EncoderState::create(64, 128, 32, queue, 0.07, 0.999, rng);
  const Matrix keys = gaussian_rows(queue, 32, 2);
  for (std::size_t i = 0; i < queue; ++i) {
    std::vector<double> k(keys.row(i).begin(), keys.row(i).end());
    const double n = norm2(k);
    for (double& v : k) v /= n;
    state.queue.push(k);
  }
  const BatchViews views{gaussian_rows(batch, 64, 3), gaussian_rows(batch, 64, 4)};
  for (auto _ : st) benchmark::DoNotOptimize(loss_and_gradient(state, views));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_LossAndGradient)->Args({64, 256})->Args({256, 1024})->Unit(benchmark::kMillisecond);

void BM_GmmPosterior(benchmark::State& st) {
  const Matrix x = gaussian_rows(2000, 32, 5);
  GmmOptions opt;
  opt.k = static_cast<std::size_t>(st.range(0));
  opt.max_iter = 2;
  const GmmModel m = fit_gmm(x, opt);
  for (auto _ : st) {
    for (std::size_t i = 0; i < x.rows; ++i) benchmark::DoNotOptimize(posterior(m, x.row(i)));
  }
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(x.rows));
}
BENCHMARK(BM_GmmPosterior)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

void BM_GmmFit(benchmark::State& st) {
  const Matrix x = gaussian_rows(static_cast<std::size_t>(st.range(0)), 32, 6);
  GmmOptions opt;
  opt.k = 50;
  opt.max_iter = 20;
  for (auto _ : st) benchmark::DoNotOptimize(fit_gmm(x, opt));
}
BENCHMARK(BM_GmmFit)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_CoxFit(benchmark::State& st) {
  const auto data = survival_data(static_cast<std::size_t>(st.range(0)), 50);
  for (auto _ : st) benchmark::DoNotOptimize(cox_fit(data, 1.0));
}
BENCHMARK(BM_CoxFit)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_CIndex(benchmark::State& st) {
  const auto data = survival_data(static_cast<std::size_t>(st.range(0)), 1);
  std::vector<double> risk;
  for (const auto& r : data) risk.push_back(r.covariates[0]);
  for (auto _ : st) benchmark::DoNotOptimize(c_index(data, risk));
  st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_CIndex)->RangeMultiplier(4)->Range(256, 4096)->Complexity();

}  // namespace

BENCHMARK_MAIN();
