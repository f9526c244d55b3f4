#include <benchmark/benchmark.h>

#include "mizero/core.hpp"
#include "mizero/rng.hpp"
#include "mizero/spatial.hpp"
#include "mizero/synth.hpp"
#include "mizero/zeroshot.hpp"

namespace {

using namespace mizero;

SlideBag make_bag(std::size_t n, std::size_t d, std::uint64_t seed) {
  SlideBag bag;
  bag.slide_id = "bench";
  bag.embeddings = MatrixF(n, d);
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.next_gaussian();
    const auto unit = normalize(std::span<const double>(v));
    auto row = bag.embeddings.row(i);
    for (std::size_t j = 0; j < d; ++j) row[j] = static_cast<float>(unit[j]);
  }
  auto& coords = bag.coords.emplace();
  coords.resize(n);
  const std::int32_t cols = static_cast<std::int32_t>(std::sqrt(double(n))) + 1;
  for (std::size_t i = 0; i < n; ++i) {
    coords[i] = {static_cast<std::int32_t>(i) % cols,
                 static_cast<std::int32_t>(i) / cols};
  }
  return bag;
}

ZeroShotClassifier make_classifier(std::size_t c, std::size_t d) {
  ZeroShotClassifier clf;
  clf.weights = random_orthonormal_rows(c, d, 99);
  for (std::size_t m = 0; m < c; ++m) {
    clf.class_labels.push_back(std::to_string(m));
  }
  return clf;
}

void BM_ScoreBag(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto bag = make_bag(n, 512, 1);
  const auto clf = make_classifier(3, 512);
  for (auto _ : state) {
    auto scores = score_bag(bag, clf);
    benchmark::DoNotOptimize(scores.scores.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n));
}
BENCHMARK(BM_ScoreBag)->Arg(1024)->Arg(8767)->Arg(32768);

void BM_TopkPool(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const std::size_t k = static_cast<std::size_t>(state.range(1));
  const auto bag = make_bag(n, 64, 2);
  const auto clf = make_classifier(3, 64);
  const auto scores = score_bag(bag, clf);
  for (auto _ : state) {
    auto pooled = topk_pool(scores, k);
    benchmark::DoNotOptimize(pooled.data());
  }
}
BENCHMARK(BM_TopkPool)
    ->Args({8767, 1})
    ->Args({8767, 10})
    ->Args({8767, 100})
    ->Args({100000, 10});

void BM_MeanPool(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto bag = make_bag(n, 64, 3);
  const auto clf = make_classifier(3, 64);
  const auto scores = score_bag(bag, clf);
  for (auto _ : state) {
    auto pooled = mean_pool(scores);
    benchmark::DoNotOptimize(pooled.data());
  }
}
BENCHMARK(BM_MeanPool)->Arg(8767);

void BM_BuildKnn(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto bag = make_bag(n, 8, 4);
  for (auto _ : state) {
    auto graph = build_knn(*bag.coords, 8);
    benchmark::DoNotOptimize(graph.neighbors.data());
  }
}
BENCHMARK(BM_BuildKnn)->Arg(1024)->Arg(8767)->Arg(65536);

void BM_Smooth(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const auto bag = make_bag(n, 16, 5);
  const auto clf = make_classifier(3, 16);
  const auto scores = score_bag(bag, clf);
  const auto graph = build_knn(*bag.coords, 8);
  for (auto _ : state) {
    auto smoothed = smooth(scores, graph);
    benchmark::DoNotOptimize(smoothed.scores.data());
  }
}
BENCHMARK(BM_Smooth)->Arg(8767);

}  // namespace

BENCHMARK_MAIN();
