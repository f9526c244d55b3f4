#include "mizero/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "mizero/core.hpp"
#include "mizero/error.hpp"
#include "mizero/io.hpp"
#include "mizero/rng.hpp"
#include "mizero/synth.hpp"
#include "mizero/zeroshot.hpp"

namespace mizero {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

BenchStats collect(std::vector<double> samples) {
  BenchStats stats;
  stats.samples_ms = std::move(samples);
  stats.min_ms = *std::min_element(stats.samples_ms.begin(),
                                   stats.samples_ms.end());
  stats.max_ms = *std::max_element(stats.samples_ms.begin(),
                                   stats.samples_ms.end());
  double sum = 0.0;
  for (double s : stats.samples_ms) sum += s;
  stats.mean_ms = sum / static_cast<double>(stats.samples_ms.size());
  return stats;
}

}  // namespace

BenchResult run_scoring_benchmark(const BenchConfig& cfg,
                                  const std::filesystem::path& workdir) {
  if (cfg.n < 1 || cfg.d < 1 || cfg.c < 2 || cfg.k < 1 || cfg.iterations < 1) {
    raise(ErrorCode::InvalidArgument, "benchmark needs n,d >= 1, c >= 2, "
                                      "k >= 1 and at least one iteration");
  }
  std::filesystem::create_directories(workdir);

  // Synthetic payload: random unit patch rows with coordinates, one
  // classifier of c orthonormal rows.
  SlideBag bag;
  bag.slide_id = "bench";
  bag.embeddings = MatrixF(cfg.n, cfg.d);
  SplitMix64 rng(derive_seed(cfg.seed, 0));
  std::vector<double> v(cfg.d);
  for (std::size_t i = 0; i < cfg.n; ++i) {
    for (double& x : v) x = rng.next_gaussian();
    const auto unit = normalize(std::span<const double>(v));
    auto row = bag.embeddings.row(i);
    for (std::size_t j = 0; j < cfg.d; ++j) {
      row[j] = static_cast<float>(unit[j]);
    }
  }

  ZeroShotClassifier clf;
  clf.weights = random_orthonormal_rows(cfg.c, cfg.d, derive_seed(cfg.seed, 1));
  for (std::size_t m = 0; m < cfg.c; ++m) {
    clf.class_labels.push_back("class" + std::to_string(m));
  }

  const auto bag_path = workdir / "bench_bag.mizb";
  write_bag(bag, bag_path);

  BenchResult result;
  result.config = cfg;
  result.bag_bytes = std::filesystem::file_size(bag_path);

  std::vector<double> io_ms, prep_ms, compute_ms;
  io_ms.reserve(cfg.iterations);
  prep_ms.reserve(cfg.iterations);
  compute_ms.reserve(cfg.iterations);

  double sink = 0.0;  // keeps the pooled scores observable
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    auto t0 = Clock::now();
    SlideBag loaded = read_bag(bag_path);
    io_ms.push_back(elapsed_ms(t0));

    t0 = Clock::now();
    loaded = loaded.normalized();
    prep_ms.push_back(elapsed_ms(t0));

    t0 = Clock::now();
    const ScoreMatrix scores = score_bag(loaded, clf, cfg.threads);
    const auto pooled = topk_pool(scores, cfg.k);
    compute_ms.push_back(elapsed_ms(t0));
    sink += pooled[0];
  }
  if (!std::isfinite(sink)) {
    raise(ErrorCode::NonFinite, "benchmark produced non-finite scores");
  }

  result.io = collect(std::move(io_ms));
  result.prep = collect(std::move(prep_ms));
  result.compute = collect(std::move(compute_ms));
  return result;
}

}  // namespace mizero
