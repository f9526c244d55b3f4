#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mizero {

/// Scoring benchmark setup: one synthetic bag of n x d embeddings scored
/// against c unit rows, pooled with topK(k).
struct BenchConfig {
  std::size_t n = 8767;
  std::size_t d = 512;
  std::size_t c = 3;
  std::size_t k = 10;
  std::size_t iterations = 10;
  unsigned threads = 1;
  std::uint64_t seed = 0;
};

struct BenchStats {
  double mean_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  std::vector<double> samples_ms;
};

/// Wall-clock split per iteration: file read (io), row normalization
/// (prep) and score+pool (compute). IO dominates in practice; the compute
/// column is the score+topK figure of interest.
struct BenchResult {
  BenchConfig config;
  std::uint64_t bag_bytes = 0;
  BenchStats io;
  BenchStats prep;
  BenchStats compute;
};

/// Writes a synthetic bag under `workdir`, then times read / normalize /
/// score+pool separately for each iteration.
BenchResult run_scoring_benchmark(const BenchConfig& cfg,
                                  const std::filesystem::path& workdir);

}  // namespace mizero
