#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mizero/core.hpp"
#include "mizero/io.hpp"
#include "mizero/prompts.hpp"
#include "mizero/zeroshot.hpp"

namespace mizero {

/// Outcome of evaluating one sampled prompt configuration over a dataset.
struct TrialResult {
  std::uint64_t trial_seed = 0;
  double balanced_accuracy = 0.0;
  std::vector<std::vector<std::uint64_t>> confusion;  // [truth][predicted]
  std::vector<SlidePrediction> predictions;           // manifest order
  PromptTrial trial;                                  // prompt provenance
};

struct SummaryStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct EvalReport {
  std::size_t n_trials = 0;
  std::uint64_t master_seed = 0;
  SummaryStats accuracy;
  PoolConfig pool_config;
  std::string pool_hash;
  std::string prng_id;
  std::string quantile_rule;
  /// Caller-supplied inputs (paths, hashes) for rerunning the command.
  /// Ordered, so serialization stays deterministic.
  std::map<std::string, std::string> provenance;
  std::vector<TrialResult> trials;
};

/// Mean over classes of per-class recall. EmptyClass names a ground-truth
/// class with zero support.
double balanced_accuracy(
    const std::vector<std::vector<std::uint64_t>>& confusion,
    const std::vector<std::string>* class_labels = nullptr);

/// Quantile by linear interpolation between order statistics at the
/// 0-indexed position p*(n-1). `sorted_values` must be ascending.
double quantile(std::span<const double> sorted_values, double p);

SummaryStats summarize(std::vector<double> values);

/// Manifest plus its bags, normalized once at load.
struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<SlideBag> bags;  // aligned with manifest.slides
};

LoadedDataset load_dataset(const std::filesystem::path& manifest_path);

/// Builds the trial's classifier, classifies every slide, and assembles
/// the confusion matrix. Errors gain slide context.
TrialResult run_trial(const LoadedDataset& data, const PromptPool& pool,
                      const TextEmbeddingTable& table, const PromptTrial& trial,
                      const PoolConfig& cfg);

/// sample_trials then run_trial per trial, optionally in parallel; the
/// result is independent of the thread count.
EvalReport run_evaluation(const LoadedDataset& data, const PromptPool& pool,
                          const TextEmbeddingTable& table,
                          std::size_t n_trials, std::uint64_t master_seed,
                          const PoolConfig& cfg, unsigned threads = 1);

/// JSON report with full provenance; summary statistics are re-derived
/// from the per-trial list and verified before writing and after reading.
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

/// Flat per-trial export for plotting: "trial,trial_seed,balanced_accuracy".
void write_trial_csv(const EvalReport& report,
                     const std::filesystem::path& path);

}  // namespace mizero
