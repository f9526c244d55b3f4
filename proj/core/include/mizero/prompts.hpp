#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mizero/core.hpp"
#include "mizero/io.hpp"

namespace mizero {

/// Literal token replaced by a classname when a template is instantiated.
inline constexpr const char* kClassnamePlaceholder = "CLASSNAME";

/// Templates shared across classes plus per-class classname pools. Class
/// order defines the class index everywhere downstream.
struct PromptPool {
  std::vector<std::string> templates;
  std::vector<std::string> class_labels;
  std::vector<std::vector<std::string>> classnames;  // per class, >= 1 each

  std::size_t num_classes() const noexcept { return class_labels.size(); }

  /// EmptyPool on no templates/classes/classnames; every template must
  /// contain the placeholder exactly once.
  void validate() const;
};

/// One sampled prompt configuration. Default sampling keeps a single
/// classname per class; the subset mode (off by default) ensembles over a
/// sampled classname subset instead.
struct PromptTrial {
  std::vector<std::string> templates;                // drawn without replacement
  std::vector<std::vector<std::string>> classnames;  // per class
  std::uint64_t trial_seed = 0;
};

struct SamplingOptions {
  bool classname_subsets = false;
};

/// One trial from its own seed. The draw order over a SplitMix64 stream
/// seeded with trial_seed is: template count ~ Uniform{1..T}, a partial
/// Fisher-Yates pick of that many templates, then one classname index per
/// class in class order (or a classname subset per class when enabled).
PromptTrial sample_trial(const PromptPool& pool, std::uint64_t trial_seed,
                         const SamplingOptions& options = {});

/// Draws n_trials deterministic trials; trial t uses the sub-seed
/// derive_seed(master_seed, t), so any trial recorded in a report can be
/// rebuilt from its trial_seed alone.
std::vector<PromptTrial> sample_trials(const PromptPool& pool,
                                       std::size_t n_trials,
                                       std::uint64_t master_seed,
                                       const SamplingOptions& options = {});

/// Replaces the placeholder with `classname`, byte-for-byte otherwise.
std::string instantiate_template(const std::string& template_text,
                                 const std::string& classname);

/// normalize(mean over texts of normalize(embedding(text))). MissingText
/// names the first absent prompt.
std::vector<float> ensemble_class(std::span<const std::string> texts,
                                  const TextEmbeddingTable& table);

/// One classifier row per class: the trial's templates instantiated with
/// the class's chosen classname(s), ensembled in embedding space.
ZeroShotClassifier build_classifier(const PromptTrial& trial,
                                    const PromptPool& pool,
                                    const TextEmbeddingTable& table);

/// JSON pool document {"templates": [...], "classnames": {label: [...]}}.
/// Class order follows the file.
PromptPool read_pool(const std::filesystem::path& path);
void write_pool(const PromptPool& pool, const std::filesystem::path& path);

/// Canonical content hash used in evaluation reports.
std::string pool_hash(const PromptPool& pool);

/// The 16 stock photomicrograph prompt templates.
const std::vector<std::string>& default_templates();

}  // namespace mizero
