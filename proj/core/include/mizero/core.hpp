#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mizero/matrix.hpp"

namespace mizero {

/// Patch position in grid units (column, row).
struct GridCoord {
  std::int32_t col = 0;
  std::int32_t row = 0;

  friend bool operator==(const GridCoord&, const GridCoord&) = default;
};

/// One whole-slide image as a bag of patch embeddings. Embeddings may be
/// stored unnormalized on disk; `normalized()` is applied once at load and
/// nothing downstream re-normalizes.
struct SlideBag {
  std::string slide_id;
  MatrixF embeddings;  // N x D
  std::optional<std::vector<GridCoord>> coords;
  std::optional<std::size_t> label;

  std::size_t patch_count() const noexcept { return embeddings.rows(); }
  std::size_t dim() const noexcept { return embeddings.cols(); }

  /// Throws on invariant violations: N >= 1, D >= 1, finite entries,
  /// coords (when present) with exactly N rows.
  void validate() const;

  /// Copy with every row scaled to unit norm. Throws ZeroVector for a
  /// degenerate row.
  SlideBag normalized() const;
};

/// Prompt provenance for one classifier row.
struct ClassProvenance {
  std::vector<std::string> classnames;
  std::vector<std::string> templates;

  friend bool operator==(const ClassProvenance&,
                         const ClassProvenance&) = default;
};

/// Class-prompt embeddings acting as the weights of a linear classifier.
/// Rows are unit-norm by construction.
struct ZeroShotClassifier {
  std::vector<std::string> class_labels;
  MatrixF weights;  // C x D
  std::vector<ClassProvenance> provenance;
  std::optional<std::uint64_t> trial_seed;

  std::size_t num_classes() const noexcept { return weights.rows(); }
  std::size_t dim() const noexcept { return weights.cols(); }

  /// C >= 2, unique labels, every row unit norm within `row_tolerance`.
  void validate(double row_tolerance = 1e-5) const;
};

/// Patch-by-class cosine similarity scores for one bag.
struct ScoreMatrix {
  MatrixF scores;  // N x C
  std::string slide_id;

  std::size_t patch_count() const noexcept { return scores.rows(); }
  std::size_t num_classes() const noexcept { return scores.cols(); }
};

struct ManifestEntry {
  std::string slide_id;
  std::string path;  // bag file, relative paths resolve against the manifest
  std::size_t label = 0;
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<ManifestEntry> slides;

  std::size_t num_classes() const noexcept { return classes.size(); }

  /// Unique slide ids and in-range labels.
  void validate() const;
};

/// Scales v to unit L2 norm. Norm is accumulated in double; the direction
/// is preserved. Throws ZeroVector when the norm is below 1e-12.
std::vector<float> normalize(std::span<const float> v);

/// Double-precision variant used by the alignment trainer.
std::vector<double> normalize(std::span<const double> v);

double l2_norm(std::span<const float> v);
double l2_norm(std::span<const double> v);

}  // namespace mizero
