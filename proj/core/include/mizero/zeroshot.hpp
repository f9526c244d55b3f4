#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mizero/core.hpp"

namespace mizero {

enum class PoolMethod { Mean, TopK };

/// Slide-level aggregation configuration. `smoothing`, when set, is the
/// neighbor count of the KNN mean filter applied before pooling.
struct PoolConfig {
  PoolMethod method = PoolMethod::TopK;
  std::size_t k = 1;                      // used by TopK only
  std::optional<std::size_t> smoothing;

  void validate() const;
};

struct SlidePrediction {
  std::string slide_id;
  std::vector<double> pooled_scores;  // per class
  std::size_t predicted_class = 0;
  std::size_t effective_k = 0;        // k actually used after clamping to N
};

/// Cosine scores of every patch against every class row. Expects a bag
/// whose rows were normalized at load: entry (i, c) is row_i . w_c with
/// double accumulation. Rows may be scored in parallel; the result does
/// not depend on the thread count.
ScoreMatrix score_bag(const SlideBag& bag, const ZeroShotClassifier& clf,
                      unsigned threads = 1);

/// Column-wise arithmetic mean.
std::vector<double> mean_pool(const ScoreMatrix& scores);

/// Per class, the mean of the min(k, N) largest scores in the column.
/// Ties among equal scores are taken in ascending patch index. Uses an
/// O(N) selection; the sort-based oracle lives in the test suite.
std::vector<double> topk_pool(const ScoreMatrix& scores, std::size_t k,
                              std::size_t* effective_k = nullptr);

/// Argmax over classes of u . w_m; ties resolve to the lowest class index.
std::size_t classify_instance(std::span<const float> unit_embedding,
                              const ZeroShotClassifier& clf);

/// Full slide pipeline: score, optional KNN smoothing, pooling, argmax
/// with lowest-index tie-break. Smoothing without coords is MissingCoords.
SlidePrediction classify_slide(const SlideBag& bag,
                               const ZeroShotClassifier& clf,
                               const PoolConfig& cfg);

std::size_t argmax_lowest(std::span<const double> values);

/// Per-patch score export: "col,row,score_class0,..." one line per patch.
void write_score_map(const ScoreMatrix& scores,
                     std::span<const GridCoord> coords, std::ostream& out);

}  // namespace mizero
