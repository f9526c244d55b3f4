#include "mizero/zeroshot.hpp"

#include <algorithm>
#include <cstdio>

#include "mizero/error.hpp"
#include "mizero/parallel.hpp"
#include "mizero/spatial.hpp"

namespace mizero {

void PoolConfig::validate() const {
  if (method == PoolMethod::TopK && k < 1) {
    raise(ErrorCode::InvalidArgument, "topk pooling requires k >= 1");
  }
}

ScoreMatrix score_bag(const SlideBag& bag, const ZeroShotClassifier& clf,
                      unsigned threads) {
  if (bag.dim() != clf.dim()) {
    raise(ErrorCode::DimensionMismatch,
          "bag '" + bag.slide_id + "' has dimension " +
              std::to_string(bag.dim()) + " but the classifier expects " +
              std::to_string(clf.dim()));
  }
  const std::size_t n = bag.patch_count();
  const std::size_t c = clf.num_classes();
  const std::size_t d = bag.dim();

  ScoreMatrix out;
  out.slide_id = bag.slide_id;
  out.scores = MatrixF(n, c);

  // One pass over each patch row, C accumulators per row. Rows write
  // disjoint slots, so block-parallel execution is deterministic.
  auto score_rows = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const float* u = bag.embeddings.row(i).data();
      auto dst = out.scores.row(i);
      for (std::size_t m = 0; m < c; ++m) {
        const float* w = clf.weights.row(m).data();
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dot += static_cast<double>(u[j]) * static_cast<double>(w[j]);
        }
        dst[m] = static_cast<float>(dot);
      }
    }
  };

  if (threads <= 1 || n < 2) {
    score_rows(0, n);
  } else {
    const std::size_t blocks = std::min<std::size_t>(threads, n);
    const std::size_t chunk = (n + blocks - 1) / blocks;
    parallel_for(blocks, static_cast<unsigned>(blocks), [&](std::size_t b) {
      const std::size_t begin = b * chunk;
      score_rows(begin, std::min(begin + chunk, n));
    });
  }
  return out;
}

std::vector<double> mean_pool(const ScoreMatrix& scores) {
  const std::size_t n = scores.patch_count();
  const std::size_t c = scores.num_classes();
  if (n == 0) {
    raise(ErrorCode::DimensionMismatch, "cannot pool an empty score matrix");
  }
  std::vector<double> sums(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = scores.scores.row(i);
    for (std::size_t m = 0; m < c; ++m) sums[m] += row[m];
  }
  for (double& s : sums) s /= static_cast<double>(n);
  return sums;
}

namespace {

struct ScoredPatch {
  float score;
  std::uint32_t index;
};

// Descending score, ascending index on ties: the "largest" elements first.
inline bool better(const ScoredPatch& a, const ScoredPatch& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.index < b.index;
}

}  // namespace

std::vector<double> topk_pool(const ScoreMatrix& scores, std::size_t k,
                              std::size_t* effective_k) {
  const std::size_t n = scores.patch_count();
  const std::size_t c = scores.num_classes();
  if (n == 0) {
    raise(ErrorCode::DimensionMismatch, "cannot pool an empty score matrix");
  }
  if (k < 1) {
    raise(ErrorCode::InvalidArgument, "topk pooling requires k >= 1");
  }
  const std::size_t kk = std::min(k, n);
  if (effective_k) *effective_k = kk;

  std::vector<double> pooled(c, 0.0);
  std::vector<ScoredPatch> column(n);
  for (std::size_t m = 0; m < c; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = {scores.scores(i, m), static_cast<std::uint32_t>(i)};
    }
    if (kk < n) {
      std::nth_element(column.begin(), column.begin() + (kk - 1), column.end(),
                       better);
    }
    // Summing in (score desc, index asc) order keeps the result identical
    // to the sort-based oracle bit for bit.
    std::sort(column.begin(), column.begin() + kk, better);
    double sum = 0.0;
    for (std::size_t i = 0; i < kk; ++i) sum += column[i].score;
    pooled[m] = sum / static_cast<double>(kk);
  }
  return pooled;
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t classify_instance(std::span<const float> unit_embedding,
                              const ZeroShotClassifier& clf) {
  if (unit_embedding.size() != clf.dim()) {
    raise(ErrorCode::DimensionMismatch,
          "instance has dimension " + std::to_string(unit_embedding.size()) +
              " but the classifier expects " + std::to_string(clf.dim()));
  }
  std::vector<double> scores(clf.num_classes());
  for (std::size_t m = 0; m < clf.num_classes(); ++m) {
    const auto w = clf.weights.row(m);
    double dot = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      dot += static_cast<double>(unit_embedding[j]) * static_cast<double>(w[j]);
    }
    scores[m] = dot;
  }
  return argmax_lowest(scores);
}

SlidePrediction classify_slide(const SlideBag& bag,
                               const ZeroShotClassifier& clf,
                               const PoolConfig& cfg) {
  cfg.validate();
  ScoreMatrix scores = score_bag(bag, clf);
  if (cfg.smoothing) {
    if (!bag.coords) {
      raise(ErrorCode::MissingCoords,
            "bag '" + bag.slide_id +
                "' has no grid coordinates but smoothing was requested");
    }
    const KnnGraph graph = build_knn(*bag.coords, *cfg.smoothing);
    scores = smooth(scores, graph);
  }

  SlidePrediction pred;
  pred.slide_id = bag.slide_id;
  if (cfg.method == PoolMethod::Mean) {
    pred.pooled_scores = mean_pool(scores);
    pred.effective_k = bag.patch_count();
  } else {
    pred.pooled_scores = topk_pool(scores, cfg.k, &pred.effective_k);
  }
  pred.predicted_class = argmax_lowest(pred.pooled_scores);
  return pred;
}

void write_score_map(const ScoreMatrix& scores,
                     std::span<const GridCoord> coords, std::ostream& out) {
  if (coords.size() != scores.patch_count()) {
    raise(ErrorCode::MissingCoords,
          "score map needs one coordinate per patch");
  }
  out << "col,row";
  for (std::size_t m = 0; m < scores.num_classes(); ++m) {
    out << ",score_class" << m;
  }
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < scores.patch_count(); ++i) {
    out << coords[i].col << ',' << coords[i].row;
    const auto row = scores.scores.row(i);
    for (std::size_t m = 0; m < scores.num_classes(); ++m) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(row[m]));
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace mizero
