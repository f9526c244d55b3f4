#include "mizero/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <unordered_map>

#include "mizero/error.hpp"

namespace mizero {

namespace {

// Coordinates are patch-grid units; bounding them keeps squared distances
// inside uint64 without wider arithmetic.
constexpr std::int64_t kMaxCoordMagnitude = std::int64_t{1} << 30;

std::uint64_t squared_distance(const GridCoord& a, const GridCoord& b) {
  const std::int64_t dx = std::int64_t{a.col} - std::int64_t{b.col};
  const std::int64_t dy = std::int64_t{a.row} - std::int64_t{b.row};
  return static_cast<std::uint64_t>(dx * dx) +
         static_cast<std::uint64_t>(dy * dy);
}

std::uint64_t cell_key(std::int32_t col, std::int32_t row) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(col)) << 32) |
         static_cast<std::uint64_t>(static_cast<std::uint32_t>(row));
}

struct Candidate {
  std::uint64_t dist2;
  std::uint32_t index;

  bool operator<(const Candidate& other) const {
    return dist2 != other.dist2 ? dist2 < other.dist2 : index < other.index;
  }
};

}  // namespace

KnnGraph build_knn(std::span<const GridCoord> coords, std::size_t k) {
  const std::size_t n = coords.size();
  if (n == 0) {
    raise(ErrorCode::DimensionMismatch, "build_knn needs at least one node");
  }
  for (const auto& c : coords) {
    if (std::llabs(c.col) > kMaxCoordMagnitude ||
        std::llabs(c.row) > kMaxCoordMagnitude) {
      raise(ErrorCode::InvalidArgument,
            "grid coordinate magnitude exceeds 2^30");
    }
  }

  KnnGraph graph;
  graph.n_nodes = n;
  graph.neighbors.assign(n, {});
  const std::size_t want = std::min(k, n - 1);
  if (want == 0) return graph;

  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets;
  buckets.reserve(n * 2);
  std::int32_t min_col = coords[0].col, max_col = coords[0].col;
  std::int32_t min_row = coords[0].row, max_row = coords[0].row;
  for (std::size_t i = 0; i < n; ++i) {
    buckets[cell_key(coords[i].col, coords[i].row)].push_back(
        static_cast<std::uint32_t>(i));
    min_col = std::min(min_col, coords[i].col);
    max_col = std::max(max_col, coords[i].col);
    min_row = std::min(min_row, coords[i].row);
    max_row = std::max(max_row, coords[i].row);
  }
  const std::int64_t max_radius =
      std::max<std::int64_t>(std::int64_t{max_col} - min_col,
                             std::int64_t{max_row} - min_row);

  std::vector<Candidate> heap;  // max-heap on (dist2, index), size <= want
  for (std::size_t i = 0; i < n; ++i) {
    heap.clear();
    const GridCoord origin = coords[i];

    auto offer = [&](std::uint32_t j) {
      if (j == static_cast<std::uint32_t>(i)) return;
      const Candidate cand{squared_distance(origin, coords[j]), j};
      if (heap.size() < want) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end());
      } else if (cand < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end());
      }
    };

    auto visit_cell = [&](std::int64_t col, std::int64_t row) {
      if (col < min_col || col > max_col || row < min_row || row > max_row) {
        return;  // outside the occupied bounding box, nothing to offer
      }
      const auto it = buckets.find(
          cell_key(static_cast<std::int32_t>(col), static_cast<std::int32_t>(row)));
      if (it == buckets.end()) return;
      for (std::uint32_t j : it->second) offer(j);
    };

    // Expanding Chebyshev rings; every point in ring r sits at squared
    // distance >= r^2, so once the heap is full and the next ring cannot
    // beat (or tie) the current worst, the search is complete.
    for (std::int64_t r = 0; r <= max_radius; ++r) {
      if (r == 0) {
        visit_cell(origin.col, origin.row);
      } else {
        const std::int64_t c0 = origin.col - r, c1 = origin.col + r;
        const std::int64_t r0 = origin.row - r, r1 = origin.row + r;
        for (std::int64_t c = c0; c <= c1; ++c) {
          visit_cell(c, r0);
          visit_cell(c, r1);
        }
        for (std::int64_t row = r0 + 1; row <= r1 - 1; ++row) {
          visit_cell(c0, row);
          visit_cell(c1, row);
        }
      }
      if (heap.size() == want) {
        const std::uint64_t next_min =
            static_cast<std::uint64_t>(r + 1) * static_cast<std::uint64_t>(r + 1);
        if (next_min > heap.front().dist2) break;
      }
    }

    std::sort(heap.begin(), heap.end());
    auto& out = graph.neighbors[i];
    out.reserve(heap.size());
    for (const auto& cand : heap) out.push_back(cand.index);
  }
  return graph;
}

ScoreMatrix smooth(const ScoreMatrix& scores, const KnnGraph& graph) {
  const std::size_t n = scores.patch_count();
  const std::size_t c = scores.num_classes();
  if (graph.n_nodes != n) {
    raise(ErrorCode::SizeMismatch,
          "graph has " + std::to_string(graph.n_nodes) + " nodes for " +
              std::to_string(n) + " score rows");
  }

  ScoreMatrix out;
  out.slide_id = scores.slide_id;
  out.scores = MatrixF(n, c);
  std::vector<double> acc(c);
  for (std::size_t i = 0; i < n; ++i) {
    const auto self = scores.scores.row(i);
    for (std::size_t j = 0; j < c; ++j) acc[j] = self[j];
    for (std::uint32_t nb : graph.neighbors[i]) {
      const auto row = scores.scores.row(nb);
      for (std::size_t j = 0; j < c; ++j) acc[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(graph.neighbors[i].size() + 1);
    auto dst = out.scores.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      dst[j] = static_cast<float>(acc[j] * inv);
    }
  }
  return out;
}

}  // namespace mizero
