#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mizero/core.hpp"

namespace mizero {

/// Directed k-nearest-neighbor graph over patch grid positions. Neighbor
/// lists exclude the node itself and are sorted ascending by
/// (squared distance, node index); j in N(i) does not imply i in N(j).
struct KnnGraph {
  std::size_t n_nodes = 0;
  std::vector<std::vector<std::uint32_t>> neighbors;
};

/// Links each node to its min(k, N-1) nearest other nodes by squared
/// Euclidean distance on grid coordinates, ties broken by ascending node
/// index. Duplicate coordinates are allowed; distance-0 neighbors rank
/// first. Exact search with a grid-bucket accelerator.
KnnGraph build_knn(std::span<const GridCoord> coords, std::size_t k);

/// Mean filter over the graph: output row i is the mean of input rows
/// {i} union N(i). Simultaneous update; the input is not modified.
ScoreMatrix smooth(const ScoreMatrix& scores, const KnnGraph& graph);

}  // namespace mizero
