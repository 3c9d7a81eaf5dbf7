#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "lrnet/tensor.hpp"

namespace lrnet {

/// Node-classification graph: features, undirected edge list (no self-loop
/// entries; self-loops are implicit in the normalized adjacency), labels and
/// train/test node masks.
struct GraphData {
  Tensor features;  // |V| x d_in
  std::vector<std::pair<int, int>> edges;
  std::vector<int> labels;
  std::vector<std::uint8_t> train_mask;
  std::vector<std::uint8_t> test_mask;

  // Derived; rebuilt by finalize().
  std::vector<std::vector<int>> neighborhoods;  // in-neighborhood incl. self
  Tensor norm_adj;                              // D^-1/2 (A+I) D^-1/2, |V| x |V|

  std::size_t num_nodes() const { return features.empty() ? 0 : features.extent(0); }
  std::size_t feature_dim() const { return features.empty() ? 0 : features.extent(1); }

  bool has_edge(int a, int b) const;
  /// Recomputes neighborhoods and the degree-normalized adjacency with
  /// self-loops. Validates edge endpoints and deduplicates.
  void finalize();
};

GraphData make_graph(Tensor features, std::vector<std::pair<int, int>> edges,
                     std::vector<int> labels);

}  // namespace lrnet
