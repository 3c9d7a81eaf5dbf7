#include "lrnet/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "lrnet/errors.hpp"

namespace lrnet {

bool GraphData::has_edge(int a, int b) const {
  if (a > b) std::swap(a, b);
  return std::binary_search(edges.begin(), edges.end(), std::make_pair(a, b));
}

void GraphData::finalize() {
  const int n = static_cast<int>(num_nodes());
  std::set<std::pair<int, int>> unique;
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n)
      throw FormatError("graph edge endpoint out of range: (" + std::to_string(a) + "," +
                        std::to_string(b) + ")");
    if (a == b) continue;  // self-loops are implicit
    unique.insert({std::min(a, b), std::max(a, b)});
  }
  edges.assign(unique.begin(), unique.end());

  neighborhoods.assign(static_cast<std::size_t>(n), {});
  for (int i = 0; i < n; ++i) neighborhoods[static_cast<std::size_t>(i)].push_back(i);
  for (auto [a, b] : edges) {
    neighborhoods[static_cast<std::size_t>(a)].push_back(b);
    neighborhoods[static_cast<std::size_t>(b)].push_back(a);
  }
  for (auto& nb : neighborhoods) std::sort(nb.begin(), nb.end());

  // D~_ii = 1 + degree(i); entries A~_ij / sqrt(d~_i d~_j).
  std::vector<double> deg(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    deg[static_cast<std::size_t>(i)] =
        static_cast<double>(neighborhoods[static_cast<std::size_t>(i)].size());
  norm_adj = Tensor({static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
  for (int i = 0; i < n; ++i)
    for (int j : neighborhoods[static_cast<std::size_t>(i)])
      norm_adj.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
          1.0 / std::sqrt(deg[static_cast<std::size_t>(i)] * deg[static_cast<std::size_t>(j)]);
}

GraphData make_graph(Tensor features, std::vector<std::pair<int, int>> edges,
                     std::vector<int> labels) {
  GraphData g;
  g.features = std::move(features);
  g.edges = std::move(edges);
  g.labels = std::move(labels);
  if (!g.labels.empty() && g.labels.size() != g.num_nodes())
    throw FormatError("graph labels do not match node count");
  g.train_mask.assign(g.num_nodes(), 1);
  g.test_mask.assign(g.num_nodes(), 1);
  g.finalize();
  return g;
}

}  // namespace lrnet
