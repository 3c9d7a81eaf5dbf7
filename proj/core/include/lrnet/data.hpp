#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lrnet/graph.hpp"
#include "lrnet/rng.hpp"
#include "lrnet/tensor.hpp"

namespace lrnet {

/// Reserved vocabulary indices, fixed project-wide.
inline constexpr std::int32_t kMaskToken = 0;
inline constexpr std::int32_t kOovToken = 1;

enum class Modality { vectors, images, sequences, graph };

struct Dataset {
  Modality modality = Modality::vectors;
  std::vector<Tensor> inputs;                       // vectors / images
  std::vector<std::vector<std::int32_t>> sequences; // token ids
  std::vector<int> labels;
  std::size_t classes = 0;
  std::size_t vocab_size = 0;  // sequences: index space incl. mask/oov
  GraphData graph;             // modality == graph

  std::size_t size() const {
    if (modality == Modality::graph) return graph.num_nodes();
    if (modality == Modality::sequences) return sequences.size();
    return inputs.size();
  }
};

/// Big-endian IDX image + label pair (magic 0x803 / 0x801); pixels scaled to
/// [0,1]. Errors carry the offending byte offset.
Dataset load_idx(const std::string& image_path, const std::string& label_path,
                 std::optional<std::size_t> limit = std::nullopt);

/// Node file: "id feat... label" per line; edge file: "id id" per line.
GraphData load_edge_list(const std::string& node_file, const std::string& edge_file);

/// Gaussian clusters with unit isotropic covariance at hypercube corners
/// scaled by `separation` (corner pattern from the class index bits).
Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                    double separation, RngStream& stream);

/// Lines of "label token token ...". Frequency-ranked vocabulary (ties by
/// first occurrence); real tokens occupy indices [2, vocab_limit); everything
/// else maps to the OOV index.
Dataset load_token_csv(const std::string& path, std::size_t vocab_limit);

// --- helpers -------------------------------------------------------------

/// Deterministic split; fraction goes to the first (train) part.
std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double train_fraction,
                                          RngStream& stream);
/// Keeps samples whose label appears in `keep`, relabelled 0..k-1.
Dataset filter_classes(const Dataset& d, const std::vector<int>& keep);
/// 2x2 average pooling for square single-channel images stored flat.
Dataset downsample_images(const Dataset& d, std::size_t factor);
/// One-hot sequence tensor (steps x vocab), truncating/padding with the mask
/// token to exactly `steps`.
Tensor onehot_sequence(const std::vector<std::int32_t>& tokens, std::size_t vocab,
                       std::size_t steps);

/// Writes a dataset back out as an IDX pair (round-trip fixture support).
void write_idx(const Dataset& d, const std::string& image_path, const std::string& label_path,
               std::size_t rows, std::size_t cols);

}  // namespace lrnet
