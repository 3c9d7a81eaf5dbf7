#pragma once

#include <string>
#include <vector>

#include "lrnet/estimators.hpp"
#include "lrnet/network.hpp"

namespace lrnet {

/// Exact (reverse-mode) or finite-difference gradients. `layers` is aligned
/// with Network::param_views; `inputs` holds per-sample input gradients of
/// that sample's own loss (graph nets: one feature-matrix gradient).
struct Gradients {
  std::vector<std::vector<Tensor>> layers;
  std::vector<Tensor> inputs;
};

/// Reverse-mode gradients of the batch-mean loss for a noise-free network.
/// Exact for dense/conv/rnn/gcn/gat; LIF layers use a rectangular surrogate
/// for the Heaviside (width `kLifSurrogateHalfWidth` around the threshold).
Gradients bp_grad(const Network& net, const Batch& batch);

inline constexpr double kLifSurrogateHalfWidth = 0.5;

/// Noise draws frozen across both sides of every central difference, so the
/// result estimates the gradient of E[L] by common random numbers.
struct FrozenNoise {
  NoisePlan plan;
  RngStream base;
  std::size_t draws = 1000;
  bool antithetic = true;
};

/// Central differences per coordinate with step max(h_rel*|theta|, h_floor).
/// With `frozen`, both evaluations of each difference reuse identical noise;
/// `se_out` (optional) receives the per-coordinate standard error of the
/// frozen-noise estimate. Throws if a perturbed loss is non-finite.
Gradients fd_grad(const Network& net, const Batch& batch, double h_rel = 1e-4,
                  const FrozenNoise* frozen = nullptr, Gradients* se_out = nullptr,
                  double h_floor = 1e-6);

struct CosineResult {
  double value = 0;
  bool degenerate = false;  // both vectors zero
};

CosineResult cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Per-layer similarity between an estimate and a reference gradient,
/// computed on the flattened concatenated parameter gradients of each layer.
struct GradComparison {
  std::vector<double> per_layer;
  std::vector<bool> degenerate;
  std::size_t copies = 0;
  std::string label;
};

GradComparison compare_gradients(const Network& net, const GradEstimate& estimate,
                                 const Gradients& reference, const std::string& label = "");

std::vector<double> flatten_layer(const std::vector<Tensor>& params);
std::vector<double> flatten_layer(const std::vector<ParamGrad>& params);

}  // namespace lrnet
