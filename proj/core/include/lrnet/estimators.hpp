#pragma once

#include <cstddef>
#include <vector>

#include "lrnet/network.hpp"

namespace lrnet {

struct ParamGrad {
  Tensor grad;
  Tensor se;  // standard error per entry (over independent copy units)
};

struct LayerGradEstimate {
  std::vector<ParamGrad> params;  // aligned with Network::param_views order
  bool has_sigma_grad = false;
  double sigma_grad = 0;  // dE[L]/d(sigma^2) for the layer
  double sigma_se = 0;
};

struct GradEstimate {
  std::vector<LayerGradEstimate> layers;
  std::size_t copies_used = 0;
};

enum class Schedule { full_sweep, round_robin };
enum class Injection { layerwise, simultaneous };
enum class BaselineKind { none, batch_mean };

struct EstimatorConfig {
  std::size_t copies = 1000;  // loss evaluations per layer block (2n with antithetic)
  bool antithetic = true;
  bool qmc = false;
  Schedule schedule = Schedule::full_sweep;
  Injection injection = Injection::layerwise;
  std::vector<NoiseMode> modes;  // per-layer assignment; empty = logit everywhere
  double sigma_logit = 0.1;
  double sigma_weight = 1e-3;
  double sigma_attn = 0.1;
  std::vector<double> sigma_override;  // per layer, entries <= 0 fall back to defaults
  BaselineKind baseline = BaselineKind::none;
  bool trainable_sigma = false;

  NoiseMode mode_of(std::size_t layer) const;
  LayerNoise layer_noise(std::size_t layer) const;
  void validate(std::size_t n_layers) const;
};

/// Runs the layer schedule: for each perturbed layer block, `copies` forward
/// evaluations with that block's noise plan, streamed through the matching
/// per-layer estimator. Deterministic given (stream, config) for any thread
/// count. Layers whose mode is off receive zero gradients.
GradEstimate estimate_gradient(const Network& net, const Batch& batch,
                               const EstimatorConfig& config, RngStream& stream);
/// Same, restricted to a subset of layer indices (round-robin training).
GradEstimate estimate_gradient(const Network& net, const Batch& batch,
                               const EstimatorConfig& config, RngStream& stream,
                               const std::vector<std::size_t>& layer_subset);

// --- per-layer estimators over recorded traces -------------------------
//
// Every function consumes copies of ForwardTrace holding a fragment for
// `layer`; copies are paired (i, i+n/2) when `antithetic` is set so that odd
// integrands cancel exactly. Mixed modes or sigma across copies is a
// contract violation.

LayerGradEstimate lr_dense_grad(const Network& net, std::size_t layer,
                                const std::vector<ForwardTrace>& copies, bool antithetic = false);
LayerGradEstimate lr_conv_grad(const Network& net, std::size_t layer,
                               const std::vector<ForwardTrace>& copies, bool antithetic = false);
LayerGradEstimate lr_recurrent_grad(const Network& net, std::size_t layer,
                                    const std::vector<ForwardTrace>& copies,
                                    bool antithetic = false);
LayerGradEstimate lr_gcn_grad(const Network& net, std::size_t layer,
                              const std::vector<ForwardTrace>& copies, bool antithetic = false);
/// GAT needs the neighborhood structure to pair edge noises with (v_i || v_j).
LayerGradEstimate lr_gat_grad(const Network& net, std::size_t layer,
                              const std::vector<ForwardTrace>& copies, const GraphData& graph,
                              bool antithetic = false);
/// Weight-perturbation estimator (any layer type, weight-mode fragments).
LayerGradEstimate lr_weight_perturb_grad(const Network& net, std::size_t layer,
                                         const std::vector<ForwardTrace>& copies,
                                         bool antithetic = false);
/// dE[L]/d(sigma^2) for one logit-perturbed layer: (estimate, standard error).
std::pair<double, double> lr_sigma_grad(const Network& net, std::size_t layer,
                                        const std::vector<ForwardTrace>& copies,
                                        bool antithetic = false, const GraphData* graph = nullptr);

}  // namespace lrnet
