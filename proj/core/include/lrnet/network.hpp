#pragma once

#include <string>
#include <vector>

#include "lrnet/graph.hpp"
#include "lrnet/layers.hpp"
#include "lrnet/losses.hpp"
#include "lrnet/rng.hpp"

namespace lrnet {

enum class NetKind { feedforward, recurrent, graph, spiking };

/// Ordered layer stack plus the terminal loss head.
struct Network {
  NetKind kind = NetKind::feedforward;
  std::vector<Layer> layers;
  LossKind loss = LossKind::cross_entropy;
  double loss_constant = 0.0;

  std::size_t num_layers() const { return layers.size(); }
  std::vector<std::vector<Tensor*>> param_views();
  std::vector<std::vector<const Tensor*>> param_views() const;
  std::string layer_name(std::size_t i) const;
  /// Dimension checks between adjacent layers; throws ContractError.
  void validate() const;
};

/// One unit of work for a forward pass. Feedforward/recurrent/spiking nets
/// take one tensor per sample (spiking inputs are pre-encoded spike trains);
/// graph nets take the graph itself plus a node mask for the loss.
struct Batch {
  std::vector<Tensor> inputs;
  std::vector<int> labels;
  std::vector<Tensor> targets;  // optional regression targets (squared_error)
  const GraphData* graph = nullptr;
  const std::vector<std::uint8_t>* graph_mask = nullptr;  // defaults to train_mask

  std::size_t size() const { return graph ? 1 : inputs.size(); }
};

// --- noise bundles -----------------------------------------------------

ForwardTrace draw_noise(const Network& net, const NoisePlan& plan, RngStream& stream,
                        const GraphData* graph);
ForwardTrace fill_noise(const Network& net, const NoisePlan& plan, const double* gaussians,
                        std::size_t count, const GraphData* graph);
void negate_trace_noise(ForwardTrace& trace);
std::size_t plan_noise_dim(const Network& net, const NoisePlan& plan, const GraphData* graph);

// --- forward passes ----------------------------------------------------

/// Runs the whole batch through the network under the trace's noise bundle,
/// appending per-sample inputs to the fragments and filling trace.losses.
void run_forward(const Network& net, const Batch& batch, ForwardTrace& trace);

/// Single-sample forward: draws noise per `plan` from `stream`, returns the
/// scalar loss; the trace holds fragments for exactly the perturbed layers.
double network_forward(const Network& net, const Tensor& input, int label,
                       const NoisePlan& plan, RngStream& stream, ForwardTrace* trace = nullptr);
double network_forward(const Network& net, const GraphData& g, const NoisePlan& plan,
                       RngStream& stream, ForwardTrace* trace = nullptr);

/// Noise-free logits (graph nets: per-node logit matrix).
Tensor forward_logits(const Network& net, const Tensor& input);
Tensor forward_logits(const Network& net, const GraphData& g);

// --- spike encodings ---------------------------------------------------

/// Bernoulli rate coding: spike probability per step equals the intensity.
Tensor encode_spikes_bernoulli(const Tensor& image01, std::size_t steps, RngStream& stream);
/// Deterministic threshold-at-0.5 coding, repeated over steps.
Tensor encode_spikes_threshold(const Tensor& image01, std::size_t steps);

}  // namespace lrnet
