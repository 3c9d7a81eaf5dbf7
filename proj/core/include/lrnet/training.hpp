#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrnet/data.hpp"
#include "lrnet/estimators.hpp"
#include "lrnet/losses.hpp"
#include "lrnet/network.hpp"

namespace lrnet {

enum class OptimizerKind { sgd, adam };
enum class TrainMethod { lr, bp, es };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-2;  // declared default for the LR path; 1e-3 suits bp
  double momentum = 0.0;        // sgd
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  TrainMethod method = TrainMethod::lr;
  EstimatorConfig estimator;
  std::uint64_t seed = 0;
  double sigma_learning_rate = 1e-3;  // log-scale sigma updates when trainable
  std::size_t snn_steps = 8;          // spike-train length for spiking nets

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double test_accuracy = 0;
  double wall_seconds = 0;  // informational; never serialized
  std::size_t copies = 0;
  std::vector<double> sigmas;  // per layer
};

using Metrics = std::vector<EpochMetrics>;

struct OptimizerState {
  std::vector<std::vector<Tensor>> m, v;  // adam moments / sgd momentum
  std::size_t step = 0;
  std::vector<double> log_sigma2;  // trainable noise magnitudes, log scale
  bool skipped_last = false;       // non-finite gradient encountered
};

OptimizerState make_optimizer_state(Network& net, const EstimatorConfig& est);

/// One update: SGD or Adam with bias correction; sigma moves on log scale
/// when trainable. A non-finite gradient skips the step and sets the flag.
void optimizer_step(Network& net, const GradEstimate& grads, OptimizerState& state,
                    const TrainConfig& config);

/// Epoch loop: shuffle, batch, estimate (LR / ES / BP), step, evaluate.
/// Deterministic for fixed config and seed. Throws TrainingDiverged when the
/// training loss turns non-finite.
Metrics train(Network& net, const Dataset& train_set, const Dataset& test_set,
              const TrainConfig& config);

/// Clean argmax accuracy (all noise off). Spiking nets encode inputs with a
/// stream derived from `seed`.
double clean_accuracy(const Network& net, const Dataset& data, std::uint64_t seed,
                      std::size_t snn_steps);

/// Current sigma values per layer under the estimator config / state.
std::vector<double> current_sigmas(const Network& net, const EstimatorConfig& est,
                                   const OptimizerState& state);

/// Builds a batch from dataset samples (one-hot sequences, spike encodings).
Batch make_batch(const Network& net, const Dataset& data, const std::vector<std::size_t>& idx,
                 std::uint64_t encode_seed, std::size_t snn_steps);

}  // namespace lrnet
