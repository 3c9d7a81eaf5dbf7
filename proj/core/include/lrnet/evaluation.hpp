#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrnet/data.hpp"
#include "lrnet/network.hpp"

namespace lrnet {

enum class AttackMethod {
  fgsm,
  ifgsm,
  mifgsm,
  gaussian,
  uniform,
  poisson,
  grey,
  ranmask_image,
  ranmask_seq,
  shuffle,
  random_edge,
  dice,
};

const char* attack_name(AttackMethod m);
AttackMethod attack_from_name(const std::string& name);
bool attack_is_gradient_based(AttackMethod m);

struct AttackSpec {
  AttackMethod method = AttackMethod::fgsm;
  double epsilon = 8.0 / 255.0;  // per-pixel budget
  int iterations = 5;
  double step_size = 0.01;
  double ratio = 0.5;            // mask / substitution / edge ratio
  double momentum_decay = 1.0;   // MI-FGSM

  void validate() const;
};

struct AttackOutcome {
  Tensor x_adv;
  bool degenerate = false;  // zero gradient everywhere
};

/// Gradient-sign attacks in pixel space [0,1]; the l-inf distance to x never
/// exceeds epsilon. Spiking networks are attacked through a fixed spike
/// encoding (straight-through to the pixels).
AttackOutcome adversarial_example(const Network& net, const Tensor& x, int label,
                                  const AttackSpec& spec, std::uint64_t encode_seed = 0,
                                  std::size_t snn_steps = 8);

/// Non-gradient image corruptions; output stays in [0,1] with the input shape.
Tensor corrupt_image(const Tensor& x, const AttackSpec& spec, RngStream& stream);
/// Token corruptions (mask / shuffle).
std::vector<std::int32_t> corrupt_sequence(const std::vector<std::int32_t>& tokens,
                                           const AttackSpec& spec, RngStream& stream);

struct GraphAttackOutcome {
  GraphData graph;
  bool capped = false;  // requested edges exceeded capacity
  std::size_t added = 0, removed = 0;
};

/// random_edge adds ceil(ratio*|E|) new edges uniformly; dice removes
/// same-label edges and adds cross-label edges totalling ceil(ratio*|E|).
/// Self-loops are untouched; derived matrices are rebuilt.
GraphAttackOutcome graph_attack(const GraphData& g, const AttackSpec& spec, RngStream& stream);

/// Argmax accuracy on (optionally corrupted or attacked) inputs; all noise
/// modes are off during evaluation.
double evaluate_accuracy(const Network& net, const Dataset& data, const AttackSpec* spec,
                         std::uint64_t seed, std::size_t snn_steps = 8);

}  // namespace lrnet
