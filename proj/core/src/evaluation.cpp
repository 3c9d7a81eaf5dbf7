#include "lrnet/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "lrnet/errors.hpp"
#include "lrnet/oracle.hpp"

namespace lrnet {

const char* attack_name(AttackMethod m) {
  switch (m) {
    case AttackMethod::fgsm: return "fgsm";
    case AttackMethod::ifgsm: return "ifgsm";
    case AttackMethod::mifgsm: return "mifgsm";
    case AttackMethod::gaussian: return "gaussian";
    case AttackMethod::uniform: return "uniform";
    case AttackMethod::poisson: return "poisson";
    case AttackMethod::grey: return "grey";
    case AttackMethod::ranmask_image: return "ranmask_image";
    case AttackMethod::ranmask_seq: return "ranmask_seq";
    case AttackMethod::shuffle: return "shuffle";
    case AttackMethod::random_edge: return "random_edge";
    case AttackMethod::dice: return "dice";
  }
  return "?";
}

AttackMethod attack_from_name(const std::string& name) {
  for (int m = 0; m <= static_cast<int>(AttackMethod::dice); ++m)
    if (name == attack_name(static_cast<AttackMethod>(m))) return static_cast<AttackMethod>(m);
  throw ConfigError("unknown attack method '" + name + "'");
}

bool attack_is_gradient_based(AttackMethod m) {
  return m == AttackMethod::fgsm || m == AttackMethod::ifgsm || m == AttackMethod::mifgsm;
}

void AttackSpec::validate() const {
  if (epsilon < 0) throw ConfigError("attack: epsilon must be >= 0");
  if (iterations < 1) throw ConfigError("attack: iterations must be >= 1");
  if (ratio < 0 || ratio > 1) throw ConfigError("attack: ratio must lie in [0,1]");
}

namespace {

inline double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// Pixel gradient of the sample loss; spiking inputs go through a fixed
// encoding and the step dimension is summed out (straight-through).
Tensor input_gradient(const Network& net, const Tensor& x, int label, std::uint64_t encode_seed,
                      std::size_t snn_steps, bool* all_zero) {
  Batch b;
  if (net.kind == NetKind::spiking) {
    RngStream es(encode_seed, 0xADE);
    b.inputs.push_back(encode_spikes_bernoulli(x, snn_steps, es));
  } else {
    b.inputs.push_back(x);
  }
  b.labels.push_back(label);
  const Gradients g = bp_grad(net, b);
  Tensor grad;
  if (net.kind == NetKind::spiking) {
    grad = Tensor({x.size()});
    const Tensor& dspk = g.inputs[0];  // steps x d
    for (std::size_t t = 0; t < dspk.extent(0); ++t)
      for (std::size_t j = 0; j < x.size(); ++j) grad[j] += dspk[dspk.idx(t, j)];
  } else {
    grad = g.inputs[0];
  }
  if (all_zero) {
    *all_zero = true;
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (grad[i] != 0.0) {
        *all_zero = false;
        break;
      }
  }
  return grad;
}

}  // namespace

AttackOutcome adversarial_example(const Network& net, const Tensor& x, int label,
                                  const AttackSpec& spec, std::uint64_t encode_seed,
                                  std::size_t snn_steps) {
  spec.validate();
  if (!attack_is_gradient_based(spec.method))
    throw ContractError("adversarial_example: method is not gradient-based");

  AttackOutcome out;
  out.x_adv = x;
  const double eps = spec.epsilon;
  if (eps == 0.0) return out;

  if (spec.method == AttackMethod::fgsm) {
    bool zero = false;
    const Tensor grad = input_gradient(net, x, label, encode_seed, snn_steps, &zero);
    out.degenerate = zero;
    for (std::size_t i = 0; i < x.size(); ++i)
      out.x_adv[i] = std::clamp(x[i] + eps * sign(grad[i]), 0.0, 1.0);
    return out;
  }

  const int iters = spec.iterations;
  const double alpha = spec.step_size;
  Tensor momentum({x.size()});
  bool first_zero = false;
  for (int it = 0; it < iters; ++it) {
    bool zero = false;
    Tensor grad = input_gradient(net, out.x_adv, label, encode_seed, snn_steps, &zero);
    if (it == 0) first_zero = zero;
    if (spec.method == AttackMethod::mifgsm) {
      double l1 = 0;
      for (std::size_t i = 0; i < grad.size(); ++i) l1 += std::fabs(grad[i]);
      if (l1 > 0)
        for (std::size_t i = 0; i < grad.size(); ++i)
          momentum[i] = spec.momentum_decay * momentum[i] + grad[i] / l1;
      else
        for (std::size_t i = 0; i < grad.size(); ++i)
          momentum[i] = spec.momentum_decay * momentum[i];
      grad = momentum;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      double v = out.x_adv[i] + alpha * sign(grad[i]);
      v = std::clamp(v, x[i] - eps, x[i] + eps);  // exact l-inf projection
      out.x_adv[i] = std::clamp(v, 0.0, 1.0);
    }
  }
  out.degenerate = first_zero;
  return out;
}

Tensor corrupt_image(const Tensor& x, const AttackSpec& spec, RngStream& stream) {
  spec.validate();
  Tensor out = x;
  switch (spec.method) {
    case AttackMethod::gaussian:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::clamp(x[i] + spec.epsilon * stream.next_gaussian(), 0.0, 1.0);
      break;
    case AttackMethod::uniform:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = std::clamp(x[i] + spec.epsilon * (2.0 * stream.next_uniform() - 1.0), 0.0, 1.0);
      break;
    case AttackMethod::poisson: {
      // photon-count model: pixel <- Poisson(pixel * lambda) / lambda
      const double lambda = 255.0;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double mean = x[i] * lambda;
        // Knuth's method; means are bounded by lambda
        const double limit = std::exp(-mean);
        std::size_t k = 0;
        double p = 1.0;
        do {
          ++k;
          p *= stream.next_uniform();
        } while (p > limit);
        out[i] = std::clamp(static_cast<double>(k - 1) / lambda, 0.0, 1.0);
      }
      break;
    }
    case AttackMethod::grey: {
      if (x.rank() == 3) {
        const std::size_t c = x.extent(0), hw = x.extent(1) * x.extent(2);
        for (std::size_t p = 0; p < hw; ++p) {
          double m = 0;
          for (std::size_t ch = 0; ch < c; ++ch) m += x[ch * hw + p];
          m /= static_cast<double>(c);
          for (std::size_t ch = 0; ch < c; ++ch) out[ch * hw + p] = m;
        }
      }
      // single-channel input is already grey
      break;
    }
    case AttackMethod::ranmask_image: {
      const std::size_t n = out.size();
      const std::size_t k =
          static_cast<std::size_t>(std::ceil(spec.ratio * static_cast<double>(n)));
      std::vector<std::size_t> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = i;
      for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
        const std::size_t j =
            i + static_cast<std::size_t>(stream.next_uniform() * static_cast<double>(n - i));
        std::swap(idx[i], idx[std::min(j, n - 1)]);
      }
      for (std::size_t i = 0; i < k && i < n; ++i) out[idx[i]] = 0.0;
      break;
    }
    default:
      throw ContractError("corrupt_image: method does not apply to images");
  }
  return out;
}

std::vector<std::int32_t> corrupt_sequence(const std::vector<std::int32_t>& tokens,
                                           const AttackSpec& spec, RngStream& stream) {
  spec.validate();
  std::vector<std::int32_t> out = tokens;
  const std::size_t n = out.size();
  if (spec.method == AttackMethod::ranmask_seq) {
    const std::size_t k =
        static_cast<std::size_t>(std::ceil(spec.ratio * static_cast<double>(n)));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
      const std::size_t j =
          i + static_cast<std::size_t>(stream.next_uniform() * static_cast<double>(n - i));
      std::swap(idx[i], idx[std::min(j, n - 1)]);
    }
    for (std::size_t i = 0; i < k && i < n; ++i) out[idx[i]] = kMaskToken;
    return out;
  }
  if (spec.method == AttackMethod::shuffle) {
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(stream.next_uniform() * static_cast<double>(i));
      std::swap(out[i - 1], out[std::min(j, i - 1)]);
    }
    return out;
  }
  throw ContractError("corrupt_sequence: method does not apply to sequences");
}

GraphAttackOutcome graph_attack(const GraphData& g, const AttackSpec& spec, RngStream& stream) {
  spec.validate();
  GraphAttackOutcome out;
  out.graph = g;
  const std::size_t n = g.num_nodes();
  const std::size_t requested =
      static_cast<std::size_t>(std::ceil(spec.ratio * static_cast<double>(g.edges.size())));
  if (requested == 0) return out;

  auto sample_from = [&](std::vector<std::pair<int, int>>& pool, std::size_t k) {
    std::vector<std::pair<int, int>> picked;
    for (std::size_t i = 0; i < k && i < pool.size(); ++i) {
      const std::size_t j = i + static_cast<std::size_t>(stream.next_uniform() *
                                                         static_cast<double>(pool.size() - i));
      std::swap(pool[i], pool[std::min(j, pool.size() - 1)]);
      picked.push_back(pool[i]);
    }
    return picked;
  };

  if (spec.method == AttackMethod::random_edge) {
    std::vector<std::pair<int, int>> missing;
    for (int a = 0; a < static_cast<int>(n); ++a)
      for (int b = a + 1; b < static_cast<int>(n); ++b)
        if (!g.has_edge(a, b)) missing.emplace_back(a, b);
    if (requested > missing.size()) out.capped = true;
    auto add = sample_from(missing, requested);
    for (auto& e : add) out.graph.edges.push_back(e);
    out.added = add.size();
  } else if (spec.method == AttackMethod::dice) {
    if (g.labels.empty()) throw ContractError("dice attack requires node labels");
    const std::size_t remove_target = requested / 2;
    std::vector<std::pair<int, int>> intra;
    for (auto& e : g.edges)
      if (g.labels[static_cast<std::size_t>(e.first)] ==
          g.labels[static_cast<std::size_t>(e.second)])
        intra.push_back(e);
    auto removed = sample_from(intra, remove_target);
    for (auto& e : removed)
      out.graph.edges.erase(std::find(out.graph.edges.begin(), out.graph.edges.end(), e));
    out.removed = removed.size();

    const std::size_t add_target = requested - out.removed;
    std::vector<std::pair<int, int>> inter_missing;
    for (int a = 0; a < static_cast<int>(n); ++a)
      for (int b = a + 1; b < static_cast<int>(n); ++b)
        if (g.labels[static_cast<std::size_t>(a)] != g.labels[static_cast<std::size_t>(b)] &&
            !g.has_edge(a, b))
          inter_missing.emplace_back(a, b);
    auto added = sample_from(inter_missing, add_target);
    for (auto& e : added) out.graph.edges.push_back(e);
    out.added = added.size();
    if (out.removed < remove_target || out.added < add_target) out.capped = true;
  } else {
    throw ContractError("graph_attack: method does not apply to graphs");
  }
  out.graph.finalize();
  return out;
}

double evaluate_accuracy(const Network& net, const Dataset& data, const AttackSpec* spec,
                         std::uint64_t seed, std::size_t snn_steps) {
  if (data.size() == 0) throw ContractError("evaluate_accuracy: empty dataset");
  RngStream root(seed, 0xE7A1);

  if (data.modality == Modality::graph) {
    const GraphData* graph = &data.graph;
    GraphAttackOutcome attacked;
    if (spec) {
      RngStream gs = root.split(0x66);
      attacked = graph_attack(*graph, *spec, gs);
      graph = &attacked.graph;
    }
    const Tensor logits = forward_logits(net, *graph);
    std::size_t correct = 0, total = 0;
    const std::size_t classes = logits.extent(1);
    for (std::size_t v = 0; v < data.graph.num_nodes(); ++v) {
      if (!data.graph.test_mask[v]) continue;
      std::size_t arg = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (logits.at(v, c) > logits.at(v, arg)) arg = c;
      correct += static_cast<int>(arg) == data.graph.labels[v] ? 1 : 0;
      ++total;
    }
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor logits;
    const std::uint64_t sample_seed = philox_mix64(seed, 0x5A11, i);
    if (data.modality == Modality::sequences) {
      std::vector<std::int32_t> toks = data.sequences[i];
      if (spec) {
        RngStream cs(sample_seed, 0xC0);
        toks = corrupt_sequence(toks, *spec, cs);
      }
      const auto& r = std::get<RnnCellLayer>(net.layers[0]);
      logits = forward_logits(net, onehot_sequence(toks, r.d_x, r.steps));
    } else {
      Tensor x = data.inputs[i];
      if (spec) {
        if (attack_is_gradient_based(spec->method)) {
          x = adversarial_example(net, x, data.labels[i], *spec, sample_seed, snn_steps).x_adv;
        } else {
          RngStream cs(sample_seed, 0xC0);
          x = corrupt_image(x, *spec, cs);
        }
      }
      if (net.kind == NetKind::spiking) {
        RngStream es(sample_seed, 0xADE);
        logits = forward_logits(net, encode_spikes_bernoulli(x, snn_steps, es));
      } else {
        logits = forward_logits(net, x);
      }
    }
    std::size_t arg = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[arg]) arg = c;
    correct += static_cast<int>(arg) == data.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace lrnet
