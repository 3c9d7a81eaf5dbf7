#include "lrnet/network.hpp"

#include <cmath>

#include "lrnet/errors.hpp"

namespace lrnet {

// --- loss heads ----------------------------------------------------------

double cross_entropy_loss(const Tensor& logits, int label) {
  if (logits.size() < 2) throw ContractError("cross_entropy_loss: need at least 2 logits");
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw ContractError("cross_entropy_loss: label out of range");
  double m = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) m = std::max(m, logits[i]);
  double z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += std::exp(logits[i] - m);
  return -(logits[static_cast<std::size_t>(label)] - m - std::log(z));
}

Tensor softmax(const Tensor& logits) {
  Tensor p = logits;
  double m = p[0];
  for (std::size_t i = 1; i < p.size(); ++i) m = std::max(m, p[i]);
  double z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(p[i] - m);
    z += p[i];
  }
  for (std::size_t i = 0; i < p.size(); ++i) p[i] /= z;
  return p;
}

double head_loss(LossKind kind, const Tensor& logits, int label, const Tensor* target,
                 double constant_value) {
  switch (kind) {
    case LossKind::cross_entropy:
      return cross_entropy_loss(logits, label);
    case LossKind::squared_error: {
      double s = 0;
      for (std::size_t i = 0; i < logits.size(); ++i) {
        const double t = target ? (*target)[i]
                                : (static_cast<std::size_t>(label) == i ? 1.0 : 0.0);
        const double d = logits[i] - t;
        s += 0.5 * d * d;
      }
      return s;
    }
    case LossKind::sum: {
      double s = 0;
      for (std::size_t i = 0; i < logits.size(); ++i) s += logits[i];
      return s;
    }
    case LossKind::sum_squares: {
      double s = 0;
      for (std::size_t i = 0; i < logits.size(); ++i) s += logits[i] * logits[i];
      return s;
    }
    case LossKind::constant:
      return constant_value;
  }
  return 0;
}

Tensor head_loss_grad(LossKind kind, const Tensor& logits, int label, const Tensor* target) {
  Tensor g = Tensor::zeros_like(logits);
  switch (kind) {
    case LossKind::cross_entropy: {
      g = softmax(logits);
      g[static_cast<std::size_t>(label)] -= 1.0;
      break;
    }
    case LossKind::squared_error:
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double t = target ? (*target)[i]
                                : (static_cast<std::size_t>(label) == i ? 1.0 : 0.0);
        g[i] = logits[i] - t;
      }
      break;
    case LossKind::sum:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = 1.0;
      break;
    case LossKind::sum_squares:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * logits[i];
      break;
    case LossKind::constant:
      break;
  }
  return g;
}

// --- Network -------------------------------------------------------------

std::vector<std::vector<Tensor*>> Network::param_views() {
  std::vector<std::vector<Tensor*>> out;
  for (auto& l : layers) {
    std::vector<Tensor*> ps;
    std::visit(
        [&](auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, DenseLayer> || std::is_same_v<T, Conv2DLayer>) {
            ps = {&layer.w, &layer.b};
          } else if constexpr (std::is_same_v<T, RnnCellLayer>) {
            ps = {&layer.w_hh, &layer.w_xh, &layer.b_hh, &layer.b_xh};
          } else if constexpr (std::is_same_v<T, GcnLayer> || std::is_same_v<T, LifLayer>) {
            ps = {&layer.w};
          } else if constexpr (std::is_same_v<T, GatLayer>) {
            ps = {&layer.w, &layer.a};
          }
        },
        l);
    out.push_back(std::move(ps));
  }
  return out;
}

std::vector<std::vector<const Tensor*>> Network::param_views() const {
  auto views = const_cast<Network*>(this)->param_views();
  std::vector<std::vector<const Tensor*>> out(views.size());
  for (std::size_t i = 0; i < views.size(); ++i)
    out[i].assign(views[i].begin(), views[i].end());
  return out;
}

std::string Network::layer_name(std::size_t i) const {
  const char* base = std::visit(
      [](const auto& layer) {
        using T = std::decay_t<decltype(layer)>;
        if constexpr (std::is_same_v<T, DenseLayer>) return "dense";
        else if constexpr (std::is_same_v<T, Conv2DLayer>) return "conv";
        else if constexpr (std::is_same_v<T, RnnCellLayer>) return "rnn";
        else if constexpr (std::is_same_v<T, GcnLayer>) return "gcn";
        else if constexpr (std::is_same_v<T, GatLayer>) return "gat";
        else return "lif";
      },
      layers[i]);
  return std::string(base) + std::to_string(i);
}

void Network::validate() const {
  if (layers.empty()) throw ContractError("network: no layers");
  for (const auto& l : layers)
    std::visit(
        [](const auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, LifLayer>) {
            if (!(layer.leak > 0 && layer.leak < 1))
              throw ContractError("network: LIF leak must lie in (0,1)");
            if (!(layer.v_th > 0)) throw ContractError("network: LIF threshold must be positive");
          }
          (void)layer;
        },
        l);
}

// --- noise bundles ---------------------------------------------------------

ForwardTrace draw_noise(const Network& net, const NoisePlan& plan, RngStream& stream,
                        const GraphData* graph) {
  if (plan.layers.size() != net.layers.size())
    throw ContractError("noise plan length does not match network depth");
  plan.validate();
  ForwardTrace trace;
  trace.frags.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    if (plan.layers[i].mode != NoiseMode::off)
      trace.frags[i] = draw_layer_noise(net.layers[i], plan.layers[i], stream, graph);
  return trace;
}

ForwardTrace fill_noise(const Network& net, const NoisePlan& plan, const double* gaussians,
                        std::size_t count, const GraphData* graph) {
  if (plan.layers.size() != net.layers.size())
    throw ContractError("noise plan length does not match network depth");
  plan.validate();
  ForwardTrace trace;
  trace.frags.resize(net.layers.size());
  std::size_t off = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (plan.layers[i].mode == NoiseMode::off) continue;
    const std::size_t need = layer_noise_dim(net.layers[i], plan.layers[i].mode, graph);
    if (off + need > count) throw ContractError("fill_noise: gaussian vector too short");
    trace.frags[i] = fill_layer_noise(net.layers[i], plan.layers[i], gaussians + off, need, graph);
    off += need;
  }
  return trace;
}

void negate_trace_noise(ForwardTrace& trace) {
  for (auto& f : trace.frags)
    if (f) negate_noise(*f);
}

std::size_t plan_noise_dim(const Network& net, const NoisePlan& plan, const GraphData* graph) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    total += layer_noise_dim(net.layers[i], plan.layers[i].mode, graph);
  return total;
}

// --- forwards ----------------------------------------------------------------

namespace {

Tensor flatten(const Tensor& t) { return t.reshaped({t.size()}); }

template <typename FragT>
FragT* frag_of(ForwardTrace& trace, std::size_t i) {
  if (i >= trace.frags.size() || !trace.frags[i]) return nullptr;
  return &std::get<FragT>(*trace.frags[i]);
}

Tensor forward_sample(const Network& net, const Tensor& input, ForwardTrace& trace) {
  Tensor cur = input;
  if (net.kind == NetKind::spiking) {
    // consecutive LIF layers run as one simulation block
    std::size_t i = 0;
    std::vector<const LifLayer*> chain;
    std::vector<LifFrag*> frags;
    while (i < net.layers.size() && std::holds_alternative<LifLayer>(net.layers[i])) {
      chain.push_back(&std::get<LifLayer>(net.layers[i]));
      frags.push_back(frag_of<LifFrag>(trace, i));
      ++i;
    }
    if (chain.empty()) throw ContractError("spiking network must start with LIF layers");
    cur = lif_forward(chain, cur, frags);
    for (; i < net.layers.size(); ++i) {
      const auto& d = std::get<DenseLayer>(net.layers[i]);
      cur = dense_forward(d, cur, frag_of<DenseFrag>(trace, i));
    }
    return cur;
  }

  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (const auto* d = std::get_if<DenseLayer>(&net.layers[i])) {
      if (cur.rank() > 1) {
        // recurrent stacks hand the head the final hidden state
        if (net.kind == NetKind::recurrent)
          cur = Tensor({cur.extent(1)},
                       std::vector<double>(cur.data() + (cur.extent(0) - 1) * cur.extent(1),
                                           cur.data() + cur.size()));
        else
          cur = flatten(cur);
      }
      cur = dense_forward(*d, cur, frag_of<DenseFrag>(trace, i));
    } else if (const auto* c = std::get_if<Conv2DLayer>(&net.layers[i])) {
      cur = conv2d_forward(*c, cur, frag_of<ConvFrag>(trace, i));
      for (std::size_t k = 0; k < cur.size(); ++k) cur[k] = activate(c->act, cur[k]);
    } else if (const auto* r = std::get_if<RnnCellLayer>(&net.layers[i])) {
      cur = rnn_cell_forward(*r, cur, frag_of<RnnFrag>(trace, i));
    } else {
      throw ContractError("unsupported layer for non-graph forward");
    }
  }
  return cur;
}

Tensor forward_graph(const Network& net, const GraphData& g, ForwardTrace& trace) {
  Tensor h = g.features;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (const auto* gc = std::get_if<GcnLayer>(&net.layers[i]))
      h = gcn_forward(*gc, g, h, frag_of<GcnFrag>(trace, i));
    else if (const auto* ga = std::get_if<GatLayer>(&net.layers[i]))
      h = gat_forward(*ga, g, h, frag_of<GatFrag>(trace, i));
    else
      throw ContractError("graph network supports GCN/GAT layers only");
  }
  return h;
}

double masked_graph_loss(const Network& net, const GraphData& g, const Tensor& logits,
                         const std::vector<std::uint8_t>& mask) {
  double total = 0;
  std::size_t count = 0;
  const std::size_t classes = logits.extent(1);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    if (!mask[v]) continue;
    Tensor row({classes}, std::vector<double>(logits.data() + v * classes,
                                              logits.data() + (v + 1) * classes));
    total += head_loss(net.loss, row, g.labels[v], nullptr, net.loss_constant);
    ++count;
  }
  if (count == 0) throw ContractError("graph loss: empty node mask");
  return total / static_cast<double>(count);
}

}  // namespace

void run_forward(const Network& net, const Batch& batch, ForwardTrace& trace) {
  if (trace.frags.size() != net.layers.size()) trace.frags.resize(net.layers.size());
  trace.losses.clear();
  if (net.kind == NetKind::graph) {
    if (!batch.graph) throw ContractError("graph network requires a graph batch");
    const auto& mask = batch.graph_mask ? *batch.graph_mask : batch.graph->train_mask;
    const Tensor logits = forward_graph(net, *batch.graph, trace);
    const double loss = masked_graph_loss(net, *batch.graph, logits, mask);
    if (!std::isfinite(loss)) throw ContractError("run_forward: non-finite loss");
    trace.losses.push_back(loss);
    return;
  }
  if (batch.inputs.empty()) throw ContractError("run_forward: empty batch");
  for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
    const Tensor logits = forward_sample(net, batch.inputs[s], trace);
    const Tensor* target =
        (s < batch.targets.size() && !batch.targets[s].empty()) ? &batch.targets[s] : nullptr;
    const double loss =
        head_loss(net.loss, logits, batch.labels.empty() ? 0 : batch.labels[s], target,
                  net.loss_constant);
    if (!std::isfinite(loss)) throw ContractError("run_forward: non-finite loss");
    trace.losses.push_back(loss);
  }
}

double network_forward(const Network& net, const Tensor& input, int label, const NoisePlan& plan,
                       RngStream& stream, ForwardTrace* trace) {
  ForwardTrace local = draw_noise(net, plan, stream, nullptr);
  Batch b;
  b.inputs = {input};
  b.labels = {label};
  run_forward(net, b, local);
  const double loss = local.losses[0];
  if (trace) *trace = std::move(local);
  return loss;
}

double network_forward(const Network& net, const GraphData& g, const NoisePlan& plan,
                       RngStream& stream, ForwardTrace* trace) {
  ForwardTrace local = draw_noise(net, plan, stream, &g);
  Batch b;
  b.graph = &g;
  run_forward(net, b, local);
  const double loss = local.losses[0];
  if (trace) *trace = std::move(local);
  return loss;
}

Tensor forward_logits(const Network& net, const Tensor& input) {
  ForwardTrace trace;
  trace.frags.resize(net.layers.size());
  return forward_sample(net, input, trace);
}

Tensor forward_logits(const Network& net, const GraphData& g) {
  ForwardTrace trace;
  trace.frags.resize(net.layers.size());
  return forward_graph(net, g, trace);
}

// --- spike encodings ---------------------------------------------------------

Tensor encode_spikes_bernoulli(const Tensor& image01, std::size_t steps, RngStream& stream) {
  const std::size_t d = image01.size();
  Tensor out({steps, d});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < d; ++j)
      out[out.idx(t, j)] = stream.next_uniform() < image01[j] ? 1.0 : 0.0;
  return out;
}

Tensor encode_spikes_threshold(const Tensor& image01, std::size_t steps) {
  const std::size_t d = image01.size();
  Tensor out({steps, d});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < d; ++j) out[out.idx(t, j)] = image01[j] >= 0.5 ? 1.0 : 0.0;
  return out;
}

}  // namespace lrnet
