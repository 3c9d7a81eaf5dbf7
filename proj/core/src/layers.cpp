#include "lrnet/layers.hpp"

#include <cmath>

#include "lrnet/errors.hpp"

namespace lrnet {

double activate(Activation a, double v) {
  switch (a) {
    case Activation::identity: return v;
    case Activation::relu: return v > 0 ? v : 0;
    case Activation::tanh_fn: return std::tanh(v);
    case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-v));
  }
  return v;
}

double activate_grad(Activation a, double v) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return v > 0 ? 1.0 : 0.0;
    case Activation::tanh_fn: {
      const double t = std::tanh(v);
      return 1.0 - t * t;
    }
    case Activation::sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-v));
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

Tensor activate(Activation a, const Tensor& v) {
  Tensor out = v;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = activate(a, v[i]);
  return out;
}

void NoisePlan::validate() const {
  for (const auto& l : layers) {
    if (l.mode != NoiseMode::off && !(l.sigma > 0))
      throw ContractError("noise plan: sigma must be positive when a layer is perturbed");
    if (l.mode != NoiseMode::off && !(l.sigma_attn > 0))
      throw ContractError("noise plan: sigma_attn must be positive when a layer is perturbed");
  }
}

double ForwardTrace::mean_loss() const {
  double s = 0;
  for (double l : losses) s += l;
  return losses.empty() ? 0.0 : s / static_cast<double>(losses.size());
}

// ---------------------------------------------------------------------------
// Noise layout

namespace {

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::size_t directed_pair_count(const GraphData& g) {
  std::size_t n = 0;
  for (const auto& nb : g.neighborhoods) n += nb.size();
  return n;
}

const GraphData& need_graph(const GraphData* graph) {
  if (!graph) throw ContractError("graph layer forward requires graph data");
  return *graph;
}

/// Builds the fragment with ε tensors shaped but unfilled, and returns the
/// tensors in the fixed draw order.
LayerFrag make_frag(const Layer& l, const LayerNoise& noise, const GraphData* graph,
                    std::vector<Tensor*>* order) {
  LayerFrag frag;
  const NoiseMode m = noise.mode;
  if (const auto* d = std::get_if<DenseLayer>(&l)) {
    DenseFrag f;
    f.mode = m;
    f.sigma = noise.sigma;
    if (m == NoiseMode::logit) f.eps = Tensor({d->out});
    if (m == NoiseMode::weight) {
      f.eps_w = Tensor({d->out, d->in});
      f.eps_b = Tensor({d->out});
    }
    frag = std::move(f);
    auto& g = std::get<DenseFrag>(frag);
    if (m == NoiseMode::logit) order->push_back(&g.eps);
    if (m == NoiseMode::weight) {
      order->push_back(&g.eps_w);
      order->push_back(&g.eps_b);
    }
  } else if (const auto* c = std::get_if<Conv2DLayer>(&l)) {
    ConvFrag f;
    f.mode = m;
    f.sigma = noise.sigma;
    if (m == NoiseMode::logit) f.eps = Tensor({c->c_out, c->h_out(), c->w_out()});
    if (m == NoiseMode::weight) {
      f.eps_w = Tensor({c->c_out, c->c_in, c->kh, c->kw});
      f.eps_b = Tensor({c->c_out});
    }
    frag = std::move(f);
    auto& g = std::get<ConvFrag>(frag);
    if (m == NoiseMode::logit) order->push_back(&g.eps);
    if (m == NoiseMode::weight) {
      order->push_back(&g.eps_w);
      order->push_back(&g.eps_b);
    }
  } else if (const auto* r = std::get_if<RnnCellLayer>(&l)) {
    RnnFrag f;
    f.mode = m;
    f.sigma = noise.sigma;
    const std::size_t gd = r->gates() * r->d_h;
    if (m == NoiseMode::logit) {
      f.eps_hh.resize(r->steps);
      f.eps_xh.resize(r->steps);
      for (std::size_t t = 0; t < r->steps; ++t) {
        f.eps_hh[t] = Tensor({gd});
        f.eps_xh[t] = Tensor({gd});
      }
    }
    if (m == NoiseMode::weight) {
      f.eps_whh = Tensor({gd, r->d_h});
      f.eps_wxh = Tensor({gd, r->d_x});
      f.eps_bhh = Tensor({gd});
      f.eps_bxh = Tensor({gd});
    }
    frag = std::move(f);
    auto& g = std::get<RnnFrag>(frag);
    if (m == NoiseMode::logit)
      for (std::size_t t = 0; t < r->steps; ++t) {
        order->push_back(&g.eps_hh[t]);
        order->push_back(&g.eps_xh[t]);
      }
    if (m == NoiseMode::weight) {
      order->push_back(&g.eps_whh);
      order->push_back(&g.eps_wxh);
      order->push_back(&g.eps_bhh);
      order->push_back(&g.eps_bxh);
    }
  } else if (const auto* gc = std::get_if<GcnLayer>(&l)) {
    GcnFrag f;
    f.mode = m;
    f.sigma = noise.sigma;
    if (m == NoiseMode::logit)
      f.eps = Tensor({need_graph(graph).num_nodes(), gc->out});
    if (m == NoiseMode::weight) f.eps_w = Tensor({gc->in, gc->out});
    frag = std::move(f);
    auto& g = std::get<GcnFrag>(frag);
    if (m == NoiseMode::logit) order->push_back(&g.eps);
    if (m == NoiseMode::weight) order->push_back(&g.eps_w);
  } else if (const auto* ga = std::get_if<GatLayer>(&l)) {
    GatFrag f;
    f.mode = m;
    f.sigma = noise.sigma;
    f.sigma_attn = noise.sigma_attn;
    if (m == NoiseMode::logit) {
      f.eps_feat = Tensor({need_graph(graph).num_nodes(), ga->out});
      f.eps_edge = Tensor({directed_pair_count(need_graph(graph))});
    }
    if (m == NoiseMode::weight) {
      f.eps_w = Tensor({ga->in, ga->out});
      f.eps_a = Tensor({2 * ga->out});
    }
    frag = std::move(f);
    auto& g = std::get<GatFrag>(frag);
    if (m == NoiseMode::logit) {
      order->push_back(&g.eps_feat);
      order->push_back(&g.eps_edge);
    }
    if (m == NoiseMode::weight) {
      order->push_back(&g.eps_w);
      order->push_back(&g.eps_a);
    }
  } else if (const auto* lf = std::get_if<LifLayer>(&l)) {
    LifFrag f;
    f.mode = m;
    f.sigma = noise.sigma;
    if (m == NoiseMode::logit) {
      f.eps.resize(lf->steps);
      for (std::size_t t = 0; t < lf->steps; ++t) f.eps[t] = Tensor({lf->out});
    }
    if (m == NoiseMode::weight) f.eps_w = Tensor({lf->out, lf->in});
    frag = std::move(f);
    auto& g = std::get<LifFrag>(frag);
    if (m == NoiseMode::logit)
      for (auto& e : g.eps) order->push_back(&e);
    if (m == NoiseMode::weight) order->push_back(&g.eps_w);
  }
  return frag;
}

}  // namespace

std::size_t layer_noise_dim(const Layer& l, NoiseMode mode, const GraphData* graph) {
  if (mode == NoiseMode::off) return 0;
  std::vector<Tensor*> order;
  LayerNoise n;
  n.mode = mode;
  n.sigma = 1.0;
  LayerFrag frag = make_frag(l, n, graph, &order);
  std::size_t total = 0;
  for (const Tensor* t : order) total += t->size();
  return total;
}

LayerFrag draw_layer_noise(const Layer& l, const LayerNoise& noise, RngStream& stream,
                           const GraphData* graph) {
  std::vector<Tensor*> order;
  LayerFrag frag = make_frag(l, noise, graph, &order);
  for (Tensor* t : order) stream.fill_gaussian(*t);
  return frag;
}

LayerFrag fill_layer_noise(const Layer& l, const LayerNoise& noise, const double* gaussians,
                           std::size_t count, const GraphData* graph) {
  std::vector<Tensor*> order;
  LayerFrag frag = make_frag(l, noise, graph, &order);
  std::size_t off = 0;
  for (Tensor* t : order) {
    if (off + t->size() > count) throw ContractError("fill_layer_noise: vector too short");
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = gaussians[off + i];
    off += t->size();
  }
  return frag;
}

void negate_noise(LayerFrag& frag) {
  std::visit(
      [](auto& f) {
        using T = std::decay_t<decltype(f)>;
        auto neg = [](Tensor& t) {
          for (std::size_t i = 0; i < t.size(); ++i) t[i] = -t[i];
        };
        if constexpr (std::is_same_v<T, DenseFrag> || std::is_same_v<T, ConvFrag>) {
          neg(f.eps);
          neg(f.eps_w);
          neg(f.eps_b);
        } else if constexpr (std::is_same_v<T, RnnFrag>) {
          for (auto& e : f.eps_hh) neg(e);
          for (auto& e : f.eps_xh) neg(e);
          neg(f.eps_whh);
          neg(f.eps_wxh);
          neg(f.eps_bhh);
          neg(f.eps_bxh);
        } else if constexpr (std::is_same_v<T, GcnFrag>) {
          neg(f.eps);
          neg(f.eps_w);
        } else if constexpr (std::is_same_v<T, GatFrag>) {
          neg(f.eps_feat);
          neg(f.eps_edge);
          neg(f.eps_w);
          neg(f.eps_a);
        } else if constexpr (std::is_same_v<T, LifFrag>) {
          for (auto& e : f.eps) neg(e);
          neg(f.eps_w);
        }
      },
      frag);
}

// ---------------------------------------------------------------------------
// Forward ops

Tensor dense_forward(const DenseLayer& l, const Tensor& x, DenseFrag* frag, DenseCache* cache) {
  if (x.size() != l.in)
    throw ContractError("dense_forward: input size " + std::to_string(x.size()) +
                        " does not match layer width " + std::to_string(l.in));
  const NoiseMode mode = frag ? frag->mode : NoiseMode::off;
  Tensor v({l.out});
  for (std::size_t i = 0; i < l.out; ++i) {
    double s = l.b[i];
    const double* wr = l.w.data() + i * l.in;
    for (std::size_t j = 0; j < l.in; ++j) s += wr[j] * x[j];
    v[i] = s;
  }
  if (mode == NoiseMode::logit) {
    for (std::size_t i = 0; i < l.out; ++i) v[i] += frag->sigma * frag->eps[i];
  } else if (mode == NoiseMode::weight) {
    for (std::size_t i = 0; i < l.out; ++i) {
      double s = frag->eps_b[i];
      const double* er = frag->eps_w.data() + i * l.in;
      for (std::size_t j = 0; j < l.in; ++j) s += er[j] * x[j];
      v[i] += frag->sigma * s;
    }
  }
  if (frag && mode != NoiseMode::off) frag->inputs.push_back(x);
  if (cache) {
    cache->x = x;
    cache->v = v;
  }
  Tensor out({l.out});
  for (std::size_t i = 0; i < l.out; ++i) out[i] = activate(l.act, v[i]);
  return out;
}

Tensor conv2d_forward(const Conv2DLayer& l, const Tensor& x, ConvFrag* frag, ConvCache* cache) {
  if (x.rank() != 3 || x.extent(0) != l.c_in || x.extent(1) != l.h_in || x.extent(2) != l.w_in)
    throw ContractError("conv2d_forward: input shape " + x.shape_string() + " does not match layer");
  if (l.kh > l.h_in || l.kw > l.w_in)
    throw ContractError("conv2d_forward: kernel larger than input");
  const NoiseMode mode = frag ? frag->mode : NoiseMode::off;
  const std::size_t ho = l.h_out(), wo = l.w_out();

  Tensor v({l.c_out, ho, wo});
  for (std::size_t o = 0; o < l.c_out; ++o) {
    const double bias =
        l.b[o] + (mode == NoiseMode::weight ? frag->sigma * frag->eps_b[o] : 0.0);
    for (std::size_t j = 0; j < ho; ++j)
      for (std::size_t k = 0; k < wo; ++k) {
        double s = bias;
        for (std::size_t i = 0; i < l.c_in; ++i)
          for (std::size_t a = 0; a < l.kh; ++a)
            for (std::size_t b2 = 0; b2 < l.kw; ++b2) {
              double wv = l.w[l.w.idx(o, i, a, b2)];
              if (mode == NoiseMode::weight)
                wv += frag->sigma * frag->eps_w[frag->eps_w.idx(o, i, a, b2)];
              s += x[x.idx(i, j + a, k + b2)] * wv;
            }
        if (mode == NoiseMode::logit) s += frag->sigma * frag->eps[frag->eps.idx(o, j, k)];
        v[v.idx(o, j, k)] = s;
      }
  }
  if (frag && mode != NoiseMode::off) frag->inputs.push_back(x);
  if (cache) {
    cache->x = x;
    cache->v = v;
  }
  return v;
}

Tensor rnn_cell_forward(const RnnCellLayer& l, const Tensor& x_seq, RnnFrag* frag,
                        RnnCache* cache, Tensor* c_out) {
  if (l.steps == 0) throw ContractError("rnn_cell_forward: zero steps");
  if (x_seq.rank() != 2 || x_seq.extent(0) != l.steps || x_seq.extent(1) != l.d_x)
    throw ContractError("rnn_cell_forward: input shape " + x_seq.shape_string() +
                        " does not match cell (steps x d_x)");
  const NoiseMode mode = frag ? frag->mode : NoiseMode::off;
  const std::size_t gd = l.gates() * l.d_h;

  Tensor h({l.steps, l.d_h});
  Tensor c({l.steps, l.d_h});
  Tensor h_prev({l.d_h});
  Tensor c_prev({l.d_h});
  std::vector<Tensor> rec_h, rec_x;
  if (cache) {
    cache->u.assign(l.steps, Tensor());
    cache->v.assign(l.steps, Tensor());
    cache->x_seq = x_seq;
  }

  for (std::size_t t = 0; t < l.steps; ++t) {
    Tensor x_t({l.d_x});
    for (std::size_t j = 0; j < l.d_x; ++j) x_t[j] = x_seq[x_seq.idx(t, j)];

    Tensor u({gd}), vlin({gd});
    for (std::size_t i = 0; i < gd; ++i) {
      double su = l.b_hh[i];
      const double* whr = l.w_hh.data() + i * l.d_h;
      for (std::size_t j = 0; j < l.d_h; ++j) su += whr[j] * h_prev[j];
      double sv = l.b_xh[i];
      const double* wxr = l.w_xh.data() + i * l.d_x;
      for (std::size_t j = 0; j < l.d_x; ++j) sv += wxr[j] * x_t[j];
      if (mode == NoiseMode::weight) {
        double pu = frag->eps_bhh[i];
        const double* ehr = frag->eps_whh.data() + i * l.d_h;
        for (std::size_t j = 0; j < l.d_h; ++j) pu += ehr[j] * h_prev[j];
        double pv = frag->eps_bxh[i];
        const double* exr = frag->eps_wxh.data() + i * l.d_x;
        for (std::size_t j = 0; j < l.d_x; ++j) pv += exr[j] * x_t[j];
        su += frag->sigma * pu;
        sv += frag->sigma * pv;
      }
      u[i] = su;
      vlin[i] = sv;
    }
    if (mode == NoiseMode::logit)
      for (std::size_t i = 0; i < gd; ++i) {
        u[i] += frag->sigma * frag->eps_hh[t][i];
        vlin[i] += frag->sigma * frag->eps_xh[t][i];
      }

    Tensor h_t({l.d_h}), c_t({l.d_h});
    switch (l.kind) {
      case RnnKind::vanilla:
        for (std::size_t i = 0; i < l.d_h; ++i) h_t[i] = std::tanh(u[i] + vlin[i]);
        break;
      case RnnKind::gru:
        for (std::size_t i = 0; i < l.d_h; ++i) {
          const double r = sigmoid(u[i] + vlin[i]);
          const double z = sigmoid(u[l.d_h + i] + vlin[l.d_h + i]);
          const double n = std::tanh(vlin[2 * l.d_h + i] + r * u[2 * l.d_h + i]);
          h_t[i] = (1.0 - z) * n + z * h_prev[i];
        }
        break;
      case RnnKind::lstm:
        for (std::size_t i = 0; i < l.d_h; ++i) {
          const double ig = sigmoid(u[i] + vlin[i]);
          const double fg = sigmoid(u[l.d_h + i] + vlin[l.d_h + i]);
          const double gg = std::tanh(u[2 * l.d_h + i] + vlin[2 * l.d_h + i]);
          const double og = sigmoid(u[3 * l.d_h + i] + vlin[3 * l.d_h + i]);
          c_t[i] = fg * c_prev[i] + ig * gg;
          h_t[i] = og * std::tanh(c_t[i]);
        }
        break;
    }

    if (frag && mode != NoiseMode::off) {
      rec_h.push_back(h_prev);
      rec_x.push_back(x_t);
    }
    if (cache) {
      cache->u[t] = u;
      cache->v[t] = vlin;
    }
    for (std::size_t i = 0; i < l.d_h; ++i) {
      h[h.idx(t, i)] = h_t[i];
      c[c.idx(t, i)] = c_t[i];
    }
    h_prev = std::move(h_t);
    c_prev = std::move(c_t);
  }

  if (frag && mode != NoiseMode::off) {
    frag->h_prev.push_back(std::move(rec_h));
    frag->x_in.push_back(std::move(rec_x));
  }
  if (cache) {
    cache->h = h;
    cache->c = c;
  }
  if (c_out) *c_out = c;
  return h;
}

Tensor gcn_forward(const GcnLayer& l, const GraphData& g, const Tensor& h, GcnFrag* frag,
                   GcnCache* cache) {
  if (h.rank() != 2 || h.extent(0) != g.num_nodes() || h.extent(1) != l.in)
    throw ContractError("gcn_forward: feature shape mismatch");
  for (const auto& nb : g.neighborhoods)
    if (nb.empty()) throw ContractError("gcn_forward: node without self-loop");
  const NoiseMode mode = frag ? frag->mode : NoiseMode::off;

  const Tensor xhat = matmul(g.norm_adj, h);  // |V| x in
  Tensor v = matmul(xhat, l.w);               // |V| x out
  if (mode == NoiseMode::logit) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += frag->sigma * frag->eps[i];
  } else if (mode == NoiseMode::weight) {
    Tensor wn = l.w;
    for (std::size_t i = 0; i < wn.size(); ++i) wn[i] += frag->sigma * frag->eps_w[i];
    v = matmul(xhat, wn);
  }
  if (frag && mode != NoiseMode::off) frag->xhat = xhat;
  if (cache) {
    cache->xhat = xhat;
    cache->v = v;
  }
  return activate(l.act, v);
}

Tensor gat_forward(const GatLayer& l, const GraphData& g, const Tensor& h, GatFrag* frag,
                   GatCache* cache) {
  if (h.rank() != 2 || h.extent(0) != g.num_nodes() || h.extent(1) != l.in)
    throw ContractError("gat_forward: feature shape mismatch");
  const std::size_t n = g.num_nodes(), out = l.out;
  const NoiseMode mode = frag ? frag->mode : NoiseMode::off;

  Tensor w = l.w, a = l.a;
  if (mode == NoiseMode::weight) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += frag->sigma * frag->eps_w[i];
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += frag->sigma * frag->eps_a[i];
  }

  Tensor v = matmul(h, w);  // |V| x out
  if (mode == NoiseMode::logit)
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += frag->sigma * frag->eps_feat[i];

  Tensor hp({n, out});
  std::vector<double> att_logit, alpha;
  std::size_t pair = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nb = g.neighborhoods[i];
    if (nb.empty()) throw ContractError("gat_forward: empty neighborhood");
    // attention logits over the in-neighborhood
    std::vector<double> e(nb.size());
    for (std::size_t q = 0; q < nb.size(); ++q) {
      const std::size_t j = static_cast<std::size_t>(nb[q]);
      double u = 0;
      for (std::size_t k = 0; k < out; ++k)
        u += a[k] * v[v.idx(i, k)] + a[out + k] * v[v.idx(j, k)];
      if (mode == NoiseMode::logit) u += frag->sigma_attn * frag->eps_edge[pair + q];
      att_logit.push_back(u);
      e[q] = u > 0 ? u : l.leaky_slope * u;
    }
    double emax = e[0];
    for (double x : e) emax = std::max(emax, x);
    double z = 0;
    for (double& x : e) {
      x = std::exp(x - emax);
      z += x;
    }
    for (std::size_t q = 0; q < nb.size(); ++q) {
      const double al = e[q] / z;
      alpha.push_back(al);
      const std::size_t src = l.aggregate_self ? i : static_cast<std::size_t>(nb[q]);
      for (std::size_t k = 0; k < out; ++k) hp[hp.idx(i, k)] += al * v[v.idx(src, k)];
    }
    pair += nb.size();
  }

  if (frag && mode != NoiseMode::off) {
    frag->h_in = h;
    frag->v = v;
  }
  if (cache) {
    cache->h_in = h;
    cache->v = v;
    cache->att_logit = std::move(att_logit);
    cache->alpha = std::move(alpha);
    cache->agg = hp;
  }
  return activate(l.act, hp);
}

Tensor lif_forward(const std::vector<const LifLayer*>& chain, const Tensor& x_seq,
                   const std::vector<LifFrag*>& frags, std::vector<LifCache>* caches) {
  if (chain.empty()) throw ContractError("lif_forward: empty layer chain");
  const std::size_t T = chain[0]->steps;
  if (x_seq.rank() != 2 || x_seq.extent(0) != T || x_seq.extent(1) != chain[0]->in)
    throw ContractError("lif_forward: input shape " + x_seq.shape_string() +
                        " does not match chain (steps x d_0)");
  for (std::size_t i = 0; i < x_seq.size(); ++i)
    if (x_seq[i] != 0.0 && x_seq[i] != 1.0)
      throw ContractError("lif_forward: input must be binary spikes");
  for (const LifLayer* l : chain) {
    if (!(l->leak > 0 && l->leak < 1)) throw ContractError("lif_forward: leak must be in (0,1)");
    if (!(l->v_th > 0)) throw ContractError("lif_forward: threshold must be positive");
    if (l->steps != T) throw ContractError("lif_forward: step-count mismatch in chain");
  }

  const std::size_t L = chain.size();
  std::vector<Tensor> u(L), spikes(L);
  std::vector<std::vector<Tensor>> rec_x(L);
  for (std::size_t l = 0; l < L; ++l) {
    u[l] = Tensor({chain[l]->out});
    spikes[l] = Tensor({chain[l]->out});
  }
  if (caches) {
    caches->assign(L, LifCache{});
    for (std::size_t l = 0; l < L; ++l) {
      (*caches)[l].u.reserve(T);
      (*caches)[l].spikes.reserve(T);
      (*caches)[l].x_in.reserve(T);
    }
  }

  for (std::size_t t = 0; t < T; ++t) {
    Tensor lower({chain[0]->in});
    for (std::size_t j = 0; j < lower.size(); ++j) lower[j] = x_seq[x_seq.idx(t, j)];
    for (std::size_t l = 0; l < L; ++l) {
      const LifLayer& ly = *chain[l];
      if (lower.size() != ly.in) throw ContractError("lif_forward: chain widths do not compose");
      const NoiseMode mode = frags.size() > l && frags[l] ? frags[l]->mode : NoiseMode::off;
      Tensor un({ly.out});
      for (std::size_t i = 0; i < ly.out; ++i) {
        double drive = 0;
        const double* wr = ly.w.data() + i * ly.in;
        for (std::size_t j = 0; j < ly.in; ++j) drive += wr[j] * lower[j];
        if (mode == NoiseMode::weight) {
          double p = 0;
          const double* er = frags[l]->eps_w.data() + i * ly.in;
          for (std::size_t j = 0; j < ly.in; ++j) p += er[j] * lower[j];
          drive += frags[l]->sigma * p;
        }
        if (mode == NoiseMode::logit) drive += frags[l]->sigma * frags[l]->eps[t][i];
        // a spike at the previous step zeroes the leak carry
        un[i] = ly.leak * u[l][i] * (1.0 - spikes[l][i]) + drive;
      }
      Tensor sp({ly.out});
      for (std::size_t i = 0; i < ly.out; ++i) sp[i] = un[i] >= ly.v_th ? 1.0 : 0.0;
      if (mode != NoiseMode::off) rec_x[l].push_back(lower);
      if (caches) {
        (*caches)[l].u.push_back(un);
        (*caches)[l].spikes.push_back(sp);
        (*caches)[l].x_in.push_back(lower);
      }
      u[l] = std::move(un);
      spikes[l] = sp;
      lower = std::move(sp);
    }
  }

  for (std::size_t l = 0; l < L; ++l)
    if (frags.size() > l && frags[l] && frags[l]->mode != NoiseMode::off)
      frags[l]->x_in.push_back(std::move(rec_x[l]));
  return spikes[L - 1];
}

Tensor cross_correlate_valid(const Tensor& x, const Tensor& k) {
  if (x.rank() != 2 || k.rank() != 2) throw ContractError("cross_correlate_valid: rank != 2");
  if (k.extent(0) > x.extent(0) || k.extent(1) > x.extent(1))
    throw ContractError("cross_correlate_valid: kernel larger than input");
  const std::size_t ho = x.extent(0) - k.extent(0) + 1;
  const std::size_t wo = x.extent(1) - k.extent(1) + 1;
  Tensor out({ho, wo});
  for (std::size_t s = 0; s < ho; ++s)
    for (std::size_t t = 0; t < wo; ++t) {
      double acc = 0;
      for (std::size_t j = 0; j < k.extent(0); ++j)
        for (std::size_t l = 0; l < k.extent(1); ++l)
          acc += x[x.idx(s + j, t + l)] * k[k.idx(j, l)];
      out[out.idx(s, t)] = acc;
    }
  return out;
}

}  // namespace lrnet
