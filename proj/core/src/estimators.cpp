#include "lrnet/estimators.hpp"

#include <cmath>

#include "lrnet/errors.hpp"
#include "lrnet/parallel.hpp"
#include "lrnet/sobol.hpp"

namespace lrnet {

namespace {

constexpr std::size_t kReductionChunks = 64;  // fixed: bit-exact for any thread count

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Accumulation layout: one slot per (parameter, step). Recurrent estimators
// keep per-step slots so that the final gradient is literally the sum of the
// per-step estimates, making the weight-sharing identity hold bit for bit.
struct SlotLayout {
  std::vector<std::vector<std::size_t>> shapes;  // per slot
  std::vector<std::size_t> param_first;          // first slot of each param
  std::vector<std::size_t> param_steps;          // slots per param

  std::size_t slots() const { return shapes.size(); }
};

SlotLayout layout_for(const Layer& layer, NoiseMode mode, const GraphData* graph) {
  SlotLayout lay;
  auto add_param = [&](std::vector<std::size_t> shape, std::size_t steps) {
    lay.param_first.push_back(lay.shapes.size());
    lay.param_steps.push_back(steps);
    for (std::size_t t = 0; t < steps; ++t) lay.shapes.push_back(shape);
  };
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>) {
          add_param({l.out, l.in}, 1);
          add_param({l.out}, 1);
        } else if constexpr (std::is_same_v<T, Conv2DLayer>) {
          add_param({l.c_out, l.c_in, l.kh, l.kw}, 1);
          add_param({l.c_out}, 1);
        } else if constexpr (std::is_same_v<T, RnnCellLayer>) {
          const std::size_t steps = mode == NoiseMode::logit ? l.steps : 1;
          const std::size_t gd = l.gates() * l.d_h;
          add_param({gd, l.d_h}, steps);
          add_param({gd, l.d_x}, steps);
          add_param({gd}, steps);
          add_param({gd}, steps);
        } else if constexpr (std::is_same_v<T, GcnLayer>) {
          add_param({l.in, l.out}, 1);
        } else if constexpr (std::is_same_v<T, GatLayer>) {
          add_param({l.in, l.out}, 1);
          add_param({2 * l.out}, 1);
        } else if constexpr (std::is_same_v<T, LifLayer>) {
          add_param({l.out, l.in}, mode == NoiseMode::logit ? l.steps : 1);
        }
      },
      layer);
  (void)graph;
  return lay;
}

// Per-copy weighted contribution of one layer fragment, added into `slots`
// (layout per layout_for). w holds one weight per sample; the per-sample
// scale is w_s / (B * sigma).
void add_copy_contribution(const LayerFrag& frag, const std::vector<double>& w,
                           const GraphData* graph, Tensor* slots, double* sigma_out) {
  const double b_count = static_cast<double>(w.size());
  const double wbar = mean_of(w);

  auto add_sigma = [&](double sigma, const std::vector<const Tensor*>& eps_list) {
    if (!sigma_out) return;
    double s = 0;
    for (const Tensor* e : eps_list)
      for (std::size_t i = 0; i < e->size(); ++i) s += (*e)[i] * (*e)[i] - 1.0;
    *sigma_out += wbar / (2.0 * sigma * sigma) * s;
  };

  if (const auto* f = std::get_if<DenseFrag>(&frag)) {
    if (f->mode == NoiseMode::weight) {
      const double c = wbar / f->sigma;
      for (std::size_t i = 0; i < slots[0].size(); ++i) slots[0][i] += c * f->eps_w[i];
      for (std::size_t i = 0; i < slots[1].size(); ++i) slots[1][i] += c * f->eps_b[i];
      return;
    }
    if (f->inputs.size() != w.size())
      throw ContractError("dense estimator: recorded inputs do not match sample count");
    const std::size_t dout = f->eps.size();
    for (std::size_t s = 0; s < w.size(); ++s) {
      const double c = w[s] / (b_count * f->sigma);
      const Tensor& x = f->inputs[s];
      for (std::size_t i = 0; i < dout; ++i) {
        const double e = c * f->eps[i];
        double* row = slots[0].data() + i * x.size();
        for (std::size_t j = 0; j < x.size(); ++j) row[j] += e * x[j];
        slots[1][i] += e;
      }
    }
    add_sigma(f->sigma, {&f->eps});
  } else if (const auto* f2 = std::get_if<ConvFrag>(&frag)) {
    if (f2->mode == NoiseMode::weight) {
      const double c = wbar / f2->sigma;
      for (std::size_t i = 0; i < slots[0].size(); ++i) slots[0][i] += c * f2->eps_w[i];
      for (std::size_t i = 0; i < slots[1].size(); ++i) slots[1][i] += c * f2->eps_b[i];
      return;
    }
    if (f2->inputs.size() != w.size())
      throw ContractError("conv estimator: recorded inputs do not match sample count");
    const auto& eps = f2->eps;  // c_out x h_out x w_out
    const std::size_t c_out = eps.extent(0), ho = eps.extent(1), wo = eps.extent(2);
    for (std::size_t s = 0; s < w.size(); ++s) {
      const double c = w[s] / (b_count * f2->sigma);
      const Tensor& x = f2->inputs[s];  // c_in x h_in x w_in
      if (x.extent(1) < ho || x.extent(2) < wo)
        throw ContractError("conv estimator: input/noise field shape mismatch");
      const std::size_t c_in = x.extent(0);
      const std::size_t kh = x.extent(1) - ho + 1, kw = x.extent(2) - wo + 1;
      for (std::size_t o = 0; o < c_out; ++o) {
        for (std::size_t i = 0; i < c_in; ++i)
          for (std::size_t a = 0; a < kh; ++a)
            for (std::size_t b2 = 0; b2 < kw; ++b2) {
              double acc = 0;
              for (std::size_t j = 0; j < ho; ++j)
                for (std::size_t k = 0; k < wo; ++k)
                  acc += x[x.idx(i, j + a, k + b2)] * eps[eps.idx(o, j, k)];
              slots[0][slots[0].idx(o, i, a, b2)] += c * acc;
            }
        double field_sum = 0;
        for (std::size_t j = 0; j < ho; ++j)
          for (std::size_t k = 0; k < wo; ++k) field_sum += eps[eps.idx(o, j, k)];
        slots[1][o] += c * field_sum;
      }
    }
    add_sigma(f2->sigma, {&f2->eps});
  } else if (const auto* f3 = std::get_if<RnnFrag>(&frag)) {
    if (f3->mode == NoiseMode::weight) {
      const double c = wbar / f3->sigma;
      const Tensor* eps[4] = {&f3->eps_whh, &f3->eps_wxh, &f3->eps_bhh, &f3->eps_bxh};
      for (int p = 0; p < 4; ++p)
        for (std::size_t i = 0; i < slots[p].size(); ++i)
          slots[p][i] += c * (*eps[p])[i];
      return;
    }
    if (f3->h_prev.size() != w.size() || f3->x_in.size() != w.size())
      throw ContractError("recurrent estimator: recorded inputs do not match sample count");
    const std::size_t steps = f3->eps_hh.size();
    for (std::size_t s = 0; s < w.size(); ++s) {
      if (f3->h_prev[s].size() != steps || f3->x_in[s].size() != steps)
        throw ContractError("recurrent estimator: step-count mismatch across fragments");
      const double c = w[s] / (b_count * f3->sigma);
      for (std::size_t t = 0; t < steps; ++t) {
        const Tensor& eh = f3->eps_hh[t];
        const Tensor& ex = f3->eps_xh[t];
        const Tensor& hp = f3->h_prev[s][t];
        const Tensor& xt = f3->x_in[s][t];
        Tensor& whh_slot = slots[t];
        Tensor& wxh_slot = slots[steps + t];
        Tensor& bhh_slot = slots[2 * steps + t];
        Tensor& bxh_slot = slots[3 * steps + t];
        for (std::size_t i = 0; i < eh.size(); ++i) {
          const double e = c * eh[i];
          double* row = whh_slot.data() + i * hp.size();
          for (std::size_t j = 0; j < hp.size(); ++j) row[j] += e * hp[j];
          bhh_slot[i] += e;
        }
        for (std::size_t i = 0; i < ex.size(); ++i) {
          const double e = c * ex[i];
          double* row = wxh_slot.data() + i * xt.size();
          for (std::size_t j = 0; j < xt.size(); ++j) row[j] += e * xt[j];
          bxh_slot[i] += e;
        }
      }
    }
    if (sigma_out) {
      std::vector<const Tensor*> eps_list;
      for (const auto& e : f3->eps_hh) eps_list.push_back(&e);
      for (const auto& e : f3->eps_xh) eps_list.push_back(&e);
      add_sigma(f3->sigma, eps_list);
    }
  } else if (const auto* f4 = std::get_if<GcnFrag>(&frag)) {
    if (f4->mode == NoiseMode::weight) {
      const double c = wbar / f4->sigma;
      for (std::size_t i = 0; i < slots[0].size(); ++i) slots[0][i] += c * f4->eps_w[i];
      return;
    }
    if (f4->xhat.empty()) throw ContractError("gcn estimator: missing aggregated input");
    const double c = wbar / f4->sigma;  // graph batch: one loss
    const std::size_t nodes = f4->xhat.extent(0), din = f4->xhat.extent(1),
                      dout = f4->eps.extent(1);
    for (std::size_t v = 0; v < nodes; ++v)
      for (std::size_t i = 0; i < din; ++i) {
        const double xv = c * f4->xhat[f4->xhat.idx(v, i)];
        if (xv == 0.0) continue;
        double* row = slots[0].data() + i * dout;
        const double* erow = f4->eps.data() + v * dout;
        for (std::size_t j = 0; j < dout; ++j) row[j] += xv * erow[j];
      }
    add_sigma(f4->sigma, {&f4->eps});
  } else if (const auto* f5 = std::get_if<GatFrag>(&frag)) {
    if (f5->mode == NoiseMode::weight) {
      const double c = wbar / f5->sigma;
      for (std::size_t i = 0; i < slots[0].size(); ++i) slots[0][i] += c * f5->eps_w[i];
      for (std::size_t i = 0; i < slots[1].size(); ++i) slots[1][i] += c * f5->eps_a[i];
      return;
    }
    if (!graph) throw ContractError("gat estimator: graph data required");
    if (f5->h_in.empty() || f5->v.empty() || f5->eps_edge.empty())
      throw ContractError("gat estimator: missing edge noise records");
    const double c1 = wbar / f5->sigma;
    const double c2 = wbar / f5->sigma_attn;
    const std::size_t nodes = f5->h_in.extent(0), din = f5->h_in.extent(1),
                      dout = f5->eps_feat.extent(1);
    for (std::size_t v = 0; v < nodes; ++v)
      for (std::size_t i = 0; i < din; ++i) {
        const double hv = c1 * f5->h_in[f5->h_in.idx(v, i)];
        if (hv == 0.0) continue;
        double* row = slots[0].data() + i * dout;
        const double* erow = f5->eps_feat.data() + v * dout;
        for (std::size_t j = 0; j < dout; ++j) row[j] += hv * erow[j];
      }
    std::size_t pair = 0;
    for (std::size_t i = 0; i < nodes; ++i)
      for (int jn : graph->neighborhoods[i]) {
        const double e = c2 * f5->eps_edge[pair++];
        const double* vi = f5->v.data() + i * dout;
        const double* vj = f5->v.data() + static_cast<std::size_t>(jn) * dout;
        for (std::size_t k = 0; k < dout; ++k) {
          slots[1][k] += e * vi[k];
          slots[1][dout + k] += e * vj[k];
        }
      }
    if (pair != f5->eps_edge.size())
      throw ContractError("gat estimator: edge noise records do not match the graph");
    add_sigma(f5->sigma, {&f5->eps_feat});
  } else if (const auto* f6 = std::get_if<LifFrag>(&frag)) {
    if (f6->mode == NoiseMode::weight) {
      const double c = wbar / f6->sigma;
      for (std::size_t i = 0; i < slots[0].size(); ++i) slots[0][i] += c * f6->eps_w[i];
      return;
    }
    if (f6->x_in.size() != w.size())
      throw ContractError("lif estimator: recorded inputs do not match sample count");
    const std::size_t steps = f6->eps.size();
    for (std::size_t s = 0; s < w.size(); ++s) {
      if (f6->x_in[s].size() != steps)
        throw ContractError("lif estimator: step-count mismatch across fragments");
      const double c = w[s] / (b_count * f6->sigma);
      for (std::size_t t = 0; t < steps; ++t) {
        const Tensor& et = f6->eps[t];
        const Tensor& xt = f6->x_in[s][t];
        Tensor& slot = slots[t];
        for (std::size_t i = 0; i < et.size(); ++i) {
          const double e = c * et[i];
          double* row = slot.data() + i * xt.size();
          for (std::size_t j = 0; j < xt.size(); ++j) row[j] += e * xt[j];
        }
      }
    }
    if (sigma_out) {
      std::vector<const Tensor*> eps_list;
      for (const auto& e : f6->eps) eps_list.push_back(&e);
      add_sigma(f6->sigma, eps_list);
    }
  }
}

void clear_records(ForwardTrace& trace) {
  trace.losses.clear();
  for (auto& of : trace.frags) {
    if (!of) continue;
    std::visit(
        [](auto& f) {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, DenseFrag> || std::is_same_v<T, ConvFrag>) {
            f.inputs.clear();
          } else if constexpr (std::is_same_v<T, RnnFrag>) {
            f.h_prev.clear();
            f.x_in.clear();
          } else if constexpr (std::is_same_v<T, LifFrag>) {
            f.x_in.clear();
          }
          // graph fragments are overwritten wholesale on the next forward
        },
        *of);
  }
}

// Streaming moment accumulator for one layer block.
// Slot sums feed the means; squares are tracked on the per-unit parameter
// totals (the statistical unit is one copy, or one antithetic pair).
struct Accum {
  SlotLayout layout;  // concatenated layouts of the block's layers
  std::vector<Tensor> sum_g;                  // per slot
  std::vector<Tensor> sq_g;                   // per param
  std::vector<Tensor> sum_h, sq_h, cross_gh;  // baseline variant, per slot / param
  double s_sum_g = 0, s_sq_g = 0, s_sum_h = 0, s_sq_h = 0, s_cross = 0;
  double loss_sum = 0;
  std::size_t units = 0;
  bool with_h = false;
  bool with_sigma = false;

  void init(const SlotLayout& lay, bool baseline, bool sigma) {
    layout = lay;
    with_h = baseline;
    with_sigma = sigma;
    for (const auto& shape : lay.shapes) {
      sum_g.emplace_back(shape);
      if (baseline) sum_h.emplace_back(shape);
    }
    for (std::size_t p = 0; p < lay.param_first.size(); ++p) {
      sq_g.emplace_back(lay.shapes[lay.param_first[p]]);
      if (baseline) {
        sq_h.emplace_back(lay.shapes[lay.param_first[p]]);
        cross_gh.emplace_back(lay.shapes[lay.param_first[p]]);
      }
    }
  }

  // ug/uh: per-slot unit contributions.
  void fold_unit(const std::vector<Tensor>& ug, const std::vector<Tensor>& uh, double sg,
                 double sh, double unit_loss) {
    for (std::size_t s = 0; s < sum_g.size(); ++s) {
      sum_g[s] += ug[s];
      if (with_h) sum_h[s] += uh[s];
    }
    for (std::size_t p = 0; p < layout.param_first.size(); ++p) {
      const std::size_t first = layout.param_first[p], steps = layout.param_steps[p];
      for (std::size_t i = 0; i < sq_g[p].size(); ++i) {
        double g = 0, h = 0;
        for (std::size_t t = 0; t < steps; ++t) {
          g += ug[first + t][i];
          if (with_h) h += uh[first + t][i];
        }
        sq_g[p][i] += g * g;
        if (with_h) {
          sq_h[p][i] += h * h;
          cross_gh[p][i] += g * h;
        }
      }
    }
    s_sum_g += sg;
    s_sq_g += sg * sg;
    if (with_h) {
      s_sum_h += sh;
      s_sq_h += sh * sh;
      s_cross += sg * sh;
    }
    loss_sum += unit_loss;
    ++units;
  }

  void merge(const Accum& o) {
    if (o.units == 0) return;
    if (units == 0) {
      *this = o;
      return;
    }
    for (std::size_t s = 0; s < sum_g.size(); ++s) {
      sum_g[s] += o.sum_g[s];
      if (with_h) sum_h[s] += o.sum_h[s];
    }
    for (std::size_t p = 0; p < sq_g.size(); ++p) {
      sq_g[p] += o.sq_g[p];
      if (with_h) {
        sq_h[p] += o.sq_h[p];
        cross_gh[p] += o.cross_gh[p];
      }
    }
    s_sum_g += o.s_sum_g;
    s_sq_g += o.s_sq_g;
    s_sum_h += o.s_sum_h;
    s_sq_h += o.s_sq_h;
    s_cross += o.s_cross;
    loss_sum += o.loss_sum;
    units += o.units;
  }

  // b is the baseline value (0 when off). The gradient is the sum over step
  // slots of the per-slot means, so the per-step estimates sum exactly.
  void finalize(double b, LayerGradEstimate& out) const {
    const double n = static_cast<double>(units);
    for (std::size_t p = 0; p < layout.param_first.size(); ++p) {
      const std::size_t first = layout.param_first[p], steps = layout.param_steps[p];
      ParamGrad pg;
      pg.grad = Tensor(layout.shapes[first]);
      pg.se = Tensor(layout.shapes[first]);
      for (std::size_t i = 0; i < pg.grad.size(); ++i) {
        double mean = 0;
        for (std::size_t t = 0; t < steps; ++t) {
          const double mg = sum_g[first + t][i] / n;
          const double mh = with_h ? sum_h[first + t][i] / n : 0.0;
          mean += mg - b * mh;
        }
        double second = sq_g[p][i];
        if (with_h) second += -2.0 * b * cross_gh[p][i] + b * b * sq_h[p][i];
        const double var = std::max(0.0, second / n - mean * mean);
        pg.grad[i] = mean;
        pg.se[i] = units > 1 ? std::sqrt(var / n) : 0.0;
      }
      out.params.push_back(std::move(pg));
    }
    if (with_sigma) {
      const double mg = s_sum_g / n;
      const double mh = with_h ? s_sum_h / n : 0.0;
      const double mean = mg - b * mh;
      double second = s_sq_g;
      if (with_h) second += -2.0 * b * s_cross + b * b * s_sq_h;
      const double var = std::max(0.0, second / n - mean * mean);
      out.has_sigma_grad = true;
      out.sigma_grad = mean;
      out.sigma_se = units > 1 ? std::sqrt(var / n) : 0.0;
    }
  }
};

std::vector<double> ones_like(const std::vector<double>& v) {
  return std::vector<double>(v.size(), 1.0);
}

void zero_all(std::vector<Tensor>& ts) {
  for (auto& t : ts)
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0;
}

// adds per-copy scratch into the unit buffers; antithetic twins then cancel
// bit for bit for estimators odd in the noise
void add_into(std::vector<Tensor>& unit, const std::vector<Tensor>& copy_scratch) {
  for (std::size_t s = 0; s < unit.size(); ++s) unit[s] += copy_scratch[s];
}

}  // namespace

NoiseMode EstimatorConfig::mode_of(std::size_t layer) const {
  if (modes.empty()) return NoiseMode::logit;
  return modes[layer];
}

LayerNoise EstimatorConfig::layer_noise(std::size_t layer) const {
  LayerNoise n;
  n.mode = mode_of(layer);
  const double fallback = n.mode == NoiseMode::weight ? sigma_weight : sigma_logit;
  n.sigma = (layer < sigma_override.size() && sigma_override[layer] > 0)
                ? sigma_override[layer]
                : fallback;
  n.sigma_attn = sigma_attn;
  n.trainable_sigma = trainable_sigma;
  return n;
}

void EstimatorConfig::validate(std::size_t n_layers) const {
  if (copies < 1) throw ConfigError("estimator: copies must be >= 1");
  if (antithetic && copies % 2 != 0)
    throw ConfigError("estimator: antithetic variates require an even copy count");
  if (!modes.empty() && modes.size() != n_layers)
    throw ConfigError("estimator: per-layer mode map does not match network depth");
  if (!sigma_override.empty() && sigma_override.size() != n_layers)
    throw ConfigError("estimator: sigma override list does not match network depth");
  if (!(sigma_logit > 0) || !(sigma_weight > 0) || !(sigma_attn > 0))
    throw ConfigError("estimator: noise magnitudes must be positive");
}

GradEstimate estimate_gradient(const Network& net, const Batch& batch,
                               const EstimatorConfig& config, RngStream& stream) {
  std::vector<std::size_t> all(net.num_layers());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return estimate_gradient(net, batch, config, stream, all);
}

GradEstimate estimate_gradient(const Network& net, const Batch& batch,
                               const EstimatorConfig& config, RngStream& stream,
                               const std::vector<std::size_t>& layer_subset) {
  config.validate(net.num_layers());
  if (batch.size() == 0) throw ContractError("estimate_gradient: empty batch");
  const GraphData* graph = batch.graph;

  auto views = net.param_views();

  GradEstimate result;
  result.layers.resize(net.num_layers());
  for (std::size_t l = 0; l < net.num_layers(); ++l)
    for (const Tensor* p : views[l]) {
      ParamGrad pg;
      pg.grad = Tensor(p->shape());
      pg.se = Tensor(p->shape());
      result.layers[l].params.push_back(std::move(pg));
    }

  // Layer blocks: one perturbed layer per block, or all at once.
  std::vector<std::vector<std::size_t>> blocks;
  if (config.injection == Injection::layerwise) {
    for (std::size_t l : layer_subset)
      if (config.mode_of(l) != NoiseMode::off) blocks.push_back({l});
  } else {
    std::vector<std::size_t> joint;
    for (std::size_t l : layer_subset)
      if (config.mode_of(l) != NoiseMode::off) joint.push_back(l);
    if (!joint.empty()) blocks.push_back(std::move(joint));
  }

  const std::size_t per_unit = config.antithetic ? 2 : 1;
  const std::size_t n_units = std::max<std::size_t>(1, config.copies / per_unit);

  for (std::size_t b_idx = 0; b_idx < blocks.size(); ++b_idx) {
    const auto& block = blocks[b_idx];
    NoisePlan plan = NoisePlan::all_off(net.num_layers());
    for (std::size_t l : block) plan.layers[l] = config.layer_noise(l);

    // concatenated slot layout over the block's layers
    SlotLayout block_layout;
    std::vector<std::size_t> layer_slot_first;
    for (std::size_t l : block) {
      layer_slot_first.push_back(block_layout.shapes.size());
      const SlotLayout ll = layout_for(net.layers[l], plan.layers[l].mode, graph);
      for (std::size_t p = 0; p < ll.param_first.size(); ++p) {
        block_layout.param_first.push_back(block_layout.shapes.size() + ll.param_first[p] -
                                           ll.param_first[0]);
        block_layout.param_steps.push_back(ll.param_steps[p]);
      }
      for (const auto& sh : ll.shapes) block_layout.shapes.push_back(sh);
    }

    RngStream block_stream = stream.split(0xB10C0000ULL + b_idx);
    Tensor qmc_points;
    std::size_t noise_dim = 0;
    if (config.qmc) {
      noise_dim = plan_noise_dim(net, plan, graph);
      qmc_points = sobol_points(noise_dim, n_units, block_stream.stream_id());
    }

    const bool want_sigma = config.trainable_sigma;
    const bool baseline = config.baseline == BaselineKind::batch_mean;

    std::vector<Accum> chunk_acc(kReductionChunks);
    parallel_chunks(n_units, kReductionChunks, [&](std::size_t chunk, std::size_t begin,
                                                   std::size_t end) {
      Accum& acc = chunk_acc[chunk];
      acc.init(block_layout, baseline, want_sigma);
      std::vector<Tensor> ug, uh, scratch;
      for (const auto& sh : block_layout.shapes) {
        ug.emplace_back(sh);
        scratch.emplace_back(sh);
        if (baseline) uh.emplace_back(sh);
      }
      std::vector<double> gauss;
      for (std::size_t u = begin; u < end; ++u) {
        zero_all(ug);
        zero_all(uh);
        double usg = 0, ush = 0, uloss = 0;

        ForwardTrace trace;
        if (config.qmc) {
          gauss.resize(noise_dim);
          const double* row = qmc_points.data() + u * noise_dim;
          for (std::size_t e = 0; e < noise_dim; ++e) {
            double uv = row[e];
            if (uv <= 0.0) uv = 0x1p-53;  // scrambled point may hit 0
            gauss[e] = gaussian_from_uniform(uv);
          }
          trace = fill_noise(net, plan, gauss.data(), noise_dim, graph);
        } else {
          RngStream us = block_stream.split(u);
          trace = draw_noise(net, plan, us, graph);
        }

        for (std::size_t rep = 0; rep < per_unit; ++rep) {
          if (rep == 1) {
            negate_trace_noise(trace);
            clear_records(trace);
          }
          run_forward(net, batch, trace);
          zero_all(scratch);
          double csg = 0, csh = 0;
          for (std::size_t li = 0; li < block.size(); ++li) {
            const std::size_t l = block[li];
            const bool logit_layer = plan.layers[l].mode == NoiseMode::logit;
            add_copy_contribution(*trace.frags[l], trace.losses, graph,
                                  scratch.data() + layer_slot_first[li],
                                  want_sigma && logit_layer ? &csg : nullptr);
          }
          add_into(ug, scratch);
          usg += csg;
          if (baseline) {
            zero_all(scratch);
            for (std::size_t li = 0; li < block.size(); ++li) {
              const std::size_t l = block[li];
              const bool logit_layer = plan.layers[l].mode == NoiseMode::logit;
              add_copy_contribution(*trace.frags[l], ones_like(trace.losses), graph,
                                    scratch.data() + layer_slot_first[li],
                                    want_sigma && logit_layer ? &csh : nullptr);
            }
            add_into(uh, scratch);
            ush += csh;
          }
          uloss += mean_of(trace.losses);
        }
        if (per_unit == 2) {
          for (auto& t : ug) t *= 0.5;
          for (auto& t : uh) t *= 0.5;
          usg *= 0.5;
          ush *= 0.5;
          uloss *= 0.5;
        }
        acc.fold_unit(ug, uh, usg, ush, uloss);
      }
    });

    Accum total;
    for (const auto& acc : chunk_acc) total.merge(acc);
    const double b = baseline && total.units > 0
                         ? total.loss_sum / static_cast<double>(total.units)
                         : 0.0;
    LayerGradEstimate block_est;
    total.finalize(b, block_est);

    std::size_t poff = 0;
    for (std::size_t l : block) {
      const std::size_t np = views[l].size();
      LayerGradEstimate& dst = result.layers[l];
      for (std::size_t p = 0; p < np; ++p) dst.params[p] = std::move(block_est.params[poff + p]);
      if (want_sigma && plan.layers[l].mode == NoiseMode::logit &&
          config.injection == Injection::layerwise) {
        dst.has_sigma_grad = block_est.has_sigma_grad;
        dst.sigma_grad = block_est.sigma_grad;
        dst.sigma_se = block_est.sigma_se;
      }
      poff += np;
    }
    result.copies_used += n_units * per_unit;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Trace-based per-layer estimators (test and validation surface)

namespace {

template <typename FragT>
const FragT& checked_frag(const ForwardTrace& t, std::size_t layer, NoiseMode* mode,
                          double* sigma) {
  if (layer >= t.frags.size() || !t.frags[layer])
    throw ContractError("per-layer estimator: trace has no fragment for the layer");
  const auto* f = std::get_if<FragT>(&*t.frags[layer]);
  if (!f) throw ContractError("per-layer estimator: fragment type does not match the layer");
  if (*mode == NoiseMode::off) {
    *mode = f->mode;
    *sigma = f->sigma;
  } else {
    if (f->mode != *mode)
      throw ContractError("per-layer estimator: mixed noise modes across copies");
    if (f->sigma != *sigma)
      throw ContractError("per-layer estimator: sigma differs across copies");
  }
  return *f;
}

template <typename FragT>
LayerGradEstimate estimate_from_traces(const Network& net, std::size_t layer,
                                       const std::vector<ForwardTrace>& copies, bool antithetic,
                                       const GraphData* graph, NoiseMode required,
                                       bool want_sigma) {
  if (copies.empty()) throw ContractError("per-layer estimator: no copies");
  if (antithetic && copies.size() % 2 != 0)
    throw ContractError("per-layer estimator: antithetic pairing needs an even copy count");

  NoiseMode mode = NoiseMode::off;
  double sigma = 0;
  for (const auto& t : copies) checked_frag<FragT>(t, layer, &mode, &sigma);
  if (required != NoiseMode::off && mode != required)
    throw ContractError("per-layer estimator: fragments are not in the required noise mode");

  const SlotLayout layout = layout_for(net.layers[layer], mode, graph);
  Accum acc;
  acc.init(layout, false, want_sigma);
  std::vector<Tensor> ug, scratch;
  for (const auto& sh : layout.shapes) {
    ug.emplace_back(sh);
    scratch.emplace_back(sh);
  }

  const std::size_t per_unit = antithetic ? 2 : 1;
  const std::size_t n_units = copies.size() / per_unit;
  const std::size_t half = copies.size() / 2;
  for (std::size_t u = 0; u < n_units; ++u) {
    zero_all(ug);
    double usg = 0, uloss = 0;
    for (std::size_t rep = 0; rep < per_unit; ++rep) {
      const ForwardTrace& t = copies[rep == 0 ? u : half + u];
      zero_all(scratch);
      double csg = 0;
      add_copy_contribution(*t.frags[layer], t.losses, graph, scratch.data(),
                            want_sigma ? &csg : nullptr);
      add_into(ug, scratch);
      usg += csg;
      uloss += t.mean_loss();
    }
    if (per_unit == 2) {
      for (auto& t : ug) t *= 0.5;
      usg *= 0.5;
      uloss *= 0.5;
    }
    acc.fold_unit(ug, {}, usg, 0, uloss);
  }
  LayerGradEstimate out;
  acc.finalize(0.0, out);
  return out;
}

}  // namespace

LayerGradEstimate lr_dense_grad(const Network& net, std::size_t layer,
                                const std::vector<ForwardTrace>& copies, bool antithetic) {
  return estimate_from_traces<DenseFrag>(net, layer, copies, antithetic, nullptr,
                                         NoiseMode::logit, false);
}

LayerGradEstimate lr_conv_grad(const Network& net, std::size_t layer,
                               const std::vector<ForwardTrace>& copies, bool antithetic) {
  return estimate_from_traces<ConvFrag>(net, layer, copies, antithetic, nullptr,
                                        NoiseMode::logit, false);
}

LayerGradEstimate lr_recurrent_grad(const Network& net, std::size_t layer,
                                    const std::vector<ForwardTrace>& copies, bool antithetic) {
  if (std::holds_alternative<LifLayer>(net.layers[layer]))
    return estimate_from_traces<LifFrag>(net, layer, copies, antithetic, nullptr,
                                         NoiseMode::logit, false);
  return estimate_from_traces<RnnFrag>(net, layer, copies, antithetic, nullptr,
                                       NoiseMode::logit, false);
}

LayerGradEstimate lr_gcn_grad(const Network& net, std::size_t layer,
                              const std::vector<ForwardTrace>& copies, bool antithetic) {
  return estimate_from_traces<GcnFrag>(net, layer, copies, antithetic, nullptr,
                                       NoiseMode::logit, false);
}

LayerGradEstimate lr_gat_grad(const Network& net, std::size_t layer,
                              const std::vector<ForwardTrace>& copies, const GraphData& graph,
                              bool antithetic) {
  return estimate_from_traces<GatFrag>(net, layer, copies, antithetic, &graph, NoiseMode::logit,
                                       false);
}

LayerGradEstimate lr_weight_perturb_grad(const Network& net, std::size_t layer,
                                         const std::vector<ForwardTrace>& copies,
                                         bool antithetic) {
  return std::visit(
      [&](const auto& l) -> LayerGradEstimate {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>)
          return estimate_from_traces<DenseFrag>(net, layer, copies, antithetic, nullptr,
                                                 NoiseMode::weight, false);
        else if constexpr (std::is_same_v<T, Conv2DLayer>)
          return estimate_from_traces<ConvFrag>(net, layer, copies, antithetic, nullptr,
                                                NoiseMode::weight, false);
        else if constexpr (std::is_same_v<T, RnnCellLayer>)
          return estimate_from_traces<RnnFrag>(net, layer, copies, antithetic, nullptr,
                                               NoiseMode::weight, false);
        else if constexpr (std::is_same_v<T, GcnLayer>)
          return estimate_from_traces<GcnFrag>(net, layer, copies, antithetic, nullptr,
                                               NoiseMode::weight, false);
        else if constexpr (std::is_same_v<T, GatLayer>)
          return estimate_from_traces<GatFrag>(net, layer, copies, antithetic, nullptr,
                                               NoiseMode::weight, false);
        else
          return estimate_from_traces<LifFrag>(net, layer, copies, antithetic, nullptr,
                                               NoiseMode::weight, false);
      },
      net.layers[layer]);
}

std::pair<double, double> lr_sigma_grad(const Network& net, std::size_t layer,
                                        const std::vector<ForwardTrace>& copies, bool antithetic,
                                        const GraphData* graph) {
  LayerGradEstimate est = std::visit(
      [&](const auto& l) -> LayerGradEstimate {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, DenseLayer>)
          return estimate_from_traces<DenseFrag>(net, layer, copies, antithetic, nullptr,
                                                 NoiseMode::logit, true);
        else if constexpr (std::is_same_v<T, Conv2DLayer>)
          return estimate_from_traces<ConvFrag>(net, layer, copies, antithetic, nullptr,
                                                NoiseMode::logit, true);
        else if constexpr (std::is_same_v<T, RnnCellLayer>)
          return estimate_from_traces<RnnFrag>(net, layer, copies, antithetic, nullptr,
                                               NoiseMode::logit, true);
        else if constexpr (std::is_same_v<T, GcnLayer>)
          return estimate_from_traces<GcnFrag>(net, layer, copies, antithetic, nullptr,
                                               NoiseMode::logit, true);
        else if constexpr (std::is_same_v<T, GatLayer>)
          return estimate_from_traces<GatFrag>(net, layer, copies, antithetic, graph,
                                               NoiseMode::logit, true);
        else
          return estimate_from_traces<LifFrag>(net, layer, copies, antithetic, nullptr,
                                               NoiseMode::logit, true);
      },
      net.layers[layer]);
  return {est.sigma_grad, est.sigma_se};
}

}  // namespace lrnet
