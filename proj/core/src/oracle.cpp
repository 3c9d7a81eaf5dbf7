#include "lrnet/oracle.hpp"

#include <cmath>

#include "lrnet/errors.hpp"

namespace lrnet {

// small helper shared by the graph adjoints
Tensor transpose_2d(const Tensor& m) {
  Tensor t({m.extent(1), m.extent(0)});
  for (std::size_t i = 0; i < m.extent(0); ++i)
    for (std::size_t j = 0; j < m.extent(1); ++j) t.at(j, i) = m.at(i, j);
  return t;
}

namespace {

Tensor last_row(const Tensor& m) {
  const std::size_t cols = m.extent(1);
  return Tensor({cols}, std::vector<double>(m.data() + (m.extent(0) - 1) * cols,
                                            m.data() + m.size()));
}

double lif_surrogate(double u, double v_th) {
  return std::fabs(u - v_th) < kLifSurrogateHalfWidth ? 1.0 / (2.0 * kLifSurrogateHalfWidth)
                                                      : 0.0;
}

// --- per-layer adjoints ----------------------------------------------------

void dense_backward(const DenseLayer& l, const DenseCache& cache, const Tensor& dout,
                    Tensor& dw, Tensor& db, Tensor& dx) {
  dx = Tensor({l.in});
  for (std::size_t i = 0; i < l.out; ++i) {
    const double dv = dout[i] * activate_grad(l.act, cache.v[i]);
    db[i] += dv;
    double* wrow_grad = dw.data() + i * l.in;
    const double* wrow = l.w.data() + i * l.in;
    for (std::size_t j = 0; j < l.in; ++j) {
      wrow_grad[j] += dv * cache.x[j];
      dx[j] += wrow[j] * dv;
    }
  }
}

void conv_backward(const Conv2DLayer& l, const ConvCache& cache, const Tensor& dpost,
                   Tensor& dw, Tensor& db, Tensor& dx) {
  const std::size_t ho = l.h_out(), wo = l.w_out();
  dx = Tensor({l.c_in, l.h_in, l.w_in});
  for (std::size_t o = 0; o < l.c_out; ++o)
    for (std::size_t j = 0; j < ho; ++j)
      for (std::size_t k = 0; k < wo; ++k) {
        const double dv =
            dpost[dpost.idx(o, j, k)] * activate_grad(l.act, cache.v[cache.v.idx(o, j, k)]);
        if (dv == 0.0) continue;
        db[o] += dv;
        for (std::size_t i = 0; i < l.c_in; ++i)
          for (std::size_t a = 0; a < l.kh; ++a)
            for (std::size_t b2 = 0; b2 < l.kw; ++b2) {
              dw[dw.idx(o, i, a, b2)] += dv * cache.x[cache.x.idx(i, j + a, k + b2)];
              dx[dx.idx(i, j + a, k + b2)] += dv * l.w[l.w.idx(o, i, a, b2)];
            }
      }
}

// BPTT for the shared-structure cell; dh_seq carries the external gradient
// arriving at every step's hidden state (T x d_h).
void rnn_backward(const RnnCellLayer& l, const RnnCache& cache, const Tensor& dh_seq,
                  Tensor& dw_hh, Tensor& dw_xh, Tensor& db_hh, Tensor& db_xh, Tensor& dx_seq) {
  const std::size_t T = l.steps, dh_n = l.d_h, dx_n = l.d_x;
  dx_seq = Tensor({T, dx_n});
  Tensor dh({dh_n}), dc({dh_n});

  auto sigm = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t i = 0; i < dh_n; ++i) dh[i] += dh_seq[dh_seq.idx(t, i)];
    const Tensor& u = cache.u[t];
    const Tensor& v = cache.v[t];
    Tensor h_prev({dh_n}), c_prev({dh_n});
    if (t > 0)
      for (std::size_t i = 0; i < dh_n; ++i) {
        h_prev[i] = cache.h[cache.h.idx(t - 1, i)];
        c_prev[i] = cache.c[cache.c.idx(t - 1, i)];
      }

    const std::size_t gd = l.gates() * dh_n;
    Tensor du({gd}), dvl({gd});
    Tensor dh_prev({dh_n}), dc_prev({dh_n});

    switch (l.kind) {
      case RnnKind::vanilla:
        for (std::size_t i = 0; i < dh_n; ++i) {
          const double a = u[i] + v[i];
          const double th = std::tanh(a);
          const double da = dh[i] * (1.0 - th * th);
          du[i] = da;
          dvl[i] = da;
        }
        break;
      case RnnKind::gru:
        for (std::size_t i = 0; i < dh_n; ++i) {
          const double r = sigm(u[i] + v[i]);
          const double z = sigm(u[dh_n + i] + v[dh_n + i]);
          const double n = std::tanh(v[2 * dh_n + i] + r * u[2 * dh_n + i]);
          const double dz = dh[i] * (h_prev[i] - n);
          const double dn = dh[i] * (1.0 - z);
          dh_prev[i] += dh[i] * z;
          const double dn_pre = dn * (1.0 - n * n);
          const double dvn = dn_pre;
          const double dun = dn_pre * r;
          const double dr = dn_pre * u[2 * dh_n + i];
          const double dr_pre = dr * r * (1.0 - r);
          const double dz_pre = dz * z * (1.0 - z);
          du[i] = dr_pre;
          dvl[i] = dr_pre;
          du[dh_n + i] = dz_pre;
          dvl[dh_n + i] = dz_pre;
          du[2 * dh_n + i] = dun;
          dvl[2 * dh_n + i] = dvn;
        }
        break;
      case RnnKind::lstm:
        for (std::size_t i = 0; i < dh_n; ++i) {
          const double ig = sigm(u[i] + v[i]);
          const double fg = sigm(u[dh_n + i] + v[dh_n + i]);
          const double gg = std::tanh(u[2 * dh_n + i] + v[2 * dh_n + i]);
          const double og = sigm(u[3 * dh_n + i] + v[3 * dh_n + i]);
          const double c_t = cache.c[cache.c.idx(t, i)];
          const double tc = std::tanh(c_t);
          const double dog = dh[i] * tc;
          double dct = dc[i] + dh[i] * og * (1.0 - tc * tc);
          const double dig = dct * gg;
          const double dfg = dct * c_prev[i];
          const double dgg = dct * ig;
          dc_prev[i] = dct * fg;
          const double di_pre = dig * ig * (1.0 - ig);
          const double df_pre = dfg * fg * (1.0 - fg);
          const double dg_pre = dgg * (1.0 - gg * gg);
          const double do_pre = dog * og * (1.0 - og);
          du[i] = di_pre;
          dvl[i] = di_pre;
          du[dh_n + i] = df_pre;
          dvl[dh_n + i] = df_pre;
          du[2 * dh_n + i] = dg_pre;
          dvl[2 * dh_n + i] = dg_pre;
          du[3 * dh_n + i] = do_pre;
          dvl[3 * dh_n + i] = do_pre;
        }
        break;
    }

    for (std::size_t i = 0; i < gd; ++i) {
      db_hh[i] += du[i];
      db_xh[i] += dvl[i];
      double* whh_row = dw_hh.data() + i * dh_n;
      const double* whh = l.w_hh.data() + i * dh_n;
      for (std::size_t j = 0; j < dh_n; ++j) {
        whh_row[j] += du[i] * h_prev[j];
        dh_prev[j] += whh[j] * du[i];
      }
      double* wxh_row = dw_xh.data() + i * dx_n;
      const double* wxh = l.w_xh.data() + i * dx_n;
      for (std::size_t j = 0; j < dx_n; ++j) {
        wxh_row[j] += dvl[i] * cache.x_seq[cache.x_seq.idx(t, j)];
        dx_seq[dx_seq.idx(t, j)] += wxh[j] * dvl[i];
      }
    }
    dh = std::move(dh_prev);
    dc = std::move(dc_prev);
  }
}

void gcn_backward(const GcnLayer& l, const GraphData& g, const GcnCache& cache,
                  const Tensor& dout, Tensor& dw, Tensor& dh) {
  const std::size_t nodes = g.num_nodes();
  Tensor dv({nodes, l.out});
  for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = dout[i] * activate_grad(l.act, cache.v[i]);
  dw += matmul_at_b(cache.xhat, dv);               // xhat^T dv
  const Tensor dxhat = matmul(dv, transpose_2d(l.w));  // defined below
  dh = matmul(g.norm_adj, dxhat);                  // normalized adjacency is symmetric
}

void gat_backward(const GatLayer& l, const GraphData& g, const GatCache& cache,
                  const Tensor& dout, Tensor& dw, Tensor& da, Tensor& dh) {
  const std::size_t nodes = g.num_nodes(), out = l.out;
  Tensor dagg({nodes, out});
  for (std::size_t i = 0; i < dagg.size(); ++i)
    dagg[i] = dout[i] * activate_grad(l.act, cache.agg[i]);

  Tensor dv({nodes, out});
  std::size_t pair = 0;
  for (std::size_t i = 0; i < nodes; ++i) {
    const auto& nb = g.neighborhoods[i];
    std::vector<double> dalpha(nb.size());
    for (std::size_t q = 0; q < nb.size(); ++q) {
      const std::size_t src =
          l.aggregate_self ? i : static_cast<std::size_t>(nb[q]);
      double s = 0;
      for (std::size_t k = 0; k < out; ++k) {
        s += dagg[dagg.idx(i, k)] * cache.v[cache.v.idx(src, k)];
        dv[dv.idx(src, k)] += cache.alpha[pair + q] * dagg[dagg.idx(i, k)];
      }
      dalpha[q] = s;
    }
    double inner = 0;
    for (std::size_t q = 0; q < nb.size(); ++q) inner += cache.alpha[pair + q] * dalpha[q];
    for (std::size_t q = 0; q < nb.size(); ++q) {
      const double de = cache.alpha[pair + q] * (dalpha[q] - inner);
      const double u_ij = cache.att_logit[pair + q];
      const double du = de * (u_ij > 0 ? 1.0 : l.leaky_slope);
      const std::size_t j = static_cast<std::size_t>(nb[q]);
      for (std::size_t k = 0; k < out; ++k) {
        da[k] += du * cache.v[cache.v.idx(i, k)];
        da[out + k] += du * cache.v[cache.v.idx(j, k)];
        dv[dv.idx(i, k)] += du * l.a[k];
        dv[dv.idx(j, k)] += du * l.a[out + k];
      }
    }
    pair += nb.size();
  }

  dw += matmul_at_b(cache.h_in, dv);
  dh = matmul(dv, transpose_2d(l.w));
}

}  // namespace

namespace {

// Reverse pass through a LIF chain with the rectangular surrogate.
void lif_chain_backward(const std::vector<const LifLayer*>& chain,
                        const std::vector<LifCache>& caches, const Tensor& dspike_last,
                        std::vector<Tensor*> dws, Tensor& dx_seq) {
  const std::size_t L = chain.size();
  const std::size_t T = chain[0]->steps;
  dx_seq = Tensor({T, chain[0]->in});

  // dspike[l][t], du_carry[l][t] (leak carries arriving from step t+1)
  std::vector<std::vector<Tensor>> dspike(L), du_carry(L);
  for (std::size_t l = 0; l < L; ++l) {
    dspike[l].assign(T, Tensor({chain[l]->out}));
    du_carry[l].assign(T, Tensor({chain[l]->out}));
  }
  dspike[L - 1][T - 1] = dspike_last;

  for (std::size_t t = T; t-- > 0;) {
    for (std::size_t l = L; l-- > 0;) {
      const LifLayer& ly = *chain[l];
      Tensor du({ly.out});
      for (std::size_t i = 0; i < ly.out; ++i)
        du[i] = dspike[l][t][i] * lif_surrogate(caches[l].u[t][i], ly.v_th) + du_carry[l][t][i];

      // parameter and input adjoints of u_t = leak*u_{t-1}*(1-x_{t-1}) + w*x_in
      const Tensor& xin = caches[l].x_in[t];
      for (std::size_t i = 0; i < ly.out; ++i) {
        if (du[i] == 0.0) continue;
        double* wrow = dws[l]->data() + i * ly.in;
        for (std::size_t j = 0; j < ly.in; ++j) wrow[j] += du[i] * xin[j];
      }
      if (l > 0) {
        for (std::size_t j = 0; j < ly.in; ++j) {
          double s = 0;
          for (std::size_t i = 0; i < ly.out; ++i) s += ly.w[ly.w.idx(i, j)] * du[i];
          dspike[l - 1][t][j] += s;
        }
      } else {
        for (std::size_t j = 0; j < ly.in; ++j) {
          double s = 0;
          for (std::size_t i = 0; i < ly.out; ++i) s += ly.w[ly.w.idx(i, j)] * du[i];
          dx_seq[dx_seq.idx(t, j)] += s;
        }
      }
      if (t > 0) {
        for (std::size_t i = 0; i < ly.out; ++i) {
          du_carry[l][t - 1][i] += du[i] * ly.leak * (1.0 - caches[l].spikes[t - 1][i]);
          dspike[l][t - 1][i] += du[i] * (-ly.leak * caches[l].u[t - 1][i]);
        }
      }
    }
  }
}

struct SampleCaches {
  std::vector<DenseCache> dense;
  std::vector<ConvCache> conv;
  std::vector<RnnCache> rnn;
  std::vector<GcnCache> gcn;
  std::vector<GatCache> gat;
  std::vector<LifCache> lif;
};

}  // namespace

Gradients bp_grad(const Network& net, const Batch& batch) {
  auto views = net.param_views();
  Gradients out;
  out.layers.resize(net.num_layers());
  for (std::size_t l = 0; l < net.num_layers(); ++l)
    for (const Tensor* p : views[l]) out.layers[l].emplace_back(p->shape());

  if (net.kind == NetKind::graph) {
    if (!batch.graph) throw ContractError("bp_grad: graph network requires graph batch");
    const GraphData& g = *batch.graph;
    const auto& mask = batch.graph_mask ? *batch.graph_mask : g.train_mask;

    // forward with caches
    std::vector<GcnCache> gcn_caches(net.num_layers());
    std::vector<GatCache> gat_caches(net.num_layers());
    Tensor h = g.features;
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
      if (const auto* gc = std::get_if<GcnLayer>(&net.layers[i]))
        h = gcn_forward(*gc, g, h, nullptr, &gcn_caches[i]);
      else if (const auto* ga = std::get_if<GatLayer>(&net.layers[i]))
        h = gat_forward(*ga, g, h, nullptr, &gat_caches[i]);
      else
        throw ContractError("bp_grad: graph network supports GCN/GAT layers only");
    }

    const std::size_t classes = h.extent(1);
    std::size_t n_mask = 0;
    for (auto m : mask) n_mask += m ? 1 : 0;
    if (n_mask == 0) throw ContractError("bp_grad: empty node mask");
    Tensor dlogits({g.num_nodes(), classes});
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
      if (!mask[v]) continue;
      Tensor row({classes}, std::vector<double>(h.data() + v * classes,
                                                 h.data() + (v + 1) * classes));
      Tensor dr = head_loss_grad(net.loss, row, g.labels[v], nullptr);
      for (std::size_t c = 0; c < classes; ++c)
        dlogits[dlogits.idx(v, c)] = dr[c] / static_cast<double>(n_mask);
    }

    Tensor dcur = dlogits;
    for (std::size_t i = net.num_layers(); i-- > 0;) {
      Tensor dh_in;
      if (const auto* gc = std::get_if<GcnLayer>(&net.layers[i]))
        gcn_backward(*gc, g, gcn_caches[i], dcur, out.layers[i][0], dh_in);
      else {
        const auto* ga = std::get_if<GatLayer>(&net.layers[i]);
        gat_backward(*ga, g, gat_caches[i], dcur, out.layers[i][0], out.layers[i][1], dh_in);
      }
      dcur = std::move(dh_in);
    }
    out.inputs.push_back(std::move(dcur));
    return out;
  }

  if (batch.inputs.empty()) throw ContractError("bp_grad: empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.inputs.size());

  for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
    const Tensor& input = batch.inputs[s];
    const int label = batch.labels.empty() ? 0 : batch.labels[s];
    const Tensor* target =
        (s < batch.targets.size() && !batch.targets[s].empty()) ? &batch.targets[s] : nullptr;

    // forward with caches
    SampleCaches caches;
    caches.dense.resize(net.num_layers());
    caches.conv.resize(net.num_layers());
    caches.rnn.resize(net.num_layers());
    std::vector<std::size_t> flatten_from(net.num_layers(), 0);  // conv->dense boundary shapes

    Tensor cur = input;
    std::size_t lif_end = 0;
    std::vector<const LifLayer*> chain;
    if (net.kind == NetKind::spiking) {
      while (lif_end < net.num_layers() &&
             std::holds_alternative<LifLayer>(net.layers[lif_end])) {
        chain.push_back(&std::get<LifLayer>(net.layers[lif_end]));
        ++lif_end;
      }
      cur = lif_forward(chain, cur, {}, &caches.lif);
      for (std::size_t i = lif_end; i < net.num_layers(); ++i)
        cur = dense_forward(std::get<DenseLayer>(net.layers[i]), cur, nullptr, &caches.dense[i]);
    } else {
      for (std::size_t i = 0; i < net.num_layers(); ++i) {
        if (const auto* d = std::get_if<DenseLayer>(&net.layers[i])) {
          if (cur.rank() > 1) {
            if (net.kind == NetKind::recurrent) {
              flatten_from[i] = 2;  // take last hidden state
              cur = last_row(cur);
            } else {
              flatten_from[i] = 1;  // flatten feature map
              cur = cur.reshaped({cur.size()});
            }
          }
          cur = dense_forward(*d, cur, nullptr, &caches.dense[i]);
        } else if (const auto* c = std::get_if<Conv2DLayer>(&net.layers[i])) {
          cur = conv2d_forward(*c, cur, nullptr, &caches.conv[i]);
          for (std::size_t k = 0; k < cur.size(); ++k) cur[k] = activate(c->act, cur[k]);
        } else if (const auto* r = std::get_if<RnnCellLayer>(&net.layers[i])) {
          cur = rnn_cell_forward(*r, cur, nullptr, &caches.rnn[i]);
        } else {
          throw ContractError("bp_grad: unsupported layer in this network kind");
        }
      }
    }

    Tensor dcur = head_loss_grad(net.loss, cur, label, target);

    if (net.kind == NetKind::spiking) {
      for (std::size_t i = net.num_layers(); i-- > lif_end;) {
        const auto& d = std::get<DenseLayer>(net.layers[i]);
        Tensor dw(d.w.shape()), db(d.b.shape()), dx;
        dense_backward(d, caches.dense[i], dcur, dw, db, dx);
        dw *= inv_b;
        db *= inv_b;
        out.layers[i][0] += dw;
        out.layers[i][1] += db;
        dcur = std::move(dx);
      }
      std::vector<Tensor> dws;
      std::vector<Tensor*> dw_ptrs;
      for (std::size_t l = 0; l < chain.size(); ++l) dws.emplace_back(chain[l]->w.shape());
      for (auto& t : dws) dw_ptrs.push_back(&t);
      Tensor dx_seq;
      lif_chain_backward(chain, caches.lif, dcur, dw_ptrs, dx_seq);
      for (std::size_t l = 0; l < chain.size(); ++l) {
        dws[l] *= inv_b;
        out.layers[l][0] += dws[l];
      }
      out.inputs.push_back(std::move(dx_seq));
      continue;
    }

    for (std::size_t i = net.num_layers(); i-- > 0;) {
      if (const auto* d = std::get_if<DenseLayer>(&net.layers[i])) {
        Tensor dw(d->w.shape()), db(d->b.shape()), dx;
        dense_backward(*d, caches.dense[i], dcur, dw, db, dx);
        dw *= inv_b;
        db *= inv_b;
        out.layers[i][0] += dw;
        out.layers[i][1] += db;
        dcur = std::move(dx);
        if (flatten_from[i] == 1 && i > 0) {
          // restore the upstream conv output shape
          const auto& pc = std::get<Conv2DLayer>(net.layers[i - 1]);
          dcur = dcur.reshaped({pc.c_out, pc.h_out(), pc.w_out()});
        } else if (flatten_from[i] == 2 && i > 0) {
          const auto& pr = std::get<RnnCellLayer>(net.layers[i - 1]);
          Tensor dh(std::vector<std::size_t>{pr.steps, pr.d_h});
          for (std::size_t k = 0; k < pr.d_h; ++k) dh[dh.idx(pr.steps - 1, k)] = dcur[k];
          dcur = std::move(dh);
        }
      } else if (const auto* c = std::get_if<Conv2DLayer>(&net.layers[i])) {
        Tensor dw(c->w.shape()), db(c->b.shape()), dx;
        conv_backward(*c, caches.conv[i], dcur, dw, db, dx);
        dw *= inv_b;
        db *= inv_b;
        out.layers[i][0] += dw;
        out.layers[i][1] += db;
        dcur = std::move(dx);
      } else if (const auto* r = std::get_if<RnnCellLayer>(&net.layers[i])) {
        // dcur arrives as T x d_h (zeros except where the head consumed h_T)
        Tensor dwhh(r->w_hh.shape()), dwxh(r->w_xh.shape()), dbhh(r->b_hh.shape()),
            dbxh(r->b_xh.shape()), dx_seq;
        rnn_backward(*r, caches.rnn[i], dcur, dwhh, dwxh, dbhh, dbxh, dx_seq);
        dwhh *= inv_b;
        dwxh *= inv_b;
        dbhh *= inv_b;
        dbxh *= inv_b;
        out.layers[i][0] += dwhh;
        out.layers[i][1] += dwxh;
        out.layers[i][2] += dbhh;
        out.layers[i][3] += dbxh;
        dcur = std::move(dx_seq);
      }
    }
    out.inputs.push_back(std::move(dcur));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double plain_mean_loss(const Network& net, const Batch& batch) {
  ForwardTrace trace;
  trace.frags.resize(net.num_layers());
  run_forward(net, batch, trace);
  const double loss = trace.mean_loss();
  if (!std::isfinite(loss)) throw ContractError("fd_grad: non-finite loss under perturbation");
  return loss;
}

}  // namespace

Gradients fd_grad(const Network& net, const Batch& batch, double h_rel,
                  const FrozenNoise* frozen, Gradients* se_out, double h_floor) {
  if (!(h_rel > 0)) throw ContractError("fd_grad: step must be positive");
  Network work = net;  // mutated in place coordinate by coordinate
  auto views = work.param_views();

  Gradients out;
  out.layers.resize(work.num_layers());
  if (se_out) se_out->layers.resize(work.num_layers());

  for (std::size_t l = 0; l < work.num_layers(); ++l) {
    for (Tensor* p : views[l]) {
      Tensor g(p->shape());
      Tensor gse(p->shape());
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double theta = (*p)[i];
        const double h = std::max(h_rel * std::fabs(theta), h_floor);
        if (!frozen) {
          (*p)[i] = theta + h;
          const double lp = plain_mean_loss(work, batch);
          (*p)[i] = theta - h;
          const double lm = plain_mean_loss(work, batch);
          (*p)[i] = theta;
          g[i] = (lp - lm) / (2.0 * h);
        } else {
          // common random numbers: identical draws on both sides, per draw
          double sum = 0, sumsq = 0;
          std::size_t n = 0;
          for (std::size_t m = 0; m < frozen->draws; ++m) {
            for (int sign = 0; sign < (frozen->antithetic ? 2 : 1); ++sign) {
              RngStream s = frozen->base.split(m);
              ForwardTrace noise = draw_noise(work, frozen->plan, s, batch.graph);
              if (sign == 1) negate_trace_noise(noise);
              ForwardTrace t1 = noise;
              (*p)[i] = theta + h;
              run_forward(work, batch, t1);
              const double lp = t1.mean_loss();
              ForwardTrace t2 = std::move(noise);
              t2.losses.clear();
              (*p)[i] = theta - h;
              run_forward(work, batch, t2);
              const double lm = t2.mean_loss();
              (*p)[i] = theta;
              if (!std::isfinite(lp) || !std::isfinite(lm))
                throw ContractError("fd_grad: non-finite loss under perturbation");
              const double d = (lp - lm) / (2.0 * h);
              sum += d;
              sumsq += d * d;
              ++n;
            }
          }
          const double mean = sum / static_cast<double>(n);
          g[i] = mean;
          if (se_out && n > 1) {
            const double var = std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
            gse[i] = std::sqrt(var / static_cast<double>(n));
          }
        }
      }
      out.layers[l].push_back(std::move(g));
      if (se_out) se_out->layers[l].push_back(std::move(gse));
    }
  }
  return out;
}

CosineResult cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractError("cosine_similarity: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 && bb == 0.0) return {0.0, true};
  if (aa == 0.0 || bb == 0.0) return {0.0, false};
  return {ab / (std::sqrt(aa) * std::sqrt(bb)), false};
}

std::vector<double> flatten_layer(const std::vector<Tensor>& params) {
  std::vector<double> flat;
  for (const Tensor& t : params) flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

std::vector<double> flatten_layer(const std::vector<ParamGrad>& params) {
  std::vector<double> flat;
  for (const ParamGrad& p : params)
    flat.insert(flat.end(), p.grad.values().begin(), p.grad.values().end());
  return flat;
}

GradComparison compare_gradients(const Network& net, const GradEstimate& estimate,
                                 const Gradients& reference, const std::string& label) {
  GradComparison cmp;
  cmp.copies = estimate.copies_used;
  cmp.label = label;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const CosineResult r =
        cosine_similarity(flatten_layer(estimate.layers[l].params), flatten_layer(reference.layers[l]));
    cmp.per_layer.push_back(r.value);
    cmp.degenerate.push_back(r.degenerate);
  }
  return cmp;
}

}  // namespace lrnet
