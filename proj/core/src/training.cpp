#include "lrnet/training.hpp"

#include <chrono>
#include <cmath>

#include "lrnet/errors.hpp"
#include "lrnet/oracle.hpp"

namespace lrnet {

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("train: learning rate must be positive");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
}

OptimizerState make_optimizer_state(Network& net, const EstimatorConfig& est) {
  OptimizerState st;
  auto views = net.param_views();
  st.m.resize(views.size());
  st.v.resize(views.size());
  for (std::size_t l = 0; l < views.size(); ++l)
    for (Tensor* p : views[l]) {
      st.m[l].emplace_back(p->shape());
      st.v[l].emplace_back(p->shape());
    }
  st.log_sigma2.resize(net.num_layers());
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const double s = est.layer_noise(l).sigma;
    st.log_sigma2[l] = std::log(s * s);
  }
  return st;
}

void optimizer_step(Network& net, const GradEstimate& grads, OptimizerState& state,
                    const TrainConfig& config) {
  auto views = net.param_views();
  state.skipped_last = false;
  for (std::size_t l = 0; l < views.size(); ++l)
    for (std::size_t p = 0; p < views[l].size(); ++p)
      if (!grads.layers[l].params[p].grad.all_finite()) {
        state.skipped_last = true;
        return;
      }

  ++state.step;
  const double t = static_cast<double>(state.step);
  for (std::size_t l = 0; l < views.size(); ++l) {
    for (std::size_t p = 0; p < views[l].size(); ++p) {
      Tensor& theta = *views[l][p];
      const Tensor& g = grads.layers[l].params[p].grad;
      if (config.optimizer == OptimizerKind::sgd) {
        if (config.momentum > 0) {
          Tensor& mom = state.m[l][p];
          for (std::size_t i = 0; i < theta.size(); ++i) {
            mom[i] = config.momentum * mom[i] + g[i];
            theta[i] -= config.learning_rate * mom[i];
          }
        } else {
          for (std::size_t i = 0; i < theta.size(); ++i)
            theta[i] -= config.learning_rate * g[i];
        }
      } else {
        Tensor& m = state.m[l][p];
        Tensor& v = state.v[l][p];
        const double bc1 = 1.0 - std::pow(config.beta1, t);
        const double bc2 = 1.0 - std::pow(config.beta2, t);
        for (std::size_t i = 0; i < theta.size(); ++i) {
          m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
          v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          theta[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.adam_eps);
        }
      }
    }
    if (grads.layers[l].has_sigma_grad && std::isfinite(grads.layers[l].sigma_grad)) {
      // d/d(log sigma^2) = sigma^2 * d/d(sigma^2); keeps sigma positive
      const double s2 = std::exp(state.log_sigma2[l]);
      state.log_sigma2[l] -= config.sigma_learning_rate * s2 * grads.layers[l].sigma_grad;
    }
  }
}

std::vector<double> current_sigmas(const Network& net, const EstimatorConfig& est,
                                   const OptimizerState& state) {
  std::vector<double> out;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    if (est.trainable_sigma && l < state.log_sigma2.size())
      out.push_back(std::sqrt(std::exp(state.log_sigma2[l])));
    else
      out.push_back(est.layer_noise(l).sigma);
  }
  return out;
}

Batch make_batch(const Network& net, const Dataset& data, const std::vector<std::size_t>& idx,
                 std::uint64_t encode_seed, std::size_t snn_steps) {
  Batch b;
  if (data.modality == Modality::graph) {
    b.graph = &data.graph;
    return b;
  }
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t i = idx[k];
    if (data.modality == Modality::sequences) {
      const auto& r = std::get<RnnCellLayer>(net.layers[0]);
      b.inputs.push_back(onehot_sequence(data.sequences[i], r.d_x, r.steps));
    } else if (net.kind == NetKind::spiking) {
      RngStream es(encode_seed, philox_mix64(0xE7C0DE, i, encode_seed));
      b.inputs.push_back(encode_spikes_bernoulli(data.inputs[i], snn_steps, es));
    } else {
      b.inputs.push_back(data.inputs[i]);
    }
    b.labels.push_back(data.labels[i]);
  }
  return b;
}

double clean_accuracy(const Network& net, const Dataset& data, std::uint64_t seed,
                      std::size_t snn_steps) {
  if (data.modality == Modality::graph) {
    const Tensor logits = forward_logits(net, data.graph);
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
    std::vector<std::size_t> one{i};
    Batch b = make_batch(net, data, one, seed, snn_steps);
    const Tensor logits = forward_logits(net, b.inputs[0]);
    std::size_t arg = 0;
    for (std::size_t c = 1; c < logits.size(); ++c)
      if (logits[c] > logits[arg]) arg = c;
    correct += static_cast<int>(arg) == data.labels[i] ? 1 : 0;
  }
  return data.size() ? static_cast<double>(correct) / static_cast<double>(data.size()) : 0.0;
}

Metrics train(Network& net, const Dataset& train_set, const Dataset& test_set,
              const TrainConfig& config) {
  config.validate();
  config.estimator.validate(net.num_layers());
  Metrics metrics;
  if (config.epochs == 0) return metrics;

  EstimatorConfig est = config.estimator;
  OptimizerState state = make_optimizer_state(net, est);
  RngStream root(config.seed, 0x7 + 0);
  std::size_t rr_cursor = 0;  // round-robin layer pointer
  GradEstimate carried;       // latest estimate per layer under round-robin

  const std::size_t n = train_set.size();
  const bool graph_task = train_set.modality == Modality::graph;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream epoch_stream = root.split(0xE60000 + epoch);

    // shuffled sample order
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (!graph_task) {
      for (std::size_t i = n; i > 1; --i) {
        const std::size_t j =
            static_cast<std::size_t>(epoch_stream.next_uniform() * static_cast<double>(i));
        std::swap(order[i - 1], order[std::min(j, i - 1)]);
      }
    }

    double loss_sum = 0;
    std::size_t loss_count = 0, copies = 0;
    const std::size_t steps =
        graph_task ? 1 : (n + config.batch_size - 1) / config.batch_size;

    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<std::size_t> idx;
      if (!graph_task) {
        const std::size_t begin = step * config.batch_size;
        const std::size_t end = std::min(n, begin + config.batch_size);
        idx.assign(order.begin() + static_cast<std::ptrdiff_t>(begin),
                   order.begin() + static_cast<std::ptrdiff_t>(end));
      }
      const std::uint64_t encode_seed =
          philox_mix64(config.seed, epoch, 0xE47C0DEULL + step);
      Batch batch = make_batch(net, train_set, idx, encode_seed, config.snn_steps);

      // trainable sigma: publish the current values into the config
      if (est.trainable_sigma) {
        est.sigma_override.assign(net.num_layers(), 0.0);
        for (std::size_t l = 0; l < net.num_layers(); ++l)
          est.sigma_override[l] = std::sqrt(std::exp(state.log_sigma2[l]));
      }

      GradEstimate grads;
      RngStream step_stream = epoch_stream.split(0x57E0 + step);
      if (config.method == TrainMethod::bp) {
        const Gradients g = bp_grad(net, batch);
        grads.layers.resize(net.num_layers());
        for (std::size_t l = 0; l < net.num_layers(); ++l)
          for (const Tensor& t : g.layers[l]) {
            ParamGrad pg;
            pg.grad = t;
            pg.se = Tensor(t.shape());
            grads.layers[l].params.push_back(std::move(pg));
          }
      } else if (config.method == TrainMethod::es) {
        EstimatorConfig es_cfg = est;
        es_cfg.injection = Injection::simultaneous;
        es_cfg.modes.assign(net.num_layers(), NoiseMode::weight);
        grads = estimate_gradient(net, batch, es_cfg, step_stream);
      } else if (est.schedule == Schedule::round_robin) {
        const std::size_t visit = rr_cursor % net.num_layers();
        rr_cursor = (rr_cursor + 1) % net.num_layers();
        GradEstimate fresh = estimate_gradient(net, batch, est, step_stream, {visit});
        // unvisited layers reuse their most recent estimate (zero until seen)
        if (carried.layers.empty()) carried = fresh;
        carried.layers[visit] = std::move(fresh.layers[visit]);
        carried.copies_used = fresh.copies_used;
        grads = carried;
      } else {
        grads = estimate_gradient(net, batch, est, step_stream);
      }
      copies += grads.copies_used;

      // track the mean training loss on this batch (noise off)
      ForwardTrace probe;
      probe.frags.resize(net.num_layers());
      run_forward(net, batch, probe);
      const double batch_loss = probe.mean_loss();
      if (!std::isfinite(batch_loss))
        throw TrainingDiverged("training loss became non-finite at epoch " +
                               std::to_string(epoch) + ", step " + std::to_string(step));
      loss_sum += batch_loss;
      ++loss_count;

      optimizer_step(net, grads, state, config);
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, loss_count));
    em.test_accuracy =
        clean_accuracy(net, test_set, philox_mix64(config.seed, 0xACC, epoch), config.snn_steps);
    em.copies = copies;
    em.sigmas = current_sigmas(net, est, state);
    em.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.push_back(std::move(em));
  }
  return metrics;
}

}  // namespace lrnet
