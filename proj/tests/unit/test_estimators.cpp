#include <cmath>
#include <doctest.h>

#include "lrnet/errors.hpp"
#include "lrnet/estimators.hpp"
#include "lrnet/experiment.hpp"
#include "lrnet/oracle.hpp"

using namespace lrnet;

namespace {

// Copies laid out the way the estimators pair them: first half fresh,
// second half exact negations.
std::vector<ForwardTrace> collect_copies(const Network& net, const Batch& batch,
                                         const NoisePlan& plan, std::size_t copies,
                                         std::uint64_t seed, bool antithetic) {
  std::vector<ForwardTrace> out;
  RngStream root(seed, 0xC0117);
  const std::size_t fresh = antithetic ? copies / 2 : copies;
  for (std::size_t u = 0; u < fresh; ++u) {
    RngStream s = root.split(u);
    ForwardTrace t = draw_noise(net, plan, s, batch.graph);
    run_forward(net, batch, t);
    out.push_back(std::move(t));
  }
  if (antithetic)
    for (std::size_t u = 0; u < fresh; ++u) {
      RngStream s = root.split(u);
      ForwardTrace t = draw_noise(net, plan, s, batch.graph);
      negate_trace_noise(t);
      run_forward(net, batch, t);
      out.push_back(std::move(t));
    }
  return out;
}

Network scalar_dense_net(double theta, LossKind loss) {
  Network net;
  net.kind = NetKind::feedforward;
  net.loss = loss;
  DenseLayer l{1, 1, Activation::identity, Tensor({1, 1}, {theta}), Tensor({1})};
  net.layers.emplace_back(std::move(l));
  return net;
}

NoisePlan logit_plan(const Network& net, std::size_t layer, double sigma) {
  NoisePlan p = NoisePlan::all_off(net.num_layers());
  p.layers[layer].mode = NoiseMode::logit;
  p.layers[layer].sigma = sigma;
  return p;
}

bool within_3se(double value, double target, double se) {
  return std::fabs(value - target) <= 3.0 * std::max(se, 1e-300);
}

}  // namespace

TEST_CASE("dense estimator: constant loss with antithetic pairs is exactly zero") {
  Network net = scalar_dense_net(0.7, LossKind::constant);
  net.loss_constant = 4.2;
  Batch b;
  b.inputs = {Tensor({1}, {1.0})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.5), 64, 1, true);
  auto est = lr_dense_grad(net, 0, copies, true);
  CHECK(est.params[0].grad[0] == 0.0);
  CHECK(est.params[1].grad[0] == 0.0);
}

TEST_CASE("dense estimator recovers the linear-model gradient") {
  // v = theta*x + sigma*eps, L = v, x = 1: dE[L]/dtheta = 1
  Network net = scalar_dense_net(0.7, LossKind::sum);
  Batch b;
  b.inputs = {Tensor({1}, {1.0})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.5), 100000, 2, true);
  auto est = lr_dense_grad(net, 0, copies, true);
  CHECK(within_3se(est.params[0].grad[0], 1.0, est.params[0].se[0]));
  // the antithetic unit reduces to eps^2 here, so the spread is just Var(eps^2)
  CHECK(est.params[0].se[0] < 3.5 * std::sqrt(2.0 / 50000.0));
}

TEST_CASE("dense estimator recovers the quadratic-model gradient") {
  // L = v^2, theta = 0.5, x = 1: dE[L]/dtheta = 2*theta*x^2 = 1
  Network net = scalar_dense_net(0.5, LossKind::sum_squares);
  Batch b;
  b.inputs = {Tensor({1}, {1.0})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.5), 100000, 3, true);
  auto est = lr_dense_grad(net, 0, copies, true);
  CHECK(within_3se(est.params[0].grad[0], 1.0, est.params[0].se[0]));
}

TEST_CASE("sigma gradient: constant loss is centered on zero") {
  Network net = scalar_dense_net(1.0, LossKind::constant);
  net.loss_constant = 2.0;
  Batch b;
  b.inputs = {Tensor({1}, {1.0})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.5), 20000, 4, false);
  auto [grad, se] = lr_sigma_grad(net, 0, copies, false);
  CHECK(within_3se(grad, 0.0, se));
}

TEST_CASE("sigma gradient matches the closed form of the quadratic model") {
  // E[L] = (theta*x)^2 + sigma^2, so dE[L]/d(sigma^2) = 1
  Network net = scalar_dense_net(1.0, LossKind::sum_squares);
  Batch b;
  b.inputs = {Tensor({1}, {1.0})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.5), 100000, 5, true);
  auto [grad, se] = lr_sigma_grad(net, 0, copies, true);
  CHECK(within_3se(grad, 1.0, se));
}

TEST_CASE("sigma gradient per-copy structure is even in the noise") {
  Network net = scalar_dense_net(1.0, LossKind::constant);
  net.loss_constant = 1.0;
  Batch b;
  b.inputs = {Tensor({1}, {1.0})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.5), 2, 6, true);
  // the pair carries identical (eps^2 - 1) structures, so with constant loss
  // the two per-copy values agree and the pair variance vanishes
  auto [grad, se] = lr_sigma_grad(net, 0, {copies[0]}, false);
  auto [grad2, se2] = lr_sigma_grad(net, 0, {copies[1]}, false);
  CHECK(grad == grad2);
  CHECK(se == se2);
}

TEST_CASE("sigma gradient rejects non-positive sigma plans") {
  Network net = scalar_dense_net(1.0, LossKind::sum);
  NoisePlan p = logit_plan(net, 0, -0.1);
  RngStream s(1, 1);
  CHECK_THROWS_AS(draw_noise(net, p, s, nullptr), ContractError);
}

namespace {

Network tiny_conv_net(LossKind loss) {
  Network net;
  net.kind = NetKind::feedforward;
  net.loss = loss;
  Conv2DLayer c;
  c.c_in = 1;
  c.c_out = 1;
  c.kh = c.kw = 2;
  c.h_in = 2;
  c.w_in = 2;
  c.act = Activation::identity;
  c.w = Tensor({1, 1, 2, 2}, {0.4, -0.3, 0.2, 0.1});
  c.b = Tensor({1}, {0.05});
  net.layers.emplace_back(std::move(c));
  return net;
}

}  // namespace

TEST_CASE("conv estimator: constant loss with antithetic pairs is exactly zero") {
  Network net = tiny_conv_net(LossKind::constant);
  net.loss_constant = -1.5;
  Batch b;
  b.inputs = {Tensor({1, 2, 2}, {0.2, 0.8, -0.1, 0.5})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.3), 32, 7, true);
  auto est = lr_conv_grad(net, 0, copies, true);
  for (std::size_t i = 0; i < est.params[0].grad.size(); ++i)
    CHECK(est.params[0].grad[i] == 0.0);
  CHECK(est.params[1].grad[0] == 0.0);
}

TEST_CASE("degenerate 1x1 conv estimator equals the dense estimator") {
  // a 1x1x1x1 kernel on a 1x1 input is the scalar model
  Network cnet;
  cnet.kind = NetKind::feedforward;
  cnet.loss = LossKind::sum_squares;
  Conv2DLayer c;
  c.c_in = 1;
  c.c_out = 1;
  c.kh = c.kw = 1;
  c.h_in = c.w_in = 1;
  c.act = Activation::identity;
  c.w = Tensor({1, 1, 1, 1}, {0.5});
  c.b = Tensor({1});
  cnet.layers.emplace_back(std::move(c));
  Batch cb;
  cb.inputs = {Tensor({1, 1, 1}, {1.0})};
  cb.labels = {0};
  auto conv_copies = collect_copies(cnet, cb, logit_plan(cnet, 0, 0.5), 4000, 8, true);
  auto conv_est = lr_conv_grad(cnet, 0, conv_copies, true);

  Network dnet = scalar_dense_net(0.5, LossKind::sum_squares);
  Batch db;
  db.inputs = {Tensor({1}, {1.0})};
  db.labels = {0};
  auto dense_copies = collect_copies(dnet, db, logit_plan(dnet, 0, 0.5), 4000, 8, true);
  auto dense_est = lr_dense_grad(dnet, 0, dense_copies, true);
  CHECK(conv_est.params[0].grad[0] == dense_est.params[0].grad[0]);
  CHECK(conv_est.params[1].grad[0] == dense_est.params[1].grad[0]);
}

TEST_CASE("conv estimator equals the im2col-unrolled dense estimator on shared traces") {
  // logit noise on the conv output is logit noise on the unrolled dense
  // output; with identical traces the kernel gradient entries must match
  // the summed dense-matrix entries
  Network net = tiny_conv_net(LossKind::sum_squares);
  Batch b;
  b.inputs = {Tensor({1, 2, 2}, {0.2, 0.8, -0.1, 0.5})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.3), 128, 9, true);
  auto conv_est = lr_conv_grad(net, 0, copies, true);

  // hand-rolled unrolled estimate from the same fragments: kernel entry
  // (s,t) pairs eps[j,k] with x[j+s,k+t]; here h_out = w_out = 1
  Tensor manual({1, 1, 2, 2});
  const std::size_t n_units = copies.size() / 2;
  for (std::size_t u = 0; u < copies.size(); ++u) {
    const auto& f = std::get<ConvFrag>(*copies[u].frags[0]);
    const double c = copies[u].losses[0] / f.sigma;
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t t = 0; t < 2; ++t)
        manual[manual.idx(0, 0, s, t)] += c * f.eps[0] * f.inputs[0][f.inputs[0].idx(0, s, t)];
  }
  manual *= 1.0 / static_cast<double>(2 * n_units);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(conv_est.params[0].grad[i] == doctest::Approx(manual[i]).epsilon(1e-12));
}

namespace {

Network tiny_rnn_net(std::size_t steps, LossKind loss) {
  Network net;
  net.kind = NetKind::recurrent;
  net.loss = loss;
  RnnCellLayer r;
  r.kind = RnnKind::vanilla;
  r.d_x = 2;
  r.d_h = 2;
  r.steps = steps;
  RngStream s(55, steps);
  r.w_hh = s.gaussian({2, 2});
  r.w_xh = s.gaussian({2, 2});
  r.b_hh = s.gaussian({2});
  r.b_xh = s.gaussian({2});
  net.layers.emplace_back(std::move(r));
  DenseLayer head{2, 2, Activation::identity, s.gaussian({2, 2}), s.gaussian({2})};
  net.layers.emplace_back(std::move(head));
  return net;
}

}  // namespace

TEST_CASE("recurrent estimator: constant loss with antithetic pairs is exactly zero") {
  Network net = tiny_rnn_net(3, LossKind::constant);
  net.loss_constant = 0.33;
  Batch b;
  RngStream s(66, 0);
  b.inputs = {s.gaussian({3, 2})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.2), 32, 10, true);
  auto est = lr_recurrent_grad(net, 0, copies, true);
  for (const auto& p : est.params)
    for (std::size_t i = 0; i < p.grad.size(); ++i) CHECK(p.grad[i] == 0.0);
}

TEST_CASE("weight-sharing identity: summed untied per-step estimates match bit for bit") {
  Network net = tiny_rnn_net(3, LossKind::cross_entropy);
  Batch b;
  RngStream s(67, 0);
  b.inputs = {s.gaussian({3, 2})};
  b.labels = {1};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.2), 64, 11, false);
  auto full = lr_recurrent_grad(net, 0, copies, false);

  // rebuild per-step copies holding only step t and estimate each separately
  std::vector<LayerGradEstimate> per_step;
  for (std::size_t t = 0; t < 3; ++t) {
    std::vector<ForwardTrace> cut = copies;
    for (auto& tr : cut) {
      auto& f = std::get<RnnFrag>(*tr.frags[0]);
      f.eps_hh = {f.eps_hh[t]};
      f.eps_xh = {f.eps_xh[t]};
      f.h_prev[0] = {f.h_prev[0][t]};
      f.x_in[0] = {f.x_in[0][t]};
    }
    per_step.push_back(lr_recurrent_grad(net, 0, cut, false));
  }
  for (std::size_t p = 0; p < full.params.size(); ++p)
    for (std::size_t i = 0; i < full.params[p].grad.size(); ++i) {
      const double summed = (per_step[0].params[p].grad[i] + per_step[1].params[p].grad[i]) +
                            per_step[2].params[p].grad[i];
      CHECK(full.params[p].grad[i] == summed);  // bitwise
    }
}

TEST_CASE("single-step recurrent estimator degenerates to the dense estimator") {
  Network net = tiny_rnn_net(1, LossKind::cross_entropy);
  Batch b;
  RngStream s(68, 0);
  b.inputs = {s.gaussian({1, 2})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.2), 32, 12, false);
  auto full = lr_recurrent_grad(net, 0, copies, false);

  // dense-equivalent fragments: eps_xh against x_1 (h_0 = 0 kills w_hh)
  Network dnet;
  dnet.kind = NetKind::feedforward;
  dnet.loss = LossKind::cross_entropy;
  DenseLayer d{2, 2, Activation::identity, Tensor({2, 2}), Tensor({2})};
  dnet.layers.emplace_back(std::move(d));
  std::vector<ForwardTrace> dense_copies;
  for (const auto& tr : copies) {
    const auto& f = std::get<RnnFrag>(*tr.frags[0]);
    ForwardTrace dt;
    dt.frags.resize(1);
    DenseFrag df;
    df.mode = NoiseMode::logit;
    df.sigma = f.sigma;
    df.eps = f.eps_xh[0];
    df.inputs = {f.x_in[0][0]};
    dt.frags[0] = std::move(df);
    dt.losses = tr.losses;
    dense_copies.push_back(std::move(dt));
  }
  auto dense_est = lr_dense_grad(dnet, 0, dense_copies, false);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(full.params[1].grad[i] == dense_est.params[0].grad[i]);  // w_xh == w
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(full.params[3].grad[i] == dense_est.params[1].grad[i]);  // b_xh == b
    CHECK(full.params[0].grad[2 * i] == 0.0);                      // h_0 = 0
  }
}

TEST_CASE("recurrent estimator rejects step-count mismatches") {
  Network net = tiny_rnn_net(3, LossKind::cross_entropy);
  Batch b;
  RngStream s(69, 0);
  b.inputs = {s.gaussian({3, 2})};
  b.labels = {0};
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.2), 4, 13, false);
  auto& f = std::get<RnnFrag>(*copies[1].frags[0]);
  f.h_prev[0].pop_back();
  CHECK_THROWS_AS(lr_recurrent_grad(net, 0, copies, false), ContractError);
}

namespace {

Network tiny_gcn_net(const GraphData& g, LossKind loss) {
  Network net;
  net.kind = NetKind::graph;
  net.loss = loss;
  RngStream s(77, 0);
  GcnLayer l{g.feature_dim(), 2, Activation::identity, s.gaussian({g.feature_dim(), 2})};
  net.layers.emplace_back(std::move(l));
  return net;
}

GraphData three_node_graph() {
  RngStream s(78, 0);
  Tensor f = s.gaussian({3, 2});
  GraphData g = make_graph(f, {{0, 1}, {1, 2}}, {0, 1, 0});
  return g;
}

}  // namespace

TEST_CASE("gcn estimator: constant loss with antithetic pairs is exactly zero") {
  GraphData g = three_node_graph();
  Network net = tiny_gcn_net(g, LossKind::constant);
  net.loss_constant = 0.9;
  Batch b;
  b.graph = &g;
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.2), 32, 14, true);
  auto est = lr_gcn_grad(net, 0, copies, true);
  for (std::size_t i = 0; i < est.params[0].grad.size(); ++i)
    CHECK(est.params[0].grad[i] == 0.0);
}

TEST_CASE("gcn estimator on a single self-looped node equals the dense estimator") {
  RngStream fs(79, 0);
  GraphData g = make_graph(fs.gaussian({1, 2}), {}, {0});
  Network net = tiny_gcn_net(g, LossKind::cross_entropy);
  Batch b;
  b.graph = &g;
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.2), 64, 15, false);
  auto est = lr_gcn_grad(net, 0, copies, false);

  // dense equivalent: X-hat is the single feature row
  Network dnet;
  dnet.kind = NetKind::feedforward;
  dnet.loss = LossKind::cross_entropy;
  DenseLayer d{2, 2, Activation::identity, Tensor({2, 2}), Tensor({2})};
  dnet.layers.emplace_back(std::move(d));
  std::vector<ForwardTrace> dense_copies;
  for (const auto& tr : copies) {
    const auto& f = std::get<GcnFrag>(*tr.frags[0]);
    ForwardTrace dt;
    dt.frags.resize(1);
    DenseFrag df;
    df.mode = NoiseMode::logit;
    df.sigma = f.sigma;
    df.eps = Tensor({2}, {f.eps[0], f.eps[1]});
    df.inputs = {Tensor({2}, {f.xhat[0], f.xhat[1]})};
    dt.frags[0] = std::move(df);
    dt.losses = tr.losses;
    dense_copies.push_back(std::move(dt));
  }
  auto dense_est = lr_dense_grad(dnet, 0, dense_copies, false);
  // gcn weight is in x out; dense is out x in
  CHECK(est.params[0].grad[est.params[0].grad.idx(0, 0)] ==
        doctest::Approx(dense_est.params[0].grad[dense_est.params[0].grad.idx(0, 0)]));
  CHECK(est.params[0].grad[est.params[0].grad.idx(1, 0)] ==
        doctest::Approx(dense_est.params[0].grad[dense_est.params[0].grad.idx(0, 1)]));
}

TEST_CASE("gcn estimator agrees with the finite-difference oracle") {
  GraphData g = three_node_graph();
  Network net = tiny_gcn_net(g, LossKind::cross_entropy);
  Batch b;
  b.graph = &g;
  const NoisePlan plan = logit_plan(net, 0, 0.2);

  auto copies = collect_copies(net, b, plan, 60000, 16, true);
  auto est = lr_gcn_grad(net, 0, copies, true);

  FrozenNoise frozen{plan, RngStream(160, 9), 3000, true};
  Gradients fd_se;
  Gradients fd = fd_grad(net, b, 1e-3, &frozen, &fd_se);
  for (std::size_t i = 0; i < est.params[0].grad.size(); ++i) {
    const double se = std::sqrt(est.params[0].se[i] * est.params[0].se[i] +
                                fd_se.layers[0][0][i] * fd_se.layers[0][0][i]);
    CHECK(std::fabs(est.params[0].grad[i] - fd.layers[0][0][i]) <= 3.0 * se);
  }
}

TEST_CASE("gcn estimator requires the aggregated input record") {
  GraphData g = three_node_graph();
  Network net = tiny_gcn_net(g, LossKind::cross_entropy);
  Batch b;
  b.graph = &g;
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.2), 4, 17, false);
  std::get<GcnFrag>(*copies[0].frags[0]).xhat = Tensor();
  CHECK_THROWS_AS(lr_gcn_grad(net, 0, copies, false), ContractError);
}

namespace {

Network tiny_gat_net(const GraphData& g, LossKind loss, std::uint64_t seed) {
  Network net;
  net.kind = NetKind::graph;
  net.loss = loss;
  RngStream s(seed, 0);
  GatLayer l;
  l.in = g.feature_dim();
  l.out = 2;
  l.act = Activation::identity;
  l.w = s.gaussian({g.feature_dim(), 2});
  l.a = s.gaussian({4});
  net.layers.emplace_back(std::move(l));
  return net;
}

}  // namespace

TEST_CASE("gat estimator under constant loss: odd part cancels exactly") {
  GraphData g = three_node_graph();
  Network net = tiny_gat_net(g, LossKind::constant, 88);
  net.loss_constant = 1.1;
  Batch b;
  b.graph = &g;
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.2), 512, 18, true);
  auto est = lr_gat_grad(net, 0, copies, g, true);
  // the feature-weight estimator is odd in the feature noise: exact zero
  for (std::size_t i = 0; i < est.params[0].grad.size(); ++i)
    CHECK(est.params[0].grad[i] == 0.0);
  // the attention estimator pairs edge noise with the *realized* features,
  // which flip with the twin copy, so only the expectation vanishes
  for (std::size_t i = 0; i < est.params[1].grad.size(); ++i)
    CHECK(std::fabs(est.params[1].grad[i]) <= 3.0 * std::max(est.params[1].se[i], 1e-300));
}

TEST_CASE("gat feature-weight estimate agrees with the finite-difference oracle") {
  RngStream fs(89, 0);
  GraphData g = make_graph(fs.gaussian({1, 2}), {}, {0});  // single node, self-loop
  Network net = tiny_gat_net(g, LossKind::cross_entropy, 90);
  Batch b;
  b.graph = &g;
  NoisePlan plan = logit_plan(net, 0, 0.2);
  plan.layers[0].sigma_attn = 0.2;

  auto copies = collect_copies(net, b, plan, 60000, 19, true);
  auto est = lr_gat_grad(net, 0, copies, g, true);

  FrozenNoise frozen{plan, RngStream(191, 3), 3000, true};
  Gradients fd_se;
  Gradients fd = fd_grad(net, b, 1e-3, &frozen, &fd_se);
  for (std::size_t i = 0; i < est.params[0].grad.size(); ++i) {
    const double se = std::sqrt(est.params[0].se[i] * est.params[0].se[i] +
                                fd_se.layers[0][0][i] * fd_se.layers[0][0][i]);
    CHECK(std::fabs(est.params[0].grad[i] - fd.layers[0][0][i]) <= 3.0 * se);
  }
  // singleton neighborhoods make alpha constant: attention gradient is 0
  for (std::size_t i = 0; i < est.params[1].grad.size(); ++i)
    CHECK(std::fabs(est.params[1].grad[i]) <= 3.0 * std::max(est.params[1].se[i], 1e-300));
}

TEST_CASE("gat estimator demands edge noise records") {
  GraphData g = three_node_graph();
  Network net = tiny_gat_net(g, LossKind::cross_entropy, 91);
  Batch b;
  b.graph = &g;
  auto copies = collect_copies(net, b, logit_plan(net, 0, 0.2), 4, 20, false);
  std::get<GatFrag>(*copies[0].frags[0]).eps_edge = Tensor();
  CHECK_THROWS_AS(lr_gat_grad(net, 0, copies, g, false), ContractError);
}

TEST_CASE("weight-perturbation estimator recovers the linear scale") {
  // v = (theta + sigma*eps)x, L = v, x = 2: dE[L]/dtheta = 2
  Network net = scalar_dense_net(0.4, LossKind::sum);
  Batch b;
  b.inputs = {Tensor({1}, {2.0})};
  b.labels = {0};
  NoisePlan plan = NoisePlan::all_off(1);
  plan.layers[0].mode = NoiseMode::weight;
  plan.layers[0].sigma = 0.25;
  auto copies = collect_copies(net, b, plan, 100000, 21, true);
  auto est = lr_weight_perturb_grad(net, 0, copies, true);
  CHECK(within_3se(est.params[0].grad[0], 2.0, est.params[0].se[0]));
  // constant loss sanity: exact zero with pairs
  Network cnet = scalar_dense_net(0.4, LossKind::constant);
  cnet.loss_constant = 3.0;
  auto ccopies = collect_copies(cnet, b, plan, 16, 22, true);
  auto cest = lr_weight_perturb_grad(cnet, 0, ccopies, true);
  CHECK(cest.params[0].grad[0] == 0.0);
}

TEST_CASE("full-vector and layer-wise weight perturbation agree in expectation") {
  ModelConfig m;
  m.kind = "mlp";
  m.input_dim = 1;
  m.hidden = {};
  m.classes = 2;
  Network net = build_network(m, 7);
  net.loss = LossKind::cross_entropy;
  Batch b;
  b.inputs = {Tensor({1}, {0.8})};
  b.labels = {1};

  EstimatorConfig layerwise;
  layerwise.copies = 60000;
  layerwise.modes = {NoiseMode::weight};
  layerwise.injection = Injection::layerwise;
  RngStream s1(23, 0);
  auto g1 = estimate_gradient(net, b, layerwise, s1);

  EstimatorConfig fullvec = layerwise;
  fullvec.injection = Injection::simultaneous;
  RngStream s2(24, 0);
  auto g2 = estimate_gradient(net, b, fullvec, s2);

  for (std::size_t p = 0; p < g1.layers[0].params.size(); ++p)
    for (std::size_t i = 0; i < g1.layers[0].params[p].grad.size(); ++i) {
      const auto& a = g1.layers[0].params[p];
      const auto& c = g2.layers[0].params[p];
      const double se = std::sqrt(a.se[i] * a.se[i] + c.se[i] * c.se[i]);
      CHECK(std::fabs(a.grad[i] - c.grad[i]) <= 3.0 * se);
    }
}

TEST_CASE("estimate_gradient: antithetic constant loss is exactly zero everywhere") {
  ModelConfig m;
  m.kind = "mlp";
  m.input_dim = 2;
  m.hidden = {3};
  m.classes = 2;
  Network net = build_network(m, 31);
  net.loss = LossKind::constant;
  net.loss_constant = 5.0;
  Batch b;
  RngStream s(32, 0);
  b.inputs = {s.gaussian({2})};
  b.labels = {0};
  EstimatorConfig cfg;
  cfg.copies = 2;
  RngStream stream(33, 0);
  auto est = estimate_gradient(net, b, cfg, stream);
  for (const auto& layer : est.layers)
    for (const auto& p : layer.params)
      for (std::size_t i = 0; i < p.grad.size(); ++i) CHECK(p.grad[i] == 0.0);
  CHECK(est.copies_used == 2 * net.num_layers());
}

TEST_CASE("estimate_gradient is deterministic for a fixed stream") {
  ModelConfig m;
  m.kind = "mlp";
  m.input_dim = 2;
  m.hidden = {3};
  m.classes = 2;
  Network net = build_network(m, 34);
  Batch b;
  RngStream s(35, 0);
  b.inputs = {s.gaussian({2}), s.gaussian({2})};
  b.labels = {0, 1};
  EstimatorConfig cfg;
  cfg.copies = 64;
  RngStream s1(36, 2), s2(36, 2);
  auto g1 = estimate_gradient(net, b, cfg, s1);
  auto g2 = estimate_gradient(net, b, cfg, s2);
  for (std::size_t l = 0; l < g1.layers.size(); ++l)
    for (std::size_t p = 0; p < g1.layers[l].params.size(); ++p)
      CHECK(g1.layers[l].params[p].grad.values() == g2.layers[l].params[p].grad.values());
}

TEST_CASE("estimate_gradient tracks the bp direction on a small mlp") {
  ModelConfig m;
  m.kind = "mlp";
  m.input_dim = 2;
  m.hidden = {3};
  m.classes = 2;
  m.activation = "tanh";
  Network net = build_network(m, 37);
  Batch b;
  RngStream s(38, 0);
  for (int i = 0; i < 4; ++i) {
    b.inputs.push_back(s.gaussian({2}));
    b.labels.push_back(i % 2);
  }
  EstimatorConfig cfg;
  cfg.copies = 10000;
  RngStream stream(39, 0);
  auto est = estimate_gradient(net, b, cfg, stream);
  auto ref = bp_grad(net, b);
  auto cmp = compare_gradients(net, est, ref);
  for (std::size_t l = 0; l < net.num_layers(); ++l) CHECK(cmp.per_layer[l] >= 0.9);
}

TEST_CASE("qmc path produces finite estimates pointed along bp") {
  ModelConfig m;
  m.kind = "mlp";
  m.input_dim = 2;
  m.hidden = {3};
  m.classes = 2;
  Network net = build_network(m, 40);
  Batch b;
  RngStream s(41, 0);
  for (int i = 0; i < 4; ++i) {
    b.inputs.push_back(s.gaussian({2}));
    b.labels.push_back(i % 2);
  }
  EstimatorConfig cfg;
  cfg.copies = 4096;
  cfg.qmc = true;
  RngStream stream(42, 0);
  auto est = estimate_gradient(net, b, cfg, stream);
  auto ref = bp_grad(net, b);
  auto cmp = compare_gradients(net, est, ref);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    CHECK(std::isfinite(cmp.per_layer[l]));
    CHECK(cmp.per_layer[l] > 0.5);
  }
}

TEST_CASE("baseline subtraction keeps the expectation and cancels nothing odd") {
  Network net = scalar_dense_net(0.5, LossKind::sum_squares);
  Batch b;
  b.inputs = {Tensor({1}, {1.0})};
  b.labels = {0};
  EstimatorConfig plain;
  plain.copies = 60000;
  plain.modes = {NoiseMode::logit};
  EstimatorConfig based = plain;
  based.baseline = BaselineKind::batch_mean;
  RngStream s1(43, 0), s2(44, 0);
  auto g1 = estimate_gradient(net, b, plain, s1);
  auto g2 = estimate_gradient(net, b, based, s2);
  const auto& a = g1.layers[0].params[0];
  const auto& c = g2.layers[0].params[0];
  const double se = std::sqrt(a.se[0] * a.se[0] + c.se[0] * c.se[0]);
  CHECK(std::fabs(a.grad[0] - c.grad[0]) <= 3.0 * se);
  CHECK(within_3se(c.grad[0], 1.0, c.se[0]));
}

TEST_CASE("odd copy counts with antithetic variates are rejected") {
  EstimatorConfig cfg;
  cfg.copies = 3;
  cfg.antithetic = true;
  CHECK_THROWS_AS(cfg.validate(1), ConfigError);
}

TEST_CASE("mixed modes across copies are rejected") {
  Network net = scalar_dense_net(0.5, LossKind::sum);
  Batch b;
  b.inputs = {Tensor({1}, {1.0})};
  b.labels = {0};
  auto c1 = collect_copies(net, b, logit_plan(net, 0, 0.5), 2, 45, false);
  NoisePlan wp = NoisePlan::all_off(1);
  wp.layers[0].mode = NoiseMode::weight;
  wp.layers[0].sigma = 0.5;
  auto c2 = collect_copies(net, b, wp, 2, 46, false);
  c1.push_back(c2[0]);
  CHECK_THROWS_AS(lr_dense_grad(net, 0, c1, false), ContractError);
}
