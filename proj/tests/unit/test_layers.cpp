#include <cmath>
#include <doctest.h>

#include "lrnet/errors.hpp"
#include "lrnet/layers.hpp"

using namespace lrnet;

namespace {

DenseLayer make_dense(std::size_t in, std::size_t out, Activation act,
                      std::vector<double> w, std::vector<double> b) {
  return DenseLayer{in, out, act, Tensor({out, in}, std::move(w)), Tensor({out}, std::move(b))};
}

}  // namespace

TEST_CASE("dense identity passthrough") {
  DenseLayer l = make_dense(2, 2, Activation::identity, {1, 0, 0, 1}, {0, 0});
  Tensor y = dense_forward(l, Tensor({2}, {1, 0}), nullptr);
  CHECK(y[0] == 1);
  CHECK(y[1] == 0);
}

TEST_CASE("dense relu against hand matrix multiply") {
  DenseLayer l = make_dense(2, 2, Activation::relu, {1, 1, 0, 1}, {0.5, -0.5});
  Tensor y = dense_forward(l, Tensor({2}, {1, 2}), nullptr);
  CHECK(y[0] == doctest::Approx(3.5));
  CHECK(y[1] == doctest::Approx(1.5));
}

TEST_CASE("dense logit noise vanishes in the small-sigma limit") {
  DenseLayer l = make_dense(2, 2, Activation::tanh_fn, {0.3, -0.2, 0.8, 0.1}, {0.05, -0.02});
  const Tensor x({2}, {0.4, -1.1});
  const Tensor base = dense_forward(l, x, nullptr);
  LayerNoise noise;
  noise.mode = NoiseMode::logit;
  noise.sigma = 1e-300;
  RngStream s(5, 0);
  LayerFrag frag = draw_layer_noise(Layer{l}, noise, s, nullptr);
  Tensor y = dense_forward(l, x, &std::get<DenseFrag>(frag));
  for (std::size_t i = 0; i < 2; ++i) CHECK(y[i] == doctest::Approx(base[i]).epsilon(1e-12));
}

TEST_CASE("dense shape mismatch is a contract violation") {
  DenseLayer l = make_dense(2, 2, Activation::identity, {1, 0, 0, 1}, {0, 0});
  CHECK_THROWS_AS(dense_forward(l, Tensor({3}), nullptr), ContractError);
}

TEST_CASE("conv all-ones fixture") {
  Conv2DLayer l;
  l.c_in = 1;
  l.c_out = 1;
  l.kh = l.kw = 2;
  l.h_in = l.w_in = 3;
  l.w = Tensor::full({1, 1, 2, 2}, 1.0);
  l.b = Tensor({1});
  Tensor v = conv2d_forward(l, Tensor::full({1, 3, 3}, 1.0), nullptr);
  CHECK(v.shape() == std::vector<std::size_t>{1, 2, 2});
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == doctest::Approx(4.0));
}

TEST_CASE("one-by-one kernel with unit weight is the identity") {
  Conv2DLayer l;
  l.c_in = 1;
  l.c_out = 1;
  l.kh = l.kw = 1;
  l.h_in = 2;
  l.w_in = 2;
  l.w = Tensor({1, 1, 1, 1}, {1.0});
  l.b = Tensor({1});
  const Tensor x({1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
  Tensor v = conv2d_forward(l, x, nullptr);
  for (std::size_t i = 0; i < 4; ++i) CHECK(v[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv weight mode with zero noise equals off mode") {
  Conv2DLayer l;
  l.c_in = 1;
  l.c_out = 2;
  l.kh = l.kw = 2;
  l.h_in = l.w_in = 3;
  l.w = Tensor({2, 1, 2, 2}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, 0.8});
  l.b = Tensor({2}, {0.25, -0.75});
  const Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor off = conv2d_forward(l, x, nullptr);
  ConvFrag frag;
  frag.mode = NoiseMode::weight;
  frag.sigma = 0.5;
  frag.eps_w = Tensor({2, 1, 2, 2});
  frag.eps_b = Tensor({2});
  Tensor noisy = conv2d_forward(l, x, &frag);
  for (std::size_t i = 0; i < off.size(); ++i) CHECK(noisy[i] == off[i]);
}

TEST_CASE("conv rejects oversize kernels") {
  Conv2DLayer l;
  l.c_in = 1;
  l.c_out = 1;
  l.kh = 4;
  l.kw = 2;
  l.h_in = 3;
  l.w_in = 3;
  l.w = Tensor({1, 1, 4, 2});
  l.b = Tensor({1});
  CHECK_THROWS_AS(conv2d_forward(l, Tensor({1, 3, 3}), nullptr), ContractError);
}

TEST_CASE("vanilla rnn zero weights give zero hidden states") {
  RnnCellLayer l;
  l.kind = RnnKind::vanilla;
  l.d_x = 2;
  l.d_h = 3;
  l.steps = 4;
  l.w_hh = Tensor({3, 3});
  l.w_xh = Tensor({3, 2});
  l.b_hh = Tensor({3});
  l.b_xh = Tensor({3});
  Tensor h = rnn_cell_forward(l, Tensor::full({4, 2}, 1.0), nullptr);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == 0.0);
}

TEST_CASE("single-step scalar rnn matches tanh") {
  RnnCellLayer l;
  l.kind = RnnKind::vanilla;
  l.d_x = 1;
  l.d_h = 1;
  l.steps = 1;
  l.w_hh = Tensor({1, 1});
  l.w_xh = Tensor({1, 1}, {1.0});
  l.b_hh = Tensor({1});
  l.b_xh = Tensor({1});
  Tensor h = rnn_cell_forward(l, Tensor({1, 1}, {0.5}), nullptr);
  CHECK(h[0] == doctest::Approx(std::tanh(0.5)));
}

TEST_CASE("rnn per-step noises are distinct draws") {
  RnnCellLayer l;
  l.kind = RnnKind::vanilla;
  l.d_x = 1;
  l.d_h = 2;
  l.steps = 3;
  l.w_hh = Tensor({2, 2});
  l.w_xh = Tensor({2, 1});
  l.b_hh = Tensor({2});
  l.b_xh = Tensor({2});
  LayerNoise noise;
  noise.mode = NoiseMode::logit;
  noise.sigma = 1.0;
  RngStream s(3, 1);
  LayerFrag frag = draw_layer_noise(Layer{l}, noise, s, nullptr);
  const auto& rf = std::get<RnnFrag>(frag);
  CHECK(rf.eps_hh.size() == 3);
  CHECK(rf.eps_hh[0].values() != rf.eps_hh[1].values());
  CHECK(rf.eps_xh[1].values() != rf.eps_xh[2].values());
}

TEST_CASE("rnn zero steps rejected") {
  RnnCellLayer l;
  l.kind = RnnKind::vanilla;
  l.d_x = 1;
  l.d_h = 1;
  l.steps = 0;
  l.w_hh = Tensor({1, 1});
  l.w_xh = Tensor({1, 1});
  l.b_hh = Tensor({1});
  l.b_xh = Tensor({1});
  CHECK_THROWS_AS(rnn_cell_forward(l, Tensor({1, 1}), nullptr), ContractError);
}

TEST_CASE("gru and lstm stay bounded and depend on input") {
  for (RnnKind kind : {RnnKind::gru, RnnKind::lstm}) {
    RnnCellLayer l;
    l.kind = kind;
    l.d_x = 2;
    l.d_h = 3;
    l.steps = 5;
    const std::size_t gd = l.gates() * l.d_h;
    RngStream s(17, static_cast<std::uint64_t>(kind));
    l.w_hh = s.gaussian({gd, 3});
    l.w_xh = s.gaussian({gd, 2});
    l.b_hh = s.gaussian({gd});
    l.b_xh = s.gaussian({gd});
    Tensor x = s.gaussian({5, 2});
    Tensor h = rnn_cell_forward(l, x, nullptr);
    for (std::size_t i = 0; i < h.size(); ++i) CHECK(std::fabs(h[i]) <= 1.0);
    Tensor x2 = x;
    x2[0] += 0.5;
    Tensor h2 = rnn_cell_forward(l, x2, nullptr);
    CHECK(h.values() != h2.values());
  }
}

namespace {

GraphData two_node_path() {
  Tensor f({2, 2}, {1, 0, 0, 1});
  return make_graph(f, {{0, 1}}, {0, 1});
}

}  // namespace

TEST_CASE("single self-looped node reduces gcn to a dense layer") {
  Tensor f({1, 2}, {0.3, -0.8});
  GraphData g = make_graph(f, {}, {0});
  GcnLayer l{2, 2, Activation::identity, Tensor({2, 2}, {1, 0, 0, 1})};
  Tensor h = gcn_forward(l, g, g.features, nullptr);
  CHECK(h.at(0, 0) == doctest::Approx(0.3));
  CHECK(h.at(0, 1) == doctest::Approx(-0.8));
}

TEST_CASE("two-node path normalizes all adjacency entries to one half") {
  GraphData g = two_node_path();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(g.norm_adj.at(i, j) == doctest::Approx(0.5));
}

TEST_CASE("gcn with identity weights returns the aggregated features") {
  GraphData g = two_node_path();
  GcnLayer l{2, 2, Activation::identity, Tensor({2, 2}, {1, 0, 0, 1})};
  Tensor h = gcn_forward(l, g, g.features, nullptr);
  const Tensor xhat = matmul(g.norm_adj, g.features);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == doctest::Approx(xhat[i]));
}

TEST_CASE("gcn normalization matches the entrywise formula on random graphs") {
  RngStream s(11, 0);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = 4 + static_cast<std::size_t>(s.next_uniform() * 4);
    std::vector<std::pair<int, int>> edges;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        if (s.next_uniform() < 0.4) edges.emplace_back(static_cast<int>(a), static_cast<int>(b));
    GraphData g = make_graph(Tensor({n, 1}), edges, std::vector<int>(n, 0));
    std::vector<double> deg(n, 1.0);
    for (auto [a, b] : g.edges) {
      deg[static_cast<std::size_t>(a)] += 1;
      deg[static_cast<std::size_t>(b)] += 1;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const bool adj = i == j || g.has_edge(static_cast<int>(i), static_cast<int>(j));
        const double expect = adj ? 1.0 / std::sqrt(deg[i] * deg[j]) : 0.0;
        CHECK(g.norm_adj.at(i, j) == doctest::Approx(expect).epsilon(1e-12));
      }
  }
}

TEST_CASE("gat attention rows sum to one and singleton neighborhoods pin alpha") {
  Tensor f({3, 2}, {1, 0, 0, 1, 1, 1});
  GraphData g = make_graph(f, {{0, 1}}, {0, 1, 0});  // node 2: self-loop only
  GatLayer l;
  l.in = 2;
  l.out = 2;
  l.act = Activation::identity;
  RngStream s(19, 0);
  l.w = s.gaussian({2, 2});
  l.a = s.gaussian({4});
  GatCache cache;
  gat_forward(l, g, g.features, nullptr, &cache);
  std::size_t pair = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double row = 0;
    for (std::size_t q = 0; q < g.neighborhoods[i].size(); ++q) row += cache.alpha[pair + q];
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    pair += g.neighborhoods[i].size();
  }
  // singleton neighborhood: alpha == 1 regardless of attention weights
  CHECK(cache.alpha[pair - 1] == doctest::Approx(1.0));
}

TEST_CASE("zero attention weights give uniform coefficients") {
  Tensor f({3, 2}, {1, 0, 0, 1, 1, 1});
  GraphData g = make_graph(f, {{0, 1}, {0, 2}}, {0, 1, 0});
  GatLayer l;
  l.in = 2;
  l.out = 2;
  l.act = Activation::identity;
  RngStream s(23, 0);
  l.w = s.gaussian({2, 2});
  l.a = Tensor({4});
  GatCache cache;
  gat_forward(l, g, g.features, nullptr, &cache);
  // node 0 neighborhood is {0,1,2}
  CHECK(cache.alpha[0] == doctest::Approx(1.0 / 3.0));
  CHECK(cache.alpha[1] == doctest::Approx(1.0 / 3.0));
  CHECK(cache.alpha[2] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("lif hand recursion") {
  LifLayer l;
  l.in = 1;
  l.out = 1;
  l.leak = 0.5;
  l.v_th = 1.0;
  l.steps = 4;
  l.w = Tensor({1, 1}, {0.6});
  std::vector<LifCache> caches;
  lif_forward({&l}, Tensor::full({4, 1}, 1.0), {}, &caches);
  CHECK(caches[0].u[0][0] == doctest::Approx(0.6));
  CHECK(caches[0].spikes[0][0] == 0.0);
  CHECK(caches[0].u[1][0] == doctest::Approx(0.9));
  CHECK(caches[0].spikes[1][0] == 0.0);
  CHECK(caches[0].u[2][0] == doctest::Approx(1.05));
  CHECK(caches[0].spikes[2][0] == 1.0);  // ties and above spike
  CHECK(caches[0].u[3][0] == doctest::Approx(0.6));  // reset zeroed the carry
}

TEST_CASE("all-zero spike input never fires") {
  LifLayer l;
  l.in = 3;
  l.out = 2;
  l.leak = 0.5;
  l.v_th = 1.0;
  l.steps = 5;
  RngStream s(31, 0);
  l.w = s.gaussian({2, 3});
  Tensor out = lif_forward({&l}, Tensor({5, 3}), {});
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("lif output stays binary and rejects non-binary input") {
  LifLayer a;
  a.in = 4;
  a.out = 3;
  a.leak = 0.3;
  a.v_th = 0.5;
  a.steps = 6;
  LifLayer b = a;
  b.in = 3;
  b.out = 2;
  RngStream s(37, 0);
  a.w = s.gaussian({3, 4});
  b.w = s.gaussian({2, 3});
  Tensor x({6, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = s.next_uniform() < 0.5 ? 1.0 : 0.0;
  Tensor out = lif_forward({&a, &b}, x, {});
  for (std::size_t i = 0; i < out.size(); ++i) CHECK((out[i] == 0.0 || out[i] == 1.0));
  Tensor bad = x;
  bad[0] = 0.5;
  CHECK_THROWS_AS(lif_forward({&a, &b}, bad, {}), ContractError);
}

TEST_CASE("conv with 1x1 geometry equals the reshaped dense layer") {
  RngStream s(41, 0);
  Conv2DLayer c;
  c.c_in = 3;
  c.c_out = 2;
  c.kh = c.kw = 1;
  c.h_in = c.w_in = 1;
  c.act = Activation::identity;
  c.w = s.gaussian({2, 3, 1, 1});
  c.b = s.gaussian({2});
  DenseLayer d{3, 2, Activation::identity, c.w.reshaped({2, 3}), c.b};
  const Tensor x = s.gaussian({3});
  Tensor yd = dense_forward(d, x, nullptr);
  Tensor yc = conv2d_forward(c, x.reshaped({3, 1, 1}), nullptr);
  for (std::size_t i = 0; i < 2; ++i) CHECK(std::fabs(yc[i] - yd[i]) <= 1e-12);
}

TEST_CASE("cross correlation agrees with a brute-force loop") {
  RngStream s(43, 0);
  const Tensor x = s.gaussian({5, 4});
  const Tensor k = s.gaussian({3, 2});
  const Tensor out = cross_correlate_valid(x, k);
  REQUIRE(out.shape() == std::vector<std::size_t>{3, 3});
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      double acc = 0;
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t l = 0; l < 2; ++l) acc += x.at(a + j, b + l) * k.at(j, l);
      CHECK(out.at(a, b) == doctest::Approx(acc));
    }
}
