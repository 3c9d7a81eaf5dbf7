#include <benchmark/benchmark.h>

#include "lrnet/estimators.hpp"
#include "lrnet/experiment.hpp"
#include "lrnet/oracle.hpp"
#include "lrnet/sobol.hpp"

namespace {

lrnet::Network small_mlp() {
  lrnet::ModelConfig m;
  m.kind = "mlp";
  m.input_dim = 16;
  m.hidden = {32, 32};
  m.classes = 4;
  m.activation = "tanh";
  return lrnet::build_network(m, 42);
}

lrnet::Batch random_batch(std::size_t n, std::size_t dim) {
  lrnet::RngStream s(7, 0);
  lrnet::Batch b;
  for (std::size_t i = 0; i < n; ++i) {
    b.inputs.push_back(s.gaussian({dim}));
    b.labels.push_back(static_cast<int>(i % 4));
  }
  return b;
}

void BM_DenseForward(benchmark::State& state) {
  lrnet::Network net = small_mlp();
  lrnet::Batch batch = random_batch(32, 16);
  lrnet::ForwardTrace trace;
  trace.frags.resize(net.num_layers());
  for (auto _ : state) {
    lrnet::run_forward(net, batch, trace);
    benchmark::DoNotOptimize(trace.losses);
  }
}
BENCHMARK(BM_DenseForward);

void BM_EstimateGradient(benchmark::State& state) {
  lrnet::Network net = small_mlp();
  lrnet::Batch batch = random_batch(8, 16);
  lrnet::EstimatorConfig cfg;
  cfg.copies = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    lrnet::RngStream stream(11, 0);
    auto est = lrnet::estimate_gradient(net, batch, cfg, stream);
    benchmark::DoNotOptimize(est.copies_used);
  }
}
BENCHMARK(BM_EstimateGradient)->Arg(64)->Arg(512);

void BM_BpGrad(benchmark::State& state) {
  lrnet::Network net = small_mlp();
  lrnet::Batch batch = random_batch(32, 16);
  for (auto _ : state) {
    auto g = lrnet::bp_grad(net, batch);
    benchmark::DoNotOptimize(g.layers.size());
  }
}
BENCHMARK(BM_BpGrad);

void BM_SobolPoints(benchmark::State& state) {
  for (auto _ : state) {
    auto pts = lrnet::sobol_points(static_cast<std::size_t>(state.range(0)), 1024, 1);
    benchmark::DoNotOptimize(pts.data());
  }
}
BENCHMARK(BM_SobolPoints)->Arg(16)->Arg(256);

void BM_NormalQuantile(benchmark::State& state) {
  double u = 0.000001;
  for (auto _ : state) {
    u += 1e-7;
    if (u >= 1.0) u = 1e-7;
    benchmark::DoNotOptimize(lrnet::gaussian_from_uniform(u));
  }
}
BENCHMARK(BM_NormalQuantile);

}  // namespace

BENCHMARK_MAIN();
