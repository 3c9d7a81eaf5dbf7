#pragma once

#include <cstddef>
#include <optional>
#include <variant>
#include <vector>

#include "lrnet/graph.hpp"
#include "lrnet/rng.hpp"
#include "lrnet/tensor.hpp"

namespace lrnet {

enum class Activation { identity, relu, tanh_fn, sigmoid };
double activate(Activation a, double v);
double activate_grad(Activation a, double v);  // derivative at pre-activation v
Tensor activate(Activation a, const Tensor& v);

// ---------------------------------------------------------------------------
// Noise plans

enum class NoiseMode { off, logit, weight };

struct LayerNoise {
  NoiseMode mode = NoiseMode::off;
  double sigma = 0.1;
  double sigma_attn = 0.1;  // attention-logit noise magnitude (GAT only)
  bool trainable_sigma = false;
};

/// Per-layer injection plan for one forward copy.
struct NoisePlan {
  std::vector<LayerNoise> layers;

  static NoisePlan all_off(std::size_t n_layers) {
    NoisePlan p;
    p.layers.resize(n_layers);
    return p;
  }
  bool any_on() const {
    for (const auto& l : layers)
      if (l.mode != NoiseMode::off) return true;
    return false;
  }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Layer parameter blocks

struct DenseLayer {
  std::size_t in = 0, out = 0;
  Activation act = Activation::identity;
  Tensor w;  // out x in
  Tensor b;  // out
};

struct Conv2DLayer {
  std::size_t c_in = 0, c_out = 0, kh = 0, kw = 0;
  std::size_t h_in = 0, w_in = 0;  // fixed input geometry (valid padding, stride 1)
  Activation act = Activation::relu;
  Tensor w;  // c_out x c_in x kh x kw
  Tensor b;  // c_out
  std::size_t h_out() const { return h_in - kh + 1; }
  std::size_t w_out() const { return w_in - kw + 1; }
};

enum class RnnKind { vanilla, gru, lstm };

struct RnnCellLayer {
  RnnKind kind = RnnKind::vanilla;
  std::size_t d_x = 0, d_h = 0, steps = 0;
  Tensor w_hh;  // (gates*d_h) x d_h
  Tensor w_xh;  // (gates*d_h) x d_x
  Tensor b_hh;  // gates*d_h
  Tensor b_xh;  // gates*d_h
  std::size_t gates() const {
    return kind == RnnKind::vanilla ? 1 : (kind == RnnKind::gru ? 3 : 4);
  }
};

struct GcnLayer {
  std::size_t in = 0, out = 0;
  Activation act = Activation::identity;
  Tensor w;  // in x out
};

struct GatLayer {
  std::size_t in = 0, out = 0;
  Activation act = Activation::identity;
  double leaky_slope = 0.2;         // attention nonlinearity
  bool aggregate_self = false;      // literal alpha_ij * v_i variant
  Tensor w;  // in x out
  Tensor a;  // 2*out attention weights
};

struct LifLayer {
  std::size_t in = 0, out = 0;
  double leak = 0.5;  // 0 < k < 1
  double v_th = 1.0;  // > 0
  std::size_t steps = 8;
  Tensor w;  // out x in
};

using Layer = std::variant<DenseLayer, Conv2DLayer, RnnCellLayer, GcnLayer, GatLayer, LifLayer>;

// ---------------------------------------------------------------------------
// Trace fragments: the injected noises plus the inputs they multiplied,
// recorded per copy (noise tensors are shared by every sample in the copy).

struct DenseFrag {
  NoiseMode mode = NoiseMode::off;
  double sigma = 0;
  Tensor eps;           // out (logit mode)
  Tensor eps_w, eps_b;  // weight mode
  std::vector<Tensor> inputs;  // per sample, d_in
};

struct ConvFrag {
  NoiseMode mode = NoiseMode::off;
  double sigma = 0;
  Tensor eps;           // c_out x h_out x w_out (logit mode)
  Tensor eps_w, eps_b;  // weight mode
  std::vector<Tensor> inputs;  // per sample, c_in x h_in x w_in
};

struct RnnFrag {
  NoiseMode mode = NoiseMode::off;
  double sigma = 0;
  std::vector<Tensor> eps_hh, eps_xh;          // per step, gates*d_h (logit mode)
  Tensor eps_whh, eps_wxh, eps_bhh, eps_bxh;   // weight mode
  std::vector<std::vector<Tensor>> h_prev;     // [sample][step] d_h
  std::vector<std::vector<Tensor>> x_in;       // [sample][step] d_x
};

struct GcnFrag {
  NoiseMode mode = NoiseMode::off;
  double sigma = 0;
  Tensor eps;    // |V| x out (logit mode)
  Tensor eps_w;  // weight mode
  Tensor xhat;   // |V| x in, the normalized-adjacency-aggregated input
};

struct GatFrag {
  NoiseMode mode = NoiseMode::off;
  double sigma = 0, sigma_attn = 0;
  Tensor eps_feat;      // |V| x out (xi noise)
  Tensor eps_edge;      // zeta noise, node-major over in-neighborhoods
  Tensor eps_w, eps_a;  // weight mode
  Tensor h_in;  // |V| x in
  Tensor v;     // |V| x out, realized perturbed features
};

struct LifFrag {
  NoiseMode mode = NoiseMode::off;
  double sigma = 0;
  std::vector<Tensor> eps;  // per step, d_out (logit mode)
  Tensor eps_w;             // weight mode
  std::vector<std::vector<Tensor>> x_in;  // [sample][step] d_in spikes
};

using LayerFrag = std::variant<DenseFrag, ConvFrag, RnnFrag, GcnFrag, GatFrag, LifFrag>;

/// Record of one forward copy: fragments for exactly the perturbed layers
/// plus the per-sample losses.
struct ForwardTrace {
  std::vector<std::optional<LayerFrag>> frags;
  std::vector<double> losses;
  double mean_loss() const;
};

// ---------------------------------------------------------------------------
// Noise bookkeeping

/// Number of standard-normal draws layer `l` consumes under `mode`
/// (graph layers need the graph for |V| and the edge count).
std::size_t layer_noise_dim(const Layer& l, NoiseMode mode, const GraphData* graph);

/// Draws the layer's noise tensors from `stream` in the fixed order
/// (row-major per object, objects in declaration order).
LayerFrag draw_layer_noise(const Layer& l, const LayerNoise& noise, RngStream& stream,
                           const GraphData* graph);

/// Same layout, but filled from a precomputed gaussian vector (QMC path).
LayerFrag fill_layer_noise(const Layer& l, const LayerNoise& noise,
                           const double* gaussians, std::size_t count, const GraphData* graph);

/// Bitwise negation of every noise tensor in the fragment (inputs untouched).
void negate_noise(LayerFrag& frag);

// ---------------------------------------------------------------------------
// Forward ops. A null fragment (or mode 'off') runs the plain layer; caches
// are filled when non-null and hold what reverse-mode needs.

struct DenseCache {
  Tensor x, v;
};
struct ConvCache {
  Tensor x, v;
};
struct RnnCache {
  Tensor h, c;               // T x d_h each
  std::vector<Tensor> u, v;  // per step, gates*d_h pre-activations
  Tensor x_seq;              // T x d_x
};
struct GcnCache {
  Tensor xhat, v;
};
struct GatCache {
  Tensor h_in, v;
  std::vector<double> att_logit;  // per directed pair, pre-nonlinearity u_ij
  std::vector<double> alpha;      // softmax-normalized coefficients
  Tensor agg;                     // |V| x out pre-activation aggregate
};
struct LifCache {
  std::vector<Tensor> u;       // per step, membrane potentials d_out
  std::vector<Tensor> spikes;  // per step, d_out
  std::vector<Tensor> x_in;    // per step, d_in
};

Tensor dense_forward(const DenseLayer& l, const Tensor& x, DenseFrag* frag,
                     DenseCache* cache = nullptr);
/// Returns the pre-activation map v (the network applies the activation).
Tensor conv2d_forward(const Conv2DLayer& l, const Tensor& x, ConvFrag* frag,
                      ConvCache* cache = nullptr);
/// x_seq is steps x d_x; returns hidden states h (steps x d_h); cell states
/// go to `c_out` when non-null (LSTM).
Tensor rnn_cell_forward(const RnnCellLayer& l, const Tensor& x_seq, RnnFrag* frag,
                        RnnCache* cache = nullptr, Tensor* c_out = nullptr);
Tensor gcn_forward(const GcnLayer& l, const GraphData& g, const Tensor& h, GcnFrag* frag,
                   GcnCache* cache = nullptr);
Tensor gat_forward(const GatLayer& l, const GraphData& g, const Tensor& h, GatFrag* frag,
                   GatCache* cache = nullptr);
/// Simulates a chain of LIF layers over binary input x_seq (steps x d_0);
/// returns the last layer's spike vector at the last step.
Tensor lif_forward(const std::vector<const LifLayer*>& chain, const Tensor& x_seq,
                   const std::vector<LifFrag*>& frags, std::vector<LifCache>* caches = nullptr);

/// Valid cross-correlation (x star k): out[s,t] = sum_{j,l} x[j+s, l+t] k[j,l].
Tensor cross_correlate_valid(const Tensor& x, const Tensor& k);

}  // namespace lrnet
