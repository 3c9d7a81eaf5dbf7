#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lrnet/data.hpp"
#include "lrnet/evaluation.hpp"
#include "lrnet/network.hpp"
#include "lrnet/training.hpp"

namespace lrnet {

struct ModelConfig {
  std::string kind;  // mlp | cnn | rnn | gcn | gat | snn
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t classes = 2;
  std::string activation = "tanh";
  // cnn
  std::vector<std::size_t> image;     // [h, w]
  std::vector<std::size_t> channels;  // conv output channels
  std::size_t kernel = 3;
  // rnn
  std::string cell = "vanilla";
  std::size_t vocab = 0;
  std::size_t steps = 8;  // rnn sequence length / snn spike-train length
  // snn
  double leak = 0.5;
  double v_th = 1.0;
};

struct DataConfig {
  std::string kind;  // blobs | idx | edge_list | token_csv
  std::string images, labels;  // idx
  std::string nodes, edges;    // edge_list
  std::string path;            // token_csv
  std::optional<std::size_t> limit;
  std::vector<int> classes_filter;
  std::size_t downsample = 1;
  double test_fraction = 0.3;
  double train_fraction = 0.5;  // graph node split
  // blobs
  std::size_t classes = 2, per_class = 100, dim = 2;
  double separation = 10.0;
  std::size_t vocab_limit = 64;
};

struct AblationConfig {
  std::vector<std::size_t> copies_grid{100, 1000, 10000};
  std::size_t seeds = 10;
  std::size_t batch = 16;
  std::vector<std::string> variants;  // empty = default grid
};

struct ExperimentConfig {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  std::vector<AttackSpec> attacks;
  AblationConfig ablation;
  std::uint64_t seed = 0;
  // per-layer noise-mode directive, resolved once the network is built
  std::string mode_default = "logit";  // logit | weight | hybrid
  std::map<std::size_t, std::string> mode_overrides;
};

/// Parses and fully validates the JSON config; unknown keys are rejected
/// with the offending key path. No computation happens before validation.
ExperimentConfig load_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config(const std::string& json_text);

/// The resolved (defaults filled) config as canonical JSON text.
std::string resolved_config_json(const ExperimentConfig& cfg);

Dataset build_dataset(const DataConfig& cfg, std::uint64_t seed);
std::pair<Dataset, Dataset> build_split(const DataConfig& cfg, std::uint64_t seed);
Network build_network(const ModelConfig& cfg, std::uint64_t seed);

/// Per-layer weight-noise on the first two conv layers (first two layers
/// when the net has no convs), logit-noise elsewhere.
std::vector<NoiseMode> hybrid_modes(const Network& net);

/// Runs train + final evaluations; writes metrics.csv, resolved_config.json
/// and model.json into out_dir.
void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

/// Gradient-quality sweep: per (variant, copy count, seed, layer), cosine
/// similarity of estimate_gradient against bp_grad on a fixed batch; writes
/// long-format similarity.csv (plus mean/sd rows per cell).
void ablation_run(const ExperimentConfig& cfg, const std::string& out_dir);

/// Loads model.json and evaluates the attack list; writes evaluation.csv.
void evaluate_run(const ExperimentConfig& cfg, const std::string& model_path,
                  const std::string& out_dir);

void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

}  // namespace lrnet
