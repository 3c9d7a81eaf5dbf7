#include "lrnet/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "lrnet/csv.hpp"
#include "lrnet/errors.hpp"
#include "lrnet/oracle.hpp"

namespace lrnet {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown key '" + path + "." + item.key() + "'");
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("invalid value for '") + key + "'");
  }
}

Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh_fn;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + s + "'");
}

RnnKind parse_cell(const std::string& s) {
  if (s == "vanilla") return RnnKind::vanilla;
  if (s == "gru") return RnnKind::gru;
  if (s == "lstm") return RnnKind::lstm;
  throw ConfigError("unknown rnn cell '" + s + "'");
}

Tensor init_tensor(std::vector<std::size_t> shape, std::size_t fan_in, RngStream& stream) {
  Tensor t(std::move(shape));
  const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * stream.next_gaussian();
  return t;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(root, "config",
             {"model", "data", "train", "estimator", "attacks", "ablation", "seed"});
  ExperimentConfig cfg;
  cfg.seed = get_or<std::uint64_t>(root, "seed", 0);

  if (!root.contains("model")) throw ConfigError("missing required section 'model'");
  {
    const json& m = root["model"];
    check_keys(m, "model",
               {"kind", "input_dim", "hidden", "classes", "activation", "image", "channels",
                "kernel", "cell", "vocab", "steps", "leak", "v_th"});
    cfg.model.kind = get_or<std::string>(m, "kind", "");
    if (cfg.model.kind.empty()) throw ConfigError("model.kind is required");
    cfg.model.input_dim = get_or<std::size_t>(m, "input_dim", 0);
    cfg.model.hidden = get_or<std::vector<std::size_t>>(m, "hidden", {});
    cfg.model.classes = get_or<std::size_t>(m, "classes", 2);
    cfg.model.activation = get_or<std::string>(m, "activation", "tanh");
    cfg.model.image = get_or<std::vector<std::size_t>>(m, "image", {});
    cfg.model.channels = get_or<std::vector<std::size_t>>(m, "channels", {});
    cfg.model.kernel = get_or<std::size_t>(m, "kernel", 3);
    cfg.model.cell = get_or<std::string>(m, "cell", "vanilla");
    cfg.model.vocab = get_or<std::size_t>(m, "vocab", 0);
    cfg.model.steps = get_or<std::size_t>(m, "steps", 8);
    cfg.model.leak = get_or<double>(m, "leak", 0.5);
    cfg.model.v_th = get_or<double>(m, "v_th", 1.0);
    parse_activation(cfg.model.activation);  // fail early
  }

  if (!root.contains("data")) throw ConfigError("missing required section 'data'");
  {
    const json& d = root["data"];
    check_keys(d, "data",
               {"kind", "images", "labels", "nodes", "edges", "path", "limit", "classes_filter",
                "downsample", "test_fraction", "train_fraction", "classes", "per_class", "dim",
                "separation", "vocab_limit"});
    cfg.data.kind = get_or<std::string>(d, "kind", "");
    if (cfg.data.kind.empty()) throw ConfigError("data.kind is required");
    cfg.data.images = get_or<std::string>(d, "images", "");
    cfg.data.labels = get_or<std::string>(d, "labels", "");
    cfg.data.nodes = get_or<std::string>(d, "nodes", "");
    cfg.data.edges = get_or<std::string>(d, "edges", "");
    cfg.data.path = get_or<std::string>(d, "path", "");
    if (d.contains("limit")) cfg.data.limit = d["limit"].get<std::size_t>();
    cfg.data.classes_filter = get_or<std::vector<int>>(d, "classes_filter", {});
    cfg.data.downsample = get_or<std::size_t>(d, "downsample", 1);
    cfg.data.test_fraction = get_or<double>(d, "test_fraction", 0.3);
    cfg.data.train_fraction = get_or<double>(d, "train_fraction", 0.5);
    cfg.data.classes = get_or<std::size_t>(d, "classes", 2);
    cfg.data.per_class = get_or<std::size_t>(d, "per_class", 100);
    cfg.data.dim = get_or<std::size_t>(d, "dim", 2);
    cfg.data.separation = get_or<double>(d, "separation", 10.0);
    cfg.data.vocab_limit = get_or<std::size_t>(d, "vocab_limit", 64);
  }

  {
    const json t = root.contains("train") ? root["train"] : json::object();
    check_keys(t, "train",
               {"optimizer", "learning_rate", "momentum", "beta1", "beta2", "epochs",
                "batch_size", "method", "sigma_learning_rate", "snn_steps"});
    const std::string opt = get_or<std::string>(t, "optimizer", "adam");
    if (opt == "adam")
      cfg.train.optimizer = OptimizerKind::adam;
    else if (opt == "sgd")
      cfg.train.optimizer = OptimizerKind::sgd;
    else
      throw ConfigError("unknown optimizer '" + opt + "'");
    const std::string method = get_or<std::string>(t, "method", "lr");
    if (method == "lr")
      cfg.train.method = TrainMethod::lr;
    else if (method == "bp")
      cfg.train.method = TrainMethod::bp;
    else if (method == "es")
      cfg.train.method = TrainMethod::es;
    else
      throw ConfigError("unknown train method '" + method + "'");
    cfg.train.learning_rate =
        get_or<double>(t, "learning_rate", cfg.train.method == TrainMethod::bp ? 1e-3 : 1e-2);
    cfg.train.momentum = get_or<double>(t, "momentum", 0.0);
    cfg.train.beta1 = get_or<double>(t, "beta1", 0.9);
    cfg.train.beta2 = get_or<double>(t, "beta2", 0.999);
    cfg.train.epochs = get_or<std::size_t>(t, "epochs", 10);
    cfg.train.batch_size = get_or<std::size_t>(t, "batch_size", 32);
    cfg.train.sigma_learning_rate = get_or<double>(t, "sigma_learning_rate", 1e-3);
    cfg.train.snn_steps = get_or<std::size_t>(t, "snn_steps", cfg.model.steps);
    cfg.train.seed = cfg.seed;
  }

  {
    const json e = root.contains("estimator") ? root["estimator"] : json::object();
    check_keys(e, "estimator",
               {"copies", "antithetic", "qmc", "schedule", "injection", "modes", "sigma_logit",
                "sigma_weight", "sigma_attn", "baseline", "trainable_sigma"});
    EstimatorConfig& est = cfg.train.estimator;
    est.copies = get_or<std::size_t>(e, "copies", 1000);
    est.antithetic = get_or<bool>(e, "antithetic", true);
    est.qmc = get_or<bool>(e, "qmc", false);
    const std::string sched = get_or<std::string>(e, "schedule", "full_sweep");
    if (sched == "full_sweep")
      est.schedule = Schedule::full_sweep;
    else if (sched == "round_robin")
      est.schedule = Schedule::round_robin;
    else
      throw ConfigError("unknown schedule '" + sched + "'");
    const std::string inj = get_or<std::string>(e, "injection", "layerwise");
    if (inj == "layerwise")
      est.injection = Injection::layerwise;
    else if (inj == "simultaneous")
      est.injection = Injection::simultaneous;
    else
      throw ConfigError("unknown injection '" + inj + "'");
    est.sigma_logit = get_or<double>(e, "sigma_logit", 0.1);
    est.sigma_weight = get_or<double>(e, "sigma_weight", 1e-3);
    est.sigma_attn = get_or<double>(e, "sigma_attn", 0.1);
    const std::string base = get_or<std::string>(e, "baseline", "none");
    if (base == "none")
      est.baseline = BaselineKind::none;
    else if (base == "batch_mean")
      est.baseline = BaselineKind::batch_mean;
    else
      throw ConfigError("unknown baseline '" + base + "'");
    est.trainable_sigma = get_or<bool>(e, "trainable_sigma", false);
    if (e.contains("modes")) {
      const json& m = e["modes"];
      check_keys(m, "estimator.modes", {"default", "overrides"});
      cfg.mode_default = get_or<std::string>(m, "default", "logit");
      if (cfg.mode_default != "logit" && cfg.mode_default != "weight" &&
          cfg.mode_default != "hybrid")
        throw ConfigError("estimator.modes.default must be logit|weight|hybrid");
      if (m.contains("overrides")) {
        for (const auto& item : m["overrides"].items()) {
          const std::string& v = item.value().get_ref<const std::string&>();
          if (v != "logit" && v != "weight" && v != "off")
            throw ConfigError("estimator.modes.overrides values must be logit|weight|off");
          cfg.mode_overrides[std::stoul(item.key())] = v;
        }
      }
    }
  }

  if (root.contains("attacks")) {
    if (!root["attacks"].is_array()) throw ConfigError("attacks must be an array");
    for (const auto& a : root["attacks"]) {
      check_keys(a, "attacks[]",
                 {"method", "epsilon", "iterations", "step_size", "ratio", "momentum_decay"});
      AttackSpec spec;
      spec.method = attack_from_name(get_or<std::string>(a, "method", "fgsm"));
      spec.epsilon = get_or<double>(a, "epsilon", 8.0 / 255.0);
      spec.iterations = get_or<int>(a, "iterations", 5);
      spec.step_size = get_or<double>(a, "step_size", 0.01);
      spec.ratio = get_or<double>(a, "ratio", 0.5);
      spec.momentum_decay = get_or<double>(a, "momentum_decay", 1.0);
      spec.validate();
      cfg.attacks.push_back(spec);
    }
  }

  {
    const json ab = root.contains("ablation") ? root["ablation"] : json::object();
    check_keys(ab, "ablation", {"copies_grid", "seeds", "batch", "variants"});
    cfg.ablation.copies_grid =
        get_or<std::vector<std::size_t>>(ab, "copies_grid", {100, 1000, 10000});
    cfg.ablation.seeds = get_or<std::size_t>(ab, "seeds", 10);
    cfg.ablation.batch = get_or<std::size_t>(ab, "batch", 16);
    cfg.ablation.variants = get_or<std::vector<std::string>>(ab, "variants", {});
  }

  cfg.train.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ": cannot open config file");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_experiment_config(ss.str());
}

// --- builders -------------------------------------------------------------

Dataset build_dataset(const DataConfig& cfg, std::uint64_t seed) {
  Dataset d;
  if (cfg.kind == "blobs") {
    RngStream s(seed, 0xB10B5);
    d = synth_blobs(cfg.classes, cfg.per_class, cfg.dim, cfg.separation, s);
  } else if (cfg.kind == "idx") {
    d = load_idx(cfg.images, cfg.labels, cfg.limit);
    if (!cfg.classes_filter.empty()) d = filter_classes(d, cfg.classes_filter);
    if (cfg.downsample > 1) d = downsample_images(d, cfg.downsample);
  } else if (cfg.kind == "edge_list") {
    d.modality = Modality::graph;
    d.graph = load_edge_list(cfg.nodes, cfg.edges);
    int maxl = 0;
    for (int l : d.graph.labels) maxl = std::max(maxl, l);
    d.classes = static_cast<std::size_t>(maxl + 1);
  } else if (cfg.kind == "token_csv") {
    d = load_token_csv(cfg.path, cfg.vocab_limit);
  } else {
    throw ConfigError("unknown data kind '" + cfg.kind + "'");
  }
  return d;
}

std::pair<Dataset, Dataset> build_split(const DataConfig& cfg, std::uint64_t seed) {
  Dataset d = build_dataset(cfg, seed);
  if (d.modality == Modality::graph) {
    // node splits live in the masks; both halves share the graph
    RngStream s(seed, 0x5B117);
    const std::size_t n = d.graph.num_nodes();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j =
          static_cast<std::size_t>(s.next_uniform() * static_cast<double>(i));
      std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
    }
    const std::size_t n_train =
        static_cast<std::size_t>(cfg.train_fraction * static_cast<double>(n));
    d.graph.train_mask.assign(n, 0);
    d.graph.test_mask.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_train)
        d.graph.train_mask[idx[i]] = 1;
      else
        d.graph.test_mask[idx[i]] = 1;
    }
    return {d, d};
  }
  RngStream s(seed, 0x5B117);
  auto [train, test] = split_dataset(d, 1.0 - cfg.test_fraction, s);
  return {std::move(train), std::move(test)};
}

Network build_network(const ModelConfig& cfg, std::uint64_t seed) {
  RngStream stream(seed, 0x1217);
  Network net;
  const Activation act = parse_activation(cfg.activation);

  if (cfg.kind == "mlp") {
    net.kind = NetKind::feedforward;
    std::size_t prev = cfg.input_dim;
    for (std::size_t h : cfg.hidden) {
      DenseLayer l{prev, h, act, init_tensor({h, prev}, prev, stream), Tensor({h})};
      net.layers.emplace_back(std::move(l));
      prev = h;
    }
    DenseLayer out{prev, cfg.classes, Activation::identity,
                   init_tensor({cfg.classes, prev}, prev, stream), Tensor({cfg.classes})};
    net.layers.emplace_back(std::move(out));
  } else if (cfg.kind == "cnn") {
    net.kind = NetKind::feedforward;
    if (cfg.image.size() != 2) throw ConfigError("cnn model needs image: [h, w]");
    std::size_t h = cfg.image[0], w = cfg.image[1], c_prev = 1;
    for (std::size_t c : cfg.channels) {
      Conv2DLayer l;
      l.c_in = c_prev;
      l.c_out = c;
      l.kh = l.kw = cfg.kernel;
      l.h_in = h;
      l.w_in = w;
      l.act = act == Activation::tanh_fn ? Activation::tanh_fn : Activation::relu;
      l.w = init_tensor({c, c_prev, cfg.kernel, cfg.kernel},
                        c_prev * cfg.kernel * cfg.kernel, stream);
      l.b = Tensor({c});
      h = l.h_out();
      w = l.w_out();
      c_prev = c;
      net.layers.emplace_back(std::move(l));
    }
    const std::size_t flat = c_prev * h * w;
    DenseLayer out{flat, cfg.classes, Activation::identity,
                   init_tensor({cfg.classes, flat}, flat, stream), Tensor({cfg.classes})};
    net.layers.emplace_back(std::move(out));
  } else if (cfg.kind == "rnn") {
    net.kind = NetKind::recurrent;
    if (cfg.vocab == 0 || cfg.hidden.empty())
      throw ConfigError("rnn model needs vocab and hidden");
    RnnCellLayer cell;
    cell.kind = parse_cell(cfg.cell);
    cell.d_x = cfg.vocab;
    cell.d_h = cfg.hidden[0];
    cell.steps = cfg.steps;
    const std::size_t gd = cell.gates() * cell.d_h;
    cell.w_hh = init_tensor({gd, cell.d_h}, cell.d_h, stream);
    cell.w_xh = init_tensor({gd, cell.d_x}, cell.d_x, stream);
    cell.b_hh = Tensor({gd});
    cell.b_xh = Tensor({gd});
    net.layers.emplace_back(std::move(cell));
    DenseLayer out{cfg.hidden[0], cfg.classes, Activation::identity,
                   init_tensor({cfg.classes, cfg.hidden[0]}, cfg.hidden[0], stream),
                   Tensor({cfg.classes})};
    net.layers.emplace_back(std::move(out));
  } else if (cfg.kind == "gcn") {
    net.kind = NetKind::graph;
    std::size_t prev = cfg.input_dim;
    for (std::size_t h : cfg.hidden) {
      GcnLayer l{prev, h, act, init_tensor({prev, h}, prev, stream)};
      net.layers.emplace_back(std::move(l));
      prev = h;
    }
    GcnLayer out{prev, cfg.classes, Activation::identity,
                 init_tensor({prev, cfg.classes}, prev, stream)};
    net.layers.emplace_back(std::move(out));
  } else if (cfg.kind == "gat") {
    net.kind = NetKind::graph;
    std::size_t prev = cfg.input_dim;
    for (std::size_t h : cfg.hidden) {
      GatLayer l;
      l.in = prev;
      l.out = h;
      l.act = act;
      l.w = init_tensor({prev, h}, prev, stream);
      l.a = init_tensor({2 * h}, 2 * h, stream);
      net.layers.emplace_back(std::move(l));
      prev = h;
    }
    GatLayer out;
    out.in = prev;
    out.out = cfg.classes;
    out.act = Activation::identity;
    out.w = init_tensor({prev, cfg.classes}, prev, stream);
    out.a = init_tensor({2 * cfg.classes}, 2 * cfg.classes, stream);
    net.layers.emplace_back(std::move(out));
  } else if (cfg.kind == "snn") {
    net.kind = NetKind::spiking;
    if (cfg.hidden.empty()) throw ConfigError("snn model needs hidden layer sizes");
    std::size_t prev = cfg.input_dim;
    for (std::size_t h : cfg.hidden) {
      LifLayer l;
      l.in = prev;
      l.out = h;
      l.leak = cfg.leak;
      l.v_th = cfg.v_th;
      l.steps = cfg.steps;
      l.w = init_tensor({h, prev}, prev, stream);
      // positive drive bias keeps early spiking alive
      for (std::size_t i = 0; i < l.w.size(); ++i) l.w[i] = std::fabs(l.w[i]) * 2.0;
      net.layers.emplace_back(std::move(l));
      prev = h;
    }
    DenseLayer out{prev, cfg.classes, Activation::identity,
                   init_tensor({cfg.classes, prev}, prev, stream), Tensor({cfg.classes})};
    net.layers.emplace_back(std::move(out));
  } else {
    throw ConfigError("unknown model kind '" + cfg.kind + "'");
  }
  net.validate();
  return net;
}

std::vector<NoiseMode> hybrid_modes(const Network& net) {
  std::vector<NoiseMode> modes(net.num_layers(), NoiseMode::logit);
  std::size_t assigned = 0;
  bool has_conv = false;
  for (const auto& l : net.layers)
    if (std::holds_alternative<Conv2DLayer>(l)) has_conv = true;
  for (std::size_t i = 0; i < net.num_layers() && assigned < 2; ++i) {
    if (has_conv && !std::holds_alternative<Conv2DLayer>(net.layers[i])) continue;
    modes[i] = NoiseMode::weight;
    ++assigned;
  }
  return modes;
}

namespace {

std::vector<NoiseMode> resolve_modes(const Network& net, const ExperimentConfig& cfg) {
  std::vector<NoiseMode> modes;
  if (cfg.mode_default == "hybrid")
    modes = hybrid_modes(net);
  else
    modes.assign(net.num_layers(),
                 cfg.mode_default == "weight" ? NoiseMode::weight : NoiseMode::logit);
  for (const auto& [idx, v] : cfg.mode_overrides) {
    if (idx >= modes.size())
      throw ConfigError("estimator.modes.overrides index out of range");
    modes[idx] = v == "weight" ? NoiseMode::weight
                               : (v == "off" ? NoiseMode::off : NoiseMode::logit);
  }
  return modes;
}

std::string sigma_header(const Network& net, std::size_t l) {
  return "sigma_" + net.layer_name(l);
}

}  // namespace

std::string resolved_config_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed;
  j["model"] = {{"kind", cfg.model.kind},
                {"input_dim", cfg.model.input_dim},
                {"hidden", cfg.model.hidden},
                {"classes", cfg.model.classes},
                {"activation", cfg.model.activation},
                {"image", cfg.model.image},
                {"channels", cfg.model.channels},
                {"kernel", cfg.model.kernel},
                {"cell", cfg.model.cell},
                {"vocab", cfg.model.vocab},
                {"steps", cfg.model.steps},
                {"leak", cfg.model.leak},
                {"v_th", cfg.model.v_th}};
  j["data"] = {{"kind", cfg.data.kind},
               {"test_fraction", cfg.data.test_fraction},
               {"train_fraction", cfg.data.train_fraction},
               {"downsample", cfg.data.downsample}};
  if (!cfg.data.images.empty()) j["data"]["images"] = cfg.data.images;
  if (!cfg.data.labels.empty()) j["data"]["labels"] = cfg.data.labels;
  if (!cfg.data.nodes.empty()) j["data"]["nodes"] = cfg.data.nodes;
  if (!cfg.data.edges.empty()) j["data"]["edges"] = cfg.data.edges;
  if (!cfg.data.path.empty()) j["data"]["path"] = cfg.data.path;
  if (cfg.data.limit) j["data"]["limit"] = *cfg.data.limit;
  if (!cfg.data.classes_filter.empty()) j["data"]["classes_filter"] = cfg.data.classes_filter;
  if (cfg.data.kind == "blobs")
    j["data"].update({{"classes", cfg.data.classes},
                      {"per_class", cfg.data.per_class},
                      {"dim", cfg.data.dim},
                      {"separation", cfg.data.separation}});
  if (cfg.data.kind == "token_csv") j["data"]["vocab_limit"] = cfg.data.vocab_limit;

  const TrainConfig& t = cfg.train;
  j["train"] = {
      {"optimizer", t.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
      {"learning_rate", t.learning_rate},
      {"momentum", t.momentum},
      {"beta1", t.beta1},
      {"beta2", t.beta2},
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"method",
       t.method == TrainMethod::lr ? "lr" : (t.method == TrainMethod::bp ? "bp" : "es")},
      {"sigma_learning_rate", t.sigma_learning_rate},
      {"snn_steps", t.snn_steps}};
  const EstimatorConfig& e = t.estimator;
  j["estimator"] = {
      {"copies", e.copies},
      {"antithetic", e.antithetic},
      {"qmc", e.qmc},
      {"schedule", e.schedule == Schedule::full_sweep ? "full_sweep" : "round_robin"},
      {"injection", e.injection == Injection::layerwise ? "layerwise" : "simultaneous"},
      {"sigma_logit", e.sigma_logit},
      {"sigma_weight", e.sigma_weight},
      {"sigma_attn", e.sigma_attn},
      {"baseline", e.baseline == BaselineKind::none ? "none" : "batch_mean"},
      {"trainable_sigma", e.trainable_sigma},
      {"modes", {{"default", cfg.mode_default}}}};
  json attacks = json::array();
  for (const AttackSpec& a : cfg.attacks)
    attacks.push_back({{"method", attack_name(a.method)},
                       {"epsilon", a.epsilon},
                       {"iterations", a.iterations},
                       {"step_size", a.step_size},
                       {"ratio", a.ratio},
                       {"momentum_decay", a.momentum_decay}});
  j["attacks"] = attacks;
  j["ablation"] = {{"copies_grid", cfg.ablation.copies_grid},
                   {"seeds", cfg.ablation.seeds},
                   {"batch", cfg.ablation.batch},
                   {"variants", cfg.ablation.variants}};
  return j.dump(2) + "\n";
}

// --- runners ---------------------------------------------------------------

void run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto [train_set, test_set] = build_split(cfg.data, cfg.seed);
  Network net = build_network(cfg.model, cfg.seed);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.estimator.modes = resolve_modes(net, cfg);

  Metrics metrics = train(net, train_set, test_set, tc);

  // final-model attack evaluations
  std::vector<double> attack_acc;
  for (const AttackSpec& a : cfg.attacks)
    attack_acc.push_back(evaluate_accuracy(net, test_set, &a, cfg.seed, tc.snn_steps));

  CsvRow header{"epoch", "loss", "accuracy"};
  for (const AttackSpec& a : cfg.attacks) header.push_back(std::string("acc_") + attack_name(a.method));
  header.push_back("copies");
  for (std::size_t l = 0; l < net.num_layers(); ++l) header.push_back(sigma_header(net, l));

  std::vector<CsvRow> rows;
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const EpochMetrics& m = metrics[i];
    CsvRow row{std::to_string(m.epoch), format_double(m.train_loss),
               format_double(m.test_accuracy)};
    for (std::size_t a = 0; a < cfg.attacks.size(); ++a)
      row.push_back(i + 1 == metrics.size() ? format_double(attack_acc[a]) : "");
    row.push_back(std::to_string(m.copies));
    for (double s : m.sigmas) row.push_back(format_double(s));
    rows.push_back(std::move(row));
  }
  emit_metrics(header, rows, out_dir + "/metrics.csv");

  std::ofstream rc(out_dir + "/resolved_config.json", std::ios::binary);
  rc << resolved_config_json(cfg);
  save_network(net, out_dir + "/model.json");
}

namespace {

EstimatorConfig variant_config(const std::string& name, const Network& net,
                               const EstimatorConfig& base) {
  EstimatorConfig cfg = base;
  cfg.antithetic = true;
  cfg.qmc = false;
  cfg.injection = Injection::layerwise;
  std::stringstream ss(name);
  std::string tok;
  bool first = true;
  while (std::getline(ss, tok, '+')) {
    if (first) {
      if (tok == "logit")
        cfg.modes.assign(net.num_layers(), NoiseMode::logit);
      else if (tok == "weight")
        cfg.modes.assign(net.num_layers(), NoiseMode::weight);
      else if (tok == "hybrid")
        cfg.modes = hybrid_modes(net);
      else
        throw ConfigError("ablation variant must start with logit|weight|hybrid: '" + name +
                          "'");
      first = false;
      continue;
    }
    if (tok.rfind("sigma=", 0) == 0) {
      const double v = std::stod(tok.substr(6));
      cfg.sigma_logit = v;
      cfg.sigma_weight = v;
    } else if (tok == "noanti") {
      cfg.antithetic = false;
    } else if (tok == "nolayerwise") {
      cfg.injection = Injection::simultaneous;
    } else if (tok == "qmc") {
      cfg.qmc = true;
    } else {
      throw ConfigError("unknown ablation variant token '" + tok + "'");
    }
  }
  if (first) throw ConfigError("empty ablation variant name");
  return cfg;
}

}  // namespace

void ablation_run(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto [train_set, test_set] = build_split(cfg.data, cfg.seed);
  Network net = build_network(cfg.model, cfg.seed);

  // fixed evaluation batch
  std::vector<std::size_t> idx;
  const std::size_t nb = std::min<std::size_t>(cfg.ablation.batch, train_set.size());
  for (std::size_t i = 0; i < nb; ++i) idx.push_back(i);
  Batch batch = make_batch(net, train_set, idx, cfg.seed, cfg.train.snn_steps);

  const Gradients reference = bp_grad(net, batch);

  std::vector<std::string> variants = cfg.ablation.variants;
  if (variants.empty())
    variants = {"logit",
                "weight",
                "hybrid",
                "hybrid+sigma=0.1",
                "hybrid+sigma=0.01",
                "hybrid+sigma=0.001",
                "hybrid+noanti",
                "hybrid+nolayerwise",
                "hybrid+qmc"};

  CsvRow header{"variant", "copies", "layer", "seed", "cosine", "degenerate"};
  std::vector<CsvRow> rows;
  for (const std::string& vname : variants) {
    const EstimatorConfig vcfg = variant_config(vname, net, cfg.train.estimator);
    for (std::size_t copies : cfg.ablation.copies_grid) {
      EstimatorConfig run_cfg = vcfg;
      run_cfg.copies = copies + (copies % 2);  // antithetic needs even
      std::vector<std::vector<double>> layer_cos(net.num_layers());
      for (std::size_t s = 0; s < cfg.ablation.seeds; ++s) {
        RngStream stream(philox_mix64(cfg.seed, 0xAB1A7E, s), s);
        const GradEstimate est = estimate_gradient(net, batch, run_cfg, stream);
        const GradComparison cmp = compare_gradients(net, est, reference, vname);
        for (std::size_t l = 0; l < net.num_layers(); ++l) {
          rows.push_back({vname, std::to_string(run_cfg.copies), net.layer_name(l),
                          std::to_string(s), format_double(cmp.per_layer[l]),
                          cmp.degenerate[l] ? "1" : "0"});
          layer_cos[l].push_back(cmp.per_layer[l]);
        }
      }
      for (std::size_t l = 0; l < net.num_layers(); ++l) {
        double mean = 0;
        for (double c : layer_cos[l]) mean += c;
        mean /= static_cast<double>(layer_cos[l].size());
        double var = 0;
        for (double c : layer_cos[l]) var += (c - mean) * (c - mean);
        var /= static_cast<double>(layer_cos[l].size());
        rows.push_back({vname, std::to_string(run_cfg.copies), net.layer_name(l), "mean",
                        format_double(mean), "0"});
        rows.push_back({vname, std::to_string(run_cfg.copies), net.layer_name(l), "sd",
                        format_double(std::sqrt(var)), "0"});
      }
    }
  }
  emit_metrics(header, rows, out_dir + "/similarity.csv");
}

void evaluate_run(const ExperimentConfig& cfg, const std::string& model_path,
                  const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  Network net = load_network(model_path);
  auto [train_set, test_set] = build_split(cfg.data, cfg.seed);
  (void)train_set;

  CsvRow header{"attack", "accuracy"};
  std::vector<CsvRow> rows;
  rows.push_back({"clean",
                  format_double(evaluate_accuracy(net, test_set, nullptr, cfg.seed,
                                                  cfg.train.snn_steps))});
  for (const AttackSpec& a : cfg.attacks)
    rows.push_back({attack_name(a.method),
                    format_double(evaluate_accuracy(net, test_set, &a, cfg.seed,
                                                    cfg.train.snn_steps))});
  emit_metrics(header, rows, out_dir + "/evaluation.csv");
}

// --- model (de)serialization ------------------------------------------------

namespace {

json tensor_to_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<std::vector<std::size_t>>(),
                j.at("data").get<std::vector<double>>());
}

}  // namespace

void save_network(const Network& net, const std::string& path) {
  json j;
  j["kind"] = static_cast<int>(net.kind);
  j["loss"] = static_cast<int>(net.loss);
  j["loss_constant"] = net.loss_constant;
  json layers = json::array();
  for (const auto& l : net.layers) {
    json lj;
    std::visit(
        [&](const auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, DenseLayer>) {
            lj = {{"type", "dense"},   {"in", layer.in},
                  {"out", layer.out},  {"act", static_cast<int>(layer.act)},
                  {"w", tensor_to_json(layer.w)}, {"b", tensor_to_json(layer.b)}};
          } else if constexpr (std::is_same_v<T, Conv2DLayer>) {
            lj = {{"type", "conv"},
                  {"c_in", layer.c_in},
                  {"c_out", layer.c_out},
                  {"kh", layer.kh},
                  {"kw", layer.kw},
                  {"h_in", layer.h_in},
                  {"w_in", layer.w_in},
                  {"act", static_cast<int>(layer.act)},
                  {"w", tensor_to_json(layer.w)},
                  {"b", tensor_to_json(layer.b)}};
          } else if constexpr (std::is_same_v<T, RnnCellLayer>) {
            lj = {{"type", "rnn"},
                  {"cell", static_cast<int>(layer.kind)},
                  {"d_x", layer.d_x},
                  {"d_h", layer.d_h},
                  {"steps", layer.steps},
                  {"w_hh", tensor_to_json(layer.w_hh)},
                  {"w_xh", tensor_to_json(layer.w_xh)},
                  {"b_hh", tensor_to_json(layer.b_hh)},
                  {"b_xh", tensor_to_json(layer.b_xh)}};
          } else if constexpr (std::is_same_v<T, GcnLayer>) {
            lj = {{"type", "gcn"},
                  {"in", layer.in},
                  {"out", layer.out},
                  {"act", static_cast<int>(layer.act)},
                  {"w", tensor_to_json(layer.w)}};
          } else if constexpr (std::is_same_v<T, GatLayer>) {
            lj = {{"type", "gat"},
                  {"in", layer.in},
                  {"out", layer.out},
                  {"act", static_cast<int>(layer.act)},
                  {"leaky_slope", layer.leaky_slope},
                  {"aggregate_self", layer.aggregate_self},
                  {"w", tensor_to_json(layer.w)},
                  {"a", tensor_to_json(layer.a)}};
          } else if constexpr (std::is_same_v<T, LifLayer>) {
            lj = {{"type", "lif"},
                  {"in", layer.in},
                  {"out", layer.out},
                  {"leak", layer.leak},
                  {"v_th", layer.v_th},
                  {"steps", layer.steps},
                  {"w", tensor_to_json(layer.w)}};
          }
        },
        l);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open for writing");
  f << j.dump();
}

Network load_network(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError(path + ": cannot open");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw FormatError(path + ": invalid model file: " + e.what());
  }
  Network net;
  net.kind = static_cast<NetKind>(j.at("kind").get<int>());
  net.loss = static_cast<LossKind>(j.at("loss").get<int>());
  net.loss_constant = j.at("loss_constant").get<double>();
  for (const auto& lj : j.at("layers")) {
    const std::string type = lj.at("type").get<std::string>();
    if (type == "dense") {
      DenseLayer l;
      l.in = lj.at("in").get<std::size_t>();
      l.out = lj.at("out").get<std::size_t>();
      l.act = static_cast<Activation>(lj.at("act").get<int>());
      l.w = tensor_from_json(lj.at("w"));
      l.b = tensor_from_json(lj.at("b"));
      net.layers.emplace_back(std::move(l));
    } else if (type == "conv") {
      Conv2DLayer l;
      l.c_in = lj.at("c_in").get<std::size_t>();
      l.c_out = lj.at("c_out").get<std::size_t>();
      l.kh = lj.at("kh").get<std::size_t>();
      l.kw = lj.at("kw").get<std::size_t>();
      l.h_in = lj.at("h_in").get<std::size_t>();
      l.w_in = lj.at("w_in").get<std::size_t>();
      l.act = static_cast<Activation>(lj.at("act").get<int>());
      l.w = tensor_from_json(lj.at("w"));
      l.b = tensor_from_json(lj.at("b"));
      net.layers.emplace_back(std::move(l));
    } else if (type == "rnn") {
      RnnCellLayer l;
      l.kind = static_cast<RnnKind>(lj.at("cell").get<int>());
      l.d_x = lj.at("d_x").get<std::size_t>();
      l.d_h = lj.at("d_h").get<std::size_t>();
      l.steps = lj.at("steps").get<std::size_t>();
      l.w_hh = tensor_from_json(lj.at("w_hh"));
      l.w_xh = tensor_from_json(lj.at("w_xh"));
      l.b_hh = tensor_from_json(lj.at("b_hh"));
      l.b_xh = tensor_from_json(lj.at("b_xh"));
      net.layers.emplace_back(std::move(l));
    } else if (type == "gcn") {
      GcnLayer l;
      l.in = lj.at("in").get<std::size_t>();
      l.out = lj.at("out").get<std::size_t>();
      l.act = static_cast<Activation>(lj.at("act").get<int>());
      l.w = tensor_from_json(lj.at("w"));
      net.layers.emplace_back(std::move(l));
    } else if (type == "gat") {
      GatLayer l;
      l.in = lj.at("in").get<std::size_t>();
      l.out = lj.at("out").get<std::size_t>();
      l.act = static_cast<Activation>(lj.at("act").get<int>());
      l.leaky_slope = lj.at("leaky_slope").get<double>();
      l.aggregate_self = lj.at("aggregate_self").get<bool>();
      l.w = tensor_from_json(lj.at("w"));
      l.a = tensor_from_json(lj.at("a"));
      net.layers.emplace_back(std::move(l));
    } else if (type == "lif") {
      LifLayer l;
      l.in = lj.at("in").get<std::size_t>();
      l.out = lj.at("out").get<std::size_t>();
      l.leak = lj.at("leak").get<double>();
      l.v_th = lj.at("v_th").get<double>();
      l.steps = lj.at("steps").get<std::size_t>();
      l.w = tensor_from_json(lj.at("w"));
      net.layers.emplace_back(std::move(l));
    } else {
      throw FormatError(path + ": unknown layer type '" + type + "'");
    }
  }
  net.validate();
  return net;
}

}  // namespace lrnet
