#include "lrnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "lrnet/errors.hpp"

namespace lrnet {

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path, std::size_t& offset) {
  unsigned char buf[4];
  f.read(reinterpret_cast<char*>(buf), 4);
  if (!f)
    throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
  offset += 4;
  return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
         (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

}  // namespace

Dataset load_idx(const std::string& image_path, const std::string& label_path,
                 std::optional<std::size_t> limit) {
  std::ifstream img(image_path, std::ios::binary);
  if (!img) throw FormatError(image_path + ": cannot open");
  std::ifstream lab(label_path, std::ios::binary);
  if (!lab) throw FormatError(label_path + ": cannot open");

  std::size_t ioff = 0, loff = 0;
  const std::uint32_t imagic = read_be32(img, image_path, ioff);
  if (imagic != 0x00000803u)
    throw FormatError(image_path + ": bad magic at byte offset 0 (expected 0x00000803)");
  const std::uint32_t lmagic = read_be32(lab, label_path, loff);
  if (lmagic != 0x00000801u)
    throw FormatError(label_path + ": bad magic at byte offset 0 (expected 0x00000801)");

  const std::uint32_t count = read_be32(img, image_path, ioff);
  const std::uint32_t rows = read_be32(img, image_path, ioff);
  const std::uint32_t cols = read_be32(img, image_path, ioff);
  const std::uint32_t lcount = read_be32(lab, label_path, loff);
  if (count != lcount)
    throw FormatError(image_path + ": image count " + std::to_string(count) +
                      " does not match label count " + std::to_string(lcount));

  std::size_t n = count;
  if (limit) n = std::min<std::size_t>(n, *limit);

  Dataset d;
  d.modality = Modality::images;
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> buf(pixels);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    if (!img)
      throw FormatError(image_path + ": truncated at byte offset " + std::to_string(ioff));
    ioff += pixels;
    Tensor t({pixels});
    for (std::size_t p = 0; p < pixels; ++p) t[p] = static_cast<double>(buf[p]) / 255.0;
    d.inputs.push_back(std::move(t));

    unsigned char lb;
    lab.read(reinterpret_cast<char*>(&lb), 1);
    if (!lab)
      throw FormatError(label_path + ": truncated at byte offset " + std::to_string(loff));
    loff += 1;
    d.labels.push_back(static_cast<int>(lb));
    max_label = std::max(max_label, static_cast<int>(lb));
  }
  d.classes = static_cast<std::size_t>(max_label + 1);
  return d;
}

void write_idx(const Dataset& d, const std::string& image_path, const std::string& label_path,
               std::size_t rows, std::size_t cols) {
  std::ofstream img(image_path, std::ios::binary);
  std::ofstream lab(label_path, std::ios::binary);
  if (!img || !lab) throw FormatError("write_idx: cannot open output files");
  auto be32 = [](std::ofstream& f, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    f.write(reinterpret_cast<char*>(buf), 4);
  };
  be32(img, 0x00000803u);
  be32(img, static_cast<std::uint32_t>(d.inputs.size()));
  be32(img, static_cast<std::uint32_t>(rows));
  be32(img, static_cast<std::uint32_t>(cols));
  be32(lab, 0x00000801u);
  be32(lab, static_cast<std::uint32_t>(d.labels.size()));
  for (std::size_t i = 0; i < d.inputs.size(); ++i) {
    for (std::size_t p = 0; p < d.inputs[i].size(); ++p) {
      const double v = std::clamp(d.inputs[i][p], 0.0, 1.0);
      const unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
      img.write(reinterpret_cast<const char*>(&b), 1);
    }
    const unsigned char lb = static_cast<unsigned char>(d.labels[i]);
    lab.write(reinterpret_cast<const char*>(&lb), 1);
  }
}

GraphData load_edge_list(const std::string& node_file, const std::string& edge_file) {
  std::ifstream nf(node_file);
  if (!nf) throw FormatError(node_file + ": cannot open");

  std::map<std::string, int> ids;
  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  std::string line;
  while (std::getline(nf, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string id;
    is >> id;
    std::vector<double> vals;
    double v;
    while (is >> v) vals.push_back(v);
    if (vals.empty())
      throw FormatError(node_file + ": node '" + id + "' needs features and a label");
    const int label = static_cast<int>(vals.back());
    vals.pop_back();
    if (!feats.empty() && vals.size() != feats[0].size())
      throw FormatError(node_file + ": inconsistent feature width at node '" + id + "'");
    if (ids.count(id)) throw FormatError(node_file + ": duplicate node id '" + id + "'");
    ids[id] = static_cast<int>(feats.size());
    feats.push_back(std::move(vals));
    labels.push_back(label);
  }
  if (feats.empty()) throw FormatError(node_file + ": no nodes");

  std::ifstream ef(edge_file);
  if (!ef) throw FormatError(edge_file + ": cannot open");
  std::vector<std::pair<int, int>> edges;
  while (std::getline(ef, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string a, b;
    if (!(is >> a >> b)) throw FormatError(edge_file + ": malformed edge line '" + line + "'");
    auto ia = ids.find(a), ib = ids.find(b);
    if (ia == ids.end()) throw FormatError(edge_file + ": unknown node id '" + a + "'");
    if (ib == ids.end()) throw FormatError(edge_file + ": unknown node id '" + b + "'");
    edges.emplace_back(ia->second, ib->second);
  }

  const std::size_t n = feats.size(), dim = feats[0].size();
  Tensor features({n, dim});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) features.at(i, j) = feats[i][j];
  return make_graph(std::move(features), std::move(edges), std::move(labels));
}

Dataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                    double separation, RngStream& stream) {
  if (!(separation > 0)) throw ContractError("synth_blobs: separation must be positive");
  Dataset d;
  d.modality = Modality::vectors;
  d.classes = classes;
  for (std::size_t k = 0; k < classes; ++k) {
    Tensor center({dim});
    for (std::size_t j = 0; j < dim; ++j)
      center[j] = ((k >> j) & 1u) ? separation : 0.0;  // hypercube corner
    for (std::size_t s = 0; s < per_class; ++s) {
      Tensor x({dim});
      for (std::size_t j = 0; j < dim; ++j) x[j] = center[j] + stream.next_gaussian();
      d.inputs.push_back(std::move(x));
      d.labels.push_back(static_cast<int>(k));
    }
  }
  return d;
}

Dataset load_token_csv(const std::string& path, std::size_t vocab_limit) {
  std::ifstream f(path);
  if (!f) throw FormatError(path + ": cannot open");
  std::vector<int> labels;
  std::vector<std::vector<std::string>> docs;
  std::map<std::string, std::pair<std::size_t, std::size_t>> freq;  // count, first index
  std::size_t token_counter = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    int label;
    if (!(is >> label)) throw FormatError(path + ": line does not start with a label");
    std::vector<std::string> toks;
    std::string t;
    while (is >> t) {
      auto it = freq.find(t);
      if (it == freq.end())
        freq[t] = {1, token_counter};
      else
        ++it->second.first;
      ++token_counter;
      toks.push_back(std::move(t));
    }
    labels.push_back(label);
    docs.push_back(std::move(toks));
  }
  if (docs.empty()) throw FormatError(path + ": empty file");

  // rank by frequency, ties by first occurrence
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(freq.begin(),
                                                                                  freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.second.second < b.second.second;
  });

  std::map<std::string, std::int32_t> vocab;
  const std::size_t real_slots = vocab_limit > 2 ? vocab_limit - 2 : 0;
  for (std::size_t r = 0; r < ranked.size() && r < real_slots; ++r)
    vocab[ranked[r].first] = static_cast<std::int32_t>(r + 2);

  Dataset d;
  d.modality = Modality::sequences;
  d.vocab_size = real_slots + 2;
  int max_label = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    std::vector<std::int32_t> ids;
    for (const auto& t : docs[i]) {
      auto it = vocab.find(t);
      ids.push_back(it == vocab.end() ? kOovToken : it->second);
    }
    d.sequences.push_back(std::move(ids));
    d.labels.push_back(labels[i]);
    max_label = std::max(max_label, labels[i]);
  }
  d.classes = static_cast<std::size_t>(max_label + 1);
  return d;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double train_fraction,
                                          RngStream& stream) {
  const std::size_t n = d.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(stream.next_uniform() * static_cast<double>(i));
    std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
  }
  const std::size_t n_train = static_cast<std::size_t>(train_fraction * static_cast<double>(n));
  Dataset a, b;
  a.modality = b.modality = d.modality;
  a.classes = b.classes = d.classes;
  a.vocab_size = b.vocab_size = d.vocab_size;
  for (std::size_t i = 0; i < n; ++i) {
    Dataset& dst = i < n_train ? a : b;
    const std::size_t s = idx[i];
    if (d.modality == Modality::sequences)
      dst.sequences.push_back(d.sequences[s]);
    else
      dst.inputs.push_back(d.inputs[s]);
    dst.labels.push_back(d.labels[s]);
  }
  return {std::move(a), std::move(b)};
}

Dataset filter_classes(const Dataset& d, const std::vector<int>& keep) {
  Dataset out;
  out.modality = d.modality;
  out.vocab_size = d.vocab_size;
  out.classes = keep.size();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto it = std::find(keep.begin(), keep.end(), d.labels[i]);
    if (it == keep.end()) continue;
    if (d.modality == Modality::sequences)
      out.sequences.push_back(d.sequences[i]);
    else
      out.inputs.push_back(d.inputs[i]);
    out.labels.push_back(static_cast<int>(it - keep.begin()));
  }
  return out;
}

Dataset downsample_images(const Dataset& d, std::size_t factor) {
  if (factor <= 1) return d;
  Dataset out;
  out.modality = d.modality;
  out.classes = d.classes;
  out.labels = d.labels;
  for (const Tensor& img : d.inputs) {
    const std::size_t side = static_cast<std::size_t>(std::lround(std::sqrt(
        static_cast<double>(img.size()))));
    if (side * side != img.size() || side % factor != 0)
      throw ContractError("downsample_images: images must be square with divisible side");
    const std::size_t ns = side / factor;
    Tensor small({ns * ns});
    for (std::size_t i = 0; i < ns; ++i)
      for (std::size_t j = 0; j < ns; ++j) {
        double s = 0;
        for (std::size_t a = 0; a < factor; ++a)
          for (std::size_t b = 0; b < factor; ++b)
            s += img[(i * factor + a) * side + (j * factor + b)];
        small[i * ns + j] = s / static_cast<double>(factor * factor);
      }
    out.inputs.push_back(std::move(small));
  }
  return out;
}

Tensor onehot_sequence(const std::vector<std::int32_t>& tokens, std::size_t vocab,
                       std::size_t steps) {
  Tensor out({steps, vocab});
  for (std::size_t t = 0; t < steps; ++t) {
    const std::int32_t tok = t < tokens.size() ? tokens[t] : kMaskToken;
    if (tok < 0 || static_cast<std::size_t>(tok) >= vocab)
      throw ContractError("onehot_sequence: token id outside vocabulary");
    out[out.idx(t, static_cast<std::size_t>(tok))] = 1.0;
  }
  return out;
}

}  // namespace lrnet
