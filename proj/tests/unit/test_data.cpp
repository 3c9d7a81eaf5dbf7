#include <cmath>
#include <cstdio>
#include <doctest.h>
#include <filesystem>
#include <fstream>

#include "lrnet/data.hpp"
#include "lrnet/errors.hpp"

using namespace lrnet;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("idx loader parses a hand-built file pair") {
  const std::string img = tmp_path("lrnet_idx_img");
  const std::string lab = tmp_path("lrnet_idx_lab");
  // one 2x2 image, pixels 0,255,128,64; label 1
  write_bytes(img, {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 64});
  write_bytes(lab, {0, 0, 8, 1, 0, 0, 0, 1, 1});
  Dataset d = load_idx(img, lab);
  REQUIRE(d.size() == 1);
  CHECK(d.inputs[0].size() == 4);
  CHECK(d.inputs[0][0] == 0.0);
  CHECK(d.inputs[0][1] == 1.0);
  CHECK(d.inputs[0][2] == doctest::Approx(128.0 / 255.0));
  CHECK(d.labels[0] == 1);

  Dataset empty = load_idx(img, lab, 0);
  CHECK(empty.size() == 0);
}

TEST_CASE("idx loader rejects bad magic and count mismatches") {
  const std::string img = tmp_path("lrnet_idx_bad_img");
  const std::string lab = tmp_path("lrnet_idx_bad_lab");
  write_bytes(img, {0, 0, 7, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9});
  write_bytes(lab, {0, 0, 8, 1, 0, 0, 0, 1, 1});
  CHECK_THROWS_AS(load_idx(img, lab), FormatError);

  write_bytes(img, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 9, 9});
  CHECK_THROWS_AS(load_idx(img, lab), FormatError);  // 2 images, 1 label

  write_bytes(img, {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 9});
  write_bytes(lab, {0, 0, 8, 1, 0, 0, 0, 1, 1});
  CHECK_THROWS_AS(load_idx(img, lab), FormatError);  // truncated pixels
}

TEST_CASE("idx round trip") {
  Dataset d;
  d.modality = Modality::images;
  d.classes = 2;
  RngStream s(1, 0);
  for (int i = 0; i < 3; ++i) {
    Tensor img({9});
    for (std::size_t k = 0; k < 9; ++k)
      img[k] = std::round(s.next_uniform() * 255.0) / 255.0;
    d.inputs.push_back(std::move(img));
    d.labels.push_back(i % 2);
  }
  const std::string img = tmp_path("lrnet_rt_img");
  const std::string lab = tmp_path("lrnet_rt_lab");
  write_idx(d, img, lab, 3, 3);
  Dataset back = load_idx(img, lab);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.labels[i] == d.labels[i]);
    for (std::size_t k = 0; k < 9; ++k)
      CHECK(back.inputs[i][k] == doctest::Approx(d.inputs[i][k]).epsilon(1e-12));
  }
}

TEST_CASE("edge list loader builds degrees with self-loops") {
  const std::string nodes = tmp_path("lrnet_nodes");
  const std::string edges = tmp_path("lrnet_edges");
  {
    std::ofstream f(nodes);
    f << "a 1.0 0.0 0\n";
    f << "b 0.0 1.0 1\n";
  }
  {
    std::ofstream f(edges);
    f << "a b\n";
  }
  GraphData g = load_edge_list(nodes, edges);
  CHECK(g.num_nodes() == 2);
  CHECK(g.edges.size() == 1);
  // D~ = diag(2,2): normalized adjacency entries are all one half
  CHECK(g.norm_adj.at(0, 0) == doctest::Approx(0.5));
  CHECK(g.norm_adj.at(0, 1) == doctest::Approx(0.5));

  {
    std::ofstream f(edges);
    f << "a b\n";
    f << "b a\n";  // duplicate collapses
  }
  GraphData g2 = load_edge_list(nodes, edges);
  CHECK(g2.edges.size() == 1);

  {
    std::ofstream f(edges);
  }
  GraphData g3 = load_edge_list(nodes, edges);
  CHECK(g3.edges.empty());
  CHECK(g3.norm_adj.at(0, 0) == doctest::Approx(1.0));
  CHECK(g3.norm_adj.at(0, 1) == doctest::Approx(0.0));

  {
    std::ofstream f(edges);
    f << "a zzz\n";
  }
  CHECK_THROWS_WITH_AS(load_edge_list(nodes, edges), doctest::Contains("zzz"), FormatError);
}

TEST_CASE("synthetic blobs separate cleanly and reproduce under a seed") {
  RngStream s1(5, 0), s2(5, 0);
  Dataset a = synth_blobs(2, 50, 2, 10.0, s1);
  Dataset b = synth_blobs(2, 50, 2, 10.0, s2);
  REQUIRE(a.size() == 100);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a.inputs[i].values() == b.inputs[i].values());

  // a linear threshold on the first coordinate is near-perfect at sep = 10
  std::size_t correct = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    correct += ((a.inputs[i][0] > 5.0) == (a.labels[i] == 1)) ? 1 : 0;
  CHECK(static_cast<double>(correct) / static_cast<double>(a.size()) >= 0.999);

  RngStream s3(6, 0);
  CHECK(synth_blobs(3, 0, 2, 1.0, s3).size() == 0);
}

TEST_CASE("token loader vocabulary rules") {
  const std::string path = tmp_path("lrnet_tokens");
  {
    std::ofstream f(path);
    f << "1 a b a\n";
  }
  Dataset d = load_token_csv(path, 8);
  REQUIRE(d.sequences.size() == 1);
  CHECK(d.sequences[0].size() == 3);
  // 'a' outranks 'b' by frequency: a -> 2, b -> 3
  CHECK(d.sequences[0][0] == 2);
  CHECK(d.sequences[0][1] == 3);
  CHECK(d.sequences[0][2] == 2);

  Dataset oov = load_token_csv(path, 1);
  CHECK(oov.sequences[0] == std::vector<std::int32_t>{1, 1, 1});  // everything OOV

  {
    std::ofstream f(path);
    f << "0 x y\n";  // tie broken by first occurrence
  }
  Dataset tie = load_token_csv(path, 4);
  CHECK(tie.sequences[0][0] == 2);
  CHECK(tie.sequences[0][1] == 3);

  {
    std::ofstream f(path);
  }
  CHECK_THROWS_AS(load_token_csv(path, 4), FormatError);
}

TEST_CASE("loaded pixels stay inside the unit interval") {
  const std::string img = tmp_path("lrnet_px_img");
  const std::string lab = tmp_path("lrnet_px_lab");
  Dataset d;
  d.modality = Modality::images;
  d.classes = 1;
  d.inputs = {Tensor({4}, {0.0, 1.0, 0.5, 0.25})};
  d.labels = {0};
  write_idx(d, img, lab, 2, 2);
  Dataset back = load_idx(img, lab);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(back.inputs[0][k] >= 0.0);
    CHECK(back.inputs[0][k] <= 1.0);
  }
}

TEST_CASE("class filtering and downsampling") {
  Dataset d;
  d.modality = Modality::images;
  d.classes = 3;
  for (int i = 0; i < 6; ++i) {
    d.inputs.push_back(Tensor::full({16}, static_cast<double>(i) / 10.0));
    d.labels.push_back(i % 3);
  }
  Dataset f = filter_classes(d, {0, 2});
  CHECK(f.size() == 4);
  CHECK(f.classes == 2);
  for (int l : f.labels) CHECK((l == 0 || l == 1));

  Dataset small = downsample_images(d, 2);
  CHECK(small.inputs[0].size() == 4);
  CHECK(small.inputs[3][0] == doctest::Approx(0.3));
}

TEST_CASE("one-hot sequences pad with the mask token") {
  Tensor x = onehot_sequence({2, 3}, 5, 4);
  CHECK(x.at(0, 2) == 1.0);
  CHECK(x.at(1, 3) == 1.0);
  CHECK(x.at(2, 0) == 1.0);  // mask padding
  CHECK(x.at(3, 0) == 1.0);
  double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i];
  CHECK(total == 4.0);
}
