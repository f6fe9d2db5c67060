#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "comen/data.hpp"
#include "comen/errors.hpp"

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

using namespace comen;

namespace {

const DatasetBundle& default_bundle() {
  static const DatasetBundle bundle = generate_benchmark({});
  return bundle;
}

// Raw-pixel style vector: per-channel mean then std (eps = 0).
Eigen::VectorXd pixel_style(const Sample& s, const ImageShape& shape) {
  const int hw = shape.height * shape.width;
  Eigen::VectorXd v(2 * shape.channels);
  for (int c = 0; c < shape.channels; ++c) {
    double mu = 0.0;
    for (int p = 0; p < hw; ++p) mu += s.pixels[static_cast<std::size_t>(c * hw + p)];
    mu /= hw;
    double var = 0.0;
    for (int p = 0; p < hw; ++p) {
      const double d = s.pixels[static_cast<std::size_t>(c * hw + p)] - mu;
      var += d * d;
    }
    v[c] = mu;
    v[shape.channels + c] = std::sqrt(var / hw);
  }
  return v;
}

}  // namespace

TEST_CASE("default benchmark has 800 samples over 4 domains") {
  const DatasetBundle& b = default_bundle();
  CHECK(b.samples.size() == 800);
  CHECK(b.num_domains == 4);
  CHECK(b.num_classes == 5);
  std::map<std::pair<int, int>, int> cells;
  for (const Sample& s : b.samples) {
    ++cells[{s.true_domain, s.class_label}];
    CHECK(s.pixels.size() == 3 * 16 * 16);
    for (float v : s.pixels) {
      REQUIRE(std::isfinite(v));
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }
  CHECK(cells.size() == 20);
  for (const auto& [key, count] : cells) CHECK(count == 40);
}

TEST_CASE("generation is a pure function of seed and parameters") {
  CHECK(serialize_bundle(generate_benchmark({})) == serialize_bundle(default_bundle()));
  BenchmarkParams other;
  other.seed = 8;
  CHECK(serialize_bundle(generate_benchmark(other)) != serialize_bundle(default_bundle()));
}

TEST_CASE("invalid generator dimensions are rejected") {
  BenchmarkParams p;
  p.domains = 1;
  CHECK_THROWS_AS(generate_benchmark(p), std::invalid_argument);
  p = {};
  p.classes = 1;
  CHECK_THROWS_AS(generate_benchmark(p), std::invalid_argument);
  p = {};
  p.per_cell = 3;
  CHECK_THROWS_AS(generate_benchmark(p), std::invalid_argument);
  p = {};
  p.image.height = 0;
  CHECK_THROWS_AS(generate_benchmark(p), std::invalid_argument);
}

TEST_CASE("style statistics carry the domain signal (Fisher ratio > 1)") {
  const DatasetBundle& b = default_bundle();
  std::vector<Eigen::VectorXd> styles;
  for (const Sample& s : b.samples) styles.push_back(pixel_style(s, b.image));
  Eigen::VectorXd grand = Eigen::VectorXd::Zero(styles[0].size());
  for (const auto& v : styles) grand += v;
  grand /= static_cast<double>(styles.size());
  std::vector<Eigen::VectorXd> centers(4, Eigen::VectorXd::Zero(grand.size()));
  std::vector<int> counts(4, 0);
  for (std::size_t i = 0; i < styles.size(); ++i) {
    centers[b.samples[i].true_domain] += styles[i];
    ++counts[b.samples[i].true_domain];
  }
  double between = 0.0;
  for (int m = 0; m < 4; ++m) {
    centers[m] /= counts[m];
    between += counts[m] * (centers[m] - grand).squaredNorm();
  }
  double within = 0.0;
  for (std::size_t i = 0; i < styles.size(); ++i) within += (styles[i] - centers[b.samples[i].true_domain]).squaredNorm();
  MESSAGE("between/within = " << between / within);
  CHECK(between / within > 1.0);
}

TEST_CASE("leave-one-domain-out partitions the bundle") {
  const DatasetBundle& b = default_bundle();
  for (int held = 0; held < 4; ++held) {
    const FoldSplit split = leave_one_domain_out(b, held, 7);
    for (std::size_t i : split.test_index) CHECK(b.samples[i].true_domain == held);
    CHECK(split.test.size() == 200);
    std::set<std::size_t> all;
    for (auto* idx : {&split.train_index, &split.val_index, &split.test_index}) {
      for (std::size_t i : *idx) CHECK(all.insert(i).second);
    }
    CHECK(all.size() == b.samples.size());
    for (std::size_t i : split.train_index) CHECK(b.samples[i].true_domain != held);
    const double source = static_cast<double>(split.train.size() + split.val.size());
    CHECK(std::abs(static_cast<double>(split.val.size()) - 0.3 * source) <= 1.0);
    std::map<std::pair<int, int>, int> train_cells;
    for (std::size_t i : split.train_index) ++train_cells[{b.samples[i].true_domain, b.samples[i].class_label}];
    CHECK(train_cells.size() == 15);
    for (const auto& [key, count] : train_cells) CHECK(count >= 2);
    for (std::size_t j = 0; j < split.train.size(); ++j) {
      CHECK(split.train[j].label == b.samples[split.train_index[j]].class_label);
      CHECK(split.train[j].pixels.data() == b.samples[split.train_index[j]].pixels.data());
    }
  }
  CHECK_THROWS_AS(leave_one_domain_out(b, 4, 7), std::out_of_range);
  CHECK_THROWS_AS(leave_one_domain_out(b, -1, 7), std::out_of_range);
}

TEST_CASE("small cells keep at least two training samples") {
  BenchmarkParams p;
  p.per_cell = 4;
  p.image = {1, 4, 4};
  const DatasetBundle b = generate_benchmark(p);
  const FoldSplit split = leave_one_domain_out(b, 0, 3);
  std::map<std::pair<int, int>, int> train_cells;
  for (std::size_t i : split.train_index) ++train_cells[{b.samples[i].true_domain, b.samples[i].class_label}];
  for (const auto& [key, count] : train_cells) CHECK(count >= 2);
  const double source = static_cast<double>(split.train.size() + split.val.size());
  CHECK(std::abs(static_cast<double>(split.val.size()) - 0.3 * source) <= 1.0);
}

TEST_CASE("bundle serialization round-trips byte-identically") {
  const DatasetBundle& b = default_bundle();
  const auto bytes = serialize_bundle(b);
  CHECK(bytes.size() == 8 + 24 + 800 * (4 + 4 * 768) + 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "COMENDS1");
  const DatasetBundle back = deserialize_bundle(bytes);
  CHECK(back == b);
  CHECK(serialize_bundle(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "comen_test_bundle.bin";
  write_bundle(b, path);
  CHECK(read_bundle(path) == b);
  std::filesystem::remove(path);
}

TEST_CASE("corrupted bundles are rejected with specific errors") {
  BenchmarkParams p;
  p.per_cell = 4;
  p.image = {1, 4, 4};
  const auto bytes = serialize_bundle(generate_benchmark(p));

  auto truncated = bytes;
  truncated.resize(bytes.size() - 10);
  CHECK_THROWS_AS(deserialize_bundle(truncated), TruncatedPayloadError);
  CHECK_THROWS_AS(deserialize_bundle(truncated), ChecksumError);

  auto flipped = bytes;
  flipped[100] ^= 0x40;
  CHECK_THROWS_AS(deserialize_bundle(flipped), ChecksumError);

  auto zero_m = bytes;
  zero_m[8] = zero_m[9] = zero_m[10] = zero_m[11] = 0;
  CHECK_THROWS_AS(deserialize_bundle(zero_m), MalformedHeaderError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_bundle(bad_magic), MalformedHeaderError);

  std::vector<std::uint8_t> header_only(bytes.begin(), bytes.begin() + 20);
  CHECK_THROWS_AS(deserialize_bundle(header_only), MalformedHeaderError);
}

TEST_CASE("crc32 matches the standard check value") {
  const std::string text = "123456789";
  CHECK(crc32({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}) == 0xCBF43926u);
}
