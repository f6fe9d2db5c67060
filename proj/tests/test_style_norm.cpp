#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "comen/data.hpp"
#include "comen/errors.hpp"
#include "comen/gradcheck.hpp"
#include "comen/ops.hpp"
#include "comen/style_norm.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <cmath>

using namespace comen;
using comen::testing::random_assignments;
using comen::testing::random_tensor;
using namespace comen::testing;

namespace {

Tensor one_hot(const std::vector<int>& ids, Index m) {
  Array v = Array::Zero(static_cast<Index>(ids.size()) * m);
  for (std::size_t i = 0; i < ids.size(); ++i) v[static_cast<Index>(i) * m + ids[i]] = 1.0;
  return Tensor({static_cast<Index>(ids.size()), m}, v);
}

}  // namespace

TEST_CASE("channel_stats closed forms") {
  SUBCASE("constant channel") {
    const ChannelStats s = channel_stats(Tensor::full({1, 3, 3}, 5.0), 1e-5);
    CHECK(s.mean[0] == doctest::Approx(5.0).epsilon(1e-14));
    CHECK(s.stddev[0] == doctest::Approx(std::sqrt(1e-5)).epsilon(1e-12));
  }
  SUBCASE("2x2 channel 1..4") {
    const ChannelStats s = channel_stats(Tensor({1, 2, 2}, (Array(4) << 1, 2, 3, 4).finished()), 0.0);
    CHECK(s.mean[0] == 2.5);
    CHECK(std::abs(s.stddev[0] - 1.118033988749895) < 1e-15);
  }
  SUBCASE("positive homogeneity") {
    std::mt19937_64 rng(1);
    const Tensor f = random_tensor(rng, {3, 4, 5});
    const ChannelStats a = channel_stats(f, 0.0);
    const ChannelStats b = channel_stats(f * 2.5, 0.0);
    CHECK(((b.mean.values() - 2.5 * a.mean.values()).abs() < 1e-12).all());
    CHECK(((b.stddev.values() - 2.5 * a.stddev.values()).abs() < 1e-12).all());
  }
  CHECK_THROWS_AS(channel_stats(Tensor::zeros({2, 2}), 1e-5), ShapeError);
}

TEST_CASE("style_vector layout and invariances") {
  Array v(8);
  v << 1, 1, 1, 1, 2, 2, 2, 2;
  const StyleVector s = style_vector(Tensor({2, 2, 2}, v), 0.0);
  REQUIRE(s.values.size() == 4);
  CHECK(s.values[0] == 1.0);
  CHECK(s.values[1] == 2.0);
  CHECK(s.values[2] == 0.0);
  CHECK(s.values[3] == 0.0);

  std::mt19937_64 rng(2);
  const Tensor f = random_tensor(rng, {3, 2, 3});
  Array permuted(f.size());
  const int order[6] = {4, 0, 5, 2, 1, 3};
  for (Index c = 0; c < 3; ++c)
    for (Index k = 0; k < 6; ++k) permuted[c * 6 + k] = f[c * 6 + order[k]];
  const StyleVector a = style_vector(f);
  const StyleVector b = style_vector(Tensor({3, 2, 3}, permuted));
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(a.values.tail(3).minCoeff() >= std::sqrt(kNormEps));

  const Tensor batch = random_tensor(rng, {2, 3, 2, 3});
  const Tensor rows = style_vectors(batch);
  CHECK(rows.shape() == Shape{2, 6});
  const StyleVector first = style_vector(reshape(slice(batch, 0, 0, 1), {3, 2, 3}));
  for (Index j = 0; j < 6; ++j) CHECK(rows.at({0, j}) == doctest::Approx(first.values[j]).epsilon(1e-14));
}

TEST_CASE("same-domain style vectors are more similar than cross-domain ones") {
  const DatasetBundle bundle = generate_benchmark({});
  const ImageShape& shape = bundle.image;
  std::vector<Eigen::VectorXd> styles;
  for (const Sample& s : bundle.samples) {
    Array v(static_cast<Index>(s.pixels.size()));
    for (std::size_t i = 0; i < s.pixels.size(); ++i) v[static_cast<Index>(i)] = s.pixels[i];
    styles.push_back(style_vector(Tensor({shape.channels, shape.height, shape.width}, v)).values);
  }
  double same = 0.0;
  double cross = 0.0;
  long n_same = 0;
  long n_cross = 0;
  for (std::size_t i = 0; i < styles.size(); i += 3) {
    for (std::size_t j = i + 1; j < styles.size(); j += 7) {
      const double cosine = styles[i].dot(styles[j]) / (styles[i].norm() * styles[j].norm());
      if (bundle.samples[i].true_domain == bundle.samples[j].true_domain) {
        same += cosine;
        ++n_same;
      } else {
        cross += cosine;
        ++n_cross;
      }
    }
  }
  CHECK(cross / n_cross < same / n_same);
}

TEST_CASE("weighted_domain_stats closed forms") {
  SUBCASE("single domain equals batch statistics") {
    std::mt19937_64 rng(4);
    const Tensor batch = random_tensor(rng, {5, 2, 3, 3});
    const DomainStats s = weighted_domain_stats(batch, Tensor::ones({5, 1}));
    const OracleStats o = oracle_weighted_stats(batch, Tensor::ones({5, 1}));
    for (Index c = 0; c < 2; ++c) {
      CHECK(std::abs(s.mean.at({0, c}) - o.mean(0, c)) < 1e-12);
      CHECK(std::abs(s.var.at({0, c}) - o.var(0, c)) < 1e-12);
    }
  }
  SUBCASE("two scalars with equal weight") {
    const Tensor batch({2, 1}, (Array(2) << 0, 2).finished());
    const Tensor p({2, 1}, (Array(2) << 0.5, 0.5).finished());
    const DomainStats s = weighted_domain_stats(batch, p);
    CHECK(s.mean[0] == 1.0);
    CHECK(s.var[0] == 1.0);
  }
  SUBCASE("one-hot columns give per-subset statistics") {
    std::mt19937_64 rng(5);
    const Tensor batch = random_tensor(rng, {6, 2, 2, 2});
    const DomainStats s = weighted_domain_stats(batch, one_hot({0, 1, 1, 0, 2, 2}, 3));
    const std::vector<std::vector<Index>> members{{0, 3}, {1, 2}, {4, 5}};
    for (Index d = 0; d < 3; ++d) {
      for (Index c = 0; c < 2; ++c) {
        double mu = 0.0;
        for (Index i : members[d])
          for (Index k = 0; k < 4; ++k) mu += batch[(i * 2 + c) * 4 + k] / 8.0;
        CHECK(std::abs(s.mean.at({d, c}) - mu) < 1e-12);
      }
    }
  }
  SUBCASE("degenerate column is flagged and finite") {
    const Tensor batch = Tensor({3, 1}, (Array(3) << 1, 2, 3).finished());
    const DomainStats s = weighted_domain_stats(batch, one_hot({0, 0, 0}, 2));
    CHECK_FALSE(s.degenerate[0]);
    CHECK(s.degenerate[1]);
    CHECK(s.mean.values().allFinite());
    CHECK(s.var.values().allFinite());
  }
}

TEST_CASE("weighted_domain_stats agrees with a double-loop oracle") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Index m = 1 + trial % 4;
    const Tensor batch = random_tensor(rng, {7, 3, 2, 2}, -2, 2);
    const Tensor p = random_assignments(rng, 7, m);
    const DomainStats s = weighted_domain_stats(batch, p);
    const OracleStats o = oracle_weighted_stats(batch, p);
    for (Index d = 0; d < m; ++d)
      for (Index c = 0; c < 3; ++c) {
        CHECK(std::abs(s.mean.at({d, c}) - o.mean(d, c)) < 1e-10);
        CHECK(std::abs(s.var.at({d, c}) - o.var(d, c)) < 1e-10);
      }
  }
}

TEST_CASE("SDNorm with one domain is batch normalization") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor batch = random_tensor(rng, {6, 3, 4, 4}, -3, 3);
    SDNorm layer(1, 3);
    const Tensor out = layer.forward(batch, Tensor::ones({6, 1}), NormMode::kTrain);
    const Array expect = oracle_batch_norm(batch, {0, 1, 2, 3, 4, 5}, kNormEps);
    CHECK((out.values() - expect).abs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("SDNorm of a constant channel is the bias mixture") {
  std::mt19937_64 rng(8);
  SDNorm layer(3, 1);
  // Give branches distinct biases.
  Tensor bias = layer.bias();
  bias.assign((Array(3) << 0.5, -1.0, 2.0).finished());
  const Tensor p = random_assignments(rng, 4, 3);
  const Tensor out = layer.forward(Tensor::full({4, 1, 2, 2}, 3.0), p, NormMode::kTrain);
  for (Index i = 0; i < 4; ++i) {
    const double mix = 0.5 * p.at({i, 0}) - 1.0 * p.at({i, 1}) + 2.0 * p.at({i, 2});
    for (Index k = 0; k < 4; ++k) CHECK(std::abs(out[i * 4 + k] - mix) < 1e-12);
  }
}

TEST_CASE("SDNorm with one-hot assignments normalizes each subset separately") {
  std::mt19937_64 rng(9);
  const std::vector<int> ids{2, 0, 1, 0, 2, 1, 1, 0};
  std::vector<std::vector<Index>> members(3);
  for (std::size_t i = 0; i < ids.size(); ++i) members[ids[i]].push_back(static_cast<Index>(i));
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor batch = random_tensor(rng, {8, 2, 3, 3}, -2, 2);
    SDNorm layer(3, 2);
    const Tensor out = layer.forward(batch, one_hot(ids, 3), NormMode::kTrain);
    for (const auto& group : members) {
      const Array expect = oracle_batch_norm(batch, group, kNormEps);
      for (Index i : group)
        for (Index k = 0; k < 18; ++k) CHECK(std::abs(out[i * 18 + k] - expect[i * 18 + k]) < 1e-10);
    }
  }
}

TEST_CASE("SDNorm branch outputs have zero weighted mean and unit weighted variance") {
  std::mt19937_64 rng(10);
  const double eps = 1e-12;
  for (int trial = 0; trial < 10; ++trial) {
    const Index m = 2 + trial % 3;
    const Tensor batch = random_tensor(rng, {9, 2, 3, 3}, -2, 2);
    const Tensor p = random_assignments(rng, 9, m);
    // Route through a single branch at a time: p_branch selects branch d.
    const DomainStats stats = weighted_domain_stats(batch, p);
    for (Index d = 0; d < m; ++d) {
      double mass = 0.0;
      for (Index i = 0; i < 9; ++i) mass += p.at({i, d});
      for (Index c = 0; c < 2; ++c) {
        double mu = 0.0;
        double var = 0.0;
        const double s = std::sqrt(stats.var.at({d, c}) + eps);
        for (Index i = 0; i < 9; ++i)
          for (Index k = 0; k < 9; ++k) {
            const double zhat = (batch[(i * 2 + c) * 9 + k] - stats.mean.at({d, c})) / s;
            mu += p.at({i, d}) / mass * zhat / 9.0;
            var += p.at({i, d}) / mass * zhat * zhat / 9.0;
          }
        CHECK(std::abs(mu) < 1e-8);
        CHECK(std::abs(var - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("SDNorm gradients match finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    SDNorm layer(3, 2);
    Tensor gain = layer.gain();
    Tensor bias = layer.bias();
    gain.assign(random_tensor(rng, {3, 2}, 0.5, 1.5).values());
    bias.assign(random_tensor(rng, {3, 2}).values());
    Tensor x = random_tensor(rng, {5, 2, 2, 2}, -1, 1, true);
    Tensor logits = random_tensor(rng, {5, 3}, -1, 1, true);
    const Tensor w = random_tensor(rng, {5, 2, 2, 2});
    auto fn = [&] { return sum(layer.forward(x, softmax(logits, 1), NormMode::kTrain) * w); };
    CHECK(finite_difference_check(fn, {x, logits, gain, bias}) < 1e-4);
  }
}

TEST_CASE("soft assignments approach the one-hot result continuously") {
  std::mt19937_64 rng(12);
  const Tensor batch = random_tensor(rng, {8, 2, 2, 2}, -2, 2);
  const std::vector<int> ids{0, 1, 0, 1, 1, 0, 0, 1};
  SDNorm hard_layer(2, 2);
  const Tensor hard = hard_layer.forward(batch, one_hot(ids, 2), NormMode::kTrain);
  double previous = std::numeric_limits<double>::infinity();
  for (double q : {0.9, 0.99, 0.999}) {
    Array v(16);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      v[static_cast<Index>(2 * i + ids[i])] = q;
      v[static_cast<Index>(2 * i + 1 - ids[i])] = 1.0 - q;
    }
    SDNorm layer(2, 2);
    const double gap = (layer.forward(batch, Tensor({8, 2}, v), NormMode::kTrain).values() - hard.values()).abs().maxCoeff();
    CHECK(gap < previous);
    previous = gap;
  }
  CHECK(previous < 0.05);
}

TEST_CASE("SDNorm running statistics and inference mode") {
  std::mt19937_64 rng(13);
  SDNorm layer(2, 3);
  CHECK_THROWS_AS(layer.forward(random_tensor(rng, {1, 3, 2, 2}), Tensor::ones({1, 2}) * 0.5, NormMode::kTrain),
                  InsufficientBatchError);
  CHECK_THROWS_AS(layer.forward(random_tensor(rng, {4, 2, 2, 2}), Tensor::ones({4, 2}) * 0.5, NormMode::kTrain),
                  ShapeError);
  for (int step = 0; step < 30; ++step) {
    layer.forward(random_tensor(rng, {6, 3, 2, 2}, 1, 3), random_assignments(rng, 6, 2), NormMode::kTrain);
  }
  CHECK((layer.running_var() >= 0.0).all());
  CHECK((layer.running_mean() > 1.5).all());

  // Inference applies the running statistics exactly.
  const Tensor x = random_tensor(rng, {1, 3, 1, 1}, 0, 4);
  const Tensor out = layer.forward(x, Tensor({1, 2}, (Array(2) << 1, 0).finished()), NormMode::kInfer);
  for (Index c = 0; c < 3; ++c) {
    const double expect = (x[c] - layer.running_mean()(0, c)) / std::sqrt(layer.running_var()(0, c) + kNormEps);
    CHECK(std::abs(out[c] - expect) < 1e-12);
  }

  // A branch with no mass keeps its running statistics and falls back to them.
  SDNorm fallback(2, 1);
  const RowArray before = fallback.running_mean();
  const Tensor batch = Tensor({3, 1}, (Array(3) << 1, 2, 6).finished());
  const Tensor y = fallback.forward(batch, one_hot({0, 0, 0}, 2), NormMode::kTrain);
  CHECK(fallback.running_mean()(1, 0) == before(1, 0));
  CHECK(y.values().allFinite());
}
