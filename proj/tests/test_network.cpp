#include <gtest/gtest.h>

#include <cmath>

#include "ibm/ibm.hpp"
#include "oracles.hpp"

using ibm::Matrix;

namespace {

std::vector<Matrix> draw_eps(const ibm::Network& net, ibm::SeededRng& rng) {
  std::vector<Matrix> eps;
  for (const auto& l : net.layers) eps.push_back(ibm::gaussian_sample(rng, l.W.rows(), l.W.cols(), 0, 1));
  return eps;
}

// Small network whose va-params are spread out so that every gradient term matters.
ibm::Network toy_network(std::vector<std::size_t> widths, std::size_t classes, ibm::SeededRng& rng) {
  ibm::Network net = ibm::make_network(widths, 0.0, rng);
  for (auto& l : net.layers) {
    l.gamma = 0.2 + rng.uniform();
    for (auto& v : l.mu.data()) v = rng.normal();
    for (auto& v : l.log_sigma.data()) v = std::log(0.05 + 0.5 * rng.uniform());
  }
  ibm::add_head(net, 0, classes, rng);
  for (auto& v : net.heads.at(0).b.data()) v = rng.normal();
  return net;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, ibm::SeededRng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.next_u64() % classes);
  return y;
}

// Two Gaussian blobs in 2-D at (+-d/2, 0).
void two_blobs(ibm::SeededRng& rng, std::size_t n, double d, Matrix& x, std::vector<int>& y) {
  x = ibm::gaussian_sample(rng, n, 2, 0, 1);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    x(i, 0) += y[i] ? d / 2 : -d / 2;
  }
}

}  // namespace

TEST(Network, ConstructionAndShapes) {
  ibm::SeededRng rng(1);
  const std::vector<std::size_t> widths{7, 5, 4};
  ibm::Network net = ibm::make_network(widths, 0.25, rng);
  ASSERT_EQ(net.layers.size(), 2u);
  EXPECT_EQ(net.input_width(), 7u);
  EXPECT_EQ(net.output_width(), 4u);
  EXPECT_EQ(net.weight_count(), 7u * 5 + 5 * 4);
  EXPECT_EQ(net.layers[0].gamma, 0.25);
  EXPECT_THROW(net.head(0), ibm::Error);
  ibm::add_head(net, 0, 3, rng);
  EXPECT_EQ(net.head(0).W.rows(), 3u);
  EXPECT_THROW(ibm::add_head(net, 0, 3, rng), ibm::Error);
}

TEST(TotalLoss, ZeroGammaLeavesScaledCrossEntropy) {
  ibm::SeededRng rng(2);
  ibm::Network net = toy_network({4, 3, 3}, 3, rng);
  for (auto& l : net.layers) l.gamma = 0;
  const Matrix x = ibm::gaussian_sample(rng, 5, 4, 0, 1);
  const auto y = random_labels(5, 3, rng);
  ibm::SeededRng r1(7);
  const auto out = ibm::total_loss(net, x, y, 0, r1, ibm::LossOptions{2.5});
  EXPECT_EQ(out.kl, 0.0);
  EXPECT_EQ(out.total, 2.5 * out.ce);
}

TEST(TotalLoss, ZeroFeaturesGiveLogClassCount) {
  ibm::SeededRng rng(3);
  ibm::Network net = ibm::make_network(std::vector<std::size_t>{4, 6, 6, 6}, 0.5, rng);
  for (auto& l : net.layers) l.mu = Matrix(l.W.rows(), l.W.cols());
  ibm::add_head(net, 0, 5, rng);
  const Matrix x = ibm::gaussian_sample(rng, 8, 4, 0, 1);
  const auto y = random_labels(8, 5, rng);
  // eps = 0 with mu = 0 zeroes every effective weight; sigma stays finite so alpha is 0, not 0/0
  std::vector<Matrix> eps;
  for (const auto& l : net.layers) eps.emplace_back(l.W.rows(), l.W.cols());
  const auto out = ibm::loss_with_eps(net, x, y, 0, eps);
  EXPECT_EQ(out.kl, 0.0);
  EXPECT_NEAR(out.total, 3.0 * std::log(5.0), 1e-14);
}

TEST(TotalLoss, MatchesScalarRecomputation) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ibm::SeededRng rng(seed * 31);
    const ibm::Network net = toy_network({3, 4, 2}, 3, rng);
    const Matrix x = ibm::gaussian_sample(rng, 6, 3, 0, 1);
    const auto y = random_labels(6, 3, rng);
    const auto eps = draw_eps(net, rng);
    for (double scale : {1.0, 2.0, 128.0}) {
      const double got = ibm::loss_with_eps(net, x, y, 0, eps, ibm::LossOptions{scale}).total;
      const double want = oracle::scalar_loss(net, x, y, 0, eps, scale);
      EXPECT_NEAR(got, want, 1e-10 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST(TotalLoss, DefaultScaleIsLayerCount) {
  ibm::SeededRng rng(4);
  const ibm::Network net = toy_network({3, 4, 4, 2}, 2, rng);
  const Matrix x = ibm::gaussian_sample(rng, 4, 3, 0, 1);
  const auto y = random_labels(4, 2, rng);
  const auto eps = draw_eps(net, rng);
  EXPECT_NEAR(ibm::loss_with_eps(net, x, y, 0, eps).total, oracle::scalar_loss(net, x, y, 0, eps, 3.0), 1e-10);
}

TEST(TotalLoss, Errors) {
  ibm::SeededRng rng(5);
  const ibm::Network net = toy_network({3, 4, 2}, 2, rng);
  const std::vector<int> none;
  EXPECT_THROW(ibm::total_loss(net, Matrix(0, 3), none, 0, rng), ibm::Error);
  const std::vector<int> y{0, 1};
  EXPECT_THROW(ibm::total_loss(net, Matrix(2, 3), y, 9, rng), ibm::Error);
  const std::vector<int> bad{0, 2};
  EXPECT_THROW(ibm::total_loss(net, Matrix(2, 3), bad, 0, rng), ibm::Error);
}

TEST(TotalLoss, GradientsMatchCentralDifferencesForThreeLayers) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ibm::SeededRng rng(1000 + seed);
    ibm::Network net = toy_network({4, 5, 4, 3}, 3, rng);
    const Matrix x = ibm::gaussian_sample(rng, 7, 4, 0, 1);
    const auto y = random_labels(7, 3, rng);
    const auto eps = draw_eps(net, rng);
    const ibm::LossOptions opts{3.0};
    ibm::NetworkGrads g;
    ibm::loss_with_eps(net, x, y, 0, eps, opts, &g);

    std::vector<std::pair<Matrix*, const Matrix*>> pairs;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      pairs.push_back({&net.layers[l].W, &g.layers[l].W});
      pairs.push_back({&net.layers[l].mu, &g.layers[l].mu});
      pairs.push_back({&net.layers[l].log_sigma, &g.layers[l].log_sigma});
    }
    pairs.push_back({&net.heads.at(0).W, &g.head_W});
    pairs.push_back({&net.heads.at(0).b, &g.head_b});
    std::size_t checked = 0;
    for (auto [param, grad] : pairs)
      for (std::size_t i = 0; i < param->size(); ++i, ++checked) {
        const double num = oracle::central_difference_ext(net, x, y, 0, eps, 3.0, *param, i);
        EXPECT_LT(oracle::rel_err((*grad)[i], num), 1e-4) << "seed " << seed;
      }
    EXPECT_EQ(checked, 3 * (20 + 20 + 12) + 9 + 3u);
  }
}

TEST(TrainStep, FullMaskFreezesEveryWeight) {
  ibm::SeededRng rng(6);
  ibm::Network net = toy_network({4, 5, 3}, 2, rng);
  const Matrix W0 = net.layers[0].W, W1 = net.layers[1].W;
  ibm::CumulativeMask all;
  for (const auto& l : net.layers) all.layers.push_back(ibm::LayerMask::ones_like(l.W));
  ibm::AdamState adam;
  const Matrix x = ibm::gaussian_sample(rng, 8, 4, 0, 1);
  const auto y = random_labels(8, 2, rng);
  const Matrix mu0 = net.layers[0].mu;
  for (int s = 0; s < 10; ++s) ibm::train_step(net, adam, x, y, 0, &all, rng);
  EXPECT_EQ(net.layers[0].W, W0);
  EXPECT_EQ(net.layers[1].W, W1);
  EXPECT_NE(net.layers[0].mu, mu0);
  EXPECT_EQ(adam.step, 10);
}

TEST(TrainStep, EmptyMaskEqualsUnconstrainedStep) {
  ibm::SeededRng rng(7);
  ibm::Network a = toy_network({4, 5, 3}, 2, rng);
  ibm::Network b = a;
  ibm::CumulativeMask none;
  for (const auto& l : a.layers) none.layers.push_back(ibm::LayerMask::zeros_like(l.W));
  const Matrix x = ibm::gaussian_sample(rng, 8, 4, 0, 1);
  const auto y = random_labels(8, 2, rng);
  ibm::AdamState adam_a, adam_b;
  ibm::SeededRng ra(3), rb(3);
  for (int s = 0; s < 5; ++s) {
    ibm::train_step(a, adam_a, x, y, 0, &none, ra);
    ibm::train_step(b, adam_b, x, y, 0, nullptr, rb);
  }
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    EXPECT_EQ(a.layers[l].W, b.layers[l].W);
    EXPECT_EQ(a.layers[l].mu, b.layers[l].mu);
    EXPECT_EQ(a.layers[l].log_sigma, b.layers[l].log_sigma);
  }
  EXPECT_EQ(a.heads, b.heads);
}

TEST(TrainStep, MixedMaskAgainstUnmaskedTwin) {
  ibm::SeededRng rng(8);
  ibm::Network net = toy_network({4, 5, 3}, 2, rng);
  ibm::Network twin = net;
  ibm::CumulativeMask m;
  for (const auto& l : net.layers) {
    ibm::LayerMask lm(l.W.rows(), l.W.cols());
    for (std::size_t i = 0; i < lm.size(); ++i) lm.set(i, rng.uniform() < 0.5);
    m.layers.push_back(lm);
  }
  Matrix x = ibm::gaussian_sample(rng, 8, 4, 0, 1);
  for (std::size_t r = 0; r < x.rows(); ++r) x(r, 3) = 0.0;  // input 3 never reaches layer 0
  const auto y = random_labels(8, 2, rng);

  ibm::SeededRng noise_a(5), noise_b(5);
  ibm::NetworkGrads raw;
  ibm::total_loss(twin, x, y, 0, noise_b, {}, &raw);
  noise_b = ibm::SeededRng(5);
  ibm::AdamState adam_a, adam_b;
  const ibm::Network before = net;
  ibm::train_step(net, adam_a, x, y, 0, &m, noise_a);
  ibm::train_step(twin, adam_b, x, y, 0, nullptr, noise_b);
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    for (std::size_t i = 0; i < net.layers[l].W.size(); ++i) {
      if (m.layers[l][i]) {
        EXPECT_EQ(net.layers[l].W[i], before.layers[l].W[i]);
      } else {
        EXPECT_EQ(net.layers[l].W[i], twin.layers[l].W[i]);
        EXPECT_EQ(net.layers[l].W[i] != before.layers[l].W[i], raw.layers[l].W[i] != 0.0);
      }
    }
  // Unmasked parameters train exactly as in the twin.
  EXPECT_EQ(net.layers[0].mu, twin.layers[0].mu);
}

TEST(TrainStep, OtherHeadsUntouchedAndMaskShapeChecked) {
  ibm::SeededRng rng(9);
  ibm::Network net = toy_network({4, 5, 3}, 2, rng);
  ibm::add_head(net, 1, 4, rng);
  const ibm::Head other = net.heads.at(1);
  ibm::AdamState adam;
  const Matrix x = ibm::gaussian_sample(rng, 8, 4, 0, 1);
  const auto y = random_labels(8, 2, rng);
  ibm::train_step(net, adam, x, y, 0, nullptr, rng);
  EXPECT_EQ(net.heads.at(1), other);
  ibm::CumulativeMask wrong;
  wrong.layers.push_back(ibm::LayerMask(5, 4));
  EXPECT_THROW(ibm::train_step(net, adam, x, y, 0, &wrong, rng), ibm::Error);
}

TEST(TrainStep, FrozenWeightsStayBitIdenticalOverManySteps) {
  ibm::SeededRng rng(10);
  ibm::Network net = toy_network({6, 8, 8}, 2, rng);
  ibm::CumulativeMask m;
  for (const auto& l : net.layers) {
    ibm::LayerMask lm(l.W.rows(), l.W.cols());
    for (std::size_t i = 0; i < lm.size(); ++i) lm.set(i, i % 4 == 1);
    m.layers.push_back(lm);
  }
  const ibm::Network start = net;
  ibm::AdamState adam;
  // Unfrozen steps first so that Adam moments are nonzero when freezing begins.
  for (int s = 0; s < 20; ++s) {
    const Matrix x = ibm::gaussian_sample(rng, 16, 6, 0, 1);
    ibm::train_step(net, adam, x, random_labels(16, 2, rng), 0, nullptr, rng);
  }
  const ibm::Network at_freeze = net;
  for (int s = 0; s < 300; ++s) {
    const Matrix x = ibm::gaussian_sample(rng, 16, 6, 0, 1);
    ibm::train_step(net, adam, x, random_labels(16, 2, rng), 0, &m, rng);
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    for (std::size_t i = 0; i < net.layers[l].W.size(); ++i)
      if (m.layers[l][i]) {
        EXPECT_EQ(net.layers[l].W[i], at_freeze.layers[l].W[i]);
      }
  EXPECT_NE(net.layers[0].W, start.layers[0].W);
}

TEST(TrainStep, LogSigmaStaysClamped) {
  ibm::SeededRng rng(11);
  ibm::Network net = toy_network({3, 4, 2}, 2, rng);
  for (auto& l : net.layers) l.log_sigma = Matrix(l.W.rows(), l.W.cols(), -5.9999);
  net.layers[0].gamma = 50;
  ibm::AdamState adam;
  adam.lr = 0.1;
  const Matrix x = ibm::gaussian_sample(rng, 8, 3, 0, 1);
  for (int s = 0; s < 50; ++s) ibm::train_step(net, adam, x, random_labels(8, 2, rng), 0, nullptr, rng);
  for (const auto& l : net.layers)
    for (double v : l.log_sigma.data()) {
      EXPECT_GE(v, ibm::kLogSigmaMin);
      EXPECT_LE(v, ibm::kLogSigmaMax);
    }
}

TEST(TrainStep, LossDecreasesOnSeparableToyTask) {
  ibm::SeededRng rng(12);
  ibm::Network net = ibm::make_network(std::vector<std::size_t>{2, 16, 16}, 0.0, rng);
  ibm::add_head(net, 0, 2, rng);
  Matrix x;
  std::vector<int> y;
  two_blobs(rng, 64, 4.0, x, y);
  ibm::AdamState adam;
  std::vector<double> window_means;
  double sum = 0;
  for (int s = 1; s <= 200; ++s) {
    sum += ibm::train_step(net, adam, x, y, 0, nullptr, rng);
    if (s % 20 == 0) {
      window_means.push_back(sum / 20);
      sum = 0;
    }
  }
  for (std::size_t w = 1; w < window_means.size(); ++w) EXPECT_LT(window_means[w], window_means[w - 1]) << w;
}

TEST(Predict, SingleClassHeadAlwaysPredictsZero) {
  ibm::SeededRng rng(13);
  ibm::Network net = ibm::make_network(std::vector<std::size_t>{3, 4}, 0.5, rng);
  ibm::add_head(net, 0, 1, rng);
  ibm::MemoryPool pool;
  const auto& art = ibm::finalize_task(net, 0, pool);
  const auto p = ibm::predict(net, ibm::gaussian_sample(rng, 20, 3, 0, 3), 0, art);
  for (int c : p) EXPECT_EQ(c, 0);
}

TEST(Predict, ArgmaxTiesGoToLowestIndex) {
  EXPECT_EQ(ibm::argmax_rows(Matrix::from_rows({{1, 3, 3}, {2, 2, 2}, {0, -1, 5}})), (std::vector<int>{1, 0, 2}));
}

TEST(Predict, DeterministicAndArtifactChecked) {
  ibm::SeededRng rng(14);
  ibm::Network net = toy_network({3, 4, 2}, 3, rng);
  ibm::add_head(net, 1, 3, rng);
  ibm::MemoryPool pool;
  const auto& art = ibm::finalize_task(net, 0, pool);
  const Matrix x = ibm::gaussian_sample(rng, 30, 3, 0, 1);
  const auto p = ibm::predict(net, x, 0, art);
  for (int rep = 0; rep < 3; ++rep) EXPECT_EQ(ibm::predict(net, x, 0, art), p);
  EXPECT_THROW(ibm::predict(net, x, 1, art), ibm::Error);
}

TEST(Predict, LearnsTwoGaussianToyTask) {
  const double d = 5.0;
  const double bayes = ibm::split_gaussian_bayes_accuracy(d);
  ASSERT_GT(bayes, 0.99);
  ibm::SeededRng rng(15);
  ibm::Network net = ibm::make_network(std::vector<std::size_t>{2, 16, 16}, 0.0, rng);
  ibm::add_head(net, 0, 2, rng);
  Matrix x, tx;
  std::vector<int> y, ty;
  two_blobs(rng, 512, d, x, y);
  two_blobs(rng, 512, d, tx, ty);
  ibm::AdamState adam;
  for (int epoch = 0; epoch < 20; ++epoch)
    for (std::size_t start = 0; start < 512; start += 32) {
      std::vector<std::size_t> idx(32);
      for (std::size_t i = 0; i < 32; ++i) idx[i] = start + i;
      const std::vector<int> yb(y.begin() + start, y.begin() + start + 32);
      ibm::train_step(net, adam, ibm::gather_rows(x, idx), yb, 0, nullptr, rng);
    }
  ibm::MemoryPool pool;
  const auto& art = ibm::finalize_task(net, 0, pool, 0.0);
  EXPECT_GT(ibm::accuracy(ibm::predict(net, tx, 0, art), ty), 0.95);
}

TEST(Accuracy, CountsMatches) {
  const std::vector<int> p{0, 1, 1, 0}, t{0, 1, 0, 0};
  EXPECT_EQ(ibm::accuracy(p, t), 0.75);
  EXPECT_THROW(ibm::accuracy(p, std::vector<int>{0}), ibm::Error);
}
