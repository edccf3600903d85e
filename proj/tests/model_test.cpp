#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"

using namespace lfpstage;
using lfpstage::testing::permute_channels;
using lfpstage::testing::random_features;
using lfpstage::testing::small_dims;
using lfpstage::testing::TempDir;

namespace {

Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST(Attention, IdenticalChannelsAreUniform) {
  Rng rng(1);
  const Matrix<double> f = random_matrix(6, 10, rng);
  const std::vector<Matrix<double>> chans(8, f);
  const auto r = channel_attention<double>(random_matrix(4, 6, rng), random_matrix(4, 6, rng), random_matrix(4, 6, rng), chans);
  for (Eigen::Index i = 0; i < 8; ++i) EXPECT_NEAR(r.alpha[i], 0.125, 1e-15);
}

TEST(Attention, SingleChannel) {
  Rng rng(2);
  const Matrix<double> f = random_matrix(6, 10, rng);
  const Matrix<double> wv = random_matrix(4, 6, rng);
  const auto r = channel_attention<double>(random_matrix(4, 6, rng), random_matrix(4, 6, rng), wv, {f});
  ASSERT_EQ(r.alpha.size(), 1);
  EXPECT_EQ(r.alpha[0], 1.0);
  EXPECT_TRUE(r.h.isApprox(wv * f, 1e-14));
}

TEST(Attention, WeightsFormDistribution) {
  Rng rng(3);
  std::vector<Matrix<double>> chans;
  for (int c = 0; c < 5; ++c) chans.push_back(random_matrix(6, 9, rng));
  const Matrix<double> wq = random_matrix(4, 6, rng), wk = random_matrix(4, 6, rng), wv = random_matrix(4, 6, rng);
  const auto r = channel_attention<double>(wq, wk, wv, chans);
  EXPECT_NEAR(r.alpha.sum(), 1.0, 1e-12);
  EXPECT_GE(r.alpha.minCoeff(), 0.0);
  // Direct evaluation of the definition.
  Vector<double> s(5);
  for (int c = 0; c < 5; ++c) {
    const Vector<double> d = chans[static_cast<std::size_t>(c)].rowwise().mean();
    s[c] = (wq * d).dot(wk * d) / 2.0;
  }
  const Vector<double> a = (s.array() - s.maxCoeff()).exp().matrix();
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(r.alpha[c], a[c] / a.sum(), 1e-12);
  Matrix<double> mixed = Matrix<double>::Zero(6, 9);
  for (int c = 0; c < 5; ++c) mixed += r.alpha[c] * chans[static_cast<std::size_t>(c)];
  EXPECT_TRUE(r.h.isApprox(wv * mixed, 1e-12));
}

TEST(Attention, EmptyInputRejected) {
  Rng rng(4);
  EXPECT_THROW(channel_attention<double>(random_matrix(4, 6, rng), random_matrix(4, 6, rng), random_matrix(4, 6, rng),
                                         std::vector<Matrix<double>>{}),
               data_error);
}

TEST(Conv, LengthArithmetic) {
  Rng rng(5);
  const std::vector<double> kernel(3 * 2 * 5, 0.1), bias(3, 0.0);
  const Matrix<double> x = random_matrix(2, 100, rng);
  const auto r = conv1d_forward<double>(kernel, bias, x);
  EXPECT_EQ(r.out.cols(), 96);
  EXPECT_EQ(r.out.rows(), 3);
  const auto same = conv1d_forward<double>(kernel, bias, x, ConvPadding::Same);
  EXPECT_EQ(same.out.cols(), 100);
  EXPECT_THROW(conv1d_forward<double>(kernel, bias, random_matrix(2, 4, rng)), data_error);
}

TEST(Conv, CentreTapIsCroppedIdentity) {
  const std::vector<double> kernel{0, 0, 1, 0, 0}, bias{0};
  Matrix<double> x(1, 9);
  for (int t = 0; t < 9; ++t) x(0, t) = t + 0.5;
  const auto r = conv1d_forward<double>(kernel, bias, x);
  ASSERT_EQ(r.out.cols(), 5);
  for (int t = 0; t < 5; ++t) EXPECT_EQ(r.out(0, t), x(0, t + 2));
}

TEST(Conv, MatchesDirectSum) {
  Rng rng(6);
  std::vector<double> kernel(3 * 2 * 5), bias(3);
  for (auto& v : kernel) v = rng.normal();
  for (auto& v : bias) v = rng.normal();
  const Matrix<double> x = random_matrix(2, 12, rng);
  const auto r = conv1d_forward<double>(kernel, bias, x);
  for (int o = 0; o < 3; ++o)
    for (int t = 0; t < 8; ++t) {
      double s = bias[static_cast<std::size_t>(o)];
      for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 5; ++k) s += kernel[static_cast<std::size_t>((o * 2 + i) * 5 + k)] * x(i, t + k);
      EXPECT_NEAR(r.pre(o, t), s, 1e-12);
      EXPECT_EQ(r.out(o, t), std::max(r.pre(o, t), 0.0));
    }
}

TEST(Conv, NegativePreactivationsGiveZeros) {
  Rng rng(7);
  const std::vector<double> kernel(2 * 5, -1.0), bias(2, -0.5);
  const Matrix<double> x = random_matrix(1, 20, rng).cwiseAbs();
  const auto r = conv1d_forward<double>(kernel, bias, x);
  EXPECT_TRUE((r.out.array() == 0.0).all());
}

TEST(Pool, SingleFrameAndIdenticalFrames) {
  Rng rng(8);
  const Vector<double> w = random_matrix(3, 1, rng);
  const Matrix<double> one = random_matrix(3, 1, rng);
  EXPECT_TRUE(temporal_pool<double>(w, one).pooled == one.col(0));
  const Matrix<double> same = one.replicate(1, 7);
  const auto r = temporal_pool<double>(w, same);
  EXPECT_TRUE(r.pooled.isApprox(one.col(0), 1e-14));
  EXPECT_NEAR(r.weights.sum(), 1.0, 1e-14);
}

TEST(Head, ZeroParamsGiveUniformProbs) {
  const Matrix<double> w = Matrix<double>::Zero(4, 5);
  const Vector<double> b = Vector<double>::Zero(4);
  const auto r = head_forward<double>(w, b, Vector<double>::Ones(5));
  for (int c = 0; c < 4; ++c) EXPECT_EQ(r.probs[c], 0.25);
}

TEST(Forward, ShapeGate) {
  const ModelDims d = small_dims();
  const auto m = init_model<double>(d, 1);
  EXPECT_THROW(forward(m, random_features(3, 4, 7, 8, 1)), data_error);
  EXPECT_THROW(forward(m, random_features(3, 4, 12, 8, 1)), data_error);
  EXPECT_NO_THROW(forward(m, random_features(3, 4, 13, 8, 1)));
  ModelDims same = d;
  same.padding = ConvPadding::Same;
  const auto r = forward(init_model<double>(same, 1), random_features(3, 4, 7, 8, 1));
  EXPECT_EQ(r.frame_weights.size(), 7);
  EXPECT_NEAR(r.probs.sum(), 1.0, 1e-12);
  EXPECT_THROW(forward(m, random_features(3, 5, 20, 8, 1)), data_error);
  EXPECT_THROW(forward(m, random_features(3, 4, 20, 9, 1)), data_error);
}

TEST(Forward, OutputLengthIsTMinusTwelve) {
  const auto m = init_model<double>(small_dims(), 2);
  for (std::size_t t : {13u, 14u, 40u}) EXPECT_EQ(forward(m, random_features(2, 4, t, 8, t)).frame_weights.size(), static_cast<Eigen::Index>(t - 12));
}

TEST(Forward, DefaultDesk) {
  const auto m = init_model<float>(ModelDims{}, 3);
  const auto r = forward(m, random_features(8, 25, 22, 64, 3));
  EXPECT_NEAR(r.probs.sum(), 1.0f, 1e-5f);
  EXPECT_NEAR(r.alpha.sum(), 1.0f, 1e-6f);
  EXPECT_NEAR(r.layer_weights.sum(), 1.0f, 1e-6f);
  EXPECT_NEAR(r.frame_weights.sum(), 1.0f, 1e-6f);
  EXPECT_EQ(r.frame_weights.size(), 10);
}

TEST(Forward, Deterministic) {
  const auto m = init_model<float>(ModelDims{}, 4);
  const auto ft = random_features(8, 25, 22, 64, 4);
  const auto a = forward(m, ft), b = forward(m, ft);
  EXPECT_TRUE(a.probs == b.probs);
  EXPECT_TRUE(a.alpha == b.alpha);
  EXPECT_EQ(init_model<float>(ModelDims{}, 4), m);
}

TEST(Forward, ChannelPermutationInvariant) {
  const auto m = init_model<float>(ModelDims{}, 5);
  const auto ft = random_features(8, 25, 22, 64, 5);
  std::vector<std::size_t> perm{3, 7, 0, 5, 1, 6, 2, 4};
  const auto a = forward(m, ft);
  const auto b = forward(m, permute_channels(ft, perm));
  EXPECT_TRUE(a.probs == b.probs);
  for (std::size_t c = 0; c < 8; ++c)
    EXPECT_EQ(a.alpha[static_cast<Eigen::Index>(c)], b.alpha[static_cast<Eigen::Index>(perm[c])]);
}

TEST(Backward, MatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto m = init_model<double>(small_dims(), seed);
    FocalLossConfig loss;
    loss.alpha = {1.2, 0.7, 0.5, 1.6};
    const auto rep = grad_check(m, random_features(3, 4, 16, 8, seed), label_from_index(static_cast<long>(seed % 4)), loss);
    EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst_tensor << "[" << rep.worst_element << "]";
  }
}

TEST(Backward, SamePaddingMatchesFiniteDifferences) {
  ModelDims d = small_dims();
  d.padding = ConvPadding::Same;
  const auto m = init_model<double>(d, 9);
  const auto rep = grad_check(m, random_features(2, 4, 6, 8, 9), Label4::N1);
  EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst_tensor << "[" << rep.worst_element << "]";
}

TEST(Backward, GammaZeroIsCrossEntropy) {
  const auto m = init_model<double>(small_dims(), 10);
  const auto ft = random_features(3, 4, 16, 8, 10);
  FocalLossConfig ce;
  ce.gamma = 0.0;
  ModelParams<double> g(m.dims());
  ForwardResult<double> fr;
  const double loss = backward(m, ft, Label4::REM, ce, g, &fr);
  EXPECT_NEAR(loss, -std::log(fr.probs[3]), 1e-12);
  // dCE/dlogits = p - onehot, which is the head bias gradient.
  const auto db = g.tensor(slot::kHeadBias);
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(db[static_cast<std::size_t>(c)], fr.probs[c] - (c == 3 ? 1.0 : 0.0), 1e-10);
}

TEST(Backward, DeadUnitHasZeroGradient) {
  auto m = init_model<double>(small_dims(), 11);
  m.tensor(slot::conv_bias(2))[0] = -1e6;
  ModelParams<double> g(m.dims());
  backward(m, random_features(3, 4, 16, 8, 11), Label4::Wake, FocalLossConfig{}, g);
  const auto dk = g.tensor(slot::conv_kernel(2));
  for (std::size_t i = 0; i < 8 * 5; ++i) EXPECT_EQ(dk[i], 0.0);
  EXPECT_EQ(g.tensor(slot::conv_bias(2))[0], 0.0);
  EXPECT_EQ(g.tensor(slot::kPool)[0], 0.0);
  EXPECT_NE(g.tensor(slot::conv_bias(2))[1], 0.0);
}

TEST(ModelFile, RoundTripIsBitExact) {
  TempDir dir;
  const auto m = init_model<float>(small_dims(), 12);
  BackendConfig backend;
  backend.n_layers = 4;
  backend.dim = 8;
  save_model(dir / "m.modeljson", dir / "m.weights", m, backend);
  const ModelFile f = load_model(dir / "m.modeljson", dir / "m.weights");
  EXPECT_EQ(f.params, m);
  EXPECT_EQ(f.backend, backend);
  const auto j = io::read_json(dir / "m.modeljson");
  EXPECT_EQ(j["tensors"][4]["name"], "conv1.kernel");
  EXPECT_EQ(j["tensors"][4]["shape"], (std::vector<std::size_t>{8, 4, 5}));
}

TEST(ModelFile, TamperedBackendRejected) {
  TempDir dir;
  const auto m = init_model<float>(small_dims(), 13);
  save_model(dir / "m.modeljson", dir / "m.weights", m, BackendConfig{});
  auto j = io::read_json(dir / "m.modeljson");
  j["backend"]["dim"] = 32;
  io::write_json(dir / "m.modeljson", j);
  EXPECT_THROW(load_model(dir / "m.modeljson", dir / "m.weights"), data_error);
}

TEST(ModelFile, WrongWeightSizeRejected) {
  TempDir dir;
  const auto m = init_model<float>(small_dims(), 14);
  save_model(dir / "m.modeljson", dir / "m.weights", m, BackendConfig{});
  auto bytes = io::read_bytes(dir / "m.weights");
  bytes.pop_back();
  io::write_bytes(dir / "m.weights", bytes);
  EXPECT_THROW(load_model(dir / "m.modeljson", dir / "m.weights"), data_error);
}
