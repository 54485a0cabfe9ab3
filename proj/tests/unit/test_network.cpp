#include <gtest/gtest.h>

#include "cpcert/network.hpp"
#include "cpcert/opnorm.hpp"
#include "support/gradcheck.hpp"
#include "support/helpers.hpp"

using namespace cpcert;
using cpcert::testing::random_cp;
using cpcert::testing::random_dataset;
using cpcert::testing::random_tensor;
using cpcert::testing::rel_diff;

namespace {

NetworkModel two_layer_cp_cnn(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NetworkModel m;
  m.input_shape = {5, 6, 2};
  m.layers.push_back(Layer::conv_cp_layer(random_cp({{2}, {3}, {3, 3}}, 4, rng)));
  m.layers.push_back(Layer::conv_cp_layer(random_cp({{3}, {3}, {2, 2}}, 3, rng)));
  return m;
}

NetworkModel fc_matrices_net(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NetworkModel m;
  m.input_shape = {6};
  m.layers.push_back(Layer::fc_cp_layer(random_cp({{3, 2}, {2, 3}}, 3, rng), FcMode::matrices));
  m.layers.push_back(Layer::fc_cp_layer(random_cp({{2, 3}, {2, 2}}, 2, rng), FcMode::matrices));
  return m;
}

}  // namespace

TEST(Forward, IdentityConvLayer) {
  NetworkModel m;
  m.input_shape = {4, 4, 2};
  DenseTensor k({1, 1, 2, 2});
  k.at({0, 0, 0, 0}) = k.at({0, 0, 1, 1}) = 1.0;
  m.layers.push_back(Layer::conv_dense_layer(k));
  std::mt19937_64 rng(50);
  const DenseTensor x = random_tensor({4, 4, 2}, rng);
  EXPECT_EQ(network_output(m, x), x);
}

TEST(Forward, SkipWithZeroKernelIsIdentity) {
  NetworkModel m;
  m.input_shape = {4, 4, 3};
  Layer l = Layer::conv_cp_layer(make_conv_kernel(3, 3, 3, 3));
  l.skip = true;
  m.layers.push_back(l);
  std::mt19937_64 rng(51);
  const DenseTensor x = random_tensor({4, 4, 3}, rng);
  EXPECT_EQ(network_output(m, x), x);
}

TEST(Forward, CpLayersMatchDensified) {
  std::mt19937_64 rng(52);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const NetworkModel m = two_layer_cp_cnn(seed);
    const NetworkModel d = densify(m);
    EXPECT_EQ(d.layers[0].kind, LayerKind::conv_dense);
    const DenseTensor x = random_tensor({5, 6, 2}, rng);
    EXPECT_LE(rel_diff(network_output(m, x), network_output(d, x)), 1e-10);
  }
  const NetworkModel fc = fc_matrices_net(3);
  const DenseTensor x = random_tensor({6}, rng);
  EXPECT_LE(rel_diff(network_output(fc, x), network_output(densify(fc), x)), 1e-10);
  const NetworkModel tfc = make_toy_fc({.num_classes = 4, .seed = 4});
  const DenseTensor v = random_tensor({16}, rng);
  EXPECT_LE(rel_diff(network_output(tfc, v), network_output(densify(tfc), v)), 1e-10);
}

TEST(Forward, ShapeErrorsNameTheLayer) {
  NetworkModel m = two_layer_cp_cnn(1);
  EXPECT_THROW(forward(m, DenseTensor({5, 6, 3})), ShapeError);
  m.layers[1] = Layer::conv_cp_layer(make_conv_kernel(4, 3, 2, 2));
  try {
    m.validate();
    FAIL() << "expected a chaining error";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(Forward, TraceNormsAndReluContraction) {
  const NetworkModel m = make_toy_cnn({.num_classes = 4, .seed = 5});
  std::mt19937_64 rng(53);
  const ForwardResult fr = forward(m, random_tensor({8, 8, 1}, rng));
  ASSERT_EQ(fr.trace.inputs.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(fr.trace.input_norms[k], frobenius_norm(fr.trace.inputs[k]));
    EXPECT_EQ(fr.trace.output_norms[k], frobenius_norm(fr.trace.outputs[k]));
    if (k + 1 < 3) EXPECT_LE(fr.trace.input_norms[k + 1], fr.trace.output_norms[k]);
  }
  EXPECT_EQ(fr.scores.size(), 4u);
}

TEST(Forward, Deterministic) {
  const NetworkModel m = make_toy_cnn({.seed = 6});
  std::mt19937_64 rng(54);
  const DenseTensor x = random_tensor({8, 8, 1}, rng);
  EXPECT_EQ(predict(m, x, Execution::parallel), predict(m, x, Execution::parallel));
  EXPECT_EQ(network_output(m, x, Execution::parallel), network_output(m, x, Execution::serial));
}

TEST(Forward, LinearInEachLambda) {
  NetworkModel m;
  m.input_shape = {5, 5, 2};
  std::mt19937_64 rng(55);
  m.layers.push_back(Layer::conv_cp_layer(random_cp({{2}, {3}, {3, 3}}, 3, rng)));
  const DenseTensor x = random_tensor({5, 5, 2}, rng);
  NetworkModel a = m, b = m;
  a.layers[0].cp.lambdas[1] += 1.0;
  b.layers[0].cp.lambdas[1] += 2.0;
  const DenseTensor y0 = network_output(m, x), ya = network_output(a, x), yb = network_output(b, x);
  EXPECT_LE(rel_diff(yb - y0, 2.0 * (ya - y0)), 1e-12);
}

TEST(Relu, IsOneLipschitz) {
  std::mt19937_64 rng(56);
  for (int t = 0; t < 100; ++t) {
    const DenseTensor a = random_tensor({20}, rng), b = random_tensor({20}, rng);
    DenseTensor ra = a, rb = b;
    for (auto& v : ra.storage()) v = std::max(v, 0.0);
    for (auto& v : rb.storage()) v = std::max(v, 0.0);
    EXPECT_LE(frobenius_norm(ra - rb), frobenius_norm(a - b));
  }
}

TEST(Adjoint, EveryLayerKindSatisfiesInnerProductIdentity) {
  std::mt19937_64 rng(57);
  std::vector<Layer> layers = {
      Layer::conv_dense_layer(random_tensor({3, 2, 4, 3}, rng)),
      Layer::conv_cp_layer(random_cp({{3}, {4}, {3, 2}}, 5, rng)),
      Layer::fc_dense_layer(random_tensor({2, 3, 3, 2}, rng)),
      Layer::fc_cp_layer(random_cp({{2}, {3}, {3}, {2}}, 4, rng), FcMode::vectors),
      Layer::fc_cp_layer(random_cp({{3, 2}, {2, 3}}, 4, rng), FcMode::matrices),
  };
  for (const auto& l : layers) {
    const DenseTensor x = l.is_conv() ? random_tensor({5, 4, l.s}, rng) : random_tensor({l.s1, l.s2}, rng);
    const DenseTensor y = l.is_conv() ? random_tensor({5, 4, l.o}, rng) : random_tensor({l.o1, l.o2}, rng);
    const double lhs = dot(apply_linear(l, x).data(), y.data());
    const double rhs = dot(x.data(), apply_linear_adjoint(l, y).data());
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs))) << to_string(l.kind);
  }
}

TEST(Backward, ZeroWeightsGiveFiniteGradients) {
  NetworkModel m = make_toy_cnn({.seed = 7});
  for (auto blk : parameter_blocks(m))
    for (auto& v : blk) v = 0.0;
  std::mt19937_64 rng(58);
  const Gradients g = backward(m, random_tensor({8, 8, 1}, rng), 0);
  for (auto blk : parameter_blocks(g))
    for (double v : blk) EXPECT_TRUE(std::isfinite(v));
}

TEST(Backward, MatchesFiniteDifferencesOnSmallNets) {
  const Dataset d = random_dataset({5, 6, 2}, 4, 3, 59);
  const auto idx = cpcert::testing::first_indices(4);
  const auto r = cpcert::testing::check_gradients(two_layer_cp_cnn(8), d, idx);
  EXPECT_LE(r.worst_rel, 1e-5) << "block " << r.worst_block << " index " << r.worst_index;
  EXPECT_LE(cpcert::testing::check_gradients(densify(two_layer_cp_cnn(9)), d, idx).worst_rel, 1e-5);

  const Dataset f = random_dataset({6}, 4, 4, 60);
  EXPECT_LE(cpcert::testing::check_gradients(fc_matrices_net(10), f, idx).worst_rel, 1e-5);
  EXPECT_LE(cpcert::testing::check_gradients(densify(fc_matrices_net(11)), f, idx).worst_rel, 1e-5);
}

TEST(Backward, LambdaGradientIsComponentResponse) {
  // With a single linear layer and loss <g, y>, dL/dlambda_r is the inner
  // product of the upstream gradient with component r's rank-1 response.
  std::mt19937_64 rng(61);
  NetworkModel m;
  m.input_shape = {5, 5, 2};
  m.layers.push_back(Layer::conv_cp_layer(random_cp({{2}, {3}, {3, 3}}, 3, rng)));
  const DenseTensor x = random_tensor({5, 5, 2}, rng);
  const Gradients g = backward(m, x, 1);
  const auto scores = predict(m, x);
  std::vector<double> p(scores.size());
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(scores[i] - mx));
  for (auto& v : p) v /= z;
  p[1] -= 1.0;
  for (std::size_t r = 0; r < 3; ++r) {
    NetworkModel single = m;
    single.layers[0].cp = truncate(m.layers[0].cp, 0);
    std::vector<DenseTensor> fs = m.layers[0].cp.factors[r];
    single.layers[0].cp.add_component(1.0, fs);
    const auto resp = predict(single, x);
    double expected = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) expected += p[t] * resp[t];
    EXPECT_NEAR(g.layers[0].cp.lambdas[r], expected, 1e-12);
  }
}

TEST(Backward, ParallelBatchIsBitIdenticalToSerial) {
  const NetworkModel m = make_toy_cnn({.seed = 12});
  const Dataset d = random_dataset({8, 8, 1}, 12, 4, 62);
  const auto idx = cpcert::testing::first_indices(12);
  const BatchGradient a = batch_gradient(m, d, idx, Execution::serial);
  const BatchGradient b = batch_gradient(m, d, idx, Execution::parallel);
  const auto pa = parameter_blocks(a.grad), pb = parameter_blocks(b.grad);
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t q = 0; q < pa.size(); ++q)
    for (std::size_t i = 0; i < pa[q].size(); ++i) ASSERT_EQ(pa[q][i], pb[q][i]);
  EXPECT_EQ(a.mean_loss, b.mean_loss);
}

TEST(MarginLoss, HandEnumeratedScores) {
  const std::vector<double> m = {margin(std::vector<double>{3, 1, 0}, 0), margin(std::vector<double>{0.5, 1, 0}, 1),
                                 margin(std::vector<double>{2, 2, 1}, 2)};
  EXPECT_DOUBLE_EQ(m[0], 2.0);
  EXPECT_DOUBLE_EQ(m[1], 0.5);
  EXPECT_DOUBLE_EQ(m[2], -1.0);
  EXPECT_DOUBLE_EQ(margin_loss_from_margins(m, 0.0), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(margin_loss_from_margins(m, 0.5), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(margin_loss_from_margins(m, 1.9), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(margin_loss_from_margins(m, 2.0), 1.0);
  EXPECT_THROW(margin_loss_from_margins(m, -1.0), std::invalid_argument);
}

TEST(MarginLoss, UnreachableMargin) {
  const NetworkModel m = make_toy_cnn({.seed = 13});
  const Dataset d = random_dataset({8, 8, 1}, 8, 4, 63);
  double range = 0.0;
  for (const auto& s : predict_all(m, d)) range = std::max(range, *std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end()));
  EXPECT_EQ(margin_loss(m, d, 10.0 * range + 1.0), 1.0);
}

TEST(Cpify, FullCapRoundTrip) {
  const NetworkModel dense = make_toy_cnn({.seed = 14, .cp = false});
  AlsOptions opts;
  opts.target_error = 1e-6;
  const CpifyResult r = cp_ify(dense, {}, opts);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(r.model.layers[k].kind, LayerKind::conv_cp);
    EXPECT_EQ(r.model.layers[k].cp.width(), layer_rank_cap(dense.layers[k]));
  }
  std::mt19937_64 rng(64);
  const DenseTensor x = random_tensor({8, 8, 1}, rng);
  EXPECT_LE(rel_diff(network_output(densify(r.model), x), network_output(dense, x)), 1e-3);
  EXPECT_EQ(densify(dense).layers[1].dense, dense.layers[1].dense);
}

TEST(Cpify, FcBothModes) {
  const NetworkModel dense = make_toy_fc({.seed = 15, .cp = false});
  std::mt19937_64 rng(65);
  const DenseTensor x = random_tensor({16}, rng);
  for (FcMode mode : {FcMode::vectors, FcMode::matrices}) {
    const CpifyResult r = cp_ify(dense, {}, {}, mode);
    EXPECT_EQ(r.model.layers[0].fc_mode, mode);
    EXPECT_LE(rel_diff(network_output(r.model, x), network_output(dense, x)), 1e-3);
  }
}

TEST(Cpify, RejectsRankAboveCap) {
  const NetworkModel dense = make_toy_cnn({.seed = 16, .cp = false});
  EXPECT_THROW(cp_ify(dense, {9, 0, 0}), std::invalid_argument);
  EXPECT_THROW(cp_ify(dense, {1, 2}), std::invalid_argument);
}

TEST(Presets, ShapesAndCaps) {
  const NetworkModel c = make_toy_cnn();
  EXPECT_EQ(c.input_shape, (Shape{8, 8, 1}));
  EXPECT_EQ(c.layers[0].cp.width(), 8u);
  EXPECT_EQ(c.layers[1].cp.width(), 72u);
  EXPECT_EQ(c.layers[2].cp.width(), 36u);
  EXPECT_TRUE(c.layers[1].cp.is_normalized());
  const NetworkModel f = make_toy_fc({.num_classes = 10});
  EXPECT_EQ(f.num_classes(), 10u);
  EXPECT_EQ(f.layers[2].o1 * f.layers[2].o2, 10u);
  EXPECT_THROW(make_preset("vgg"), std::invalid_argument);
  EXPECT_EQ(near_square(12), (std::pair<std::size_t, std::size_t>{3, 4}));
  EXPECT_EQ(near_square(7), (std::pair<std::size_t, std::size_t>{1, 7}));
}
