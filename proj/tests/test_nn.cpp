#include "clbench/nn.hpp"

#include <doctest.h>

#include <cmath>

using namespace clbench;

namespace {

template <typename T>
TensorT<T> random_tensor(std::vector<int> shape, rng::Generator& g, float lo = -1.0f,
                         float hi = 1.0f) {
  TensorT<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng::uniform(g, lo, hi));
  return t;
}

}  // namespace

TEST_CASE("relu forward") {
  LayerSpec s{LayerKind::relu};
  Tensor x({1, 3}, {-1.0f, 0.0f, 2.0f});
  Tensor y = layer_forward(s, LayerVars<float>{}, x);
  CHECK(y.data == std::vector<float>{0.0f, 0.0f, 2.0f});
}

TEST_CASE("maxpool 2x2 forward") {
  LayerSpec s;
  s.kind = LayerKind::maxpool2x2;
  s.in_channels = 1;
  s.in_h = 2;
  s.in_w = 2;
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = layer_forward(s, LayerVars<float>{}, x);
  CHECK(y.numel() == 1);
  CHECK(y[0] == 4.0f);
}

TEST_CASE("dense forward hand example") {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in_features = 2;
  s.out_features = 2;
  LayerVars<float> v;
  v.W = Tensor({2, 2}, {2, 0, 0, 3});
  v.b = Tensor({2}, {1, 1});
  Tensor x({1, 2}, {1, 1});
  Tensor y = layer_forward(s, v, x);
  CHECK(y.at(0, 0) == doctest::Approx(3.0f));
  CHECK(y.at(0, 1) == doctest::Approx(4.0f));
}

TEST_CASE("conv activation sizes follow the reference stack") {
  auto g = rng::make_stream(0, rng::Stream::init);
  HeadLayout hl{HeadLayoutKind::single_head_fixed, {2}};
  auto net = build_model<float>(Arch::cnn_small, 784, hl, HeadInit::random, g);
  auto shapes = activation_shapes(net);
  // conv -> relu -> pool boundaries: check the distinct feature maps
  REQUIRE(shapes.size() == 12);
  CHECK(shapes[0] == std::vector<int>{10, 28, 28});
  CHECK(shapes[2] == std::vector<int>{10, 14, 14});
  CHECK(shapes[5] == std::vector<int>{20, 7, 7});
  CHECK(shapes[6] == std::vector<int>{40, 3, 3});
  CHECK(shapes[8] == std::vector<int>{70, 3, 3});
  CHECK(shapes[10] == std::vector<int>{256});
  CHECK(net.output_dim() == 2);
}

TEST_CASE("masked softmax cross-entropy") {
  SUBCASE("uniform two-logit loss is ln 2") {
    Tensor l({2}, {0.0f, 0.0f});
    auto [loss, d] = masked_softmax_xent(l, 0, {1, 1});
    CHECK(loss == doctest::Approx(0.6931471805599453).epsilon(1e-6));
  }
  SUBCASE("masking reproduces the reduced problem exactly") {
    Tensor full({4}, {5.0f, -3.0f, 9.0f, 9.0f});
    auto [loss_masked, d_masked] = masked_softmax_xent(full, 0, {1, 1, 0, 0});
    Tensor two({2}, {5.0f, -3.0f});
    auto [loss_two, d_two] = masked_softmax_xent(two, 0, {1, 1});
    CHECK(loss_masked == doctest::Approx(loss_two).epsilon(1e-7));
    CHECK(d_masked[0] == doctest::Approx(d_two[0]).epsilon(1e-7));
    CHECK(d_masked[1] == doctest::Approx(d_two[1]).epsilon(1e-7));
    CHECK(d_masked[2] == 0.0f);
    CHECK(d_masked[3] == 0.0f);
  }
  SUBCASE("three-logit value against the frozen oracle") {
    TensorD l({3}, {1.0, 2.0, 3.0});
    auto [loss, d] = masked_softmax_xent(l, 2, {1, 1, 1});
    CHECK(loss == doctest::Approx(0.40760596444438013).epsilon(1e-12));
    // finite differences in double
    const double eps = 1e-6;
    for (int i = 0; i < 3; ++i) {
      TensorD lp = l, lm = l;
      lp[i] += eps;
      lm[i] -= eps;
      double fp = masked_softmax_xent(lp, 2, {1, 1, 1}).first;
      double fm = masked_softmax_xent(lm, 2, {1, 1, 1}).first;
      CHECK(d[i] == doctest::Approx((fp - fm) / (2 * eps)).epsilon(1e-6));
    }
  }
  SUBCASE("active probabilities sum to one") {
    Tensor l({4}, {0.3f, -2.0f, 5.0f, 0.0f});
    auto [loss, d] = masked_softmax_xent(l, 2, {0, 1, 1, 1});
    double sum = 0;
    for (int i = 1; i < 4; ++i) sum += double(d[i]) + (i == 2 ? 1.0 : 0.0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("inactive target is a routing error") {
    Tensor l({2}, {0.0f, 0.0f});
    CHECK_THROWS(masked_softmax_xent(l, 1, std::vector<char>{1, 0}));
  }
}

TEST_CASE("backward basics") {
  auto g = rng::make_stream(3, rng::Stream::init);
  HeadLayout hl{HeadLayoutKind::single_head_fixed, {4}};
  auto net = build_model<float>(Arch::mlp256x2, 784, hl, HeadInit::random, g);
  Tensor x = random_tensor<float>({3, 784}, g);
  NetCache<float> cache;
  Tensor logits = net.forward(x, &cache);

  SUBCASE("zero dlogits give all-zero gradients") {
    Tensor dl = Tensor::zeros({3, 4});
    auto grads = net.backward(cache, dl);
    bool all_zero = true;
    for (auto& lv : grads.trunk)
      for (float v : lv.W.data) all_zero &= v == 0.0f;
    for (float v : grads.heads[0].W.data) all_zero &= v == 0.0f;
    CHECK(all_zero);
  }

  SUBCASE("missing cache is an error") {
    NetCache<float> stale;
    stale.batch = 3;
    stale.layers.resize(net.specs.size());
    stale.trunk_out = cache.trunk_out;
    Tensor dl = Tensor::zeros({3, 4});
    CHECK_THROWS(net.backward(stale, dl));
  }
}

TEST_CASE("single dense layer gradient is the outer product") {
  NetworkT<float> net;
  net.input_dim = 3;
  net.trunk_output_dim = 3;
  net.head_layout = HeadLayout{HeadLayoutKind::single_head_fixed, {2}};
  LayerVars<float> head;
  head.W = Tensor({2, 3}, {0.1f, 0.2f, 0.3f, -0.1f, 0.0f, 0.5f});
  head.b = Tensor::zeros({2});
  net.heads.push_back(head);

  Tensor x({1, 3}, {1.0f, -2.0f, 0.5f});
  NetCache<float> cache;
  net.forward(x, &cache);
  Tensor dl({1, 2}, {0.7f, -0.4f});
  auto grads = net.backward(cache, dl);
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 3; ++i)
      CHECK(grads.heads[0].W.at(o, i) == doctest::Approx(dl[o] * x[i]).epsilon(1e-6));
  CHECK(grads.heads[0].b[0] == doctest::Approx(0.7f));
  CHECK(grads.heads[0].b[1] == doctest::Approx(-0.4f));
}

TEST_CASE("gradient check (64-bit) on the reference architectures") {
  auto check_arch = [](Arch arch, int input_dim, int batch, int heads) {
    auto g = rng::make_stream(17, rng::Stream::init);
    HeadLayout hl{HeadLayoutKind::single_head_fixed, {heads}};
    auto net = build_model<double>(arch, input_dim, hl, HeadInit::random, g);
    auto gx = rng::make_stream(23, rng::Stream::misc);
    TensorD x = random_tensor<double>({batch, input_dim}, gx);
    std::vector<int> targets;
    std::vector<OutputMask> masks;
    for (int i = 0; i < batch; ++i) {
      targets.push_back(static_cast<int>(rng::next_below(gx, heads)));
      masks.push_back(OutputMask::full(heads));
    }
    auto gc = rng::make_stream(29, rng::Stream::misc);
    return gradient_check(net, x, targets, masks, 1e-5, gc, 12);
  };
  CHECK(check_arch(Arch::mlp256x2, 784, 4, 10) < 1e-4);
  CHECK(check_arch(Arch::cnn_small, 784, 2, 2) < 1e-4);
  CHECK(check_arch(Arch::mlp400, 1024, 2, 10) < 1e-4);
}

TEST_CASE("all-zero input still checks bias gradients") {
  auto g = rng::make_stream(31, rng::Stream::init);
  HeadLayout hl{HeadLayoutKind::single_head_fixed, {3}};
  auto net = build_model<double>(Arch::mlp256x2, 784, hl, HeadInit::random, g);
  // move biases off the relu kink so central differences are well defined
  for (auto& lv : net.vars)
    for (auto& b : lv.b.data) b = rng::uniform(g, 0.05f, 0.2f);
  TensorD x = TensorD::zeros({2, 784});
  std::vector<int> targets{0, 2};
  std::vector<OutputMask> masks{OutputMask::full(3), OutputMask::full(3)};
  auto gc = rng::make_stream(37, rng::Stream::misc);
  CHECK(gradient_check(net, x, targets, masks, 1e-5, gc, 12) < 1e-4);
}

TEST_CASE("parameter counts reproduce the published overhead formulas") {
  auto g = rng::make_stream(5, rng::Stream::init);
  HeadLayout hl{HeadLayoutKind::single_head_fixed, {10}};
  auto m400 = build_model<float>(Arch::mlp400, 1024, hl, HeadInit::random, g);
  CHECK(m400.trunk_weight_count() == 1024 * 400 + 400 * 400);
  CHECK(2 * m400.trunk_weight_count() == 1139200);
  CHECK(m400.param_count() ==
        (1024 * 400 + 400) + (400 * 400 + 400) + (400 * 10 + 10));

  auto m1000 = build_model<float>(Arch::mlp1000, 1024, hl, HeadInit::random, g);
  CHECK(2 * m1000.trunk_weight_count() == 4048000);
}

TEST_CASE("registry names are unique and stable") {
  auto g = rng::make_stream(5, rng::Stream::init);
  HeadLayout hl{HeadLayoutKind::multi_head, {2, 2, 2}};
  auto net = build_model<float>(Arch::mlp400, 1024, hl, HeadInit::random, g);
  std::vector<std::string> names;
  net.for_each_param([&](const std::string& n, Tensor&) { names.push_back(n); });
  std::vector<std::string> expect{"trunk.0.W", "trunk.0.b", "trunk.2.W", "trunk.2.b",
                                  "head.1.W",  "head.1.b",  "head.2.W",  "head.2.b",
                                  "head.3.W",  "head.3.b"};
  CHECK(names == expect);
}

TEST_CASE("forward is pure") {
  auto g = rng::make_stream(41, rng::Stream::init);
  HeadLayout hl{HeadLayoutKind::single_head_fixed, {5}};
  auto net = build_model<float>(Arch::mlp256x2, 784, hl, HeadInit::random, g);
  Tensor x = random_tensor<float>({4, 784}, g);
  Tensor a = net.forward(x);
  Tensor b = net.forward(x);
  CHECK(a.data == b.data);
  CHECK(a.all_finite());
}

TEST_CASE("build_model rejects mismatched input sizes") {
  auto g = rng::make_stream(1, rng::Stream::init);
  HeadLayout hl{HeadLayoutKind::single_head_fixed, {10}};
  CHECK_THROWS(build_model<float>(Arch::mlp400, 784, hl, HeadInit::random, g));
  CHECK_THROWS(build_model<float>(Arch::cnn_small, 1024, hl, HeadInit::random, g));
}

TEST_CASE("growing a single head preserves the learned prefix") {
  auto g = rng::make_stream(2, rng::Stream::init);
  HeadLayout hl{HeadLayoutKind::single_head_growing, {2}};
  auto net = build_model<float>(Arch::mlp256x2, 784, hl, HeadInit::random, g);
  Tensor w_before = net.heads[0].W;
  net.grow_single_head(2, HeadInit::zeros, g);
  CHECK(net.output_dim() == 4);
  for (std::int64_t i = 0; i < w_before.numel(); ++i) CHECK(net.heads[0].W[i] == w_before[i]);
  for (std::int64_t i = w_before.numel(); i < net.heads[0].W.numel(); ++i)
    CHECK(net.heads[0].W[i] == 0.0f);

  // forward on the grown head keeps old-unit logits identical
  Tensor x = random_tensor<float>({2, 784}, g);
  Tensor before_logits({2, 2});
  {
    auto clone = net;
    clone.heads[0].W = w_before;
    clone.heads[0].b = Tensor::zeros({2});
    clone.head_layout.sizes[0] = 2;
    before_logits = clone.forward(x);
  }
  Tensor after_logits = net.forward(x);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      CHECK(after_logits.at(r, c) == doctest::Approx(before_logits.at(r, c)).epsilon(1e-6));
}

TEST_CASE("maxpool ties route gradient to the first maximal element") {
  LayerSpec s;
  s.kind = LayerKind::maxpool2x2;
  s.in_channels = 1;
  s.in_h = 2;
  s.in_w = 2;
  Tensor x({1, 1, 2, 2}, {7, 7, 7, 7});
  LayerCache<float> cache;
  Tensor y;
  y = layer_forward(s, LayerVars<float>{}, x, &cache);
  CHECK(y[0] == 7.0f);
  CHECK(cache.argmax[0] == 0);  // scan order: first maximal element
}
