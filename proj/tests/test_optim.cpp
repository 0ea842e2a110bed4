#include "clbench/optim.hpp"

#include <doctest.h>

#include <cmath>

using namespace clbench;

namespace {

Network small_net(std::uint64_t seed = 5) {
  auto g = rng::make_stream(seed, rng::Stream::init);
  HeadLayout hl{HeadLayoutKind::single_head_fixed, {3}};
  return build_model<float>(Arch::mlp256x2, 784, hl, HeadInit::random, g);
}

Gradients unit_gradients(Network& net, float value) {
  Gradients g = net.zero_gradients();
  net.for_each_param([&](const std::string& name, Tensor&) {
    Tensor* t = g.by_name(name);
    std::fill(t->data.begin(), t->data.end(), value);
  });
  return g;
}

}  // namespace

TEST_CASE("sgd hand values") {
  Tensor p({1}, {1.0f});
  Tensor g({1}, {2.0f});
  sgd_step(p, g, 0.01f);
  CHECK(p[0] == doctest::Approx(0.98f).epsilon(1e-7));

  Tensor z({1}, {0.0f});
  Tensor p2({1}, {0.37f});
  sgd_step(p2, z, 0.01f);
  CHECK(p2[0] == 0.37f);

  Tensor bad({2}, {0.f, 0.f});
  CHECK_THROWS(sgd_step(p, bad, 0.01f));
}

TEST_CASE("adagrad hand values and monotone step shrinkage") {
  Tensor p({1}, {1.0f});
  Tensor g({1}, {2.0f});
  Tensor accum = Tensor::zeros({1});
  adagrad_step(p, g, accum, 0.01f, 1e-10f);
  CHECK(accum[0] == doctest::Approx(4.0f));
  CHECK(p[0] == doctest::Approx(0.99f).epsilon(1e-6));

  float prev_step = 1.0f - p[0];
  float prev_accum = accum[0];
  for (int i = 0; i < 8; ++i) {
    float before = p[0];
    adagrad_step(p, g, accum, 0.01f, 1e-10f);
    float step = before - p[0];
    CHECK(step > 0.0f);
    CHECK(step <= prev_step);
    CHECK(accum[0] >= prev_accum);
    prev_step = step;
    prev_accum = accum[0];
  }
}

TEST_CASE("adam first step moves by about -lr * sign(g)") {
  Tensor p({2}, {1.0f, -0.5f});
  Tensor g({2}, {0.3f, -7.0f});
  Tensor m = Tensor::zeros({2}), v = Tensor::zeros({2});
  adam_step(p, g, m, v, 1, 0.001f, 0.9f, 0.999f, 1e-8f);
  CHECK(p[0] == doctest::Approx(1.0f - 0.001f).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(-0.5f + 0.001f).epsilon(1e-4));
}

TEST_CASE("adam zero gradient from fresh state leaves parameters unchanged") {
  Tensor p({2}, {0.25f, -1.5f});
  Tensor g = Tensor::zeros({2});
  Tensor m = Tensor::zeros({2}), v = Tensor::zeros({2});
  adam_step(p, g, m, v, 1, 0.001f, 0.9f, 0.999f, 1e-8f);
  CHECK(p[0] == 0.25f);
  CHECK(p[1] == -1.5f);
}

TEST_CASE("lr = 0 leaves parameters bitwise unchanged") {
  for (OptKind kind : {OptKind::sgd, OptKind::adagrad, OptKind::adam}) {
    Network net = small_net();
    std::vector<float> before;
    net.for_each_param([&](const std::string&, Tensor& p) {
      before.insert(before.end(), p.data.begin(), p.data.end());
    });
    OptimizerConfig cfg;
    cfg.kind = kind;
    cfg.lr = 0.0f;
    Optimizer<float> opt(cfg);
    Gradients g = unit_gradients(net, 0.73f);
    opt.step(net, g);
    opt.step(net, g);
    std::vector<float> after;
    net.for_each_param([&](const std::string&, Tensor& p) {
      after.insert(after.end(), p.data.begin(), p.data.end());
    });
    CHECK(before == after);
  }
}

TEST_CASE("step counter is shared, monotone, and never reset across tasks") {
  Network net = small_net();
  OptimizerConfig cfg;
  cfg.kind = OptKind::adam;
  cfg.lr = 0.001f;
  Optimizer<float> opt(cfg);
  Gradients g = unit_gradients(net, 0.01f);
  // "task 1": 7 mini-batches, "task 2": 5 mini-batches
  for (int i = 0; i < 7; ++i) opt.step(net, g);
  CHECK(opt.step_count() == 7);
  for (int i = 0; i < 5; ++i) opt.step(net, g);
  CHECK(opt.step_count() == 12);
}

TEST_CASE("state keys match the parameter registry") {
  Network net = small_net();
  OptimizerConfig cfg;
  cfg.kind = OptKind::adagrad;
  Optimizer<float> opt(cfg);
  Gradients g = unit_gradients(net, 0.1f);
  opt.step(net, g);
  std::vector<std::string> registry;
  net.for_each_param([&](const std::string& n, Tensor&) { registry.push_back(n); });
  auto keys = opt.state_keys();
  std::sort(registry.begin(), registry.end());
  std::sort(keys.begin(), keys.end());
  CHECK(keys == registry);
}

TEST_CASE("adagrad accumulator stays non-negative and non-decreasing") {
  Network net = small_net();
  OptimizerConfig cfg;
  cfg.kind = OptKind::adagrad;
  cfg.lr = 0.01f;
  Optimizer<float> opt(cfg);
  auto grad_stream = rng::make_stream(99, rng::Stream::misc);
  std::vector<float> prev;
  for (int step = 0; step < 5; ++step) {
    Gradients g = net.zero_gradients();
    net.for_each_param([&](const std::string& name, Tensor&) {
      Tensor* t = g.by_name(name);
      for (auto& v : t->data) v = rng::uniform(grad_stream, -1.0f, 1.0f);
    });
    opt.step(net, g);
    const Tensor* acc = opt.accumulator("trunk.0.W");
    REQUIRE(acc != nullptr);
    if (!prev.empty())
      for (std::size_t i = 0; i < prev.size(); ++i) CHECK(acc->data[i] >= prev[i]);
    for (float v : acc->data) CHECK(v >= 0.0f);
    prev = acc->data;
  }
}

TEST_CASE("grown head parameters join lazily with zeroed accumulators") {
  auto g = rng::make_stream(13, rng::Stream::init);
  HeadLayout hl{HeadLayoutKind::single_head_growing, {2}};
  Network net = build_model<float>(Arch::mlp256x2, 784, hl, HeadInit::random, g);
  OptimizerConfig cfg;
  cfg.kind = OptKind::adam;
  cfg.lr = 0.001f;
  Optimizer<float> opt(cfg);

  Gradients g1 = unit_gradients(net, 0.2f);
  opt.step(net, g1);
  const Tensor before = *opt.accumulator("head.W");

  net.grow_single_head(3, HeadInit::zeros, g);
  Gradients g2 = unit_gradients(net, 0.0f);  // zero step: accumulators decay only
  opt.step(net, g2);
  const Tensor* after = opt.accumulator("head.W");
  REQUIRE(after != nullptr);
  CHECK(after->numel() == net.heads[0].W.numel());
  // old rows decayed by beta1, new rows exactly zero (never touched by a gradient)
  for (std::int64_t i = 0; i < before.numel(); ++i)
    CHECK((*after)[i] == doctest::Approx(before[i] * 0.9f).epsilon(1e-6));
  for (std::int64_t i = before.numel(); i < after->numel(); ++i) CHECK((*after)[i] == 0.0f);
  CHECK(opt.step_count() == 2);  // growth did not reset anything
}
