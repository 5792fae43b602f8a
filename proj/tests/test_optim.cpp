#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "dmlkit/errors.hpp"
#include "dmlkit/optim.hpp"
#include "doctest.h"

using namespace dmlkit;

namespace {

Tensor param_with_grad(std::vector<double> value, std::vector<double> grad) {
  const std::size_t n = value.size();
  Tensor p({n}, std::move(value), true);
  p.ensure_grad();
  auto g = p.grad_mutable();
  for (std::size_t i = 0; i < grad.size(); ++i) g[i] = grad[i];
  return p;
}

// Textbook Adam update (no decay) carried along by hand, for cross-checking.
struct ScalarAdam {
  double m = 0, v = 0, b1, b2, eps;
  std::uint64_t t = 0;
  ScalarAdam(double b1_, double b2_, double eps_) : b1(b1_), b2(b2_), eps(eps_) {}
  double update(double theta, double g, double lr) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vh = v / (1 - std::pow(b2, static_cast<double>(t)));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace

TEST_CASE("first step with unit gradient moves by roughly -lr") {
  Tensor p = param_with_grad({1.0}, {1.0});
  AdamW opt({ParamGroup{{p}, 0.1, 0.0}});
  opt.step();
  // After bias correction m_hat = v_hat = 1, so the update is
  // lr * 1 / (1 + eps).
  const double expected = 1.0 - 0.1 / (1.0 + 1e-8);
  CHECK(std::abs(p.data()[0] - expected) <= 1e-15);
}

TEST_CASE("zero gradient leaves only the decoupled decay") {
  Tensor p = param_with_grad({2.0}, {0.0});
  AdamW opt({ParamGroup{{p}, 0.5, 0.1}});
  opt.step();
  CHECK(std::abs(p.data()[0] - 2.0 * (1.0 - 0.5 * 0.1)) <= 1e-15);
}

TEST_CASE("matches a scalar Adam reference over many steps") {
  std::mt19937_64 rng(81);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  Tensor p = param_with_grad({0.3}, {0.0});
  AdamW opt({ParamGroup{{p}, 0.05, 0.0}}, AdamWConfig{0.9, 0.999, 1e-8});
  ScalarAdam ref(0.9, 0.999, 1e-8);
  double theta = 0.3;
  for (int step = 0; step < 200; ++step) {
    const double g = dist(rng);
    p.grad_mutable()[0] = g;
    opt.step();
    theta = ref.update(theta, g, 0.05);
    REQUIRE(std::abs(p.data()[0] - theta) <= 1e-12);
  }
}

TEST_CASE("drives a quadratic to its minimum") {
  // f(theta) = sum((theta - target)^2), gradient 2 (theta - target).
  std::vector<double> target = {1.5, -0.75, 0.25};
  Tensor p = param_with_grad({0.0, 0.0, 0.0}, {0.0, 0.0, 0.0});
  AdamW opt({ParamGroup{{p}, 0.05, 0.0}});
  for (int step = 0; step < 2000; ++step) {
    auto g = p.grad_mutable();
    auto th = p.data();
    for (std::size_t i = 0; i < 3; ++i) g[i] = 2.0 * (th[i] - target[i]);
    opt.step();
  }
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(p.data()[i] - target[i]) <= 1e-3);
  }
}

TEST_CASE("updates are bitwise deterministic") {
  auto run = [] {
    std::mt19937_64 rng(82);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor p = param_with_grad({0.1, -0.2, 0.3, -0.4}, {0, 0, 0, 0});
    AdamW opt({ParamGroup{{p}, 1e-2, 1e-3}});
    for (int step = 0; step < 50; ++step) {
      auto g = p.grad_mutable();
      for (std::size_t i = 0; i < 4; ++i) g[i] = dist(rng);
      opt.step();
    }
    return std::vector<double>(p.data().begin(), p.data().end());
  };
  std::vector<double> a = run(), b = run();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("groups keep separate learning rates and decay") {
  Tensor fast = param_with_grad({1.0}, {1.0});
  Tensor slow = param_with_grad({1.0}, {1.0});
  AdamW opt({ParamGroup{{fast}, 0.2, 0.0}, ParamGroup{{slow}, 0.01, 0.0}});
  opt.step();
  const double d_fast = 1.0 - fast.data()[0];
  const double d_slow = 1.0 - slow.data()[0];
  CHECK(std::abs(d_fast - 0.2 / (1.0 + 1e-8)) <= 1e-15);
  CHECK(std::abs(d_slow - 0.01 / (1.0 + 1e-8)) <= 1e-15);
}

TEST_CASE("missing or non-finite gradients abort the step") {
  Tensor no_grad({2}, {1.0, 2.0}, true);
  AdamW opt1({ParamGroup{{no_grad}, 0.1, 0.0}});
  CHECK_THROWS_AS(opt1.step(), NumericError);

  Tensor bad = param_with_grad({1.0}, {std::nan("")});
  AdamW opt2({ParamGroup{{bad}, 0.1, 0.0}});
  const double before = bad.data()[0];
  CHECK_THROWS_AS(opt2.step(), NumericError);
  CHECK(bad.data()[0] == before);  // aborted before mutating anything
}

TEST_CASE("constructor validates hyperparameters") {
  Tensor p = param_with_grad({1.0}, {1.0});
  CHECK_THROWS(AdamW({ParamGroup{{p}, 0.0, 0.0}}));
  CHECK_THROWS(AdamW({ParamGroup{{p}, 0.1, 0.0}}, AdamWConfig{1.0, 0.999, 1e-8}));
  CHECK_THROWS(AdamW({ParamGroup{{p}, 0.1, 0.0}}, AdamWConfig{0.9, -0.1, 1e-8}));
}

TEST_CASE("state roundtrip resumes the exact trajectory") {
  auto fill_grad = [](Tensor& p, std::mt19937_64& r) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    auto g = p.grad_mutable();
    for (double& x : g) x = d(r);
  };

  // Continuous run: 20 steps.
  std::mt19937_64 rng_a(83);
  Tensor pa = param_with_grad({0.5, -0.5}, {0, 0});
  AdamW oa({ParamGroup{{pa}, 0.03, 0.01}});
  for (int i = 0; i < 20; ++i) {
    fill_grad(pa, rng_a);
    oa.step();
  }

  // Split run: 10 steps, checkpoint, restore into a fresh optimizer, 10 more.
  std::mt19937_64 rng_b(83);
  Tensor pb = param_with_grad({0.5, -0.5}, {0, 0});
  AdamW ob({ParamGroup{{pb}, 0.03, 0.01}});
  for (int i = 0; i < 10; ++i) {
    fill_grad(pb, rng_b);
    ob.step();
  }
  NamedTensors saved = ob.state();
  AdamW oc({ParamGroup{{pb}, 0.03, 0.01}});
  oc.load_state(saved);
  CHECK(oc.steps() == 10);
  for (int i = 0; i < 10; ++i) {
    fill_grad(pb, rng_b);
    oc.step();
  }

  auto a = pa.data();
  auto b = pb.data();
  for (std::size_t i = 0; i < 2; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("load_state rejects entries that do not fit") {
  Tensor p = param_with_grad({1.0}, {1.0});
  AdamW opt({ParamGroup{{p}, 0.1, 0.0}});
  CHECK_THROWS_AS(opt.load_state({{"opt.g9.p0.m", Tensor::zeros({1})}}),
                  ConfigError);
  CHECK_THROWS_AS(opt.load_state({{"opt.g0.p0.m", Tensor::zeros({4})}}),
                  ConfigError);
  CHECK_THROWS_AS(opt.load_state({{"mystery", Tensor::zeros({1})}}), ConfigError);
}
