#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "dmlkit/backbone.hpp"
#include "dmlkit/gradcheck.hpp"
#include "doctest.h"

using namespace dmlkit;

TEST_CASE("default config maps (B,32,32,3) to (B,8,8,32) and (B,4,4,64)") {
  BackboneConfig cfg;
  BackboneParams p = init_backbone(cfg, 1);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> data(2 * 32 * 32 * 3);
  for (double& v : data) v = dist(rng);
  Tensor x({2, 32, 32, 3}, std::move(data));
  auto [f_l, f_g] = backbone_forward(x, p, cfg);
  CHECK(f_l.shape() == Shape{2, 8, 8, 32});
  CHECK(f_g.shape() == Shape{2, 4, 4, 64});
}

TEST_CASE("local/global shape ordering holds across configs") {
  for (std::size_t side : {8u, 16u, 20u}) {
    BackboneConfig cfg;
    cfg.input_h = side;
    cfg.input_w = side;
    cfg.stem_channels = 4;
    cfg.local_channels = 6;
    cfg.global_channels = 10;
    BackboneParams p = init_backbone(cfg, 3);
    Tensor x = Tensor::full({1, side, side, 3}, 0.25);
    auto [f_l, f_g] = backbone_forward(x, p, cfg);
    CHECK(f_g.dim(1) <= f_l.dim(1));
    CHECK(f_g.dim(2) <= f_l.dim(2));
    CHECK(f_g.dim(3) >= f_l.dim(3));
  }
}

TEST_CASE("zero input with zero biases yields zero feature maps") {
  BackboneConfig cfg{16, 16, 4, 6, 8};
  BackboneParams p = init_backbone(cfg, 4);
  Tensor x = Tensor::zeros({1, 16, 16, 3});
  auto [f_l, f_g] = backbone_forward(x, p, cfg);
  for (double v : f_l.data()) CHECK(v == 0.0);
  for (double v : f_g.data()) CHECK(v == 0.0);
}

TEST_CASE("He initialization has the right scale and zero biases") {
  BackboneConfig cfg;  // w3 is 3x3x32x64 = 18432 draws of stddev sqrt(2/288)
  BackboneParams p = init_backbone(cfg, 5);
  double mean = 0.0;
  for (double v : p.w3.data()) mean += v;
  mean /= static_cast<double>(p.w3.size());
  double var = 0.0;
  for (double v : p.w3.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(p.w3.size() - 1);
  const double want = std::sqrt(2.0 / (9.0 * 32.0));
  CHECK(std::abs(mean) <= 3.0 * want / std::sqrt(18432.0) * 2.0);
  CHECK(std::sqrt(var) == doctest::Approx(want).epsilon(0.05));
  for (double v : p.b0.data()) CHECK(v == 0.0);
  for (double v : p.b3.data()) CHECK(v == 0.0);
  CHECK(p.w0.requires_grad());
  CHECK(p.b2.requires_grad());
}

TEST_CASE("initialization is deterministic in the seed") {
  BackboneConfig cfg{16, 16, 4, 6, 8};
  BackboneParams a = init_backbone(cfg, 42);
  BackboneParams b = init_backbone(cfg, 42);
  CHECK(std::memcmp(a.w2.data().data(), b.w2.data().data(),
                    a.w2.size() * sizeof(double)) == 0);
  BackboneParams c = init_backbone(cfg, 43);
  bool same = true;
  for (std::size_t i = 0; i < a.w2.size(); ++i) {
    same = same && a.w2.data()[i] == c.w2.data()[i];
  }
  CHECK_FALSE(same);
}

TEST_CASE("input shape mismatches are rejected") {
  BackboneConfig cfg{16, 16, 4, 6, 8};
  BackboneParams p = init_backbone(cfg, 6);
  CHECK_THROWS(backbone_forward(Tensor::zeros({1, 8, 16, 3}), p, cfg));
  CHECK_THROWS(backbone_forward(Tensor::zeros({1, 16, 16, 1}), p, cfg));
  CHECK_THROWS(backbone_forward(Tensor::zeros({16, 16, 3}), p, cfg));
}

TEST_CASE("named parameter map is stable and complete") {
  BackboneConfig cfg{16, 16, 4, 6, 8};
  BackboneParams p = init_backbone(cfg, 7);
  const NamedTensors named = p.named("backbone");
  REQUIRE(named.size() == 8);
  CHECK(named[0].first == "backbone.w0");
  CHECK(named[1].first == "backbone.b0");
  CHECK(named[7].first == "backbone.b3");
}
