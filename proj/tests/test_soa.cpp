#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <vector>

#include "dmlkit/soa.hpp"
#include "doctest.h"

using namespace dmlkit;

namespace {

Tensor rand_map(std::size_t b, std::size_t h, std::size_t w, std::size_t c,
                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> data(b * h * w * c);
  for (double& v : data) v = dist(rng);
  return Tensor({b, h, w, c}, std::move(data));
}

// Per-sample attention oracle: 1x1 convs are per-location matvecs, so build
// q and k rows by hand and softmax each row of zeta * q k^T.
std::vector<double> naive_attention(const Tensor& f, const SoaParams& p,
                                    double zeta, std::size_t sample) {
  const std::size_t h = f.dim(1), w = f.dim(2), c = f.dim(3);
  const std::size_t hw = h * w, d = p.proj_dim();
  auto project = [&](const Tensor& wt, const Tensor& bt) {
    std::vector<double> out(hw * d);
    for (std::size_t loc = 0; loc < hw; ++loc) {
      for (std::size_t j = 0; j < d; ++j) {
        double acc = bt.data()[j];
        for (std::size_t ch = 0; ch < c; ++ch) {
          acc += f.data()[(sample * hw + loc) * c + ch] *
                 wt.data()[ch * d + j];  // (1,1,c,d) kernel, row-major
        }
        out[loc * d + j] = acc;
      }
    }
    return out;
  };
  const auto q = project(p.wq, p.bq);
  const auto k = project(p.wk, p.bk);
  std::vector<double> a(hw * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < hw; ++j) {
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += q[i * d + t] * k[j * d + t];
      a[i * hw + j] = zeta * dot;
      mx = std::max(mx, a[i * hw + j]);
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < hw; ++j) {
      a[i * hw + j] = std::exp(a[i * hw + j] - mx);
      denom += a[i * hw + j];
    }
    for (std::size_t j = 0; j < hw; ++j) a[i * hw + j] /= denom;
  }
  return a;
}

}  // namespace

TEST_CASE("attention rows are probability distributions") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t b = dim(rng), h = dim(rng), w = dim(rng), c = dim(rng);
    SoaConfig cfg{0.7, 0};
    SoaParams p = init_soa(c, cfg, 100 + static_cast<std::uint64_t>(trial));
    Tensor f = rand_map(b, h, w, c, rng);
    Tensor a = attention_map(f, p, cfg);
    REQUIRE(a.shape() == Shape{b, h * w, h * w});
    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t i = 0; i < h * w; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < h * w; ++j) {
          const double v = a.data()[(s * h * w + i) * h * w + j];
          CHECK(v >= 0.0);
          sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("attention matches the dense per-sample oracle") {
  std::mt19937_64 rng(32);
  SoaConfig cfg{1.3, 3};
  SoaParams p = init_soa(5, cfg, 77);
  Tensor f = rand_map(2, 3, 2, 5, rng);
  Tensor a = attention_map(f, p, cfg);
  for (std::size_t s = 0; s < 2; ++s) {
    const auto oracle = naive_attention(f, p, cfg.zeta, s);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      CHECK(std::abs(a.data()[s * oracle.size() + i] - oracle[i]) <= 1e-12);
    }
  }
}

TEST_CASE("zeta = 0 gives uniform attention") {
  std::mt19937_64 rng(33);
  SoaConfig cfg{0.0, 0};
  SoaParams p = init_soa(4, cfg, 5);
  Tensor f = rand_map(2, 3, 3, 4, rng);
  Tensor a = attention_map(f, p, cfg);
  const double uniform = 1.0 / 9.0;
  for (double v : a.data()) CHECK(std::abs(v - uniform) <= 1e-15);
}

TEST_CASE("zero-phi initialization makes the block an exact identity") {
  std::mt19937_64 rng(34);
  SoaConfig cfg{1.0, 0};
  SoaParams p = init_soa(6, cfg, 9);  // wphi starts all-zero
  Tensor f = rand_map(3, 2, 4, 6, rng);
  Tensor out = soa_forward(f, p, cfg);
  REQUIRE(out.shape() == f.shape());
  CHECK(std::memcmp(out.data().data(), f.data().data(),
                    f.size() * sizeof(double)) == 0);
}

TEST_CASE("single spatial location attends only to itself") {
  std::mt19937_64 rng(35);
  SoaConfig cfg{2.0, 2};
  SoaParams p = init_soa(3, cfg, 4);
  Tensor f = rand_map(2, 1, 1, 3, rng);
  Tensor a = attention_map(f, p, cfg);
  REQUIRE(a.shape() == Shape{2, 1, 1});
  CHECK(a.data()[0] == 1.0);
  CHECK(a.data()[1] == 1.0);
}

TEST_CASE("spatially permuting the input permutes the attention map") {
  // 1x1 projections are per-location, so relocating features relocates their
  // attention rows and columns in lockstep.
  std::mt19937_64 rng(36);
  SoaConfig cfg{0.9, 2};
  SoaParams p = init_soa(4, cfg, 21);
  const std::size_t h = 2, w = 3, c = 4, hw = h * w;
  Tensor f = rand_map(1, h, w, c, rng);

  std::vector<std::size_t> perm(hw);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> permuted(hw * c);
  for (std::size_t loc = 0; loc < hw; ++loc) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      permuted[loc * c + ch] = f.data()[perm[loc] * c + ch];
    }
  }
  Tensor fp({1, h, w, c}, std::move(permuted));

  Tensor a = attention_map(f, p, cfg);
  Tensor ap = attention_map(fp, p, cfg);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t j = 0; j < hw; ++j) {
      CHECK(std::abs(ap.data()[i * hw + j] -
                     a.data()[perm[i] * hw + perm[j]]) <= 1e-12);
    }
  }
}

TEST_CASE("projection dimension defaults and bounds") {
  CHECK(soa_proj_dim(8, SoaConfig{1.0, 0}) == 4);
  CHECK(soa_proj_dim(1, SoaConfig{1.0, 0}) == 1);
  CHECK(soa_proj_dim(8, SoaConfig{1.0, 3}) == 3);
  CHECK_THROWS(soa_proj_dim(4, SoaConfig{1.0, 9}));
}

TEST_CASE("soa_forward preserves shape and is deterministic in the seed") {
  std::mt19937_64 rng(37);
  SoaConfig cfg{1.0, 2};
  Tensor f = rand_map(2, 3, 3, 4, rng);
  SoaParams p1 = init_soa(4, cfg, 123);
  SoaParams p2 = init_soa(4, cfg, 123);
  CHECK(std::memcmp(p1.wq.data().data(), p2.wq.data().data(),
                    p1.wq.size() * sizeof(double)) == 0);
  SoaParams p3 = init_soa(4, cfg, 124);
  bool all_same = true;
  for (std::size_t i = 0; i < p1.wq.size(); ++i) {
    all_same = all_same && p1.wq.data()[i] == p3.wq.data()[i];
  }
  CHECK_FALSE(all_same);
}
