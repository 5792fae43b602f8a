#include "dmlkit/head.hpp"

#include <stdexcept>

#include "dmlkit/backbone.hpp"

namespace dmlkit {

NamedTensors HeadParams::named(const std::string& prefix) const {
  return {
      {prefix + ".w_l", w_l},
      {prefix + ".b_l", b_l},
      {prefix + ".w_g", w_g},
      {prefix + ".b_g", b_g},
  };
}

HeadParams init_head(std::size_t local_channels, std::size_t global_channels,
                     const HeadConfig& cfg, std::uint64_t seed) {
  if (cfg.embedding_dim == 0 || cfg.embedding_dim % 2 != 0) {
    throw std::invalid_argument("head: embedding dim must be positive and even, got " +
                                std::to_string(cfg.embedding_dim));
  }
  const std::size_t half = cfg.embedding_dim / 2;
  std::mt19937_64 rng(seed);
  HeadParams p;
  p.w_l = he_normal({local_channels, half}, local_channels, rng);
  p.b_l = Tensor::zeros({half}, true);
  p.w_g = he_normal({global_channels, half}, global_channels, rng);
  p.b_g = Tensor::zeros({half}, true);
  return p;
}

Tensor gap_gmp_pool(const Tensor& f_soa) {
  return add(spatial_mean(f_soa), spatial_max(f_soa));
}

Tensor embed(const Tensor& f_l_soa, const Tensor& f_g_soa, const HeadParams& p) {
  if (f_l_soa.dim(3) != p.w_l.dim(0) || f_g_soa.dim(3) != p.w_g.dim(0)) {
    throw std::invalid_argument(
        "head: feature channels " + std::to_string(f_l_soa.dim(3)) + "/" +
        std::to_string(f_g_soa.dim(3)) + " do not match projections " +
        std::to_string(p.w_l.dim(0)) + "/" + std::to_string(p.w_g.dim(0)));
  }
  Tensor local = add_bias(matmul(gap_gmp_pool(f_l_soa), p.w_l), p.b_l);
  Tensor global = add_bias(matmul(gap_gmp_pool(f_g_soa), p.w_g), p.b_g);
  return concat({local, global}, 1);
}

Tensor space_to_depth(const Tensor& f, std::size_t block) {
  if (!f.defined() || f.ndim() != 4) {
    throw std::invalid_argument("space_to_depth: input must be a 4-d feature map");
  }
  if (block == 0) throw std::invalid_argument("space_to_depth: block must be >= 1");
  const std::size_t bsz = f.dim(0), h = f.dim(1), w = f.dim(2), c = f.dim(3);
  if (h % block != 0 || w % block != 0) {
    throw std::invalid_argument("space_to_depth: spatial dims " +
                                std::to_string(h) + "x" + std::to_string(w) +
                                " not divisible by block " + std::to_string(block));
  }
  const std::size_t oh = h / block, ow = w / block, oc = c * block * block;

  // Pure index permutation, shared by forward and backward.
  auto src_of = [=](std::size_t b, std::size_t y, std::size_t x,
                    std::size_t bi, std::size_t bj, std::size_t ch) {
    return ((b * h + (y * block + bi)) * w + (x * block + bj)) * c + ch;
  };
  std::vector<double> out(f.size());
  auto dx = f.data();
  std::size_t o = 0;
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        for (std::size_t bi = 0; bi < block; ++bi) {
          for (std::size_t bj = 0; bj < block; ++bj) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              out[o++] = dx[src_of(b, y, x, bi, bj, ch)];
            }
          }
        }
      }
    }
  }

  const bool need = tracked(f);
  Tensor result = detail::make_op_output({bsz, oh, ow, oc}, std::move(out),
                                         "space_to_depth", need);
  if (!need) return result;
  Tensor tf = f, out_t = result;
  Tape::active()->record(out_t, [tf, out_t, src_of, bsz, oh, ow, block, c]() mutable {
    auto go = out_t.grad();
    tf.ensure_grad();
    auto gf = tf.grad_mutable();
    std::size_t o = 0;
    for (std::size_t b = 0; b < bsz; ++b) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          for (std::size_t bi = 0; bi < block; ++bi) {
            for (std::size_t bj = 0; bj < block; ++bj) {
              for (std::size_t ch = 0; ch < c; ++ch) {
                gf[src_of(b, y, x, bi, bj, ch)] += go[o++];
              }
            }
          }
        }
      }
    }
  });
  return result;
}

}  // namespace dmlkit
