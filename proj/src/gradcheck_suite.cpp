#include <algorithm>
#include <random>
#include <vector>

#include "dmlkit/backbone.hpp"
#include "dmlkit/gradcheck.hpp"
#include "dmlkit/head.hpp"
#include "dmlkit/losses.hpp"
#include "dmlkit/soa.hpp"
#include "dmlkit/tensor.hpp"

namespace dmlkit {

namespace {

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0,
               double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data));
}

// Uniform values pushed away from 0 so relu/abs-style kinks sit far from the
// finite-difference step.
Tensor off_kink(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> data(numel(shape));
  for (double& v : data) {
    const double u = dist(rng);
    v = u >= 0.0 ? u + 0.05 : u - 0.05;
  }
  return Tensor(std::move(shape), std::move(data));
}

// Strictly separated values (gap >= 0.17) so spatial_max has a unique,
// FD-stable argmax everywhere.
Tensor distinct(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.1, 0.1);
  std::vector<double> data(numel(shape));
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = 0.37 * static_cast<double>(i) + dist(rng);
  }
  std::shuffle(data.begin(), data.end(), rng);
  return Tensor(std::move(shape), std::move(data));
}

// Reduces an arbitrary tensor to a scalar with fixed random weights so every
// output element influences the loss.
Tensor weighted_sum(const Tensor& t, const Tensor& weights) {
  return reduce_sum(mul(t, weights));
}

// The SOA value path flows through phi, which initializes to zero; give phi
// random weight so the q/k/v parameters receive nonzero gradients.
void randomize_phi(SoaParams& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  for (double& v : p.wphi.mutable_data()) v = dist(rng);
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckReport> reports;
  std::mt19937_64 rng(seed);

  auto run = [&](const std::string& name, std::vector<Tensor> inputs,
                 const LossFn& fn) {
    reports.push_back(check_gradients(name, std::move(inputs), fn));
  };

  // --- elementwise and shape ops, one case each ---
  {
    Tensor w = uniform({2, 3}, rng);
    run("add", {uniform({2, 3}, rng), uniform({2, 3}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(add(in[0], in[1]), w);
        });
  }
  {
    Tensor w = uniform({2, 3}, rng);
    run("sub", {uniform({2, 3}, rng), uniform({2, 3}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(sub(in[0], in[1]), w);
        });
  }
  {
    Tensor w = uniform({2, 3}, rng);
    run("mul", {uniform({2, 3}, rng), uniform({2, 3}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(mul(in[0], in[1]), w);
        });
  }
  {
    Tensor w = uniform({2, 3}, rng);
    run("exp", {uniform({2, 3}, rng)}, [w](const std::vector<Tensor>& in) {
      return weighted_sum(exp(in[0]), w);
    });
  }
  {
    Tensor w = uniform({2, 3}, rng);
    run("log", {uniform({2, 3}, rng, 0.5, 2.0)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(log(in[0]), w);
        });
  }
  {
    Tensor w = uniform({2, 3}, rng);
    run("relu", {off_kink({2, 3}, rng)}, [w](const std::vector<Tensor>& in) {
      return weighted_sum(relu(in[0]), w);
    });
  }
  {
    Tensor w = uniform({2, 3}, rng);
    run("scale", {uniform({2, 3}, rng)}, [w](const std::vector<Tensor>& in) {
      return weighted_sum(scale(in[0], 1.7), w);
    });
  }
  {
    Tensor w = uniform({2, 3, 4}, rng);
    run("add_bias", {uniform({2, 3, 4}, rng), uniform({4}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(add_bias(in[0], in[1]), w);
        });
  }
  {
    Tensor w = uniform({3, 2}, rng);
    run("matmul", {uniform({3, 4}, rng), uniform({4, 2}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(matmul(in[0], in[1]), w);
        });
  }
  {
    Tensor w = uniform({4, 3}, rng);
    run("transpose", {uniform({3, 4}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(transpose(in[0]), w);
        });
  }
  {
    Tensor w = uniform({2, 5}, rng);
    run("softmax", {uniform({2, 5}, rng)}, [w](const std::vector<Tensor>& in) {
      return weighted_sum(softmax(in[0], 1), w);
    });
  }
  {
    Tensor w = uniform({2, 3, 2, 2}, rng);  // (2,5,4,3) k3 s2 p1 -> (2,3,2,2)
    run("conv2d", {uniform({2, 5, 4, 3}, rng), uniform({3, 3, 3, 2}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(conv2d(in[0], in[1], 2, 1), w);
        });
  }
  {
    Tensor w = uniform({2, 2}, rng);
    run("spatial_mean", {uniform({2, 3, 4, 2}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(spatial_mean(in[0]), w);
        });
  }
  {
    Tensor w = uniform({2, 2}, rng);
    run("spatial_max", {distinct({2, 3, 4, 2}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(spatial_max(in[0]), w);
        });
  }
  {
    run("reduce_sum", {uniform({2, 3}, rng)},
        [](const std::vector<Tensor>& in) { return reduce_sum(in[0]); });
  }
  {
    Tensor w = uniform({3, 4}, rng);
    run("reshape", {uniform({2, 6}, rng)}, [w](const std::vector<Tensor>& in) {
      return weighted_sum(reshape(in[0], {3, 4}), w);
    });
  }
  {
    Tensor w = uniform({2, 5}, rng);
    run("concat", {uniform({2, 3}, rng), uniform({2, 2}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(concat({in[0], in[1]}, 1), w);
        });
  }
  {
    Tensor w = uniform({2, 3}, rng);
    run("slice", {uniform({2, 5}, rng)}, [w](const std::vector<Tensor>& in) {
      return weighted_sum(slice(in[0], 1, 1, 3), w);
    });
  }
  {
    Tensor w = uniform({3, 4}, rng);
    run("l2_normalize", {off_kink({3, 4}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(l2_normalize(in[0], 1), w);
        });
  }
  {
    Tensor w = uniform({1, 2, 2, 12}, rng);
    run("space_to_depth", {uniform({1, 4, 4, 3}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(space_to_depth(in[0], 2), w);
        });
  }

  // --- composed graphs ---
  {
    Tensor w = uniform({3, 2}, rng);
    run("cosine_similarity_matrix", {off_kink({3, 4}, rng), off_kink({2, 4}, rng)},
        [w](const std::vector<Tensor>& in) {
          return weighted_sum(cosine_similarity_matrix(in[0], in[1]), w);
        });
  }
  {
    const std::vector<int> labels{0, 1, 0, 2};
    const ProxyAnchorConfig cfg;
    run("proxy_anchor_loss", {off_kink({4, 5}, rng), off_kink({3, 5}, rng)},
        [labels, cfg](const std::vector<Tensor>& in) {
          ProxyBank bank{in[1]};
          return proxy_anchor_loss(in[0], labels, bank, cfg);
        });
  }
  {
    const std::vector<int> labels{0, 1, 0, 1};
    const MsConfig cfg;
    run("ms_loss", {off_kink({4, 5}, rng)},
        [labels, cfg](const std::vector<Tensor>& in) {
          return ms_loss(in[0], labels, cfg);
        });
  }
  {
    const std::vector<int> labels{0, 1, 0, 1};
    const ProxyAnchorConfig pa;
    const MsConfig ms;
    const HybridConfig hy;
    run("hybrid_loss", {off_kink({4, 5}, rng), off_kink({3, 5}, rng)},
        [labels, pa, ms, hy](const std::vector<Tensor>& in) {
          ProxyBank bank{in[1]};
          return hybrid_loss(in[0], labels, bank, pa, ms, hy).total;
        });
  }
  {
    const BackboneConfig cfg{8, 8, 4, 6, 8};
    BackboneParams p = init_backbone(cfg, seed + 101);
    Tensor x = uniform({2, 8, 8, 3}, rng);
    Tensor wl = uniform({2, 2, 2, 6}, rng);  // f_l is (2,2,2,6)
    Tensor wg = uniform({2, 1, 1, 8}, rng);  // f_g is (2,1,1,8)
    run("backbone",
        {x, p.w0, p.b0, p.w1, p.b1, p.w2, p.b2, p.w3, p.b3},
        [cfg, wl, wg](const std::vector<Tensor>& in) {
          BackboneParams q{in[1], in[2], in[3], in[4],
                           in[5], in[6], in[7], in[8]};
          auto [f_l, f_g] = backbone_forward(in[0], q, cfg);
          return add(weighted_sum(f_l, wl), weighted_sum(f_g, wg));
        });
  }
  {
    const SoaConfig cfg{1.3, 2};
    SoaParams p = init_soa(4, cfg, seed + 202);
    randomize_phi(p, rng);
    Tensor f = uniform({2, 3, 3, 4}, rng);
    Tensor w = uniform({2, 3, 3, 4}, rng);
    run("soa_block",
        {f, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wphi, p.bphi},
        [cfg, w](const std::vector<Tensor>& in) {
          SoaParams q{in[1], in[2], in[3], in[4],
                      in[5], in[6], in[7], in[8]};
          return weighted_sum(soa_forward(in[0], q, cfg), w);
        });
  }
  {
    HeadParams p = init_head(4, 6, HeadConfig{6}, seed + 303);
    Tensor f_l = distinct({2, 3, 3, 4}, rng);
    Tensor f_g = distinct({2, 2, 2, 6}, rng);
    Tensor w = uniform({2, 6}, rng);
    run("head_embed", {f_l, f_g, p.w_l, p.b_l, p.w_g, p.b_g},
        [w](const std::vector<Tensor>& in) {
          HeadParams q{in[2], in[3], in[4], in[5]};
          return weighted_sum(embed(in[0], in[1], q), w);
        });
  }
  {
    // backbone -> per-branch SOA -> pooled head -> hybrid loss, end to end.
    const BackboneConfig bcfg{8, 8, 3, 4, 6};
    const SoaConfig scfg{1.0, 2};
    BackboneParams bp = init_backbone(bcfg, seed + 404);
    SoaParams sl = init_soa(4, scfg, seed + 405);
    SoaParams sg = init_soa(6, scfg, seed + 406);
    randomize_phi(sl, rng);
    randomize_phi(sg, rng);
    HeadParams hp = init_head(4, 6, HeadConfig{4}, seed + 407);
    Tensor x = uniform({4, 8, 8, 3}, rng);
    Tensor proxies = off_kink({2, 4}, rng);
    const std::vector<int> labels{0, 1, 0, 1};
    const ProxyAnchorConfig pa;
    const MsConfig ms;
    const HybridConfig hy;
    run("end_to_end",
        {x,      bp.w0,   bp.b0,   bp.w1,  bp.b1,  bp.w2,  bp.b2, bp.w3,
         bp.b3,  sl.wq,   sl.bq,   sl.wk,  sl.bk,  sl.wv,  sl.bv, sl.wphi,
         sl.bphi, sg.wq,  sg.bq,   sg.wk,  sg.bk,  sg.wv,  sg.bv, sg.wphi,
         sg.bphi, hp.w_l, hp.b_l,  hp.w_g, hp.b_g, proxies},
        [bcfg, scfg, labels, pa, ms, hy](const std::vector<Tensor>& in) {
          BackboneParams b{in[1], in[2], in[3], in[4],
                           in[5], in[6], in[7], in[8]};
          SoaParams l{in[9], in[10], in[11], in[12],
                      in[13], in[14], in[15], in[16]};
          SoaParams g{in[17], in[18], in[19], in[20],
                      in[21], in[22], in[23], in[24]};
          HeadParams h{in[25], in[26], in[27], in[28]};
          ProxyBank bank{in[29]};
          auto [f_l, f_g] = backbone_forward(in[0], b, bcfg);
          Tensor emb = embed(soa_forward(f_l, l, scfg),
                             soa_forward(f_g, g, scfg), h);
          return hybrid_loss(emb, labels, bank, pa, ms, hy).total;
        });
  }

  return reports;
}

GradCheckReport run_ms_sign_flip_fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor x = off_kink({4, 5}, rng);
  const std::vector<int> labels{0, 1, 0, 1};
  const MsConfig cfg;
  return check_gradients(
      "ms_loss_sign_flipped", {x}, [labels, cfg](const std::vector<Tensor>& in) {
        // Identity forward whose recorded pullback flips the sign: the
        // checker must flag the mismatch against finite differences.
        Tensor flipped = detail::make_op_output(
            in[0].shape(), std::vector<double>(in[0].data().begin(),
                                               in[0].data().end()),
            "sign_flip", tracked(in[0]));
        if (Tape* tape = Tape::active(); tape != nullptr && tracked(in[0])) {
          Tensor src = in[0];
          Tensor out = flipped;
          tape->record(out, [src, out]() mutable {
            src.ensure_grad();
            auto gs = src.grad_mutable();
            auto go = out.grad();
            for (std::size_t i = 0; i < gs.size(); ++i) gs[i] -= go[i];
          });
        }
        return ms_loss(flipped, labels, cfg);
      });
}

}  // namespace dmlkit
