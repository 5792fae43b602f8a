// Acceptance gate for the library: seven independent criteria, one PASS/FAIL
// line each, exit status 0 only if every criterion holds. Tolerances and
// budgets are pinned here and nowhere else.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dmlkit/eval.hpp"
#include "dmlkit/gradcheck.hpp"
#include "dmlkit/losses.hpp"
#include "dmlkit/pipeline.hpp"
#include "dmlkit/soa.hpp"
#include "support/oracles.hpp"

using namespace dmlkit;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 20260815;

constexpr double kFdTol = 1e-4;          // per-element relative error
constexpr double kGradBudgetSec = 120.0;
constexpr double kOracleTol = 1e-10;     // loss vs naive scalar loops
constexpr double kHandTol = 1e-12;       // hand-computable loss values
constexpr double kRowSumTol = 1e-12;     // attention row stochasticity
constexpr double kUniformTol = 1e-15;    // zeta = 0 attention entries
constexpr double kRecallFloor = 0.95;    // held-out Recall@1, default config
constexpr double kTrainBudgetSec = 600.0;
constexpr double kHybridSlack = 0.03;    // hybrid vs single-loss variants

double now_sec() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& stem) {
  fs::path p = fs::temp_directory_path() / stem;
  fs::remove_all(p);
  return p;
}

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = hay.find(needle); pos != std::string::npos;
       pos = hay.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// variant -> recall_at_1 per epoch, in file order.
std::map<std::string, std::vector<double>> parse_ablation_csv(
    const fs::path& path, std::string& err) {
  std::ifstream is(path);
  if (!is) {
    err = "cannot open " + path.string();
    return {};
  }
  std::string line;
  if (!std::getline(is, line) || line != "variant,epoch,recall_at_1") {
    err = "bad header in " + path.string() + ": '" + line + "'";
    return {};
  }
  std::map<std::string, std::vector<double>> series;
  while (std::getline(is, line)) {
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      err = "malformed row '" + line + "'";
      return {};
    }
    const std::string variant = line.substr(0, c1);
    const std::size_t epoch = std::stoul(line.substr(c1 + 1, c2 - c1 - 1));
    const double recall = std::stod(line.substr(c2 + 1));
    auto& s = series[variant];
    if (epoch != s.size() + 1) {
      err = "non-contiguous epochs for variant " + variant;
      return {};
    }
    if (recall < 0.0 || recall > 1.0) {
      err = "recall out of range in " + path.string();
      return {};
    }
    s.push_back(recall);
  }
  return series;
}

struct Gate {
  int passed = 0;
  int total = 0;

  void report(int idx, bool ok, const std::string& detail) {
    ++total;
    passed += ok ? 1 : 0;
    std::printf("criterion %d: %s  %s\n", idx, ok ? "PASS" : "FAIL",
                detail.c_str());
    std::fflush(stdout);
  }
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// --- criterion 1: finite-difference gradient suite ------------------------

void criterion_gradients(Gate& gate) {
  const double t0 = now_sec();
  std::vector<GradCheckReport> reports = run_gradcheck_suite(kSeed);
  const double elapsed = now_sec() - t0;

  std::size_t failed = 0;
  double worst = 0.0;
  std::string worst_name = "-";
  for (const auto& r : reports) {
    if (!r.pass) ++failed;
    if (r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_name = r.name;
    }
  }
  const GradCheckReport flipped = run_ms_sign_flip_fixture(kSeed);

  const bool ok = failed == 0 && elapsed < kGradBudgetSec && !flipped.pass;
  std::ostringstream d;
  d << "gradient suite: " << (reports.size() - failed) << "/" << reports.size()
    << " cases pass at tol " << fmt(kFdTol) << " (worst rel err " << fmt(worst)
    << " in " << worst_name << "), " << fmt(elapsed) << " s of "
    << fmt(kGradBudgetSec) << " s budget; sign-flip fixture "
    << (flipped.pass ? "MISSED" : "detected");
  gate.report(1, ok, d.str());
}

// --- criterion 2: loss oracles ---------------------------------------------

void criterion_loss_oracles(Gate& gate) {
  double max_pa = 0.0, max_ms = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(kSeed + 1000 + static_cast<std::uint64_t>(trial));
    std::uniform_int_distribution<std::size_t> m_dist(2, 8);
    std::uniform_int_distribution<int> c_dist(1, 4);
    std::uniform_int_distribution<std::size_t> d_dist(2, 16);
    const std::size_t m = m_dist(rng);
    const int classes = c_dist(rng);
    const std::size_t dim = d_dist(rng);

    Tensor x = oracles::rand_embeddings(m, dim, rng);
    std::vector<int> labels = oracles::rand_labels(m, classes, rng);
    Tensor proxies =
        oracles::rand_embeddings(static_cast<std::size_t>(classes), dim, rng);

    const double lib_pa =
        proxy_anchor_loss(x, labels, ProxyBank{proxies}, {32.0, 0.1}).value();
    const double ref_pa =
        oracles::naive_proxy_anchor(x, labels, proxies, 32.0, 0.1);
    max_pa = std::max(max_pa, std::abs(lib_pa - ref_pa));

    for (bool plus : {true, false}) {
      MsConfig ms_cfg{2.0, 50.0, 1.0,
                      plus ? NegativeMarginSign::plus
                           : NegativeMarginSign::minus};
      const double lib_ms = ms_loss(x, labels, ms_cfg).value();
      const double ref_ms = oracles::naive_ms(x, labels, 2.0, 50.0, 1.0, plus);
      max_ms = std::max(max_ms, std::abs(lib_ms - ref_ms));
    }
  }

  // Hand case 1: one sample, one proxy at cosine similarity delta -> log 2.
  const double delta = 0.1;
  Tensor hx({1, 2}, {1.0, 0.0});
  Tensor hp({1, 2}, {delta, std::sqrt(1.0 - delta * delta)});
  const double pa_hand =
      proxy_anchor_loss(hx, {0}, ProxyBank{hp}, {32.0, delta}).value();
  const double pa_err = std::abs(pa_hand - std::log(2.0));

  // Hand case 2: identical unit vectors, S = sigma -> (1/gamma) log 2.
  Tensor mx({2, 2}, {1.0, 0.0, 1.0, 0.0});
  const double ms_hand = ms_loss(mx, {0, 0}, {2.0, 50.0, 1.0}).value();
  const double ms_err = std::abs(ms_hand - 0.5 * std::log(2.0));

  const bool ok = max_pa <= kOracleTol && max_ms <= kOracleTol &&
                  pa_err <= kHandTol && ms_err <= kHandTol;
  std::ostringstream d;
  d << "loss oracles: 100 batches, max |pa - naive| " << fmt(max_pa)
    << ", max |ms - naive| " << fmt(max_ms) << " (tol " << fmt(kOracleTol)
    << "); hand cases off by " << fmt(pa_err) << " / " << fmt(ms_err)
    << " (tol " << fmt(kHandTol) << ")";
  gate.report(2, ok, d.str());
}

// --- criterion 3: attention properties -------------------------------------

void criterion_soa_properties(Gate& gate) {
  double worst_row = 0.0, worst_uniform = 0.0;
  bool identity_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    std::mt19937_64 rng(kSeed + 2000 + static_cast<std::uint64_t>(trial));
    std::uniform_int_distribution<std::size_t> b_dist(1, 3);
    std::uniform_int_distribution<std::size_t> hw_dist(1, 4);
    std::uniform_int_distribution<std::size_t> c_dist(1, 6);
    std::uniform_real_distribution<double> zeta_dist(0.25, 2.0);
    std::uniform_real_distribution<double> val(-1.5, 1.5);

    const std::size_t b = b_dist(rng), h = hw_dist(rng), w = hw_dist(rng),
                      c = c_dist(rng);
    std::vector<double> data(b * h * w * c);
    for (double& v : data) v = val(rng);
    Tensor f({b, h, w, c}, std::move(data));

    SoaConfig cfg{zeta_dist(rng), 0};
    SoaParams params = init_soa(c, cfg, kSeed + 3000 + trial);

    // Rows of every per-sample attention matrix sum to 1.
    Tensor att = attention_map(f, params, cfg);
    const std::size_t hw = h * w;
    auto a = att.data();
    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t i = 0; i < hw; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < hw; ++j) sum += a[(s * hw + i) * hw + j];
        worst_row = std::max(worst_row, std::abs(sum - 1.0));
      }
    }

    // Freshly initialized phi is all-zero, so the residual block is exactly
    // the identity, bit for bit.
    Tensor out = soa_forward(f, params, cfg);
    identity_ok = identity_ok &&
                  out.size() == f.size() &&
                  std::memcmp(out.data().data(), f.data().data(),
                              f.size() * sizeof(double)) == 0;

    // zeta = 0 wipes the logits: every attention entry is 1/hw.
    SoaConfig flat{0.0, 0};
    Tensor uni = attention_map(f, params, flat);
    for (double v : uni.data()) {
      worst_uniform = std::max(
          worst_uniform, std::abs(v - 1.0 / static_cast<double>(hw)));
    }
  }

  const bool ok =
      worst_row <= kRowSumTol && identity_ok && worst_uniform <= kUniformTol;
  std::ostringstream d;
  d << "attention properties: 50 shapes, worst row-sum error " << fmt(worst_row)
    << " (tol " << fmt(kRowSumTol) << "), zero-phi identity "
    << (identity_ok ? "bitwise exact" : "BROKEN")
    << ", zeta=0 uniformity error " << fmt(worst_uniform) << " (tol "
    << fmt(kUniformTol) << ")";
  gate.report(3, ok, d.str());
}

// --- criterion 4: retrieval oracle -----------------------------------------

void criterion_recall_oracle(Gate& gate) {
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(kSeed + 4000 + static_cast<std::uint64_t>(trial));
    std::uniform_int_distribution<std::size_t> n_dist(5, 200);
    std::uniform_int_distribution<std::size_t> d_dist(2, 32);
    std::uniform_int_distribution<int> c_dist(2, 6);
    const std::size_t n = n_dist(rng);
    const std::size_t dim = d_dist(rng);
    const int classes = c_dist(rng);

    Tensor emb = oracles::rand_embeddings(n, dim, rng);
    std::vector<int> labels = oracles::rand_labels(n, classes, rng);
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);

    std::vector<std::size_t> ks;
    for (std::size_t k : {std::size_t{1}, std::size_t{2}, std::size_t{4},
                          std::size_t{8}, std::size_t{16}, std::size_t{32}}) {
      if (k <= n - 1) ks.push_back(k);
    }

    RetrievalIndex index = build_index(emb, labels, ids);
    RecallReport rep = recall_at_k(emb, labels, ids, index, ks, true);
    std::vector<double> expected = oracles::naive_recall_at_k(
        index.embeddings, labels, ids, index.embeddings, labels, ids, ks,
        true);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      if (rep.recall[j] != expected[j]) ++mismatches;
    }
  }

  // Invariance under one shared orthogonal transform of all embeddings.
  std::size_t rotation_breaks = 0;
  for (int trial = 0; trial < 10; ++trial) {
    std::mt19937_64 rng(kSeed + 5000 + static_cast<std::uint64_t>(trial));
    const std::size_t n = 60, dim = 12;
    Tensor emb = oracles::rand_embeddings(n, dim, rng);
    std::vector<int> labels = oracles::rand_labels(n, 4, rng);
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
    const std::vector<std::size_t> ks = {1, 2, 4, 8};

    RetrievalIndex index = build_index(emb, labels, ids);
    RecallReport before = recall_at_k(emb, labels, ids, index, ks, true);
    Tensor rotated = oracles::rotate(emb, oracles::random_rotation(dim, rng));
    RetrievalIndex index_rot = build_index(rotated, labels, ids);
    RecallReport after = recall_at_k(rotated, labels, ids, index_rot, ks, true);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      if (before.recall[j] != after.recall[j]) ++rotation_breaks;
    }
  }

  const bool ok = mismatches == 0 && rotation_breaks == 0;
  std::ostringstream d;
  d << "retrieval oracle: 100 instances, " << mismatches
    << " oracle mismatches; 10 rotations, " << rotation_breaks
    << " invariance breaks (both must be 0)";
  gate.report(4, ok, d.str());
}

// --- criterion 5: end-to-end convergence ------------------------------------

void criterion_convergence(Gate& gate) {
  const fs::path out = fresh_dir("dmlkit_acceptance_train");
  setenv("DMLKIT_THREADS", "1", 1);
  const double t0 = now_sec();
  TrainResult result = run_train(RunConfig{}, out.string());
  const double elapsed = now_sec() - t0;
  unsetenv("DMLKIT_THREADS");

  const double recall1 = result.test_recall.recall.at(0);
  const bool loss_fell = !result.rows.empty() &&
                         result.rows.back().train_loss <
                             result.rows.front().train_loss;
  const bool ok =
      recall1 >= kRecallFloor && elapsed <= kTrainBudgetSec && loss_fell;
  std::ostringstream d;
  d << "convergence: default config, held-out Recall@1 " << fmt(recall1)
    << " >= " << fmt(kRecallFloor)
    << " (4-class held-out pool, chance 0.25); " << fmt(elapsed) << " s of "
    << fmt(kTrainBudgetSec) << " s budget, single-threaded; final loss "
    << fmt(result.rows.empty() ? 0.0 : result.rows.back().train_loss)
    << (loss_fell ? " < " : " !< ")
    << fmt(result.rows.empty() ? 0.0 : result.rows.front().train_loss)
    << " (epoch 1)";
  gate.report(5, ok, d.str());
  fs::remove_all(out);
}

// --- criterion 6: ablation harness ------------------------------------------

void criterion_ablation(Gate& gate) {
  const fs::path out = fresh_dir("dmlkit_acceptance_ablate");
  RunConfig cfg;
  run_ablate(cfg, "loss", out.string());
  run_ablate(cfg, "soa", out.string());

  std::string err;
  auto loss_series = parse_ablation_csv(out / "ablation_loss.csv", err);
  bool ok = err.empty();
  std::string detail;

  if (ok) {
    auto soa_series = parse_ablation_csv(out / "ablation_soa.csv", err);
    ok = err.empty();
    if (ok) {
      const std::vector<std::string> loss_names = {"ms", "proxy", "hybrid"};
      const std::vector<std::string> soa_names = {"on", "off", "single_head"};
      for (const auto& name : loss_names) {
        ok = ok && loss_series.count(name) &&
             loss_series[name].size() == cfg.epochs;
      }
      for (const auto& name : soa_names) {
        ok = ok && soa_series.count(name) &&
             soa_series[name].size() == cfg.epochs;
      }
      for (const char* svg_name : {"ablation_loss.svg", "ablation_soa.svg"}) {
        const std::string svg = slurp(out / svg_name);
        ok = ok && svg.find("<svg") != std::string::npos &&
             svg.find("</svg>") != std::string::npos &&
             count_occurrences(svg, "<polyline") == 3;
      }
      if (ok) {
        const double hybrid = loss_series["hybrid"].back();
        const double ms_final = loss_series["ms"].back();
        const double proxy_final = loss_series["proxy"].back();
        const bool no_regression = hybrid >= ms_final - kHybridSlack &&
                                   hybrid >= proxy_final - kHybridSlack;
        ok = no_regression;
        std::ostringstream d;
        d << "ablation harness: loss+soa sweeps complete, CSV/SVG well-formed; "
             "final val Recall@1 hybrid "
          << fmt(hybrid) << " vs ms " << fmt(ms_final) << ", proxy "
          << fmt(proxy_final) << " (slack " << fmt(kHybridSlack) << ")";
        detail = d.str();
      } else {
        detail = "ablation harness: outputs incomplete or malformed";
      }
    }
  }
  if (!err.empty()) detail = "ablation harness: " + err;
  gate.report(6, ok, detail);
  fs::remove_all(out);
}

// --- criterion 7: determinism -----------------------------------------------

void criterion_determinism(Gate& gate) {
  RunConfig cfg;
  cfg.num_classes = 6;
  cfg.samples_per_class = 40;
  cfg.epochs = 3;
  cfg.batch_size = 30;
  const fs::path out_a = fresh_dir("dmlkit_acceptance_det_a");
  const fs::path out_b = fresh_dir("dmlkit_acceptance_det_b");
  run_train(cfg, out_a.string());
  run_train(cfg, out_b.string());

  const bool metrics_same =
      slurp(out_a / "metrics.csv") == slurp(out_b / "metrics.csv");
  const bool ckpt_same =
      slurp(out_a / "model.ckpt") == slurp(out_b / "model.ckpt");
  const bool ok = metrics_same && ckpt_same;
  std::ostringstream d;
  d << "determinism: repeated run, metrics.csv "
    << (metrics_same ? "bit-identical" : "DIFFERS") << ", model.ckpt "
    << (ckpt_same ? "bit-identical" : "DIFFERS");
  gate.report(7, ok, d.str());
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

}  // namespace

int main() {
  Gate gate;
  using Criterion = void (*)(Gate&);
  const Criterion criteria[] = {
      criterion_gradients,  criterion_loss_oracles, criterion_soa_properties,
      criterion_recall_oracle, criterion_convergence, criterion_ablation,
      criterion_determinism,
  };
  int idx = 0;
  for (Criterion c : criteria) {
    ++idx;
    try {
      c(gate);
    } catch (const std::exception& e) {
      gate.report(idx, false, std::string("unexpected exception: ") + e.what());
    }
  }
  std::printf("RESULT: %d/%d criteria pass\n", gate.passed, gate.total);
  return gate.passed == gate.total ? 0 : 1;
}
