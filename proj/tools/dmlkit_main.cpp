#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dmlkit/config.hpp"
#include "dmlkit/data.hpp"
#include "dmlkit/errors.hpp"
#include "dmlkit/gradcheck.hpp"
#include "dmlkit/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

std::vector<std::size_t> parse_k_list(const std::string& arg) {
  std::vector<std::size_t> ks;
  std::size_t pos = 0;
  while (pos <= arg.size()) {
    const std::size_t comma = std::min(arg.find(',', pos), arg.size());
    const std::string item = arg.substr(pos, comma - pos);
    if (item.empty()) throw dmlkit::ConfigError("--k: empty entry in list");
    char* end = nullptr;
    const unsigned long long v = std::strtoull(item.c_str(), &end, 10);
    if (end != item.c_str() + item.size() || v == 0) {
      throw dmlkit::ConfigError("--k: expected positive integers, got '" +
                                item + "'");
    }
    ks.push_back(static_cast<std::size_t>(v));
    if (comma == arg.size()) break;
    pos = comma + 1;
  }
  return ks;
}

void dump_attention(const dmlkit::RunConfig& cfg, const dmlkit::Model& model,
                    const std::string& out_dir) {
  // One CSV per attention block for a single synthetic probe batch: each
  // sample contributes hw rows of hw columns.
  dmlkit::RunConfig probe_cfg = cfg;
  const auto data =
      dmlkit::gen_synthetic(probe_cfg.num_classes, 1, probe_cfg.image_size,
                            probe_cfg.image_size, probe_cfg.noise_sigma,
                            probe_cfg.seed);
  std::vector<dmlkit::LabeledImage> eval_images;
  const dmlkit::AugmentConfig aug{cfg.resize_size, cfg.crop_size};
  for (const auto& im : data) {
    eval_images.push_back(dmlkit::augment_eval(im, aug));
  }
  const dmlkit::Tensor x = dmlkit::stack_images(eval_images);
  for (const auto& [name, map] : model.attention_maps(x)) {
    std::string csv;
    const std::size_t b = map.dim(0), hw = map.dim(1);
    char buf[64];
    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t i = 0; i < hw; ++i) {
        for (std::size_t j = 0; j < hw; ++j) {
          std::snprintf(buf, sizeof(buf), "%.17g",
                        map.data()[(s * hw + i) * hw + j]);
          csv += buf;
          csv += j + 1 < hw ? ',' : '\n';
        }
      }
    }
    const std::string path = out_dir + "/attention_" + name + ".csv";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw dmlkit::IoError("cannot open '" + path + "' for writing");
    out << csv;
  }
}

int run(int argc, char** argv) {
  CLI::App app{
      "dmlkit: local/global descriptor metric learning with second-order "
      "attention"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string checkpoint_path;
  std::string k_arg = "1,2,4,8";
  std::string protocol = "standard";
  std::string axis;
  std::uint64_t seed = 0;
  bool want_attention = false;

  CLI::App* train = app.add_subcommand("train", "Train a model");
  train->add_option("-c,--config", config_path, "Run config file")
      ->required();
  train->add_option("--out", out_dir, "Output directory");
  train->add_flag("--dump-attention", want_attention,
                  "Also write per-block attention maps for a probe batch");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("-c,--config", config_path, "Run config file")->required();
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint to load")
      ->required();
  eval->add_option("--k", k_arg, "Comma-separated recall cutoffs");
  eval->add_option("--protocol", protocol,
                   "standard (pool queries itself) or query_gallery");
  eval->add_option("--out", out_dir, "Output directory");

  CLI::App* ablate = app.add_subcommand("ablate", "Run an ablation axis");
  ablate->add_option("-c,--config", config_path, "Run config file")
      ->required();
  ablate
      ->add_option("--axis", axis,
                   "descriptors, soa, loss, dimension, or batch_size")
      ->required();
  ablate->add_option("--out", out_dir, "Output directory");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--seed", seed, "Random seed for the suite");

  CLI11_PARSE(app, argc, argv);

  if (train->parsed()) {
    const dmlkit::RunConfig cfg = dmlkit::load_config(config_path);
    dmlkit::TrainResult res = dmlkit::run_train(cfg, out_dir, &std::cout);
    if (want_attention) {
      dmlkit::Model model(dmlkit::model_config_from(cfg),
                          dmlkit::sub_seed(cfg.seed, 1, 0));
      dmlkit::load_model_params(model,
                                dmlkit::load_checkpoint(res.checkpoint_path));
      dump_attention(cfg, model, out_dir);
    }
    std::cout << "wrote " << res.metrics_path << ", " << res.checkpoint_path
              << "\n";
    for (std::size_t i = 0; i < res.test_recall.ks.size(); ++i) {
      std::cout << "test recall@" << res.test_recall.ks[i] << " = "
                << res.test_recall.recall[i] << "\n";
    }
    return kExitOk;
  }

  if (eval->parsed()) {
    if (protocol != "standard" && protocol != "query_gallery") {
      throw dmlkit::ConfigError(
          "--protocol: expected standard or query_gallery, got '" + protocol +
          "'");
    }
    const dmlkit::RunConfig cfg = dmlkit::load_config(config_path);
    dmlkit::EvalOptions opts;
    opts.ks = parse_k_list(k_arg);
    opts.query_gallery = protocol == "query_gallery";
    const dmlkit::RecallReport rep =
        dmlkit::run_eval(cfg, checkpoint_path, opts, out_dir);
    for (std::size_t i = 0; i < rep.ks.size(); ++i) {
      std::cout << "recall@" << rep.ks[i] << " = " << rep.recall[i] << "\n";
    }
    return kExitOk;
  }

  if (ablate->parsed()) {
    const dmlkit::RunConfig cfg = dmlkit::load_config(config_path);
    dmlkit::run_ablate(cfg, axis, out_dir, &std::cout);
    std::cout << "wrote " << out_dir << "/ablation_" << axis << ".csv and .svg"
              << "\n";
    return kExitOk;
  }

  // gradcheck
  const auto reports = dmlkit::run_gradcheck_suite(seed);
  bool all_pass = true;
  std::printf("%-28s %12s %8s  %s\n", "op", "max_rel_err", "checked",
              "status");
  for (const auto& r : reports) {
    std::printf("%-28s %12.3e %8zu  %s\n", r.name.c_str(), r.max_rel_err,
                r.checked, r.pass ? "pass" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? kExitOk : kExitUnexpected;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dmlkit::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dmlkit::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const dmlkit::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUnexpected;
  }
}
