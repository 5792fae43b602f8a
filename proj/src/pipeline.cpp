#include "dmlkit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <utility>

#include "dmlkit/data.hpp"
#include "dmlkit/errors.hpp"
#include "dmlkit/losses.hpp"
#include "dmlkit/optim.hpp"
#include "dmlkit/serialize.hpp"
#include "json.hpp"

namespace dmlkit {

namespace {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::vector<LabeledImage> load_dataset(const RunConfig& cfg) {
  if (cfg.data_source == "folder") return import_folder(cfg.data_dir);
  return gen_synthetic(cfg.num_classes, cfg.samples_per_class, cfg.image_size,
                       cfg.image_size, cfg.noise_sigma, cfg.seed);
}

std::vector<int> pool_labels(const std::vector<LabeledImage>& pool) {
  std::vector<int> out;
  out.reserve(pool.size());
  for (const auto& im : pool) out.push_back(im.class_id);
  return out;
}

std::vector<int> pool_ids(const std::vector<LabeledImage>& pool) {
  std::vector<int> out;
  out.reserve(pool.size());
  for (const auto& im : pool) out.push_back(im.sample_id);
  return out;
}

// Deterministic eval-time embedding of a whole pool, batched to bound the
// tape-free forward's working set.
Tensor embed_pool(const Model& model, const std::vector<LabeledImage>& pool,
                  const AugmentConfig& aug, std::size_t batch_size) {
  const std::size_t n = pool.size();
  const std::size_t d = model.config().embedding_dim;
  std::vector<double> out(n * d);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(start + batch_size, n);
    std::vector<LabeledImage> chunk;
    chunk.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      chunk.push_back(augment_eval(pool[i], aug));
    }
    Tensor emb = model.forward(stack_images(chunk));
    std::copy(emb.data().begin(), emb.data().end(),
              out.begin() + static_cast<std::ptrdiff_t>(start * d));
  }
  return Tensor({n, d}, std::move(out));
}

// Standard protocol: the pool queries itself with the self match excluded.
RecallReport self_recall(const Model& model,
                         const std::vector<LabeledImage>& pool,
                         const AugmentConfig& aug, std::size_t batch_size,
                         const std::vector<std::size_t>& ks) {
  Tensor emb = embed_pool(model, pool, aug, batch_size);
  const auto labels = pool_labels(pool);
  const auto ids = pool_ids(pool);
  RetrievalIndex index = build_index(emb, labels, ids);
  return recall_at_k(emb, labels, ids, index, ks, /*exclude_self=*/true);
}

// The ks reported by run_train: {1,2,4,8} clipped to the candidate pool.
std::vector<std::size_t> default_ks(std::size_t pool_size) {
  std::vector<std::size_t> ks;
  for (std::size_t k : {1, 2, 4, 8}) {
    if (k <= pool_size) ks.push_back(k);
  }
  if (ks.empty()) ks.push_back(1);
  return ks;
}

std::string dataset_manifest(const SplitResult& split) {
  nlohmann::ordered_json doc;
  auto describe = [](const std::vector<LabeledImage>& pool) {
    nlohmann::ordered_json part;
    std::map<int, std::size_t> per_class;
    std::vector<int> ids;
    for (const auto& im : pool) {
      ++per_class[im.class_id];
      ids.push_back(im.sample_id);
    }
    std::sort(ids.begin(), ids.end());
    nlohmann::ordered_json counts = nlohmann::ordered_json::object();
    for (const auto& [cls, n] : per_class) counts[std::to_string(cls)] = n;
    part["count"] = pool.size();
    part["per_class"] = counts;
    part["sample_ids"] = ids;
    return part;
  };
  doc["train"] = describe(split.train);
  doc["val"] = describe(split.val);
  doc["test"] = describe(split.test);
  return doc.dump(2) + "\n";
}

struct LossSetup {
  ProxyAnchorConfig pa;
  MsConfig ms;
  HybridConfig hybrid;
};

LossSetup loss_setup(const RunConfig& cfg) {
  LossSetup s;
  s.pa.alpha = cfg.alpha;
  s.pa.delta = cfg.delta;
  s.ms.gamma = cfg.gamma;
  s.ms.beta = cfg.beta;
  s.ms.sigma = cfg.sigma;
  s.ms.negative_margin_sign = cfg.negative_margin_sign;
  s.hybrid.lambda = cfg.lambda;
  return s;
}

}  // namespace

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ stream * 0x9E3779B97F4A7C15ULL) + index);
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out =
      "epoch,train_loss,ms_component,pa_component,val_recall_at_1\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch);
    out += ',';
    out += fmt_double(r.train_loss);
    out += ',';
    out += fmt_double(r.ms_component);
    out += ',';
    out += fmt_double(r.pa_component);
    out += ',';
    out += fmt_double(r.val_recall_at_1);
    out += '\n';
  }
  return out;
}

TrainResult run_train(const RunConfig& cfg, const std::string& out_dir,
                      std::ostream* log) {
  validate_config(cfg);
  ensure_dir(out_dir);

  const auto data = load_dataset(cfg);
  SplitSpec spec;
  spec.mode = SplitMode::class_disjoint;
  spec.train_class_fraction = cfg.train_class_fraction;
  spec.validation_fraction = cfg.validation_fraction;
  const auto split = split_dataset(data, spec, cfg.seed);
  if (split.test.empty()) {
    throw ConfigError(
        "train_class_fraction: leaves no held-out test classes");
  }
  if (split.val.size() < 2) {
    throw ConfigError("validation_fraction: validation pool needs >= 2 "
                      "samples for Recall@1");
  }

  // Losses index proxies by row, so map the (sorted) training class ids onto
  // contiguous rows.
  std::map<int, int> class_to_row;
  for (const auto& im : split.train) class_to_row.emplace(im.class_id, 0);
  int next_row = 0;
  for (auto& [cls, row] : class_to_row) row = next_row++;
  const std::size_t n_train_classes = class_to_row.size();
  if (n_train_classes < 2) {
    throw ConfigError("num_classes: need >= 2 training classes after the "
                      "class-disjoint split");
  }
  std::vector<int> train_rows;
  train_rows.reserve(split.train.size());
  for (const auto& im : split.train) {
    train_rows.push_back(class_to_row.at(im.class_id));
  }

  Model model(model_config_from(cfg), sub_seed(cfg.seed, 1, 0));
  ProxyBank bank = init_proxies(n_train_classes, cfg.embedding_dim,
                                sub_seed(cfg.seed, 2, 0));
  const LossSetup losses = loss_setup(cfg);

  // A pure multi-similarity run has no proxy gradients, so the proxy group
  // only exists when the objective touches it.
  const bool use_proxies = cfg.loss != LossMode::ms;
  std::vector<ParamGroup> groups;
  groups.push_back({model.param_list(), cfg.lr_model, cfg.weight_decay});
  if (use_proxies) {
    groups.push_back({{bank.proxies}, cfg.lr_proxy, cfg.weight_decay});
  }
  AdamW opt(std::move(groups),
            AdamWConfig{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps});

  const AugmentConfig aug{cfg.resize_size, cfg.crop_size};
  const std::size_t cpb = cfg.classes_per_batch == 0 ? n_train_classes
                                                     : cfg.classes_per_batch;

  std::vector<MetricsRow> rows;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 batch_rng(sub_seed(cfg.seed, 3, epoch));
    std::mt19937_64 aug_rng(sub_seed(cfg.seed, 4, epoch));
    const auto batches =
        cfg.balanced_batches
            ? make_balanced_batches(train_rows, cfg.batch_size, cpb, batch_rng)
            : make_batches(split.train.size(), cfg.batch_size, batch_rng);

    double sum_loss = 0.0, sum_ms = 0.0, sum_pa = 0.0;
    std::size_t n_seen = 0;
    try {
      for (const auto& batch : batches) {
        // Pair-based losses need at least two samples.
        if (batch.size() < 2) continue;
        std::vector<LabeledImage> images;
        std::vector<int> labels;
        images.reserve(batch.size());
        labels.reserve(batch.size());
        for (std::size_t i : batch) {
          images.push_back(augment_train(split.train[i], aug, aug_rng));
          labels.push_back(train_rows[i]);
        }
        Tensor x = stack_images(images);

        Tape tape;
        Tensor emb = model.forward(x);
        Tensor loss;
        double ms_v = 0.0, pa_v = 0.0;
        switch (cfg.loss) {
          case LossMode::ms:
            loss = ms_loss(emb, labels, losses.ms);
            ms_v = loss.value();
            break;
          case LossMode::proxy:
            loss = proxy_anchor_loss(emb, labels, bank, losses.pa);
            pa_v = loss.value();
            break;
          case LossMode::hybrid: {
            HybridLossResult h = hybrid_loss(emb, labels, bank, losses.pa,
                                             losses.ms, losses.hybrid);
            loss = h.total;
            ms_v = h.ms.value();
            pa_v = h.pa.value();
            break;
          }
        }
        opt.zero_grads();
        tape.backward(loss);
        opt.step();

        const double w = static_cast<double>(batch.size());
        sum_loss += loss.value() * w;
        sum_ms += ms_v * w;
        sum_pa += pa_v * w;
        n_seen += batch.size();
      }
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
    }

    MetricsRow row;
    row.epoch = epoch;
    if (n_seen > 0) {
      const double n = static_cast<double>(n_seen);
      row.train_loss = sum_loss / n;
      row.ms_component = sum_ms / n;
      row.pa_component = sum_pa / n;
    }
    row.val_recall_at_1 =
        self_recall(model, split.val, aug, cfg.batch_size, {1}).recall[0];
    rows.push_back(row);
    if (log) {
      *log << "epoch " << epoch << "/" << cfg.epochs << "  loss "
           << row.train_loss << "  val recall@1 " << row.val_recall_at_1
           << "\n";
    }
  }

  TrainResult result;
  result.rows = rows;
  result.test_recall = self_recall(model, split.test, aug, cfg.batch_size,
                                   default_ks(split.test.size() - 1));

  NamedTensors ckpt = model.named_params();
  if (use_proxies) ckpt.emplace_back("proxies", bank.proxies);
  for (auto& kv : opt.state()) ckpt.push_back(std::move(kv));

  result.checkpoint_path = out_dir + "/model.ckpt";
  result.metrics_path = out_dir + "/metrics.csv";
  save_checkpoint(result.checkpoint_path, ckpt);
  write_file(result.metrics_path, metrics_to_csv(rows));
  write_file(out_dir + "/recall.json", recall_to_json(result.test_recall));
  write_file(out_dir + "/dataset.json", dataset_manifest(split));
  return result;
}

void load_model_params(Model& model, const NamedTensors& checkpoint) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : checkpoint) by_name.emplace(name, t);
  for (auto& [name, param] : model.named_params()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ConfigError("checkpoint is missing tensor '" + name +
                        "' required by the configured architecture");
    }
    if (it->second.shape() != param.shape()) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(it->second.shape()) +
                        ", configured architecture expects " +
                        shape_str(param.shape()));
    }
    auto dst = param.mutable_data();
    std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
  }
}

RecallReport run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                      const EvalOptions& opts, const std::string& out_dir) {
  validate_config(cfg);
  if (opts.ks.empty()) throw ConfigError("--k: at least one k is required");
  for (std::size_t i = 0; i < opts.ks.size(); ++i) {
    if (opts.ks[i] == 0) throw ConfigError("--k: k must be >= 1");
    if (i > 0 && opts.ks[i] <= opts.ks[i - 1]) {
      throw ConfigError("--k: values must be strictly ascending");
    }
  }
  ensure_dir(out_dir);

  const auto data = load_dataset(cfg);
  SplitSpec spec;
  spec.mode = opts.query_gallery ? SplitMode::query_gallery
                                 : SplitMode::class_disjoint;
  spec.train_class_fraction = cfg.train_class_fraction;
  spec.validation_fraction = cfg.validation_fraction;
  const auto split = split_dataset(data, spec, cfg.seed);
  if (split.test.empty()) {
    throw ConfigError("train_class_fraction: leaves no held-out test classes");
  }

  Model model(model_config_from(cfg), sub_seed(cfg.seed, 1, 0));
  load_model_params(model, load_checkpoint(checkpoint_path));

  const AugmentConfig aug{cfg.resize_size, cfg.crop_size};
  RecallReport report;
  if (opts.query_gallery) {
    const std::size_t pool = split.gallery.size();
    if (opts.ks.back() > pool) {
      throw ConfigError("--k: " + std::to_string(opts.ks.back()) +
                        " exceeds the gallery size " + std::to_string(pool));
    }
    Tensor qe = embed_pool(model, split.query, aug, cfg.batch_size);
    Tensor ge = embed_pool(model, split.gallery, aug, cfg.batch_size);
    RetrievalIndex index =
        build_index(ge, pool_labels(split.gallery), pool_ids(split.gallery));
    report = recall_at_k(qe, pool_labels(split.query), pool_ids(split.query),
                         index, opts.ks, /*exclude_self=*/false);
  } else {
    const std::size_t pool = split.test.size() - 1;
    if (opts.ks.back() > pool) {
      throw ConfigError("--k: " + std::to_string(opts.ks.back()) +
                        " exceeds the self-excluded test pool " +
                        std::to_string(pool));
    }
    report = self_recall(model, split.test, aug, cfg.batch_size, opts.ks);
  }
  write_file(out_dir + "/recall.json", recall_to_json(report));
  return report;
}

std::vector<std::string> ablation_variants(const std::string& axis) {
  if (axis == "loss") return {"ms", "proxy", "hybrid"};
  if (axis == "soa") return {"on", "off", "single_head"};
  if (axis == "descriptors") return {"local", "global", "both"};
  if (axis == "dimension") return {"64", "128", "512", "1024", "2048"};
  if (axis == "batch_size") return {"30", "60", "90", "120"};
  throw ConfigError(
      "unknown ablation axis '" + axis +
      "' (valid: descriptors, soa, loss, dimension, batch_size)");
}

namespace {

RunConfig apply_variant(const RunConfig& base, const std::string& axis,
                        const std::string& variant) {
  RunConfig c = base;
  if (axis == "loss") {
    c.loss = variant == "ms"      ? LossMode::ms
             : variant == "proxy" ? LossMode::proxy
                                  : LossMode::hybrid;
  } else if (axis == "soa") {
    c.soa = variant == "on"    ? SoaMode::on
            : variant == "off" ? SoaMode::off
                               : SoaMode::single_head;
  } else if (axis == "descriptors") {
    c.descriptors = variant == "local"    ? DescriptorMode::local
                    : variant == "global" ? DescriptorMode::global
                                          : DescriptorMode::both;
  } else if (axis == "dimension") {
    c.embedding_dim = static_cast<std::size_t>(std::stoull(variant));
  } else {
    c.batch_size = static_cast<std::size_t>(std::stoull(variant));
  }
  return c;
}

}  // namespace

std::string recall_svg(const std::vector<std::string>& names,
                       const std::vector<std::vector<MetricsRow>>& series) {
  const double width = 640, height = 420;
  const double ml = 60, mt = 20, mr = 150, mb = 45;
  const double pw = width - ml - mr, ph = height - mt - mb;
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c",
                                  "#d62728", "#9467bd"};
  const std::size_t n_colors = sizeof(palette) / sizeof(palette[0]);

  std::size_t max_epoch = 1;
  for (const auto& rows : series) {
    for (const auto& r : rows) max_epoch = std::max(max_epoch, r.epoch);
  }
  auto x_of = [&](double epoch) {
    if (max_epoch <= 1) return ml + pw / 2.0;
    return ml + (epoch - 1.0) / (static_cast<double>(max_epoch) - 1.0) * pw;
  };
  auto y_of = [&](double recall) { return mt + (1.0 - recall) * ph; };
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  svg << "  <rect width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";

  // Horizontal gridlines and y tick labels every 0.25.
  for (int i = 0; i <= 4; ++i) {
    const double r = 0.25 * i;
    const double y = y_of(r);
    svg << "  <line x1=\"" << ml << "\" y1=\"" << num(y) << "\" x2=\""
        << ml + pw << "\" y2=\"" << num(y)
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg << "  <text x=\"" << ml - 8 << "\" y=\"" << num(y + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\" "
           "text-anchor=\"end\">"
        << num(r) << "</text>\n";
  }
  // Axes.
  svg << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << mt + ph << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg << "  <line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\""
      << ml + pw << "\" y2=\"" << mt + ph
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  // X ticks: at most ~10 labels.
  const std::size_t step = std::max<std::size_t>(1, (max_epoch + 9) / 10);
  for (std::size_t e = 1; e <= max_epoch; e += step) {
    const double x = x_of(static_cast<double>(e));
    svg << "  <line x1=\"" << num(x) << "\" y1=\"" << mt + ph << "\" x2=\""
        << num(x) << "\" y2=\"" << mt + ph + 5
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    svg << "  <text x=\"" << num(x) << "\" y=\"" << mt + ph + 18
        << "\" font-family=\"sans-serif\" font-size=\"12\" "
           "text-anchor=\"middle\">"
        << e << "</text>\n";
  }
  svg << "  <text x=\"" << ml + pw / 2 << "\" y=\"" << height - 8
      << "\" font-family=\"sans-serif\" font-size=\"13\" "
         "text-anchor=\"middle\">epoch</text>\n";
  svg << "  <text x=\"16\" y=\"" << mt + ph / 2
      << "\" font-family=\"sans-serif\" font-size=\"13\" "
         "text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << mt + ph / 2 << ")\">Recall@1</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = palette[s % n_colors];
    if (!series[s].empty()) {
      svg << "  <polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < series[s].size(); ++i) {
        const auto& r = series[s][i];
        if (i > 0) svg << ' ';
        svg << num(x_of(static_cast<double>(r.epoch))) << ','
            << num(y_of(r.val_recall_at_1));
      }
      svg << "\"/>\n";
    }
    // Legend entry.
    const double ly = mt + 16 + 20 * static_cast<double>(s);
    svg << "  <line x1=\"" << ml + pw + 12 << "\" y1=\"" << num(ly)
        << "\" x2=\"" << ml + pw + 36 << "\" y2=\"" << num(ly)
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "  <text x=\"" << ml + pw + 42 << "\" y=\"" << num(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << (s < names.size() ? names[s] : "") << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void run_ablate(const RunConfig& cfg, const std::string& axis,
                const std::string& out_dir, std::ostream* log) {
  const auto variants = ablation_variants(axis);
  ensure_dir(out_dir);

  std::vector<std::vector<MetricsRow>> series;
  for (const auto& variant : variants) {
    if (log) *log << "[" << axis << " = " << variant << "]\n";
    const RunConfig vc = apply_variant(cfg, axis, variant);
    TrainResult res =
        run_train(vc, out_dir + "/" + axis + "_" + variant, log);
    series.push_back(std::move(res.rows));
  }

  std::string csv = "variant,epoch,recall_at_1\n";
  for (std::size_t s = 0; s < variants.size(); ++s) {
    for (const auto& row : series[s]) {
      csv += variants[s];
      csv += ',';
      csv += std::to_string(row.epoch);
      csv += ',';
      csv += fmt_double(row.val_recall_at_1);
      csv += '\n';
    }
  }
  write_file(out_dir + "/ablation_" + axis + ".csv", csv);
  write_file(out_dir + "/ablation_" + axis + ".svg",
             recall_svg(variants, series));
}

}  // namespace dmlkit
