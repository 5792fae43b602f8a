#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dmlkit/config.hpp"
#include "dmlkit/eval.hpp"
#include "dmlkit/model.hpp"

namespace dmlkit {

// One metrics.csv row. Components that are not part of the active objective
// are logged as 0; for the hybrid objective both components are logged
// unweighted (train_loss = ms + lambda * pa).
struct MetricsRow {
  std::size_t epoch = 0;  // 1-based, contiguous
  double train_loss = 0.0;
  double ms_component = 0.0;
  double pa_component = 0.0;
  double val_recall_at_1 = 0.0;
};

std::string metrics_to_csv(const std::vector<MetricsRow>& rows);

struct TrainResult {
  std::vector<MetricsRow> rows;
  RecallReport test_recall;          // final model, standard protocol
  std::string checkpoint_path;       // <out>/model.ckpt
  std::string metrics_path;          // <out>/metrics.csv
};

// Deterministic sub-stream derivation: one master seed fans out to init,
// batch-order, and augmentation streams without overlap.
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t index);

// Full training run: synthesize/load data, class-disjoint split, train with
// AdamW, log per-epoch sample-weighted losses and validation Recall@1, then
// write metrics.csv, recall.json, dataset.json, and model.ckpt under
// out_dir. epochs = 0 writes the initial parameters and a header-only CSV.
// `log` (optional) receives one progress line per epoch.
TrainResult run_train(const RunConfig& cfg, const std::string& out_dir,
                      std::ostream* log = nullptr);

struct EvalOptions {
  std::vector<std::size_t> ks{1, 2, 4, 8};
  bool query_gallery = false;  // default: test pool queries itself, self
                               // match excluded
};

// Loads a checkpoint into a model built from cfg (names and shapes must
// match), embeds the evaluation pool, and writes recall.json under out_dir.
RecallReport run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                      const EvalOptions& opts, const std::string& out_dir);

// Trains every variant along the axis (all sharing cfg's seed and epoch
// count), then writes ablation_<axis>.csv (variant,epoch,recall_at_1 long
// format) and ablation_<axis>.svg (one Recall@1-vs-epoch polyline per
// variant). Valid axes: descriptors, soa, loss, dimension, batch_size.
void run_ablate(const RunConfig& cfg, const std::string& axis,
                const std::string& out_dir, std::ostream* log = nullptr);

// Variant labels run_ablate sweeps for one axis; unknown axis is a
// ConfigError.
std::vector<std::string> ablation_variants(const std::string& axis);

// Line chart shared by the ablation harness: epoch on x, Recall@1 on y
// (fixed [0, 1] scale), one polyline plus legend entry per series.
std::string recall_svg(const std::vector<std::string>& names,
                       const std::vector<std::vector<MetricsRow>>& series);

// Applies checkpoint values onto the model's parameters by name; missing
// names or shape mismatches raise ConfigError (checkpoint incompatible with
// the configured architecture). Extra checkpoint entries are ignored.
void load_model_params(Model& model, const NamedTensors& checkpoint);

}  // namespace dmlkit
