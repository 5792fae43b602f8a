#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dmlkit/tensor.hpp"

namespace dmlkit {

struct LabeledImage {
  Tensor pixels;  // (h, w, 3), values in [0, 1]
  int class_id = 0;
  int sample_id = 0;  // unique per dataset, stable across splits
};

// Each class is a procedural template (base/accent color pair, smooth color
// gradient, and a geometric mask keyed to the class); samples add Gaussian
// pixel noise clamped to [0, 1]. Deterministic in seed.
std::vector<LabeledImage> gen_synthetic(std::size_t num_classes,
                                        std::size_t per_class, std::size_t h,
                                        std::size_t w, double noise_sigma,
                                        std::uint64_t seed);

// Directory-per-class ingestion: every subdirectory of root is a class whose
// binary PPM (P6) files become samples, in sorted name order.
std::vector<LabeledImage> import_folder(const std::string& root);

enum class SplitMode { class_disjoint, query_gallery };

struct SplitSpec {
  SplitMode mode = SplitMode::class_disjoint;
  double train_class_fraction = 0.5;  // first ceil(fraction*classes) ids train
  double validation_fraction = 0.2;   // stratified per class, seeded
};

struct SplitResult {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> val;
  std::vector<LabeledImage> test;
  // Filled only in query_gallery mode (per-class halves of the test pool).
  std::vector<LabeledImage> query;
  std::vector<LabeledImage> gallery;
};

SplitResult split_dataset(const std::vector<LabeledImage>& data,
                          const SplitSpec& spec, std::uint64_t seed);

struct AugmentConfig {
  std::size_t resize = 40;
  std::size_t crop = 32;
};

// Align-corners bilinear interpolation; constant images stay constant.
Tensor bilinear_resize(const Tensor& img, std::size_t out_h, std::size_t out_w);

// resize -> random crop -> horizontal flip with p=0.5. Draw order: crop row
// offset, crop column offset, flip coin.
LabeledImage augment_train(const LabeledImage& img, const AugmentConfig& cfg,
                           std::mt19937_64& rng);

// resize -> center crop; deterministic.
LabeledImage augment_eval(const LabeledImage& img, const AugmentConfig& cfg);

// One epoch of index batches: seeded uniform shuffle, chunks of batch_size,
// final short batch kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n,
                                                   std::size_t batch_size,
                                                   std::mt19937_64& rng);

// Class-balanced batches: repeatedly picks the `classes_per_batch` classes
// with the most remaining samples (ties to the lower class id) and takes
// batch_size / classes_per_batch from each, with any remainder absorbed by
// the classes picked first. Leftovers form short batches so the epoch still
// covers every sample exactly once.
std::vector<std::vector<std::size_t>> make_balanced_batches(
    const std::vector<int>& labels, std::size_t batch_size,
    std::size_t classes_per_batch, std::mt19937_64& rng);

// Stacks images (all the same size) into a (batch, h, w, 3) tensor.
Tensor stack_images(const std::vector<LabeledImage>& images);

}  // namespace dmlkit
