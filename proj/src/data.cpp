#include "dmlkit/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace dmlkit {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

struct ClassTemplate {
  double base[3];
  double accent[3];
  double grad_row[3];  // per-channel slope along rows
  double grad_col[3];
  int pattern;         // 0 disc, 1 box, 2 row stripes, 3 checker, 4 diagonal
  double cx, cy, radius;
  int period;
};

ClassTemplate make_template(std::size_t class_id, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (class_id + 1)));
  std::uniform_real_distribution<double> color(0.1, 0.9);
  std::uniform_real_distribution<double> slope(-0.3, 0.3);
  std::uniform_real_distribution<double> center(0.3, 0.7);
  std::uniform_real_distribution<double> rad(0.15, 0.35);
  std::uniform_int_distribution<int> per(2, 5);

  ClassTemplate t;
  double dist = 0.0;
  do {
    dist = 0.0;
    for (int c = 0; c < 3; ++c) {
      t.base[c] = color(rng);
      t.accent[c] = color(rng);
      dist += std::abs(t.base[c] - t.accent[c]);
    }
  } while (dist < 0.6);  // keep the mask visible against the background
  for (int c = 0; c < 3; ++c) {
    t.grad_row[c] = slope(rng);
    t.grad_col[c] = slope(rng);
  }
  t.pattern = static_cast<int>(class_id % 5);
  t.cx = center(rng);
  t.cy = center(rng);
  t.radius = rad(rng);
  t.period = per(rng);
  return t;
}

bool in_mask(const ClassTemplate& t, double u, double v) {
  switch (t.pattern) {
    case 0:  // disc
      return (u - t.cy) * (u - t.cy) + (v - t.cx) * (v - t.cx) <
             t.radius * t.radius;
    case 1:  // axis-aligned box
      return std::abs(u - t.cy) < t.radius && std::abs(v - t.cx) < t.radius;
    case 2:  // row stripes
      return static_cast<int>(u * 2 * t.period) % 2 == 0;
    case 3:  // checkerboard
      return (static_cast<int>(u * t.period) + static_cast<int>(v * t.period)) %
                 2 ==
             0;
    default:  // diagonal stripes
      return static_cast<int>((u + v) * t.period) % 2 == 0;
  }
}

}  // namespace

std::vector<LabeledImage> gen_synthetic(std::size_t num_classes,
                                        std::size_t per_class, std::size_t h,
                                        std::size_t w, double noise_sigma,
                                        std::uint64_t seed) {
  if (num_classes == 0 || per_class == 0 || h == 0 || w == 0) {
    throw std::invalid_argument("gen_synthetic: all sizes must be positive");
  }
  if (noise_sigma < 0.0 || !std::isfinite(noise_sigma)) {
    throw std::invalid_argument("gen_synthetic: noise_sigma must be finite and >= 0");
  }

  std::mt19937_64 noise_rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<LabeledImage> out;
  out.reserve(num_classes * per_class);
  int sample_id = 0;
  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    const ClassTemplate t = make_template(cls, seed);
    std::vector<double> tmpl(h * w * 3);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double u = h > 1 ? static_cast<double>(y) / (h - 1) : 0.5;
        const double v = w > 1 ? static_cast<double>(x) / (w - 1) : 0.5;
        const bool masked = in_mask(t, u, v);
        for (int c = 0; c < 3; ++c) {
          const double colored = masked ? t.accent[c] : t.base[c];
          tmpl[(y * w + x) * 3 + c] = clamp01(
              colored + (u - 0.5) * t.grad_row[c] + (v - 0.5) * t.grad_col[c]);
        }
      }
    }
    for (std::size_t s = 0; s < per_class; ++s) {
      std::vector<double> pix(tmpl);
      if (noise_sigma > 0.0) {
        for (double& p : pix) p = clamp01(p + noise_sigma * noise(noise_rng));
      }
      out.push_back(LabeledImage{Tensor({h, w, 3}, std::move(pix)),
                                 static_cast<int>(cls), sample_id++});
    }
  }
  return out;
}

std::vector<LabeledImage> import_folder(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw IoError("import: not a directory: " + root);
  }
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw IoError("import: no class directories in " + root);

  auto read_ppm = [](const fs::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IoError("import: cannot open " + file.string());
    auto next_token = [&is, &file]() {
      std::string tok;
      while (is >> tok) {
        if (tok[0] == '#') {  // comment runs to end of line
          std::string rest;
          std::getline(is, rest);
          continue;
        }
        return tok;
      }
      throw IoError("import: truncated PPM header in " + file.string());
    };
    if (next_token() != "P6") {
      throw IoError("import: " + file.string() + " is not binary PPM (P6)");
    }
    const std::size_t w = std::stoul(next_token());
    const std::size_t h = std::stoul(next_token());
    const int maxval = std::stoi(next_token());
    if (maxval != 255) {
      throw IoError("import: only maxval 255 PPMs supported: " + file.string());
    }
    is.get();  // single whitespace after the header
    std::vector<unsigned char> raw(w * h * 3);
    is.read(reinterpret_cast<char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
    if (!is) throw IoError("import: truncated pixel data in " + file.string());
    std::vector<double> pix(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) pix[i] = raw[i] / 255.0;
    return Tensor({h, w, 3}, std::move(pix));
  };

  std::vector<LabeledImage> out;
  int sample_id = 0;
  for (std::size_t cls = 0; cls < class_dirs.size(); ++cls) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[cls])) {
      if (e.is_regular_file() && e.path().extension() == ".ppm") {
        files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      out.push_back(
          LabeledImage{read_ppm(f), static_cast<int>(cls), sample_id++});
    }
  }
  if (out.empty()) throw IoError("import: no .ppm files under " + root);
  return out;
}

SplitResult split_dataset(const std::vector<LabeledImage>& data,
                          const SplitSpec& spec, std::uint64_t seed) {
  if (spec.train_class_fraction <= 0.0 || spec.train_class_fraction >= 1.0 ||
      spec.validation_fraction <= 0.0 || spec.validation_fraction >= 1.0) {
    throw std::invalid_argument("split: fractions must lie in (0, 1)");
  }
  std::set<int> class_set;
  for (const auto& img : data) class_set.insert(img.class_id);
  if (class_set.size() < 2) {
    throw std::invalid_argument("split: need at least 2 classes");
  }
  const std::vector<int> classes(class_set.begin(), class_set.end());
  const std::size_t n_train_classes = static_cast<std::size_t>(
      std::ceil(spec.train_class_fraction * static_cast<double>(classes.size())));
  const std::set<int> train_classes(classes.begin(),
                                    classes.begin() + n_train_classes);

  // Group sample indices per class to allow stratified, seeded selections.
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) {
    by_class[data[i].class_id].push_back(i);
  }

  std::mt19937_64 rng(seed);
  SplitResult r;
  for (const auto& [cls, indices] : by_class) {
    std::vector<std::size_t> order = indices;
    std::shuffle(order.begin(), order.end(), rng);
    if (train_classes.count(cls)) {
      const std::size_t n_val = static_cast<std::size_t>(
          std::lround(spec.validation_fraction * static_cast<double>(order.size())));
      for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_val ? r.val : r.train).push_back(data[order[i]]);
      }
    } else {
      for (std::size_t i : order) r.test.push_back(data[i]);
      if (spec.mode == SplitMode::query_gallery) {
        if (order.size() < 2) {
          throw std::invalid_argument(
              "split: class " + std::to_string(cls) +
              " has fewer than 2 samples; cannot form query/gallery halves");
        }
        const std::size_t n_query = order.size() / 2;
        for (std::size_t i = 0; i < order.size(); ++i) {
          (i < n_query ? r.query : r.gallery).push_back(data[order[i]]);
        }
      }
    }
  }

  // The protocol promise: train-side and test-side class sets are disjoint.
  std::set<int> train_seen, test_seen;
  for (const auto& img : r.train) train_seen.insert(img.class_id);
  for (const auto& img : r.val) train_seen.insert(img.class_id);
  for (const auto& img : r.test) test_seen.insert(img.class_id);
  for (int cls : train_seen) {
    if (test_seen.count(cls)) {
      throw std::logic_error("split: class leak across partitions");
    }
  }
  return r;
}

Tensor bilinear_resize(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  if (!img.defined() || img.ndim() != 3 || img.dim(2) != 3) {
    throw std::invalid_argument("resize: image must be (h, w, 3)");
  }
  if (out_h == 0 || out_w == 0) {
    throw std::invalid_argument("resize: output dims must be positive");
  }
  const std::size_t h = img.dim(0), w = img.dim(1);
  auto src = img.data();
  std::vector<double> out(out_h * out_w * 3);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = out_h > 1
                          ? static_cast<double>(y) * (h - 1) / (out_h - 1)
                          : 0.0;
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = out_w > 1
                            ? static_cast<double>(x) * (w - 1) / (out_w - 1)
                            : 0.0;
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (int c = 0; c < 3; ++c) {
        const double top = src[(y0 * w + x0) * 3 + c] * (1 - wx) +
                           src[(y0 * w + x1) * 3 + c] * wx;
        const double bot = src[(y1 * w + x0) * 3 + c] * (1 - wx) +
                           src[(y1 * w + x1) * 3 + c] * wx;
        out[(y * out_w + x) * 3 + c] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return Tensor({out_h, out_w, 3}, std::move(out));
}

namespace {

Tensor crop(const Tensor& img, std::size_t top, std::size_t left,
            std::size_t size) {
  const std::size_t w = img.dim(1);
  auto src = img.data();
  std::vector<double> out(size * size * 3);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) {
        out[(y * size + x) * 3 + c] = src[((top + y) * w + (left + x)) * 3 + c];
      }
    }
  }
  return Tensor({size, size, 3}, std::move(out));
}

Tensor hflip(const Tensor& img) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  auto src = img.data();
  std::vector<double> out(img.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        out[(y * w + x) * 3 + c] = src[(y * w + (w - 1 - x)) * 3 + c];
      }
    }
  }
  return Tensor({h, w, 3}, std::move(out));
}

void check_augment(const AugmentConfig& cfg) {
  if (cfg.crop == 0 || cfg.crop > cfg.resize) {
    throw std::invalid_argument("augment: need 0 < crop <= resize, got crop " +
                                std::to_string(cfg.crop) + " resize " +
                                std::to_string(cfg.resize));
  }
}

}  // namespace

LabeledImage augment_train(const LabeledImage& img, const AugmentConfig& cfg,
                           std::mt19937_64& rng) {
  check_augment(cfg);
  Tensor resized = bilinear_resize(img.pixels, cfg.resize, cfg.resize);
  std::uniform_int_distribution<std::size_t> off(0, cfg.resize - cfg.crop);
  const std::size_t top = off(rng);
  const std::size_t left = off(rng);
  Tensor cropped = crop(resized, top, left, cfg.crop);
  std::uniform_int_distribution<int> coin(0, 1);
  if (coin(rng) == 1) cropped = hflip(cropped);
  return LabeledImage{cropped, img.class_id, img.sample_id};
}

LabeledImage augment_eval(const LabeledImage& img, const AugmentConfig& cfg) {
  check_augment(cfg);
  Tensor resized = bilinear_resize(img.pixels, cfg.resize, cfg.resize);
  const std::size_t off = (cfg.resize - cfg.crop) / 2;
  return LabeledImage{crop(resized, off, off, cfg.crop), img.class_id,
                      img.sample_id};
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n,
                                                   std::size_t batch_size,
                                                   std::mt19937_64& rng) {
  if (batch_size < 2) throw std::invalid_argument("batches: batch_size must be >= 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size) {
    batches.emplace_back(order.begin() + i,
                         order.begin() + std::min(i + batch_size, n));
  }
  return batches;
}

std::vector<std::vector<std::size_t>> make_balanced_batches(
    const std::vector<int>& labels, std::size_t batch_size,
    std::size_t classes_per_batch, std::mt19937_64& rng) {
  if (batch_size < 2) throw std::invalid_argument("batches: batch_size must be >= 2");
  if (classes_per_batch == 0) {
    throw std::invalid_argument("batches: classes_per_batch must be >= 1");
  }
  const std::size_t per_class = batch_size / classes_per_batch;
  const std::size_t extra = batch_size % classes_per_batch;

  std::map<int, std::vector<std::size_t>> queues;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    queues[labels[i]].push_back(i);
  }
  for (auto& [cls, q] : queues) std::shuffle(q.begin(), q.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  std::size_t remaining = labels.size();
  while (remaining > 0) {
    // Classes with the most samples left first; ties favor the lower id.
    std::vector<int> order;
    for (const auto& [cls, q] : queues) {
      if (!q.empty()) order.push_back(cls);
    }
    std::stable_sort(order.begin(), order.end(), [&queues](int a, int b) {
      return queues.at(a).size() > queues.at(b).size();
    });
    if (order.size() > classes_per_batch) order.resize(classes_per_batch);

    std::vector<std::size_t> batch;
    for (std::size_t pick = 0; pick < order.size(); ++pick) {
      auto& q = queues[order[pick]];
      // When batch_size isn't a multiple of classes_per_batch, the classes
      // picked first (most samples left) absorb the remainder.
      const std::size_t quota = per_class + (pick < extra ? 1 : 0);
      const std::size_t take = std::min(quota, q.size());
      for (std::size_t i = 0; i < take; ++i) {
        batch.push_back(q.back());
        q.pop_back();
      }
    }
    remaining -= batch.size();
    batches.push_back(std::move(batch));
  }
  return batches;
}

Tensor stack_images(const std::vector<LabeledImage>& images) {
  if (images.empty()) throw std::invalid_argument("stack: no images");
  const Shape& s = images.front().pixels.shape();
  std::vector<double> out;
  out.reserve(images.size() * numel(s));
  for (const auto& img : images) {
    if (img.pixels.shape() != s) {
      throw std::invalid_argument("stack: image size mismatch");
    }
    out.insert(out.end(), img.pixels.data().begin(), img.pixels.data().end());
  }
  return Tensor({images.size(), s[0], s[1], s[2]}, std::move(out));
}

}  // namespace dmlkit
