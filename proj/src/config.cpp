#include "dmlkit/config.hpp"

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "dmlkit/errors.hpp"

namespace dmlkit {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("config key '" + key + "': expected " + expected +
                    ", got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& value) {
  if (value.empty()) bad_value(key, value, "a number");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size() || errno == ERANGE ||
      !std::isfinite(v)) {
    bad_value(key, value, "a finite number");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  if (value.empty() || value[0] == '-' || value[0] == '+') {
    bad_value(key, value, "a non-negative integer");
  }
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end != value.c_str() + value.size() || errno == ERANGE) {
    bad_value(key, value, "a non-negative integer");
  }
  return static_cast<std::uint64_t>(v);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, value, "true or false");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void require(bool ok, const std::string& key, const std::string& rule) {
  if (!ok) throw ConfigError("config key '" + key + "': " + rule);
}

}  // namespace

std::string to_string(DescriptorMode m) {
  switch (m) {
    case DescriptorMode::local: return "local";
    case DescriptorMode::global: return "global";
    case DescriptorMode::both: return "both";
  }
  throw ConfigError("invalid DescriptorMode");
}

std::string to_string(SoaMode m) {
  switch (m) {
    case SoaMode::on: return "on";
    case SoaMode::off: return "off";
    case SoaMode::single_head: return "single_head";
  }
  throw ConfigError("invalid SoaMode");
}

std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::ms: return "ms";
    case LossMode::proxy: return "proxy";
    case LossMode::hybrid: return "hybrid";
  }
  throw ConfigError("invalid LossMode");
}

std::string to_string(NegativeMarginSign s) {
  return s == NegativeMarginSign::plus ? "plus" : "minus";
}

namespace {

DescriptorMode parse_descriptors(const std::string& key,
                                 const std::string& value) {
  if (value == "local") return DescriptorMode::local;
  if (value == "global") return DescriptorMode::global;
  if (value == "both") return DescriptorMode::both;
  bad_value(key, value, "local, global, or both");
}

SoaMode parse_soa(const std::string& key, const std::string& value) {
  if (value == "on") return SoaMode::on;
  if (value == "off") return SoaMode::off;
  if (value == "single_head") return SoaMode::single_head;
  bad_value(key, value, "on, off, or single_head");
}

LossMode parse_loss(const std::string& key, const std::string& value) {
  if (value == "ms") return LossMode::ms;
  if (value == "proxy") return LossMode::proxy;
  if (value == "hybrid") return LossMode::hybrid;
  bad_value(key, value, "ms, proxy, or hybrid");
}

NegativeMarginSign parse_sign(const std::string& key,
                              const std::string& value) {
  if (value == "plus") return NegativeMarginSign::plus;
  if (value == "minus") return NegativeMarginSign::minus;
  bad_value(key, value, "plus or minus");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": empty key");
    }
    if (!seen.insert(key).second) {
      throw ConfigError("duplicate config key '" + key + "'");
    }

    if (key == "data_source") {
      if (value != "synthetic" && value != "folder") {
        bad_value(key, value, "synthetic or folder");
      }
      cfg.data_source = value;
    } else if (key == "data_dir") {
      cfg.data_dir = value;
    } else if (key == "num_classes") {
      cfg.num_classes = parse_size(key, value);
    } else if (key == "samples_per_class") {
      cfg.samples_per_class = parse_size(key, value);
    } else if (key == "image_size") {
      cfg.image_size = parse_size(key, value);
    } else if (key == "noise_sigma") {
      cfg.noise_sigma = parse_double(key, value);
    } else if (key == "resize_size") {
      cfg.resize_size = parse_size(key, value);
    } else if (key == "crop_size") {
      cfg.crop_size = parse_size(key, value);
    } else if (key == "train_class_fraction") {
      cfg.train_class_fraction = parse_double(key, value);
    } else if (key == "validation_fraction") {
      cfg.validation_fraction = parse_double(key, value);
    } else if (key == "descriptors") {
      cfg.descriptors = parse_descriptors(key, value);
    } else if (key == "soa") {
      cfg.soa = parse_soa(key, value);
    } else if (key == "zeta") {
      cfg.zeta = parse_double(key, value);
    } else if (key == "soa_proj_dim") {
      cfg.soa_proj_dim = parse_size(key, value);
    } else if (key == "embedding_dim") {
      cfg.embedding_dim = parse_size(key, value);
    } else if (key == "stem_channels") {
      cfg.stem_channels = parse_size(key, value);
    } else if (key == "local_channels") {
      cfg.local_channels = parse_size(key, value);
    } else if (key == "global_channels") {
      cfg.global_channels = parse_size(key, value);
    } else if (key == "loss") {
      cfg.loss = parse_loss(key, value);
    } else if (key == "alpha") {
      cfg.alpha = parse_double(key, value);
    } else if (key == "delta") {
      cfg.delta = parse_double(key, value);
    } else if (key == "gamma") {
      cfg.gamma = parse_double(key, value);
    } else if (key == "beta") {
      cfg.beta = parse_double(key, value);
    } else if (key == "sigma") {
      cfg.sigma = parse_double(key, value);
    } else if (key == "negative_margin_sign") {
      cfg.negative_margin_sign = parse_sign(key, value);
    } else if (key == "lambda") {
      cfg.lambda = parse_double(key, value);
    } else if (key == "epochs") {
      cfg.epochs = parse_size(key, value);
    } else if (key == "batch_size") {
      cfg.batch_size = parse_size(key, value);
    } else if (key == "balanced_batches") {
      cfg.balanced_batches = parse_bool(key, value);
    } else if (key == "classes_per_batch") {
      cfg.classes_per_batch = parse_size(key, value);
    } else if (key == "lr_model") {
      cfg.lr_model = parse_double(key, value);
    } else if (key == "lr_proxy") {
      cfg.lr_proxy = parse_double(key, value);
    } else if (key == "weight_decay") {
      cfg.weight_decay = parse_double(key, value);
    } else if (key == "adam_beta1") {
      cfg.adam_beta1 = parse_double(key, value);
    } else if (key == "adam_beta2") {
      cfg.adam_beta2 = parse_double(key, value);
    } else if (key == "adam_eps") {
      cfg.adam_eps = parse_double(key, value);
    } else if (key == "seed") {
      cfg.seed = parse_u64(key, value);
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  validate_config(cfg);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("cannot read config file '" + path + "'");
  return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream out;
  out << "data_source = " << c.data_source << '\n';
  out << "data_dir = " << c.data_dir << '\n';
  out << "num_classes = " << c.num_classes << '\n';
  out << "samples_per_class = " << c.samples_per_class << '\n';
  out << "image_size = " << c.image_size << '\n';
  out << "noise_sigma = " << fmt_double(c.noise_sigma) << '\n';
  out << "resize_size = " << c.resize_size << '\n';
  out << "crop_size = " << c.crop_size << '\n';
  out << "train_class_fraction = " << fmt_double(c.train_class_fraction)
      << '\n';
  out << "validation_fraction = " << fmt_double(c.validation_fraction) << '\n';
  out << "descriptors = " << to_string(c.descriptors) << '\n';
  out << "soa = " << to_string(c.soa) << '\n';
  out << "zeta = " << fmt_double(c.zeta) << '\n';
  out << "soa_proj_dim = " << c.soa_proj_dim << '\n';
  out << "embedding_dim = " << c.embedding_dim << '\n';
  out << "stem_channels = " << c.stem_channels << '\n';
  out << "local_channels = " << c.local_channels << '\n';
  out << "global_channels = " << c.global_channels << '\n';
  out << "loss = " << to_string(c.loss) << '\n';
  out << "alpha = " << fmt_double(c.alpha) << '\n';
  out << "delta = " << fmt_double(c.delta) << '\n';
  out << "gamma = " << fmt_double(c.gamma) << '\n';
  out << "beta = " << fmt_double(c.beta) << '\n';
  out << "sigma = " << fmt_double(c.sigma) << '\n';
  out << "negative_margin_sign = " << to_string(c.negative_margin_sign)
      << '\n';
  out << "lambda = " << fmt_double(c.lambda) << '\n';
  out << "epochs = " << c.epochs << '\n';
  out << "batch_size = " << c.batch_size << '\n';
  out << "balanced_batches = " << (c.balanced_batches ? "true" : "false")
      << '\n';
  out << "classes_per_batch = " << c.classes_per_batch << '\n';
  out << "lr_model = " << fmt_double(c.lr_model) << '\n';
  out << "lr_proxy = " << fmt_double(c.lr_proxy) << '\n';
  out << "weight_decay = " << fmt_double(c.weight_decay) << '\n';
  out << "adam_beta1 = " << fmt_double(c.adam_beta1) << '\n';
  out << "adam_beta2 = " << fmt_double(c.adam_beta2) << '\n';
  out << "adam_eps = " << fmt_double(c.adam_eps) << '\n';
  out << "seed = " << c.seed << '\n';
  return out.str();
}

void validate_config(const RunConfig& c) {
  require(c.data_source == "synthetic" || c.data_source == "folder",
          "data_source", "must be synthetic or folder");
  if (c.data_source == "folder") {
    require(!c.data_dir.empty(), "data_dir",
            "required when data_source = folder");
  }
  require(c.num_classes >= 2, "num_classes", "must be >= 2");
  require(c.samples_per_class >= 2, "samples_per_class", "must be >= 2");
  require(c.image_size >= 4, "image_size", "must be >= 4");
  require(c.noise_sigma >= 0.0, "noise_sigma", "must be >= 0");
  require(c.crop_size >= 4, "crop_size", "must be >= 4");
  require(c.resize_size >= c.crop_size, "resize_size", "must be >= crop_size");
  require(c.train_class_fraction > 0.0 && c.train_class_fraction < 1.0,
          "train_class_fraction", "must be in (0, 1)");
  require(c.validation_fraction > 0.0 && c.validation_fraction < 1.0,
          "validation_fraction", "must be in (0, 1)");
  require(std::isfinite(c.zeta), "zeta", "must be finite");
  require(c.embedding_dim >= 2, "embedding_dim", "must be >= 2");
  if (c.descriptors == DescriptorMode::both && c.soa != SoaMode::single_head) {
    require(c.embedding_dim % 2 == 0, "embedding_dim",
            "must be even when descriptors = both");
  }
  if (c.soa == SoaMode::single_head) {
    require(c.descriptors == DescriptorMode::both, "soa",
            "single_head requires descriptors = both");
  }
  require(c.stem_channels >= 1, "stem_channels", "must be >= 1");
  require(c.local_channels >= 1, "local_channels", "must be >= 1");
  require(c.global_channels >= c.local_channels, "global_channels",
          "must be >= local_channels");
  require(c.alpha > 0.0, "alpha", "must be > 0");
  require(c.delta > 0.0, "delta", "must be > 0");
  require(c.gamma > 0.0, "gamma", "must be > 0");
  require(c.beta > 0.0, "beta", "must be > 0");
  require(c.sigma >= 0.0, "sigma", "must be >= 0");
  require(c.lambda >= 0.0, "lambda", "must be >= 0");
  require(c.batch_size >= 2, "batch_size", "must be >= 2");
  require(c.lr_model > 0.0, "lr_model", "must be > 0");
  require(c.lr_proxy > 0.0, "lr_proxy", "must be > 0");
  require(c.weight_decay >= 0.0, "weight_decay", "must be >= 0");
  require(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0, "adam_beta1",
          "must be in [0, 1)");
  require(c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0, "adam_beta2",
          "must be in [0, 1)");
  require(c.adam_eps > 0.0, "adam_eps", "must be > 0");
}

}  // namespace dmlkit
