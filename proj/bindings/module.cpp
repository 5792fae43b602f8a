#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <string>
#include <vector>

#include "dmlkit/config.hpp"
#include "dmlkit/data.hpp"
#include "dmlkit/errors.hpp"
#include "dmlkit/eval.hpp"
#include "dmlkit/gradcheck.hpp"
#include "dmlkit/losses.hpp"
#include "dmlkit/pipeline.hpp"

namespace py = pybind11;

namespace {

using DoubleArray =
    py::array_t<double, py::array::c_style | py::array::forcecast>;

dmlkit::Tensor tensor_from(const DoubleArray& arr) {
  dmlkit::Shape shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] =
        static_cast<std::size_t>(arr.shape(i));
  }
  std::vector<double> data(static_cast<std::size_t>(arr.size()));
  std::memcpy(data.data(), arr.data(), data.size() * sizeof(double));
  return dmlkit::Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from(const dmlkit::Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (std::size_t d : t.shape()) {
    shape.push_back(static_cast<py::ssize_t>(d));
  }
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), t.data().data(),
              t.size() * sizeof(double));
  return out;
}

dmlkit::NegativeMarginSign sign_from(const std::string& s) {
  if (s == "plus") return dmlkit::NegativeMarginSign::plus;
  if (s == "minus") return dmlkit::NegativeMarginSign::minus;
  throw dmlkit::ConfigError("negative_margin_sign must be 'plus' or 'minus', got '" +
                            s + "'");
}

py::dict recall_dict(const dmlkit::RecallReport& rep) {
  py::dict out;
  for (std::size_t j = 0; j < rep.ks.size(); ++j) {
    out[py::int_(rep.ks[j])] = rep.recall[j];
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Deep metric learning core: losses, retrieval metrics, and the "
            "training/evaluation pipeline.";

  py::register_exception<dmlkit::ConfigError>(m, "ConfigError",
                                              PyExc_ValueError);
  py::register_exception<dmlkit::NumericError>(m, "NumericError",
                                               PyExc_ArithmeticError);
  py::register_exception<dmlkit::IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "cosine_similarity_matrix",
      [](const DoubleArray& a, const DoubleArray& b) {
        return array_from(
            dmlkit::cosine_similarity_matrix(tensor_from(a), tensor_from(b)));
      },
      py::arg("a"), py::arg("b"),
      "Pairwise cosine similarities between the rows of two 2-D arrays.");

  m.def(
      "proxy_anchor_loss",
      [](const DoubleArray& x, const std::vector<int>& labels,
         const DoubleArray& proxies, double alpha, double delta) {
        dmlkit::ProxyBank bank{tensor_from(proxies)};
        return dmlkit::proxy_anchor_loss(tensor_from(x), labels, bank,
                                         {alpha, delta})
            .value();
      },
      py::arg("x"), py::arg("labels"), py::arg("proxies"),
      py::arg("alpha") = 32.0, py::arg("delta") = 0.1,
      "Proxy-anchor loss of embeddings (m, D) against per-class proxies "
      "(C, D); labels are proxy row indices.");

  m.def(
      "ms_loss",
      [](const DoubleArray& x, const std::vector<int>& labels, double gamma,
         double beta, double sigma, const std::string& negative_margin_sign) {
        dmlkit::MsConfig cfg{gamma, beta, sigma,
                             sign_from(negative_margin_sign)};
        return dmlkit::ms_loss(tensor_from(x), labels, cfg).value();
      },
      py::arg("x"), py::arg("labels"), py::arg("gamma") = 2.0,
      py::arg("beta") = 50.0, py::arg("sigma") = 1.0,
      py::arg("negative_margin_sign") = "plus",
      "Multi-similarity loss over in-batch cosine similarities.");

  m.def(
      "hybrid_loss",
      [](const DoubleArray& x, const std::vector<int>& labels,
         const DoubleArray& proxies, double alpha, double delta, double gamma,
         double beta, double sigma, const std::string& negative_margin_sign,
         double lambda_) {
        dmlkit::ProxyBank bank{tensor_from(proxies)};
        dmlkit::HybridLossResult r = dmlkit::hybrid_loss(
            tensor_from(x), labels, bank, {alpha, delta},
            {gamma, beta, sigma, sign_from(negative_margin_sign)}, {lambda_});
        return py::make_tuple(r.total.value(), r.ms.value(), r.pa.value());
      },
      py::arg("x"), py::arg("labels"), py::arg("proxies"),
      py::arg("alpha") = 32.0, py::arg("delta") = 0.1, py::arg("gamma") = 2.0,
      py::arg("beta") = 50.0, py::arg("sigma") = 1.0,
      py::arg("negative_margin_sign") = "plus", py::arg("lambda_") = 0.03,
      "Hybrid objective; returns (total, ms, proxy_anchor) where total = "
      "ms + lambda_ * proxy_anchor.");

  m.def(
      "recall_at_k",
      [](const DoubleArray& embeddings, const std::vector<int>& labels,
         const std::vector<std::size_t>& ks, bool exclude_self) {
        dmlkit::Tensor emb = tensor_from(embeddings);
        std::vector<int> ids(labels.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
          ids[i] = static_cast<int>(i);
        }
        dmlkit::RetrievalIndex index = dmlkit::build_index(emb, labels, ids);
        return recall_dict(
            dmlkit::recall_at_k(emb, labels, ids, index, ks, exclude_self));
      },
      py::arg("embeddings"), py::arg("labels"),
      py::arg("ks") = std::vector<std::size_t>{1, 2, 4, 8},
      py::arg("exclude_self") = true,
      "Self-retrieval Recall@K of an (n, D) embedding array: each row "
      "queries all the others; returns {k: recall}.");

  m.def(
      "gen_synthetic",
      [](std::size_t num_classes, std::size_t per_class, std::size_t height,
         std::size_t width, double noise_sigma, std::uint64_t seed) {
        auto data = dmlkit::gen_synthetic(num_classes, per_class, height,
                                          width, noise_sigma, seed);
        std::vector<py::ssize_t> shape = {
            static_cast<py::ssize_t>(data.size()),
            static_cast<py::ssize_t>(height), static_cast<py::ssize_t>(width),
            3};
        py::array_t<double> images(shape);
        std::vector<int> labels(data.size());
        double* dst = images.mutable_data();
        const std::size_t per_image = height * width * 3;
        for (std::size_t i = 0; i < data.size(); ++i) {
          std::memcpy(dst + i * per_image, data[i].pixels.data().data(),
                      per_image * sizeof(double));
          labels[i] = data[i].class_id;
        }
        return py::make_tuple(images, labels);
      },
      py::arg("num_classes"), py::arg("per_class"), py::arg("height") = 32,
      py::arg("width") = 32, py::arg("noise_sigma") = 0.3, py::arg("seed") = 1,
      "Procedural labeled image set; returns (images (n, h, w, 3) in [0, 1], "
      "labels).");

  m.def(
      "embed",
      [](const std::string& config_text, const std::string& checkpoint_path,
         const DoubleArray& images) {
        dmlkit::RunConfig cfg = dmlkit::parse_config(config_text);
        dmlkit::Model model(dmlkit::model_config_from(cfg), 0);
        dmlkit::load_model_params(model,
                                  dmlkit::load_checkpoint(checkpoint_path));
        return array_from(model.forward(tensor_from(images)));
      },
      py::arg("config_text"), py::arg("checkpoint_path"), py::arg("images"),
      "Raw (B, D) embeddings of (B, crop, crop, 3) images under a trained "
      "checkpoint; architecture comes from the config text.");

  m.def(
      "run_train",
      [](const std::string& config_text, const std::string& out_dir) {
        dmlkit::RunConfig cfg = dmlkit::parse_config(config_text);
        dmlkit::TrainResult result = dmlkit::run_train(cfg, out_dir);
        py::list metrics;
        for (const dmlkit::MetricsRow& row : result.rows) {
          py::dict r;
          r["epoch"] = row.epoch;
          r["train_loss"] = row.train_loss;
          r["ms_component"] = row.ms_component;
          r["pa_component"] = row.pa_component;
          r["val_recall_at_1"] = row.val_recall_at_1;
          metrics.append(r);
        }
        py::dict out;
        out["metrics"] = metrics;
        out["test_recall"] = recall_dict(result.test_recall);
        out["checkpoint_path"] = result.checkpoint_path;
        out["metrics_path"] = result.metrics_path;
        return out;
      },
      py::arg("config_text"), py::arg("out_dir"),
      "Full training run; writes metrics.csv, recall.json, dataset.json, and "
      "model.ckpt under out_dir and returns a result summary.");

  m.def(
      "run_eval",
      [](const std::string& config_text, const std::string& checkpoint_path,
         const std::string& out_dir, const std::vector<std::size_t>& ks,
         bool query_gallery) {
        dmlkit::RunConfig cfg = dmlkit::parse_config(config_text);
        dmlkit::EvalOptions opts;
        opts.ks = ks;
        opts.query_gallery = query_gallery;
        return recall_dict(
            dmlkit::run_eval(cfg, checkpoint_path, opts, out_dir));
      },
      py::arg("config_text"), py::arg("checkpoint_path"), py::arg("out_dir"),
      py::arg("ks") = std::vector<std::size_t>{1, 2, 4, 8},
      py::arg("query_gallery") = false,
      "Retrieval evaluation of a checkpoint; writes recall.json under "
      "out_dir and returns {k: recall}.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        py::list out;
        for (const dmlkit::GradCheckReport& r :
             dmlkit::run_gradcheck_suite(seed)) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_err"] = r.max_rel_err;
          d["checked"] = r.checked;
          d["pass"] = r.pass;
          out.append(d);
        }
        return out;
      },
      py::arg("seed") = 0,
      "Finite-difference gradient checks for every differentiable operation "
      "and the composed end-to-end graph.");

  m.def(
      "default_config",
      [] { return dmlkit::serialize_config(dmlkit::RunConfig{}); },
      "The default run configuration as config-file text.");

  m.def(
      "validate_config",
      [](const std::string& config_text) {
        dmlkit::parse_config(config_text);
      },
      py::arg("config_text"),
      "Parses and validates config text, raising ConfigError on any problem.");
}
