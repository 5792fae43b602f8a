#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dmlkit/errors.hpp"

namespace dmlkit {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;     // allocated on first accumulation
  std::uint64_t tape_id = 0;    // tape that produced this node, 0 for leaves
};

}  // namespace detail

// Dense n-d array of doubles. Cheap to copy (shared storage); values are
// immutable once created except for grad accumulation and explicit parameter
// updates through mutable_data(). Every constructor and op rejects non-finite
// values instead of letting them propagate.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();  // parameter init / optimizer updates
  double value() const;              // single-element tensors only

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mutable();
  void ensure_grad();
  void zero_grad();

  detail::TensorNode* node() const { return node_.get(); }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Records one forward pass; freed after use. A tape is confined to a single
// logical training step and must not be shared across threads. Constructing a
// tape makes it the active tape for the current thread until destruction.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and walks the recorded ops in reverse.
  // Leaf gradients accumulate across repeated calls; intermediate gradients
  // are cleared at the start of each call.
  void backward(const Tensor& loss);

  std::size_t num_ops() const { return records_.size(); }
  std::uint64_t id() const { return id_; }

  static Tape* active();

  void record(const Tensor& output, std::function<void()> apply);

 private:
  struct Record {
    Tensor output;
    std::function<void()> apply;
  };
  std::uint64_t id_;
  std::vector<Record> records_;
};

// True when the tensor will receive gradient flow under the active tape.
bool tracked(const Tensor& t);

namespace detail {
// For ops defined outside the core: validates the data and, when track is
// true, stamps the output with the active tape id. The caller registers the
// matching pullback with Tape::record.
Tensor make_op_output(Shape shape, std::vector<double> data, const char* name,
                      bool track);
}  // namespace detail

// Elementwise kernels. Binary kinds require equal shapes or a single-element
// operand on either side (scalar broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

// Adds a 1-d bias over the trailing axis of x.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor softmax(const Tensor& x, std::size_t axis);

// x is (batch, h, w, c_in); w is (kh, kw, c_in, c_out). Cross-correlation
// with zero padding; output spatial dims are floor((n + 2p - k) / s) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride,
              std::size_t pad);

// Per-channel spatial reductions of a (batch, h, w, c) map down to (batch, c).
// spatial_max routes its gradient to the first max element in row-major scan
// order when several elements tie.
Tensor spatial_mean(const Tensor& x);
Tensor spatial_max(const Tensor& x);

Tensor reduce_sum(const Tensor& x);  // sum of all elements, shape (1)
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t len);

// x / sqrt(max(sum(x^2), eps)) along the given axis.
Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps = 1e-12);

}  // namespace dmlkit
