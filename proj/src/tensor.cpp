#include "dmlkit/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dmlkit {

namespace {

thread_local std::vector<Tape*> g_tape_stack;
std::atomic<std::uint64_t> g_tape_counter{0};

void check_finite(std::span<const double> values, const char* where) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(where) + ": non-finite value produced");
    }
  }
}

bool is_scalar_like(const Tensor& t) { return t.size() == 1; }

std::size_t outer_count(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < axis; ++i) n *= s[i];
  return n;
}

std::size_t inner_count(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) n *= s[i];
  return n;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor make_output(Shape shape, std::vector<double> data, const char* name,
                   bool track) {
  return detail::make_op_output(std::move(shape), std::move(data), name, track);
}

void accumulate(Tensor& t, std::span<const double> g) {
  t.ensure_grad();
  auto dst = t.grad_mutable();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  require(numel(shape) == data.size(),
          "tensor: shape " + shape_str(shape) + " does not match data length " +
              std::to_string(data.size()));
  for (std::size_t d : shape) {
    require(d > 0, "tensor: shape dims must be positive, got " + shape_str(shape));
  }
  check_finite(data, "tensor");
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> data(numel(shape), 0.0);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(numel(shape), value);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev,
                     bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::ndim() const { return node_->shape.size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < node_->shape.size(), "tensor: axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::value() const {
  require(size() == 1, "tensor: value() requires a single-element tensor, got " +
                           shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::grad_mutable() { return node_->grad; }

void Tensor::ensure_grad() {
  if (node_->grad.size() != node_->data.size()) {
    node_->grad.assign(node_->data.size(), 0.0);
  }
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tape::Tape() : id_(++g_tape_counter) { g_tape_stack.push_back(this); }

Tape::~Tape() {
  if (!g_tape_stack.empty() && g_tape_stack.back() == this) {
    g_tape_stack.pop_back();
  }
}

Tape* Tape::active() {
  return g_tape_stack.empty() ? nullptr : g_tape_stack.back();
}

void Tape::record(const Tensor& output, std::function<void()> apply) {
  records_.push_back(Record{output, std::move(apply)});
}

void Tape::backward(const Tensor& loss) {
  require(loss.defined() && loss.size() == 1,
          "backward: loss must be a single-element tensor");
  if (loss.node()->tape_id != id_) {
    throw std::invalid_argument("backward: loss was not recorded on this tape");
  }
  // Clear intermediates so only leaf gradients accumulate across calls.
  for (Record& r : records_) r.output.zero_grad();
  detail::TensorNode* loss_node = loss.node();
  if (loss_node->grad.size() != 1) loss_node->grad.assign(1, 0.0);
  loss_node->grad[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->apply();
  }
}

bool tracked(const Tensor& t) {
  Tape* tape = Tape::active();
  if (tape == nullptr || !t.defined()) return false;
  return t.requires_grad() || t.node()->tape_id == tape->id();
}

namespace detail {

Tensor make_op_output(Shape shape, std::vector<double> data, const char* name,
                      bool track) {
  check_finite(data, name);
  Tensor out(std::move(shape), std::move(data), false);
  if (track) {
    out.node()->tape_id = Tape::active()->id();
    out.ensure_grad();
  }
  return out;
}

}  // namespace detail

namespace {

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(BinKind kind, const Tensor& a, const Tensor& b,
                 const char* name) {
  require(a.defined() && b.defined(), std::string(name) + ": undefined operand");
  const bool a_scalar = is_scalar_like(a);
  const bool b_scalar = is_scalar_like(b);
  require(a.shape() == b.shape() || a_scalar || b_scalar,
          std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()) + " are not broadcast-compatible");

  const Tensor& big = (a_scalar && !b_scalar) ? b : a;
  const std::size_t n = big.size();
  std::vector<double> out(n);
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double av = a_scalar ? da[0] : da[i];
    const double bv = b_scalar ? db[0] : db[i];
    switch (kind) {
      case BinKind::Add: out[i] = av + bv; break;
      case BinKind::Sub: out[i] = av - bv; break;
      case BinKind::Mul: out[i] = av * bv; break;
    }
  }

  const bool need_a = tracked(a);
  const bool need_b = tracked(b);
  Tensor result = make_output(big.shape(), std::move(out), name, need_a || need_b);
  if (!need_a && !need_b) return result;
  Tensor ta = a, tb = b, out_t = result;
  Tape::active()->record(out_t, [kind, ta, tb, out_t, need_a, need_b, a_scalar,
                                 b_scalar]() mutable {
    auto go = out_t.grad();
    const std::size_t m = go.size();
    if (need_a) {
      ta.ensure_grad();
      auto ga = ta.grad_mutable();
      auto bv = tb.data();
      for (std::size_t i = 0; i < m; ++i) {
        double g = go[i];
        if (kind == BinKind::Mul) g *= b_scalar ? bv[0] : bv[i];
        ga[a_scalar ? 0 : i] += g;
      }
    }
    if (need_b) {
      tb.ensure_grad();
      auto gb = tb.grad_mutable();
      auto av = ta.data();
      for (std::size_t i = 0; i < m; ++i) {
        double g = go[i];
        if (kind == BinKind::Mul) g *= a_scalar ? av[0] : av[i];
        if (kind == BinKind::Sub) g = -g;
        gb[b_scalar ? 0 : i] += g;
      }
    }
  });
  return result;
}

template <typename Fwd, typename Dfn>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Dfn dfn) {
  require(x.defined(), std::string(name) + ": undefined operand");
  const std::size_t n = x.size();
  std::vector<double> out(n);
  auto dx = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(dx[i]);

  const bool need = tracked(x);
  Tensor result = make_output(x.shape(), std::move(out), name, need);
  if (!need) return result;
  Tensor tx = x, out_t = result;
  Tape::active()->record(out_t, [tx, out_t, dfn]() mutable {
    auto go = out_t.grad();
    auto yv = out_t.data();
    auto xv = tx.data();
    tx.ensure_grad();
    auto gx = tx.grad_mutable();
    for (std::size_t i = 0; i < go.size(); ++i) {
      gx[i] += dfn(xv[i], yv[i], go[i]);
    }
  });
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::Add, a, b, "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::Sub, a, b, "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(BinKind::Mul, a, b, "mul");
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); },
      [](double, double y, double g) { return g * y; });
}

Tensor log(const Tensor& x) {
  require(x.defined(), "log: undefined operand");
  for (double v : x.data()) {
    if (v <= 0.0) throw NumericError("log: non-positive input");
  }
  return unary_op(
      x, "log", [](double v) { return std::log(v); },
      [](double v, double, double g) { return g / v; });
}

Tensor relu(const Tensor& x) {
  // Subgradient 0 at the kink.
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double, double g) { return v > 0.0 ? g : 0.0; });
}

Tensor scale(const Tensor& x, double factor) {
  require(std::isfinite(factor), "scale: factor must be finite");
  return unary_op(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double, double g) { return g * factor; });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require(x.defined() && bias.defined(), "add_bias: undefined operand");
  require(bias.ndim() == 1, "add_bias: bias must be 1-d");
  require(x.ndim() >= 1 && x.shape().back() == bias.dim(0),
          "add_bias: trailing axis of " + shape_str(x.shape()) +
              " does not match bias length " + std::to_string(bias.dim(0)));
  const std::size_t c = bias.dim(0);
  const std::size_t rows = x.size() / c;
  std::vector<double> out(x.size());
  auto dx = x.data();
  auto db = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * c;
    for (std::size_t j = 0; j < c; ++j) out[base + j] = dx[base + j] + db[j];
  }

  const bool need_x = tracked(x);
  const bool need_b = tracked(bias);
  Tensor result = make_output(x.shape(), std::move(out), "add_bias", need_x || need_b);
  if (!need_x && !need_b) return result;
  Tensor tx = x, tb = bias, out_t = result;
  Tape::active()->record(out_t, [tx, tb, out_t, need_x, need_b, rows, c]() mutable {
    auto go = out_t.grad();
    if (need_x) accumulate(tx, go);
    if (need_b) {
      tb.ensure_grad();
      auto gb = tb.grad_mutable();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * c;
        for (std::size_t j = 0; j < c; ++j) gb[j] += go[base + j];
      }
    }
  });
  return result;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.defined() && b.defined(), "matmul: undefined operand");
  require(a.ndim() == 2 && b.ndim() == 2, "matmul: operands must be 2-d");
  require(a.dim(1) == b.dim(0),
          "matmul: inner dims disagree, " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = da[i * k + p];
      const double* brow = &db[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }

  const bool need_a = tracked(a);
  const bool need_b = tracked(b);
  Tensor result = make_output({m, n}, std::move(out), "matmul", need_a || need_b);
  if (!need_a && !need_b) return result;
  Tensor ta = a, tb = b, out_t = result;
  Tape::active()->record(out_t, [ta, tb, out_t, need_a, need_b, m, k, n]() mutable {
    auto go = out_t.grad();
    if (need_a) {
      // dA = dC * B^T
      ta.ensure_grad();
      auto ga = ta.grad_mutable();
      auto bv = tb.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* grow = &go[i * n];
          const double* brow = &bv[p * n];
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (need_b) {
      // dB = A^T * dC
      tb.ensure_grad();
      auto gb = tb.grad_mutable();
      auto av = ta.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double a_ip = av[i * k + p];
          const double* grow = &go[i * n];
          double* gbrow = &gb[p * n];
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += a_ip * grow[j];
        }
      }
    }
  });
  return result;
}

Tensor transpose(const Tensor& x) {
  require(x.defined() && x.ndim() == 2, "transpose: operand must be 2-d");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  auto dx = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = dx[i * n + j];
  }
  const bool need = tracked(x);
  Tensor result = make_output({n, m}, std::move(out), "transpose", need);
  if (!need) return result;
  Tensor tx = x, out_t = result;
  Tape::active()->record(out_t, [tx, out_t, m, n]() mutable {
    auto go = out_t.grad();
    tx.ensure_grad();
    auto gx = tx.grad_mutable();
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) gx[i * n + j] += go[j * m + i];
    }
  });
  return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require(x.defined(), "softmax: undefined operand");
  require(axis < x.ndim(), "softmax: axis out of range for " + shape_str(x.shape()));
  const std::size_t outer = outer_count(x.shape(), axis);
  const std::size_t n = x.dim(axis);
  const std::size_t inner = inner_count(x.shape(), axis);
  std::vector<double> out(x.size());
  auto dx = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      // Max-shift keeps the exponentials bounded for any input magnitude.
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, dx[base + i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double e = std::exp(dx[base + i * inner] - mx);
        out[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= sum;
    }
  }
  const bool need = tracked(x);
  Tensor result = make_output(x.shape(), std::move(out), "softmax", need);
  if (!need) return result;
  Tensor tx = x, out_t = result;
  Tape::active()->record(out_t, [tx, out_t, outer, n, inner]() mutable {
    auto go = out_t.grad();
    auto yv = out_t.data();
    tx.ensure_grad();
    auto gx = tx.grad_mutable();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          dot += go[base + i * inner] * yv[base + i * inner];
        }
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t k = base + i * inner;
          gx[k] += yv[k] * (go[k] - dot);
        }
      }
    }
  });
  return result;
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride,
              std::size_t pad) {
  require(x.defined() && w.defined(), "conv2d: undefined operand");
  require(x.ndim() == 4, "conv2d: input must be (batch, h, w, c), got " +
                             shape_str(x.shape()));
  require(w.ndim() == 4, "conv2d: kernel must be (kh, kw, c_in, c_out), got " +
                             shape_str(w.shape()));
  require(stride >= 1, "conv2d: stride must be >= 1");
  const std::size_t bsz = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3);
  const std::size_t kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  require(w.dim(2) == ci, "conv2d: kernel c_in " + std::to_string(w.dim(2)) +
                              " does not match input channels " +
                              std::to_string(ci));
  const std::ptrdiff_t ip = static_cast<std::ptrdiff_t>(pad);
  const std::ptrdiff_t oh_n =
      (static_cast<std::ptrdiff_t>(h) + 2 * ip - static_cast<std::ptrdiff_t>(kh)) /
          static_cast<std::ptrdiff_t>(stride) +
      1;
  const std::ptrdiff_t ow_n =
      (static_cast<std::ptrdiff_t>(wd) + 2 * ip - static_cast<std::ptrdiff_t>(kw)) /
          static_cast<std::ptrdiff_t>(stride) +
      1;
  require(oh_n > 0 && ow_n > 0, "conv2d: non-positive output dims for input " +
                                    shape_str(x.shape()) + " kernel " +
                                    shape_str(w.shape()));
  const std::size_t oh = static_cast<std::size_t>(oh_n);
  const std::size_t ow = static_cast<std::size_t>(ow_n);

  std::vector<double> out(bsz * oh * ow * co, 0.0);
  auto dx = x.data();
  auto dw = w.data();
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t z = 0; z < ow; ++z) {
        double* orow = &out[((b * oh + y) * ow + z) * co];
        for (std::size_t i = 0; i < kh; ++i) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + i) - ip;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t j = 0; j < kw; ++j) {
            const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z * stride + j) - ip;
            if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(wd)) continue;
            const double* xrow =
                &dx[((b * h + static_cast<std::size_t>(iy)) * wd +
                     static_cast<std::size_t>(iz)) * ci];
            const double* wrow = &dw[(i * kw + j) * ci * co];
            for (std::size_t c = 0; c < ci; ++c) {
              const double xv = xrow[c];
              const double* wr = &wrow[c * co];
              for (std::size_t oc = 0; oc < co; ++oc) orow[oc] += xv * wr[oc];
            }
          }
        }
      }
    }
  }

  const bool need_x = tracked(x);
  const bool need_w = tracked(w);
  Tensor result =
      make_output({bsz, oh, ow, co}, std::move(out), "conv2d", need_x || need_w);
  if (!need_x && !need_w) return result;
  Tensor tx = x, tw = w, out_t = result;
  Tape::active()->record(out_t, [tx, tw, out_t, need_x, need_w, bsz, h, wd, ci,
                                 kh, kw, co, oh, ow, stride, ip]() mutable {
    auto go = out_t.grad();
    auto xv = tx.data();
    auto wv = tw.data();
    if (need_x) tx.ensure_grad();
    if (need_w) tw.ensure_grad();
    auto gx = need_x ? tx.grad_mutable() : std::span<double>();
    auto gw = need_w ? tw.grad_mutable() : std::span<double>();
    for (std::size_t b = 0; b < bsz; ++b) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t z = 0; z < ow; ++z) {
          const double* grow = &go[((b * oh + y) * ow + z) * co];
          for (std::size_t i = 0; i < kh; ++i) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + i) - ip;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t j = 0; j < kw; ++j) {
              const std::ptrdiff_t iz = static_cast<std::ptrdiff_t>(z * stride + j) - ip;
              if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(wd)) continue;
              const std::size_t xbase =
                  ((b * h + static_cast<std::size_t>(iy)) * wd +
                   static_cast<std::size_t>(iz)) * ci;
              const std::size_t wbase = (i * kw + j) * ci * co;
              for (std::size_t c = 0; c < ci; ++c) {
                const double* wr = &wv[wbase + c * co];
                if (need_x) {
                  double acc = 0.0;
                  for (std::size_t oc = 0; oc < co; ++oc) acc += grow[oc] * wr[oc];
                  gx[xbase + c] += acc;
                }
                if (need_w) {
                  const double xval = xv[xbase + c];
                  double* gwr = &gw[wbase + c * co];
                  for (std::size_t oc = 0; oc < co; ++oc) gwr[oc] += xval * grow[oc];
                }
              }
            }
          }
        }
      }
    }
  });
  return result;
}

Tensor spatial_mean(const Tensor& x) {
  require(x.defined() && x.ndim() == 4,
          "spatial_mean: input must be a 4-d feature map");
  const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const double inv = 1.0 / static_cast<double>(h * w);
  std::vector<double> out(b * c, 0.0);
  auto dx = x.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t p = 0; p < h * w; ++p) {
      const double* row = &dx[(bi * h * w + p) * c];
      double* orow = &out[bi * c];
      for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += row[ch];
    }
  }
  for (double& v : out) v *= inv;
  const bool need = tracked(x);
  Tensor result = make_output({b, c}, std::move(out), "spatial_mean", need);
  if (!need) return result;
  Tensor tx = x, out_t = result;
  Tape::active()->record(out_t, [tx, out_t, b, h, w, c, inv]() mutable {
    auto go = out_t.grad();
    tx.ensure_grad();
    auto gx = tx.grad_mutable();
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t p = 0; p < h * w; ++p) {
        double* row = &gx[(bi * h * w + p) * c];
        const double* grow = &go[bi * c];
        for (std::size_t ch = 0; ch < c; ++ch) row[ch] += grow[ch] * inv;
      }
    }
  });
  return result;
}

Tensor spatial_max(const Tensor& x) {
  require(x.defined() && x.ndim() == 4,
          "spatial_max: input must be a 4-d feature map");
  const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  std::vector<double> out(b * c, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> argmax(b * c, 0);
  auto dx = x.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t p = 0; p < h * w; ++p) {
      const std::size_t base = (bi * h * w + p) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = dx[base + ch];
        // Strict > keeps the first maximum in row-major scan order on ties.
        if (v > out[bi * c + ch]) {
          out[bi * c + ch] = v;
          argmax[bi * c + ch] = base + ch;
        }
      }
    }
  }
  const bool need = tracked(x);
  Tensor result = make_output({b, c}, std::move(out), "spatial_max", need);
  if (!need) return result;
  Tensor tx = x, out_t = result;
  Tape::active()->record(out_t, [tx, out_t, argmax = std::move(argmax)]() mutable {
    auto go = out_t.grad();
    tx.ensure_grad();
    auto gx = tx.grad_mutable();
    for (std::size_t i = 0; i < go.size(); ++i) gx[argmax[i]] += go[i];
  });
  return result;
}

Tensor reduce_sum(const Tensor& x) {
  require(x.defined(), "reduce_sum: undefined operand");
  double sum = 0.0;
  for (double v : x.data()) sum += v;
  const bool need = tracked(x);
  Tensor result = make_output({1}, {sum}, "reduce_sum", need);
  if (!need) return result;
  Tensor tx = x, out_t = result;
  Tape::active()->record(out_t, [tx, out_t]() mutable {
    const double g = out_t.grad()[0];
    tx.ensure_grad();
    for (double& v : tx.grad_mutable()) v += g;
  });
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(x.defined(), "reshape: undefined operand");
  require(numel(shape) == x.size(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  const bool need = tracked(x);
  Tensor result = make_output(std::move(shape), std::move(out), "reshape", need);
  if (!need) return result;
  Tensor tx = x, out_t = result;
  Tape::active()->record(out_t, [tx, out_t]() mutable {
    accumulate(tx, out_t.grad());
  });
  return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no operands");
  require(parts.front().defined(), "concat: undefined operand");
  const Shape first = parts.front().shape();
  require(axis < first.size(), "concat: axis out of range");
  Shape out_shape = first;
  std::size_t axis_total = 0;
  for (const Tensor& p : parts) {
    require(p.defined() && p.ndim() == first.size(),
            "concat: rank mismatch across operands");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis) {
        require(p.dim(d) == first[d],
                "concat: shape mismatch at axis " + std::to_string(d));
      }
    }
    axis_total += p.dim(axis);
  }
  out_shape[axis] = axis_total;

  const std::size_t outer = outer_count(out_shape, axis);
  const std::size_t inner = inner_count(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets(parts.size());
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    offsets[pi] = offset;
    const std::size_t len = parts[pi].dim(axis);
    auto dp = parts[pi].data();
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t src = o * len * inner;
      const std::size_t dst = (o * axis_total + offset) * inner;
      std::copy(dp.begin() + src, dp.begin() + src + len * inner,
                out.begin() + dst);
    }
    offset += len;
  }

  std::vector<char> need(parts.size(), 0);
  bool any = false;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    need[pi] = tracked(parts[pi]) ? 1 : 0;
    any = any || need[pi];
  }
  Tensor result = make_output(std::move(out_shape), std::move(out), "concat", any);
  if (!any) return result;
  std::vector<Tensor> held = parts;
  Tensor out_t = result;
  Tape::active()->record(out_t, [held = std::move(held), need = std::move(need),
                                 offsets = std::move(offsets), out_t, outer,
                                 inner, axis_total, axis]() mutable {
    auto go = out_t.grad();
    for (std::size_t pi = 0; pi < held.size(); ++pi) {
      if (!need[pi]) continue;
      Tensor& p = held[pi];
      p.ensure_grad();
      auto gp = p.grad_mutable();
      const std::size_t len = p.dim(axis);
      for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t src = (o * axis_total + offsets[pi]) * inner;
        const std::size_t dst = o * len * inner;
        for (std::size_t i = 0; i < len * inner; ++i) gp[dst + i] += go[src + i];
      }
    }
  });
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t len) {
  require(x.defined(), "slice: undefined operand");
  require(axis < x.ndim(), "slice: axis out of range");
  require(len > 0 && start + len <= x.dim(axis),
          "slice: range [" + std::to_string(start) + "," +
              std::to_string(start + len) + ") exceeds dim " +
              std::to_string(x.dim(axis)));
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  const std::size_t outer = outer_count(x.shape(), axis);
  const std::size_t inner = inner_count(x.shape(), axis);
  const std::size_t n_axis = x.dim(axis);
  std::vector<double> out(numel(out_shape));
  auto dx = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t src = (o * n_axis + start) * inner;
    std::copy(dx.begin() + src, dx.begin() + src + len * inner,
              out.begin() + o * len * inner);
  }
  const bool need = tracked(x);
  Tensor result = make_output(std::move(out_shape), std::move(out), "slice", need);
  if (!need) return result;
  Tensor tx = x, out_t = result;
  Tape::active()->record(out_t, [tx, out_t, outer, inner, n_axis, start, len]() mutable {
    auto go = out_t.grad();
    tx.ensure_grad();
    auto gx = tx.grad_mutable();
    for (std::size_t o = 0; o < outer; ++o) {
      const std::size_t dst = (o * n_axis + start) * inner;
      const std::size_t src = o * len * inner;
      for (std::size_t i = 0; i < len * inner; ++i) gx[dst + i] += go[src + i];
    }
  });
  return result;
}

Tensor l2_normalize(const Tensor& x, std::size_t axis, double eps) {
  require(x.defined(), "l2_normalize: undefined operand");
  require(axis < x.ndim(), "l2_normalize: axis out of range");
  require(eps > 0.0, "l2_normalize: eps must be positive");
  const std::size_t outer = outer_count(x.shape(), axis);
  const std::size_t n = x.dim(axis);
  const std::size_t inner = inner_count(x.shape(), axis);
  std::vector<double> out(x.size());
  std::vector<double> norms(outer * inner);
  std::vector<char> clamped(outer * inner);
  auto dx = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = dx[base + i * inner];
        ss += v * v;
      }
      const bool clamp = ss < eps;
      const double nv = std::sqrt(clamp ? eps : ss);
      norms[o * inner + in] = nv;
      clamped[o * inner + in] = clamp ? 1 : 0;
      for (std::size_t i = 0; i < n; ++i) {
        out[base + i * inner] = dx[base + i * inner] / nv;
      }
    }
  }
  const bool need = tracked(x);
  Tensor result = make_output(x.shape(), std::move(out), "l2_normalize", need);
  if (!need) return result;
  Tensor tx = x, out_t = result;
  Tape::active()->record(out_t, [tx, out_t, norms = std::move(norms),
                                 clamped = std::move(clamped), outer, n,
                                 inner]() mutable {
    auto go = out_t.grad();
    auto yv = out_t.data();
    tx.ensure_grad();
    auto gx = tx.grad_mutable();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        const double nv = norms[o * inner + in];
        if (clamped[o * inner + in]) {
          // Below the clamp the norm is constant, so the map is linear.
          for (std::size_t i = 0; i < n; ++i) {
            gx[base + i * inner] += go[base + i * inner] / nv;
          }
          continue;
        }
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          dot += go[base + i * inner] * yv[base + i * inner];
        }
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t k = base + i * inner;
          gx[k] += (go[k] - yv[k] * dot) / nv;
        }
      }
    }
  });
  return result;
}

}  // namespace dmlkit
