#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dh/errors.hpp"

namespace dh {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;    // allocated lazily; same length as value
  bool requires_grad = false;  // trainable leaf
  bool on_tape = false;        // produced by a recorded operation
};

// Dense float64 tensor. A Tensor is a shared handle: copies alias the same
// buffer, clone() makes a deep copy, detached() additionally cuts the tape
// lineage. Gradients accumulate into `grad` when a GradientTape is active.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double v);
  static Tensor from(const Shape& shape, std::vector<double> data);
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int64_t size() const { return static_cast<int64_t>(d_->value.size()); }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int64_t dim(int i) const;

  double* data() { return d_->value.data(); }
  const double* data() const { return d_->value.data(); }
  std::vector<double>& values() { return d_->value; }
  const std::vector<double>& values() const { return d_->value; }

  bool has_grad() const { return !d_->grad.empty(); }
  double* grad_data() { return d_->grad.data(); }
  const double* grad_data() const { return d_->grad.data(); }
  void ensure_grad();
  void zero_grad();

  // Scalar access; ContractError unless size() == 1.
  double item() const;

  Tensor& set_requires_grad(bool v = true);
  bool requires_grad() const { return d_->requires_grad; }

  Tensor clone() const;
  Tensor detached() const;

  std::shared_ptr<TensorData> node() const { return d_; }

 private:
  std::shared_ptr<TensorData> d_;
};

// Append-only record of backward steps. backward() replays the records in
// strict reverse order of insertion, which is a reverse topological order of
// the computation. One tape per training context; a context stays on one
// thread (the active-tape pointer is thread-local).
class GradientTape {
 public:
  void record(std::function<void()> backward_step);
  void backward(const Tensor& loss);
  size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

// RAII: installs `tape` as the active recorder on the current thread.
class TapeScope {
 public:
  explicit TapeScope(GradientTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradientTape* previous_;
};

GradientTape* active_tape();

// Runs backward on the active tape. ContractError if loss is not scalar or no
// tape is active.
void backward(const Tensor& loss);

enum class EwOp {
  kAdd,
  kSub,
  kMul,
  kDiv,
  kTanh,
  kSigmoid,
  kClip01,
  kAbs,
  kSquare,
  kReciprocal,
  kMax
};

// Dispatcher over the fixed elementwise set. Binary kinds accept equal shapes
// or a scalar (1-element) operand on either side; no general broadcasting.
Tensor elementwise(EwOp op, const Tensor& a);
Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// clip to [0,1]; gradient is 1 inside [0,1] (boundary included) and 0 outside.
Tensor clip01(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor elu(const Tensor& a);
// scale * x + shift
Tensor affine(const Tensor& x, double scale, double shift);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// [C,H,W] -> [1,H,W], max over channels; subgradient goes to the first
// channel attaining the max.
Tensor channel_max(const Tensor& a);
// Concatenates along the channel axis (axis 0 for rank 3, axis 1 for rank 4).
Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& a, const Shape& shape);

// x [N,C,H,W], weight [F,C,k,k], optional bias [F] (pass a default-constructed
// Tensor for none). Output spatial size floor((H + 2 pad - k)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int64_t stride, int64_t pad);
Tensor upsample_nearest2(const Tensor& x);

struct BilinearSample {
  Tensor value;    // same channel count as img, spatial size of coords
  Tensor in_view;  // [1,H',W'] 1.0 where the coordinate was inside img
};
// img [C,H,W], coords [2,H',W'] (x then y, pixel units). Out-of-view samples
// are 0 and masked; gradients flow to both img and coords.
BilinearSample bilinear_sample(const Tensor& img, const Tensor& coords);

struct AdamState {
  int64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

// Standard Adam with bias correction, applied in place. Every param must
// carry a gradient (ContractError otherwise).
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Binary tensor dump: magic "DHTN", u32 rank, u64 extents, raw float64 data,
// all little-endian.
void save_tensor(std::ostream& out, const Tensor& t);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(std::istream& in);
Tensor load_tensor(const std::string& path);

}  // namespace dh
