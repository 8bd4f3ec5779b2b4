#include "dh/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dh/kernels.hpp"

namespace dh {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

Tensor Tensor::zeros(const Shape& shape) {
  auto d = std::make_shared<TensorData>();
  d->shape = shape;
  d->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  return Tensor(std::move(d));
}

Tensor Tensor::full(const Shape& shape, double v) {
  Tensor t = zeros(shape);
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw ShapeError("Tensor::from: " + shape_str(shape) + " does not hold " +
                     std::to_string(data.size()) + " elements");
  auto d = std::make_shared<TensorData>();
  d->shape = shape;
  d->value = std::move(data);
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

int64_t Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ContractError("Tensor::dim index out of range");
  return d_->shape[static_cast<size_t>(i)];
}

void Tensor::ensure_grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() requires a scalar tensor");
  return d_->value[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  d_->requires_grad = v;
  return *this;
}

Tensor Tensor::clone() const {
  auto d = std::make_shared<TensorData>();
  d->shape = d_->shape;
  d->value = d_->value;
  return Tensor(std::move(d));
}

Tensor Tensor::detached() const { return clone(); }

namespace {

thread_local GradientTape* g_active_tape = nullptr;

inline bool propagates(const std::shared_ptr<TensorData>& d) {
  return d && (d->requires_grad || d->on_tape);
}

inline void ensure_grad(TensorData& d) {
  if (d.grad.empty()) d.grad.assign(d.value.size(), 0.0);
}

inline bool recording(std::initializer_list<const Tensor*> parents) {
  if (!g_active_tape) return false;
  for (const Tensor* p : parents)
    if (p->defined() && propagates(p->node())) return true;
  return false;
}

}  // namespace

void GradientTape::record(std::function<void()> backward_step) {
  nodes_.push_back(std::move(backward_step));
}

void GradientTape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward() requires a scalar loss");
  ensure_grad(*loss.node());
  loss.node()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TapeScope::TapeScope(GradientTape& tape) {
  previous_ = g_active_tape;
  g_active_tape = &tape;
}

TapeScope::~TapeScope() { g_active_tape = previous_; }

GradientTape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss) {
  if (!g_active_tape)
    throw ContractError("backward() called with no active tape");
  g_active_tape->backward(loss);
}

namespace {

Tensor make_output(Shape shape) {
  Tensor out = Tensor::zeros(shape);
  if (g_active_tape) out.node()->on_tape = false;  // set when recorded
  return out;
}

// f(a, b); dfa/dfb receive (a, b, y) and return the local derivative.
using BinFn = double (*)(double, double);
using BinGrad = double (*)(double, double, double);

Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, BinFn f,
                 BinGrad dfa, BinGrad dfb) {
  const bool sa = a.size() == 1, sb = b.size() == 1;
  if (!sa && !sb && a.shape() != b.shape())
    throw ShapeError(std::string(name) + ": shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()) +
                     " are not broadcastable");
  const Tensor& big = sa ? b : a;
  Tensor out = make_output(big.shape());
  const int64_t n = out.size();
  const double* av = a.data();
  const double* bv = b.data();
  double* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= 32768)
  for (int64_t i = 0; i < n; ++i)
    ov[i] = f(av[sa ? 0 : i], bv[sb ? 0 : i]);

  if (recording({&a, &b})) {
    out.node()->on_tape = true;
    auto an = a.node(), bn = b.node(), on = out.node();
    g_active_tape->record([an, bn, on, sa, sb, n, dfa, dfb] {
      if (on->grad.empty()) return;
      const double* go = on->grad.data();
      const double* av = an->value.data();
      const double* bv = bn->value.data();
      const double* yv = on->value.data();
      if (propagates(an)) {
        ensure_grad(*an);
        double* ga = an->grad.data();
        for (int64_t i = 0; i < n; ++i)
          ga[sa ? 0 : i] += go[i] * dfa(av[sa ? 0 : i], bv[sb ? 0 : i], yv[i]);
      }
      if (propagates(bn)) {
        ensure_grad(*bn);
        double* gb = bn->grad.data();
        for (int64_t i = 0; i < n; ++i)
          gb[sb ? 0 : i] += go[i] * dfb(av[sa ? 0 : i], bv[sb ? 0 : i], yv[i]);
      }
    });
  }
  return out;
}

using UnFn = double (*)(double);
using UnGrad = double (*)(double, double);  // (x, y) -> dy/dx

Tensor unary_op(const Tensor& a, UnFn f, UnGrad df) {
  Tensor out = make_output(a.shape());
  const int64_t n = out.size();
  const double* av = a.data();
  double* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= 32768)
  for (int64_t i = 0; i < n; ++i) ov[i] = f(av[i]);

  if (recording({&a})) {
    out.node()->on_tape = true;
    auto an = a.node(), on = out.node();
    g_active_tape->record([an, on, n, df] {
      if (on->grad.empty() || !propagates(an)) return;
      ensure_grad(*an);
      const double* go = on->grad.data();
      const double* av = an->value.data();
      const double* yv = on->value.data();
      double* ga = an->grad.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * df(av[i], yv[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "max", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor clip01(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); },
      [](double x, double) { return (x >= 0.0 && x <= 1.0) ? 1.0 : 0.0; });
}

Tensor abs(const Tensor& a) {
  return unary_op(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Tensor reciprocal(const Tensor& a) {
  return unary_op(
      a, [](double x) { return 1.0 / x; },
      [](double, double y) { return -y * y; });
}

Tensor elu(const Tensor& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Tensor elementwise(EwOp op, const Tensor& a) {
  switch (op) {
    case EwOp::kTanh: return tanh(a);
    case EwOp::kSigmoid: return sigmoid(a);
    case EwOp::kClip01: return clip01(a);
    case EwOp::kAbs: return abs(a);
    case EwOp::kSquare: return square(a);
    case EwOp::kReciprocal: return reciprocal(a);
    default: throw ContractError("elementwise: op requires two operands");
  }
}

Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case EwOp::kAdd: return add(a, b);
    case EwOp::kSub: return sub(a, b);
    case EwOp::kMul: return mul(a, b);
    case EwOp::kDiv: return div(a, b);
    case EwOp::kMax: return maximum(a, b);
    default: throw ContractError("elementwise: op takes a single operand");
  }
}

Tensor affine(const Tensor& x, double scale, double shift) {
  Tensor out = make_output(x.shape());
  const int64_t n = out.size();
  const double* xv = x.data();
  double* ov = out.data();
#pragma omp parallel for schedule(static) if (n >= 32768)
  for (int64_t i = 0; i < n; ++i) ov[i] = scale * xv[i] + shift;
  if (recording({&x})) {
    out.node()->on_tape = true;
    auto xn = x.node(), on = out.node();
    g_active_tape->record([xn, on, n, scale] {
      if (on->grad.empty() || !propagates(xn)) return;
      ensure_grad(*xn);
      const double* go = on->grad.data();
      double* gx = xn->grad.data();
      for (int64_t i = 0; i < n; ++i) gx[i] += scale * go[i];
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  Tensor out = make_output({1});
  out.data()[0] = acc;
  if (recording({&a})) {
    out.node()->on_tape = true;
    auto an = a.node(), on = out.node();
    const int64_t n = a.size();
    g_active_tape->record([an, on, n] {
      if (on->grad.empty() || !propagates(an)) return;
      ensure_grad(*an);
      const double g = on->grad[0];
      double* ga = an->grad.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  return affine(sum_all(a), 1.0 / static_cast<double>(a.size()), 0.0);
}

Tensor channel_max(const Tensor& a) {
  if (a.rank() != 3) throw ShapeError("channel_max expects [C,H,W]");
  const int64_t c = a.dim(0), np = a.dim(1) * a.dim(2);
  Tensor out = make_output({1, a.dim(1), a.dim(2)});
  std::vector<int32_t> arg(static_cast<size_t>(np), 0);
  const double* av = a.data();
  double* ov = out.data();
  for (int64_t p = 0; p < np; ++p) {
    double best = av[p];
    int32_t bi = 0;
    for (int64_t ch = 1; ch < c; ++ch) {
      const double v = av[ch * np + p];
      if (v > best) {
        best = v;
        bi = static_cast<int32_t>(ch);
      }
    }
    ov[p] = best;
    arg[static_cast<size_t>(p)] = bi;
  }
  if (recording({&a})) {
    out.node()->on_tape = true;
    auto an = a.node(), on = out.node();
    g_active_tape->record([an, on, np, arg = std::move(arg)] {
      if (on->grad.empty() || !propagates(an)) return;
      ensure_grad(*an);
      const double* go = on->grad.data();
      double* ga = an->grad.data();
      for (int64_t p = 0; p < np; ++p)
        ga[arg[static_cast<size_t>(p)] * np + p] += go[p];
    });
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const int r = parts[0].rank();
  if (r != 3 && r != 4)
    throw ShapeError("concat_channels expects rank 3 or 4 tensors");
  const int axis = r - 3;
  int64_t total_c = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != r) throw ShapeError("concat_channels: mixed ranks");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != parts[0].dim(i))
        throw ShapeError("concat_channels: non-channel extents differ");
    total_c += p.dim(axis);
  }
  Shape os = parts[0].shape();
  os[static_cast<size_t>(axis)] = total_c;
  Tensor out = make_output(os);

  const int64_t batch = (r == 4) ? parts[0].dim(0) : 1;
  const int64_t plane = parts[0].dim(r - 2) * parts[0].dim(r - 1);
  double* ov = out.data();
  std::vector<int64_t> offsets(parts.size());
  int64_t off = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    offsets[i] = off;
    const int64_t pc = parts[i].dim(axis);
    const double* pv = parts[i].data();
    for (int64_t b = 0; b < batch; ++b)
      std::copy(pv + b * pc * plane, pv + (b + 1) * pc * plane,
                ov + (b * total_c + off) * plane);
    off += pc;
  }

  bool rec = false;
  for (const Tensor& p : parts)
    if (g_active_tape && propagates(p.node())) rec = true;
  if (rec) {
    out.node()->on_tape = true;
    std::vector<std::shared_ptr<TensorData>> pn;
    for (const Tensor& p : parts) pn.push_back(p.node());
    auto on = out.node();
    g_active_tape->record(
        [pn = std::move(pn), offsets = std::move(offsets), on, batch, plane,
         total_c, axis] {
          if (on->grad.empty()) return;
          const double* go = on->grad.data();
          for (size_t i = 0; i < pn.size(); ++i) {
            if (!propagates(pn[i])) continue;
            ensure_grad(*pn[i]);
            const int64_t pc = pn[i]->shape[static_cast<size_t>(axis)];
            double* gp = pn[i]->grad.data();
            for (int64_t b = 0; b < batch; ++b) {
              const double* src = go + (b * total_c + offsets[i]) * plane;
              double* dst = gp + b * pc * plane;
              for (int64_t j = 0; j < pc * plane; ++j) dst[j] += src[j];
            }
          }
        });
  }
  return out;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: element count mismatch " +
                     shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out = make_output(shape);
  std::copy(a.data(), a.data() + a.size(), out.data());
  if (recording({&a})) {
    out.node()->on_tape = true;
    auto an = a.node(), on = out.node();
    const int64_t n = a.size();
    g_active_tape->record([an, on, n] {
      if (on->grad.empty() || !propagates(an)) return;
      ensure_grad(*an);
      const double* go = on->grad.data();
      double* ga = an->grad.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int64_t stride, int64_t pad) {
  const kernels::ConvDims d =
      kernels::conv_dims(x.shape(), weight.shape(), stride, pad);
  if (bias.defined() && bias.size() != d.cout)
    throw ShapeError("conv2d bias must have one entry per output channel");
  Tensor out = make_output({d.n, d.cout, d.oh, d.ow});
  kernels::conv2d_forward(d, x.data(), weight.data(),
                          bias.defined() ? bias.data() : nullptr, out.data());
  const Tensor bias_or_empty = bias;
  if (recording({&x, &weight, &bias_or_empty})) {
    out.node()->on_tape = true;
    auto xn = x.node(), wn = weight.node(), on = out.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    g_active_tape->record([xn, wn, bn, on, d] {
      if (on->grad.empty()) return;
      const double* go = on->grad.data();
      if (propagates(xn)) {
        ensure_grad(*xn);
        kernels::conv2d_grad_input(d, go, wn->value.data(), xn->grad.data());
      }
      if (propagates(wn)) {
        ensure_grad(*wn);
        kernels::conv2d_grad_weight(d, go, xn->value.data(), wn->grad.data());
      }
      if (bn && propagates(bn)) {
        ensure_grad(*bn);
        kernels::conv2d_grad_bias(d, go, bn->grad.data());
      }
    });
  }
  return out;
}

Tensor upsample_nearest2(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("upsample_nearest2 expects [N,C,H,W]");
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = make_output({n, c, 2 * h, 2 * w});
  const double* xv = x.data();
  double* ov = out.data();
  const int64_t planes = n * c;
#pragma omp parallel for schedule(static) if (planes >= 4)
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* src = xv + pl * h * w;
    double* dst = ov + pl * 4 * h * w;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const double v = src[i * w + j];
        dst[(2 * i) * 2 * w + 2 * j] = v;
        dst[(2 * i) * 2 * w + 2 * j + 1] = v;
        dst[(2 * i + 1) * 2 * w + 2 * j] = v;
        dst[(2 * i + 1) * 2 * w + 2 * j + 1] = v;
      }
  }
  if (recording({&x})) {
    out.node()->on_tape = true;
    auto xn = x.node(), on = out.node();
    g_active_tape->record([xn, on, planes, h, w] {
      if (on->grad.empty() || !propagates(xn)) return;
      ensure_grad(*xn);
      const double* go = on->grad.data();
      double* gx = xn->grad.data();
      for (int64_t pl = 0; pl < planes; ++pl) {
        const double* src = go + pl * 4 * h * w;
        double* dst = gx + pl * h * w;
        for (int64_t i = 0; i < h; ++i)
          for (int64_t j = 0; j < w; ++j)
            dst[i * w + j] += src[(2 * i) * 2 * w + 2 * j] +
                              src[(2 * i) * 2 * w + 2 * j + 1] +
                              src[(2 * i + 1) * 2 * w + 2 * j] +
                              src[(2 * i + 1) * 2 * w + 2 * j + 1];
      }
    });
  }
  return out;
}

BilinearSample bilinear_sample(const Tensor& img, const Tensor& coords) {
  if (img.rank() != 3) throw ShapeError("bilinear_sample expects img [C,H,W]");
  if (coords.rank() != 3 || coords.dim(0) != 2)
    throw ShapeError("bilinear_sample expects coords [2,H',W']");
  const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int64_t oh = coords.dim(1), ow = coords.dim(2);
  Tensor value = make_output({c, oh, ow});
  Tensor in_view = Tensor::zeros({1, oh, ow});
  kernels::bilinear_forward(c, h, w, img.data(), oh, ow, coords.data(),
                            value.data(), in_view.data());
  if (recording({&img, &coords})) {
    value.node()->on_tape = true;
    auto in = img.node(), cn = coords.node(), on = value.node();
    g_active_tape->record([in, cn, on, c, h, w, oh, ow] {
      if (on->grad.empty()) return;
      const double* go = on->grad.data();
      if (propagates(in)) {
        ensure_grad(*in);
        kernels::bilinear_grad_image(c, h, w, oh, ow, cn->value.data(), go,
                                     in->grad.data());
      }
      if (propagates(cn)) {
        ensure_grad(*cn);
        kernels::bilinear_grad_coords(c, h, w, in->value.data(), oh, ow,
                                      cn->value.data(), go, cn->grad.data());
      }
    });
  }
  return {value, in_view};
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<size_t>(params[i].size()), 0.0);
      state.v[i].assign(static_cast<size_t>(params[i].size()), 0.0);
    }
  }
  if (state.m.size() != params.size())
    throw ContractError("adam_step: state does not match parameter list");
  for (const Tensor& p : params)
    if (!p.has_grad())
      throw ContractError("adam_step: parameter has no gradient");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].data();
    const double* g = params[i].grad_data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const int64_t n = params[i].size();
    for (int64_t j = 0; j < n; ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace dh
