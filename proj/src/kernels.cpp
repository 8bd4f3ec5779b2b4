#include "dh/kernels.hpp"

#include <cmath>
#include <string>

namespace dh::kernels {

ConvDims conv_dims(const std::vector<int64_t>& xs,
                   const std::vector<int64_t>& ws, int64_t stride,
                   int64_t pad) {
  if (xs.size() != 4 || ws.size() != 4)
    throw ShapeError("conv2d expects x[N,C,H,W] and w[F,C,k,k]");
  ConvDims d;
  d.n = xs[0];
  d.cin = xs[1];
  d.h = xs[2];
  d.w = xs[3];
  d.cout = ws[0];
  d.k = ws[2];
  if (ws[1] != d.cin)
    throw ShapeError("conv2d channel mismatch: input has " +
                     std::to_string(d.cin) + ", weight expects " +
                     std::to_string(ws[1]));
  if (ws[3] != d.k) throw ContractError("conv2d kernel must be square");
  if (d.k % 2 == 0) throw ContractError("conv2d kernel size must be odd");
  if (stride < 1) throw ContractError("conv2d stride must be >= 1");
  if (pad < 0) throw ContractError("conv2d pad must be >= 0");
  d.stride = stride;
  d.pad = pad;
  d.oh = (d.h + 2 * pad - d.k) / stride + 1;
  d.ow = (d.w + 2 * pad - d.k) / stride + 1;
  if (d.oh < 1 || d.ow < 1) throw ShapeError("conv2d output would be empty");
  return d;
}

void conv2d_forward(const ConvDims& d, const double* x, const double* w,
                    const double* bias, double* y) {
  const int64_t in_im = d.cin * d.h * d.w;
  const int64_t out_im = d.cout * d.oh * d.ow;
#pragma omp parallel for collapse(2) schedule(static) \
    if (d.n * d.cout * d.oh >= 8)
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t f = 0; f < d.cout; ++f) {
      const double* wf = w + f * d.cin * d.k * d.k;
      for (int64_t oh = 0; oh < d.oh; ++oh) {
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          double acc = bias ? bias[f] : 0.0;
          for (int64_t c = 0; c < d.cin; ++c) {
            const double* xc = x + n * in_im + c * d.h * d.w;
            const double* wfc = wf + c * d.k * d.k;
            for (int64_t kh = 0; kh < d.k; ++kh) {
              const int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (int64_t kw = 0; kw < d.k; ++kw) {
                const int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += xc[ih * d.w + iw] * wfc[kh * d.k + kw];
              }
            }
          }
          y[n * out_im + f * d.oh * d.ow + oh * d.ow + ow] = acc;
        }
      }
    }
  }
}

void conv2d_grad_input(const ConvDims& d, const double* gy, const double* w,
                       double* gx) {
  const int64_t in_im = d.cin * d.h * d.w;
  const int64_t out_im = d.cout * d.oh * d.ow;
  // Gather form: each input element sums its contributions, so threads never
  // share an output slot.
#pragma omp parallel for collapse(2) schedule(static) \
    if (d.n * d.cin * d.h >= 8)
  for (int64_t n = 0; n < d.n; ++n) {
    for (int64_t c = 0; c < d.cin; ++c) {
      for (int64_t ih = 0; ih < d.h; ++ih) {
        for (int64_t iw = 0; iw < d.w; ++iw) {
          double acc = 0.0;
          for (int64_t kh = 0; kh < d.k; ++kh) {
            const int64_t th = ih + d.pad - kh;
            if (th < 0 || th % d.stride != 0) continue;
            const int64_t oh = th / d.stride;
            if (oh >= d.oh) continue;
            for (int64_t kw = 0; kw < d.k; ++kw) {
              const int64_t tw = iw + d.pad - kw;
              if (tw < 0 || tw % d.stride != 0) continue;
              const int64_t ow = tw / d.stride;
              if (ow >= d.ow) continue;
              for (int64_t f = 0; f < d.cout; ++f) {
                acc += gy[n * out_im + f * d.oh * d.ow + oh * d.ow + ow] *
                       w[((f * d.cin + c) * d.k + kh) * d.k + kw];
              }
            }
          }
          gx[n * in_im + c * d.h * d.w + ih * d.w + iw] += acc;
        }
      }
    }
  }
}

void conv2d_grad_weight(const ConvDims& d, const double* gy, const double* x,
                        double* gw) {
  const int64_t in_im = d.cin * d.h * d.w;
  const int64_t out_im = d.cout * d.oh * d.ow;
#pragma omp parallel for collapse(2) schedule(static) if (d.cout * d.cin >= 4)
  for (int64_t f = 0; f < d.cout; ++f) {
    for (int64_t c = 0; c < d.cin; ++c) {
      for (int64_t kh = 0; kh < d.k; ++kh) {
        for (int64_t kw = 0; kw < d.k; ++kw) {
          double acc = 0.0;
          for (int64_t n = 0; n < d.n; ++n) {
            const double* gyn = gy + n * out_im + f * d.oh * d.ow;
            const double* xc = x + n * in_im + c * d.h * d.w;
            for (int64_t oh = 0; oh < d.oh; ++oh) {
              const int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (int64_t ow = 0; ow < d.ow; ++ow) {
                const int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += gyn[oh * d.ow + ow] * xc[ih * d.w + iw];
              }
            }
          }
          gw[((f * d.cin + c) * d.k + kh) * d.k + kw] += acc;
        }
      }
    }
  }
}

void conv2d_grad_bias(const ConvDims& d, const double* gy, double* gb) {
  const int64_t out_im = d.cout * d.oh * d.ow;
  for (int64_t f = 0; f < d.cout; ++f) {
    double acc = 0.0;
    for (int64_t n = 0; n < d.n; ++n) {
      const double* gyn = gy + n * out_im + f * d.oh * d.ow;
      for (int64_t p = 0; p < d.oh * d.ow; ++p) acc += gyn[p];
    }
    gb[f] += acc;
  }
}

namespace {

struct Corner {
  int64_t x0, y0, x1, y1;
  double fx, fy;
  bool in;
};

inline Corner locate(double cx, double cy, int64_t h, int64_t w) {
  Corner r{};
  r.in = cx >= 0.0 && cx <= static_cast<double>(w - 1) && cy >= 0.0 &&
         cy <= static_cast<double>(h - 1);
  if (!r.in) return r;
  r.x0 = static_cast<int64_t>(std::floor(cx));
  r.y0 = static_cast<int64_t>(std::floor(cy));
  if (r.x0 > w - 2) r.x0 = w - 2;
  if (r.y0 > h - 2) r.y0 = h - 2;
  if (r.x0 < 0) r.x0 = 0;
  if (r.y0 < 0) r.y0 = 0;
  r.x1 = r.x0 + 1;
  r.y1 = r.y0 + 1;
  if (w == 1) r.x1 = r.x0;  // degenerate single-column image
  if (h == 1) r.y1 = r.y0;
  r.fx = cx - static_cast<double>(r.x0);
  r.fy = cy - static_cast<double>(r.y0);
  return r;
}

}  // namespace

void bilinear_forward(int64_t c, int64_t h, int64_t w, const double* img,
                      int64_t oh, int64_t ow, const double* coords,
                      double* value, double* in_view) {
  const int64_t np = oh * ow;
#pragma omp parallel for schedule(static) if (np >= 4096)
  for (int64_t p = 0; p < np; ++p) {
    const Corner r = locate(coords[p], coords[np + p], h, w);
    in_view[p] = r.in ? 1.0 : 0.0;
    if (!r.in) {
      for (int64_t ch = 0; ch < c; ++ch) value[ch * np + p] = 0.0;
      continue;
    }
    const double w00 = (1.0 - r.fx) * (1.0 - r.fy);
    const double w10 = r.fx * (1.0 - r.fy);
    const double w01 = (1.0 - r.fx) * r.fy;
    const double w11 = r.fx * r.fy;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* im = img + ch * h * w;
      value[ch * np + p] = w00 * im[r.y0 * w + r.x0] +
                           w10 * im[r.y0 * w + r.x1] +
                           w01 * im[r.y1 * w + r.x0] +
                           w11 * im[r.y1 * w + r.x1];
    }
  }
}

void bilinear_grad_image(int64_t c, int64_t h, int64_t w, int64_t oh,
                         int64_t ow, const double* coords, const double* gval,
                         double* gimg) {
  const int64_t np = oh * ow;
  // Scatter into the image; parallel over channels keeps accumulation order
  // within a channel identical to the serial pass.
#pragma omp parallel for schedule(static) if (c > 1)
  for (int64_t ch = 0; ch < c; ++ch) {
    double* gi = gimg + ch * h * w;
    const double* gv = gval + ch * np;
    for (int64_t p = 0; p < np; ++p) {
      const Corner r = locate(coords[p], coords[np + p], h, w);
      if (!r.in) continue;
      const double g = gv[p];
      gi[r.y0 * w + r.x0] += g * (1.0 - r.fx) * (1.0 - r.fy);
      gi[r.y0 * w + r.x1] += g * r.fx * (1.0 - r.fy);
      gi[r.y1 * w + r.x0] += g * (1.0 - r.fx) * r.fy;
      gi[r.y1 * w + r.x1] += g * r.fx * r.fy;
    }
  }
}

void bilinear_grad_coords(int64_t c, int64_t h, int64_t w, const double* img,
                          int64_t oh, int64_t ow, const double* coords,
                          const double* gval, double* gcoords) {
  const int64_t np = oh * ow;
#pragma omp parallel for schedule(static) if (np >= 4096)
  for (int64_t p = 0; p < np; ++p) {
    const Corner r = locate(coords[p], coords[np + p], h, w);
    if (!r.in) continue;
    double gx = 0.0, gy = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* im = img + ch * h * w;
      const double v00 = im[r.y0 * w + r.x0];
      const double v10 = im[r.y0 * w + r.x1];
      const double v01 = im[r.y1 * w + r.x0];
      const double v11 = im[r.y1 * w + r.x1];
      const double g = gval[ch * np + p];
      gx += g * ((v10 - v00) * (1.0 - r.fy) + (v11 - v01) * r.fy);
      gy += g * ((v01 - v00) * (1.0 - r.fx) + (v11 - v10) * r.fx);
    }
    gcoords[p] += gx;
    gcoords[np + p] += gy;
  }
}

namespace ref {

void conv2d_forward(const ConvDims& d, const double* x, const double* w,
                    const double* bias, double* y) {
  const int64_t in_im = d.cin * d.h * d.w;
  const int64_t out_im = d.cout * d.oh * d.ow;
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t f = 0; f < d.cout; ++f)
      for (int64_t oh = 0; oh < d.oh; ++oh)
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          double acc = bias ? bias[f] : 0.0;
          for (int64_t c = 0; c < d.cin; ++c)
            for (int64_t kh = 0; kh < d.k; ++kh)
              for (int64_t kw = 0; kw < d.k; ++kw) {
                const int64_t ih = oh * d.stride - d.pad + kh;
                const int64_t iw = ow * d.stride - d.pad + kw;
                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                acc += x[n * in_im + c * d.h * d.w + ih * d.w + iw] *
                       w[((f * d.cin + c) * d.k + kh) * d.k + kw];
              }
          y[n * out_im + f * d.oh * d.ow + oh * d.ow + ow] = acc;
        }
}

// Scatter-style gradients: a different loop structure than the parallel
// gather kernels, which makes agreement between the two a real check.
void conv2d_grad_input(const ConvDims& d, const double* gy, const double* w,
                       double* gx) {
  const int64_t in_im = d.cin * d.h * d.w;
  const int64_t out_im = d.cout * d.oh * d.ow;
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t f = 0; f < d.cout; ++f)
      for (int64_t oh = 0; oh < d.oh; ++oh)
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          const double g = gy[n * out_im + f * d.oh * d.ow + oh * d.ow + ow];
          for (int64_t c = 0; c < d.cin; ++c)
            for (int64_t kh = 0; kh < d.k; ++kh)
              for (int64_t kw = 0; kw < d.k; ++kw) {
                const int64_t ih = oh * d.stride - d.pad + kh;
                const int64_t iw = ow * d.stride - d.pad + kw;
                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                gx[n * in_im + c * d.h * d.w + ih * d.w + iw] +=
                    g * w[((f * d.cin + c) * d.k + kh) * d.k + kw];
              }
        }
}

void conv2d_grad_weight(const ConvDims& d, const double* gy, const double* x,
                        double* gw) {
  const int64_t in_im = d.cin * d.h * d.w;
  const int64_t out_im = d.cout * d.oh * d.ow;
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t f = 0; f < d.cout; ++f)
      for (int64_t oh = 0; oh < d.oh; ++oh)
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          const double g = gy[n * out_im + f * d.oh * d.ow + oh * d.ow + ow];
          for (int64_t c = 0; c < d.cin; ++c)
            for (int64_t kh = 0; kh < d.k; ++kh)
              for (int64_t kw = 0; kw < d.k; ++kw) {
                const int64_t ih = oh * d.stride - d.pad + kh;
                const int64_t iw = ow * d.stride - d.pad + kw;
                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                gw[((f * d.cin + c) * d.k + kh) * d.k + kw] +=
                    g * x[n * in_im + c * d.h * d.w + ih * d.w + iw];
              }
        }
}

void bilinear_forward(int64_t c, int64_t h, int64_t w, const double* img,
                      int64_t oh, int64_t ow, const double* coords,
                      double* value, double* in_view) {
  const int64_t np = oh * ow;
  for (int64_t p = 0; p < np; ++p) {
    const Corner r = locate(coords[p], coords[np + p], h, w);
    in_view[p] = r.in ? 1.0 : 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      if (!r.in) {
        value[ch * np + p] = 0.0;
        continue;
      }
      const double* im = img + ch * h * w;
      const double top = im[r.y0 * w + r.x0] * (1.0 - r.fx) +
                         im[r.y0 * w + r.x1] * r.fx;
      const double bot = im[r.y1 * w + r.x0] * (1.0 - r.fx) +
                         im[r.y1 * w + r.x1] * r.fx;
      value[ch * np + p] = top * (1.0 - r.fy) + bot * r.fy;
    }
  }
}

}  // namespace ref

}  // namespace dh::kernels
