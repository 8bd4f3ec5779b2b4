#pragma once

#include <cstdint>
#include <vector>

#include "dh/errors.hpp"

namespace dh::kernels {

// Hot inner loops of the engine. The functions in this namespace are
// OpenMP-parallel; every parallel loop writes disjoint output elements with a
// fixed per-element summation order, so results are bitwise identical to the
// serial reference for any thread count. dh::kernels::ref holds plain serial
// implementations (with independently structured loops where that makes them
// a stronger oracle); tests compare the two and tools/bench_kernels times them.

struct ConvDims {
  int64_t n = 0, cin = 0, h = 0, w = 0;   // input  [n, cin, h, w]
  int64_t cout = 0, k = 0;                // weight [cout, cin, k, k]
  int64_t stride = 1, pad = 0;
  int64_t oh = 0, ow = 0;                 // output [n, cout, oh, ow]
};

// Validates shapes and computes output extents. Throws ShapeError on channel
// mismatch, ContractError on even kernel size or bad stride/pad.
ConvDims conv_dims(const std::vector<int64_t>& x_shape,
                   const std::vector<int64_t>& w_shape, int64_t stride,
                   int64_t pad);

void conv2d_forward(const ConvDims& d, const double* x, const double* w,
                    const double* bias, double* y);
// Gradient kernels accumulate (+=) into their output buffers.
void conv2d_grad_input(const ConvDims& d, const double* gy, const double* w,
                       double* gx);
void conv2d_grad_weight(const ConvDims& d, const double* gy, const double* x,
                        double* gw);
void conv2d_grad_bias(const ConvDims& d, const double* gy, double* gb);

// img [c, h, w], coords [2, oh, ow] with channel 0 = x (column) and channel
// 1 = y (row) in pixel units of img. A coordinate is in view iff it lies in
// [0, w-1] x [0, h-1]; out-of-view outputs are 0 with in_view = 0.
void bilinear_forward(int64_t c, int64_t h, int64_t w, const double* img,
                      int64_t oh, int64_t ow, const double* coords,
                      double* value, double* in_view);
void bilinear_grad_image(int64_t c, int64_t h, int64_t w, int64_t oh,
                         int64_t ow, const double* coords, const double* gval,
                         double* gimg);
void bilinear_grad_coords(int64_t c, int64_t h, int64_t w, const double* img,
                          int64_t oh, int64_t ow, const double* coords,
                          const double* gval, double* gcoords);

namespace ref {

void conv2d_forward(const ConvDims& d, const double* x, const double* w,
                    const double* bias, double* y);
void conv2d_grad_input(const ConvDims& d, const double* gy, const double* w,
                       double* gx);
void conv2d_grad_weight(const ConvDims& d, const double* gy, const double* x,
                        double* gw);
void bilinear_forward(int64_t c, int64_t h, int64_t w, const double* img,
                      int64_t oh, int64_t ow, const double* coords,
                      double* value, double* in_view);

}  // namespace ref

}  // namespace dh::kernels
