#pragma once

#include <string>
#include <vector>

#include "dh/tensor.hpp"

namespace dh {

// Small convolutional encoder-decoder depth estimator. Three stride-2 ELU
// encoder convs (3->8->16->32), nearest-neighbor upsampling decoder with skip
// connections, and a sigmoid disparity head mapped to depth via
//   depth = 1 / (1/max_depth + (1/min_depth - 1/max_depth) * sigma),
// so predictions always lie in (min_depth, max_depth).
class DepthNet {
 public:
  static DepthNet create(uint64_t seed, double min_depth = 0.1,
                         double max_depth = 100.0);

  // img [3,H,W] with H, W divisible by 8; returns depth [1,H,W]. Records on
  // the active tape when parameters are trainable.
  Tensor forward(const Tensor& img) const;
  // Raw sigmoid disparity head output, [1,H,W] in (0,1).
  Tensor forward_disparity(const Tensor& img) const;

  std::vector<Tensor> parameters();
  std::vector<Tensor> parameters() const;
  void set_trainable(bool trainable);
  DepthNet clone() const;

  double min_depth() const { return min_depth_; }
  double max_depth() const { return max_depth_; }

  // Checkpoint: magic "DHCK", u32 version, architecture descriptor, then each
  // parameter as a tensor dump. Loading verifies magic, version and shapes.
  void save(const std::string& path) const;
  static DepthNet load(const std::string& path);

 private:
  struct ConvLayer {
    Tensor w, b;
    int64_t stride = 1, pad = 1;
  };
  std::vector<ConvLayer> convs_;
  double min_depth_ = 0.1, max_depth_ = 100.0;
};

}  // namespace dh
