#include "dh/depth_net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "dh/rng.hpp"

namespace dh {

namespace {

struct LayerSpec {
  int64_t cin, cout, stride;
};

// enc1..enc3, dec2 (up3+skip2), dec1 (up2+skip1), dec0, head
constexpr LayerSpec kArch[] = {{3, 8, 2},  {8, 16, 2}, {16, 32, 2},
                               {48, 16, 1}, {24, 8, 1}, {8, 8, 1},
                               {8, 1, 1}};
constexpr size_t kNumConvs = sizeof(kArch) / sizeof(kArch[0]);
constexpr int64_t kKernel = 3;
constexpr uint32_t kCheckpointVersion = 1;

// Head bias targets the geometric mean of the depth range, keeping initial
// predictions far enough that reconstruction warps start inside the frame.
double head_bias_init(double min_depth, double max_depth) {
  const double depth0 = std::sqrt(min_depth * max_depth);
  const double sigma =
      (1.0 / depth0 - 1.0 / max_depth) / (1.0 / min_depth - 1.0 / max_depth);
  return std::log(sigma / (1.0 - sigma));
}

}  // namespace

DepthNet DepthNet::create(uint64_t seed, double min_depth, double max_depth) {
  if (!(min_depth > 0.0) || !(max_depth > min_depth))
    throw ContractError("DepthNet: need 0 < min_depth < max_depth");
  DepthNet net;
  net.min_depth_ = min_depth;
  net.max_depth_ = max_depth;
  Rng rng(Rng::mix(seed, 0xdee9));
  for (size_t i = 0; i < kNumConvs; ++i) {
    const LayerSpec& s = kArch[i];
    ConvLayer layer;
    layer.stride = s.stride;
    layer.pad = 1;
    const double fan_in = static_cast<double>(s.cin * kKernel * kKernel);
    const double bound = std::sqrt(6.0 / fan_in);
    layer.w = Tensor::zeros({s.cout, s.cin, kKernel, kKernel});
    for (int64_t k = 0; k < layer.w.size(); ++k)
      layer.w.data()[k] = rng.uniform(-bound, bound);
    layer.b = Tensor::zeros({s.cout});
    if (i == kNumConvs - 1)
      layer.b.data()[0] = head_bias_init(min_depth, max_depth);
    net.convs_.push_back(std::move(layer));
  }
  return net;
}

Tensor DepthNet::forward_disparity(const Tensor& img) const {
  if (img.rank() != 3 || img.dim(0) != 3)
    throw ShapeError("DepthNet::forward expects [3,H,W]");
  const int64_t H = img.dim(1), W = img.dim(2);
  if (H % 8 != 0 || W % 8 != 0)
    throw ShapeError("DepthNet::forward needs H and W divisible by 8");
  const auto& c = convs_;
  const Tensor x = reshape(img, {1, 3, H, W});
  const Tensor e1 = elu(conv2d(x, c[0].w, c[0].b, c[0].stride, c[0].pad));
  const Tensor e2 = elu(conv2d(e1, c[1].w, c[1].b, c[1].stride, c[1].pad));
  const Tensor e3 = elu(conv2d(e2, c[2].w, c[2].b, c[2].stride, c[2].pad));
  const Tensor d2 = elu(conv2d(concat_channels({upsample_nearest2(e3), e2}),
                               c[3].w, c[3].b, 1, 1));
  const Tensor d1 = elu(conv2d(concat_channels({upsample_nearest2(d2), e1}),
                               c[4].w, c[4].b, 1, 1));
  const Tensor d0 = elu(conv2d(upsample_nearest2(d1), c[5].w, c[5].b, 1, 1));
  const Tensor sig = sigmoid(conv2d(d0, c[6].w, c[6].b, 1, 1));
  return reshape(sig, {1, H, W});
}

Tensor DepthNet::forward(const Tensor& img) const {
  const Tensor sigma = forward_disparity(img);
  const double inv_max = 1.0 / max_depth_;
  const double inv_min = 1.0 / min_depth_;
  return reciprocal(affine(sigma, inv_min - inv_max, inv_max));
}

std::vector<Tensor> DepthNet::parameters() {
  std::vector<Tensor> out;
  for (ConvLayer& l : convs_) {
    out.push_back(l.w);
    out.push_back(l.b);
  }
  return out;
}

std::vector<Tensor> DepthNet::parameters() const {
  return const_cast<DepthNet*>(this)->parameters();
}

void DepthNet::set_trainable(bool trainable) {
  for (ConvLayer& l : convs_) {
    l.w.set_requires_grad(trainable);
    l.b.set_requires_grad(trainable);
  }
}

DepthNet DepthNet::clone() const {
  DepthNet net;
  net.min_depth_ = min_depth_;
  net.max_depth_ = max_depth_;
  for (const ConvLayer& l : convs_)
    net.convs_.push_back({l.w.clone(), l.b.clone(), l.stride, l.pad});
  return net;
}

void DepthNet::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open for writing: " + path);
  f.write("DHCK", 4);
  const uint32_t version = kCheckpointVersion;
  f.write(reinterpret_cast<const char*>(&version), 4);
  const uint32_t n = static_cast<uint32_t>(convs_.size());
  f.write(reinterpret_cast<const char*>(&n), 4);
  for (const ConvLayer& l : convs_) {
    const uint32_t desc[4] = {static_cast<uint32_t>(l.w.dim(1)),
                              static_cast<uint32_t>(l.w.dim(0)),
                              static_cast<uint32_t>(l.stride),
                              static_cast<uint32_t>(l.pad)};
    f.write(reinterpret_cast<const char*>(desc), sizeof(desc));
  }
  f.write(reinterpret_cast<const char*>(&min_depth_), 8);
  f.write(reinterpret_cast<const char*>(&max_depth_), 8);
  for (const ConvLayer& l : convs_) {
    save_tensor(f, l.w);
    save_tensor(f, l.b);
  }
  if (!f) throw FormatError("checkpoint write failed: " + path);
}

DepthNet DepthNet::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "DHCK", 4) != 0)
    throw FormatError("bad checkpoint magic in " + path);
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (!f) throw FormatError("checkpoint truncated: " + path);
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) +
                       " unsupported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  if (!f || n != kNumConvs)
    throw FormatError("checkpoint architecture mismatch in " + path);
  for (size_t i = 0; i < kNumConvs; ++i) {
    uint32_t desc[4];
    f.read(reinterpret_cast<char*>(desc), sizeof(desc));
    if (!f || desc[0] != static_cast<uint32_t>(kArch[i].cin) ||
        desc[1] != static_cast<uint32_t>(kArch[i].cout) ||
        desc[2] != static_cast<uint32_t>(kArch[i].stride) || desc[3] != 1)
      throw FormatError("checkpoint architecture mismatch in " + path);
  }
  DepthNet net;
  f.read(reinterpret_cast<char*>(&net.min_depth_), 8);
  f.read(reinterpret_cast<char*>(&net.max_depth_), 8);
  if (!f) throw FormatError("checkpoint truncated: " + path);
  for (size_t i = 0; i < kNumConvs; ++i) {
    ConvLayer l;
    l.stride = kArch[i].stride;
    l.pad = 1;
    l.w = load_tensor(f);
    l.b = load_tensor(f);
    if (l.w.shape() != Shape{kArch[i].cout, kArch[i].cin, kKernel, kKernel} ||
        l.b.shape() != Shape{kArch[i].cout})
      throw FormatError("checkpoint parameter shape mismatch in " + path);
    net.convs_.push_back(std::move(l));
  }
  return net;
}

}  // namespace dh
