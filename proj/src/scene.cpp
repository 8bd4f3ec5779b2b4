#include "dh/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "dh/image_io.hpp"
#include "dh/kernels.hpp"

namespace dh {

namespace {

constexpr double kOffBoard = -1.0e6;

inline double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace

void ObjectBoard::validate() const {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != 3)
    throw ConfigError("board.image must be [3,h,w]");
  if (!mask.defined() || mask.rank() != 3 || mask.dim(0) != 1 ||
      mask.dim(1) != image.dim(1) || mask.dim(2) != image.dim(2))
    throw ConfigError("board.mask must be [1,h,w] matching the image");
  if (physical_w <= 0.0 || physical_h <= 0.0)
    throw ConfigError("board.physical_w/physical_h must be positive");
  for (int64_t i = 0; i < image.size(); ++i) {
    const double v = image.data()[i];
    if (v < 0.0 || v > 1.0)
      throw ConfigError("board.image values must lie in [0,1]");
  }
  for (int64_t i = 0; i < mask.size(); ++i) {
    const double v = mask.data()[i];
    if (v != 0.0 && v != 1.0)
      throw ConfigError("board.mask must be binary");
  }
  const double ratio = (static_cast<double>(pixel_w()) / physical_w) /
                       (static_cast<double>(pixel_h()) / physical_h);
  if (std::fabs(ratio - 1.0) > 0.01)
    throw ConfigError("board pixel and physical aspect ratios disagree");
}

void BackgroundPair::validate() const {
  if (!frame_t.defined() || !frame_s.defined() ||
      frame_t.shape() != frame_s.shape())
    throw ConfigError("background frames must share a shape");
  pose.validate();
}

void PlacementSampler::validate() const {
  if (!(z_min > 0.0) || z_min > z_max)
    throw ConfigError("sampler.z range must satisfy 0 < z_min <= z_max");
  if (alpha_min > alpha_max)
    throw ConfigError("sampler.alpha range must satisfy alpha_min <= alpha_max");
  if (std::fabs(alpha_min) >= M_PI / 2 || std::fabs(alpha_max) >= M_PI / 2)
    throw ConfigError("sampler.alpha range must stay within (-90, 90) degrees");
}

SceneDraw sample_scene(const PlacementSampler& sampler, int64_t n_boards,
                       int64_t n_backgrounds, Rng& rng) {
  if (n_boards < 1) throw ConfigError("board pool is empty");
  if (n_backgrounds < 1) throw ConfigError("background pool is empty");
  SceneDraw d;
  d.bg_index = rng.uniform_int(n_backgrounds);
  d.board_index = rng.uniform_int(n_boards);
  d.z_c = rng.uniform(sampler.z_min, sampler.z_max);
  d.alpha = rng.uniform(sampler.alpha_min, sampler.alpha_max);
  return d;
}

StampPlan plan_stamp(const ObjectBoard& board, const BoardPlacement& place,
                     const CameraIntrinsics& K, const PoseTransform& view_pose,
                     int64_t frame_h, int64_t frame_w) {
  const int64_t bw = place.board_w, bh = place.board_h;
  const double W = place.physical_w, H = place.physical_h;
  const double ca = std::cos(place.alpha), sa = std::sin(place.alpha);

  // Board plane in the view frame: P(x, y) = p0 + x*ex + y*ey, (x, y) meters
  // from the board center.
  const Vec3 p0 = transform_point(view_pose, {0.0, 0.0, place.z_c});
  const auto& r = view_pose.rotation;
  const Vec3 ex{r[0] * ca + r[2] * sa, r[3] * ca + r[5] * sa,
                r[6] * ca + r[8] * sa};
  const Vec3 ey{r[1], r[4], r[7]};

  StampPlan plan;
  plan.coords = Tensor::full({2, frame_h, frame_w}, kOffBoard);
  plan.region = Tensor::zeros({1, frame_h, frame_w});
  plan.board_depth = Tensor::zeros({1, frame_h, frame_w});
  double* cx_out = plan.coords.data();
  double* cy_out = plan.coords.data() + frame_h * frame_w;
  double* region = plan.region.data();
  double* depth = plan.board_depth.data();
  const double* mask = board.mask.data();

  int64_t hits = 0;
  for (int64_t v = 0; v < frame_h; ++v) {
    for (int64_t u = 0; u < frame_w; ++u) {
      // Ray-plane intersection: [d | -ex | -ey] (lambda, x, y)^T = p0.
      const double dx = (static_cast<double>(u) - K.cx) / K.fx;
      const double dy = (static_cast<double>(v) - K.cy) / K.fy;
      const double a00 = dx, a01 = -ex.x, a02 = -ey.x;
      const double a10 = dy, a11 = -ex.y, a12 = -ey.y;
      const double a20 = 1.0, a21 = -ex.z, a22 = -ey.z;
      const double det = a00 * (a11 * a22 - a12 * a21) -
                         a01 * (a10 * a22 - a12 * a20) +
                         a02 * (a10 * a21 - a11 * a20);
      if (std::fabs(det) < 1e-12) continue;
      const double b0 = p0.x, b1 = p0.y, b2 = p0.z;
      const double lambda = (b0 * (a11 * a22 - a12 * a21) -
                             a01 * (b1 * a22 - a12 * b2) +
                             a02 * (b1 * a21 - a11 * b2)) /
                            det;
      if (lambda <= 0.0) continue;
      const double bx = (a00 * (b1 * a22 - a12 * b2) -
                         b0 * (a10 * a22 - a12 * a20) +
                         a02 * (a10 * b2 - b1 * a20)) /
                        det;
      const double by = (a00 * (a11 * b2 - b1 * a21) -
                         a01 * (a10 * b2 - b1 * a20) +
                         b0 * (a10 * a21 - a11 * a20)) /
                        det;
      const double ua = (bx + W / 2.0) * static_cast<double>(bw) / W;
      const double va = (by + H / 2.0) * static_cast<double>(bh) / H;
      if (ua < 0.0 || ua >= static_cast<double>(bw) || va < 0.0 ||
          va >= static_cast<double>(bh))
        continue;
      const int64_t iu = static_cast<int64_t>(ua);
      const int64_t iv = static_cast<int64_t>(va);
      if (mask[iv * bw + iu] < 0.5) continue;
      const int64_t p = v * frame_w + u;
      // Texel centers sit at integer sampler coordinates; board coordinates
      // are edge-based, hence the half-texel shift.
      cx_out[p] = clampd(ua - 0.5, 0.0, static_cast<double>(bw - 1));
      cy_out[p] = clampd(va - 0.5, 0.0, static_cast<double>(bh - 1));
      region[p] = 1.0;
      depth[p] = lambda;
      ++hits;
    }
  }
  if (hits == 0)
    throw EmptyRegionError("projected board covers no frame pixel");
  plan.pixels = hits;
  return plan;
}

Tensor apply_stamp(const StampPlan& plan, const Tensor& board_image,
                   const Tensor& frame) {
  const Tensor sampled = bilinear_sample(board_image, plan.coords).value;
  const Tensor region3 =
      concat_channels({plan.region, plan.region, plan.region});
  return add(mul(sampled, region3), mul(frame, affine(region3, -1.0, 1.0)));
}

StampResult stamp_target(const ObjectBoard& board, const BackgroundPair& bg,
                         const BoardPlacement& place,
                         const CameraIntrinsics& K) {
  const StampPlan plan = plan_stamp(board, place, K, PoseTransform::identity(),
                                    bg.frame_t.dim(1), bg.frame_t.dim(2));
  return {apply_stamp(plan, board.image, bg.frame_t), plan.region};
}

StampResult stamp_source(const ObjectBoard& board, const BackgroundPair& bg,
                         const BoardPlacement& place,
                         const CameraIntrinsics& K) {
  const StampPlan plan = plan_stamp(board, place, K, bg.pose,
                                    bg.frame_s.dim(1), bg.frame_s.dim(2));
  return {apply_stamp(plan, board.image, bg.frame_s), plan.region};
}

Scene synthesize_scene(const ObjectBoard& board, const BackgroundPair& bg,
                       const BoardPlacement& place, const CameraIntrinsics& K) {
  Scene s;
  const int64_t H = bg.frame_t.dim(1), W = bg.frame_t.dim(2);
  s.plan_t = plan_stamp(board, place, K, PoseTransform::identity(), H, W);
  s.plan_s = plan_stamp(board, place, K, bg.pose, H, W);
  s.image_t = apply_stamp(s.plan_t, board.image, bg.frame_t);
  s.image_s = apply_stamp(s.plan_s, board.image, bg.frame_s);
  s.true_depth_t = bg.depth_t.defined() ? bg.depth_t.clone()
                                        : Tensor::zeros({1, H, W});
  const double* reg = s.plan_t.region.data();
  const double* bd = s.plan_t.board_depth.data();
  double* td = s.true_depth_t.data();
  for (int64_t p = 0; p < H * W; ++p)
    if (reg[p] > 0.5) td[p] = bd[p];
  s.pose = bg.pose;
  s.place = place;
  s.frame_t = bg.frame_t;
  s.frame_s = bg.frame_s;
  return s;
}

BoardPlacement placement_for(const ObjectBoard& board, const SceneDraw& draw) {
  BoardPlacement p;
  p.z_c = draw.z_c;
  p.alpha = draw.alpha;
  p.physical_w = board.physical_w;
  p.physical_h = board.physical_h;
  p.board_w = board.pixel_w();
  p.board_h = board.pixel_h();
  return p;
}

Scene draw_scene(const ScenePool& pool, const CameraIntrinsics& K, Rng& rng,
                 int max_tries) {
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    const SceneDraw d =
        sample_scene(pool.sampler, static_cast<int64_t>(pool.boards.size()),
                     static_cast<int64_t>(pool.backgrounds.size()), rng);
    try {
      Scene s = synthesize_scene(
          pool.boards[static_cast<size_t>(d.board_index)],
          pool.backgrounds[static_cast<size_t>(d.bg_index)],
          placement_for(pool.boards[static_cast<size_t>(d.board_index)], d), K);
      s.draw = d;
      return s;
    } catch (const EmptyRegionError&) {
      continue;
    }
  }
  throw AttackError("no scene draw placed the board in frame");
}

namespace {

// Two-octave value noise on a coarse grid, bilinear between knots.
void fill_value_noise(double* out, int64_t h, int64_t w, double scale,
                      Rng& rng) {
  const int64_t gw = static_cast<int64_t>(std::ceil(w / scale)) + 2;
  const int64_t gh = static_cast<int64_t>(std::ceil(h / scale)) + 2;
  std::vector<double> g1(static_cast<size_t>(gw * gh));
  std::vector<double> g2(static_cast<size_t>(4 * gw * gh));
  for (double& v : g1) v = rng.uniform();
  for (double& v : g2) v = rng.uniform();
  auto sample = [](const std::vector<double>& g, int64_t gw_, int64_t gh_,
                   double x, double y) {
    const int64_t x0 = std::min(static_cast<int64_t>(x), gw_ - 2);
    const int64_t y0 = std::min(static_cast<int64_t>(y), gh_ - 2);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    const double top = g[static_cast<size_t>(y0 * gw_ + x0)] * (1 - fx) +
                       g[static_cast<size_t>(y0 * gw_ + x0 + 1)] * fx;
    const double bot = g[static_cast<size_t>((y0 + 1) * gw_ + x0)] * (1 - fx) +
                       g[static_cast<size_t>((y0 + 1) * gw_ + x0 + 1)] * fx;
    return top * (1 - fy) + bot * fy;
  };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double n1 = sample(g1, gw, gh, x / scale, y / scale);
      const double n2 =
          sample(g2, 2 * gw, 2 * gh, 2.0 * x / scale, 2.0 * y / scale);
      out[y * w + x] = 0.12 + 0.76 * (0.65 * n1 + 0.35 * n2);
    }
}

}  // namespace

BackgroundPair make_synthetic_background(uint64_t seed,
                                         const CameraIntrinsics& K,
                                         const PoseTransform& pose,
                                         double plane_depth,
                                         double texture_scale) {
  if (plane_depth <= 0.0)
    throw ConfigError("scene.plane_depth must be positive");
  if (texture_scale <= 0.0)
    throw ConfigError("scene.texture_scale must be positive");
  pose.validate();
  const int64_t H = K.height, W = K.width;

  // texture_scale is metric (meters per noise knot on the plane), so the
  // projected texture granularity encodes the plane's distance; this is the
  // monocular cue the depth net trains on. Sub-pixel knots degenerate to
  // white noise, so the projected spacing is floored at half a pixel.
  const double knot_px =
      std::max(0.5, K.fx * texture_scale / plane_depth);

  BackgroundPair bg;
  bg.pose = pose;
  bg.frame_t = Tensor::zeros({3, H, W});
  Rng rng(Rng::mix(seed, 0x5ce11e));
  for (int64_t c = 0; c < 3; ++c)
    fill_value_noise(bg.frame_t.data() + c * H * W, H, W, knot_px, rng);
  bg.depth_t = Tensor::full({1, H, W}, plane_depth);

  if (pose.is_identity()) {
    bg.frame_s = bg.frame_t.clone();
    return bg;
  }

  // Each source pixel looks at the plane z_t = plane_depth; resample frame_t
  // at the intersection, clamping coordinates at the borders.
  const PoseTransform inv = pose.inverse();
  Tensor coords = Tensor::zeros({2, H, W});
  double* cu = coords.data();
  double* cv = coords.data() + H * W;
  for (int64_t v = 0; v < H; ++v)
    for (int64_t u = 0; u < W; ++u) {
      const Vec3 d{(static_cast<double>(u) - K.cx) / K.fx,
                   (static_cast<double>(v) - K.cy) / K.fy, 1.0};
      const auto& r = inv.rotation;
      const Vec3 a{r[0] * d.x + r[1] * d.y + r[2] * d.z,
                   r[3] * d.x + r[4] * d.y + r[5] * d.z,
                   r[6] * d.x + r[7] * d.y + r[8] * d.z};
      const int64_t p = v * W + u;
      double ut = static_cast<double>(u), vt = static_cast<double>(v);
      if (std::fabs(a.z) > 1e-12) {
        const double lambda = (plane_depth - inv.translation[2]) / a.z;
        if (lambda > 0.0) {
          const Vec3 pt{lambda * a.x + inv.translation[0],
                        lambda * a.y + inv.translation[1], plane_depth};
          ut = K.fx * pt.x / pt.z + K.cx;
          vt = K.fy * pt.y / pt.z + K.cy;
        }
      }
      cu[p] = clampd(ut, 0.0, static_cast<double>(W - 1));
      cv[p] = clampd(vt, 0.0, static_cast<double>(H - 1));
    }
  bg.frame_s = Tensor::zeros({3, H, W});
  Tensor in_view = Tensor::zeros({1, H, W});
  kernels::bilinear_forward(3, H, W, bg.frame_t.data(), H, W, coords.data(),
                            bg.frame_s.data(), in_view.data());
  return bg;
}

ObjectBoard make_test_board(uint64_t seed, int64_t w, int64_t h,
                            double physical_w, double physical_h) {
  ObjectBoard b;
  b.physical_w = physical_w;
  b.physical_h = physical_h;
  b.image = Tensor::zeros({3, h, w});
  b.mask = Tensor::full({1, h, w}, 1.0);
  Rng rng(Rng::mix(seed, 0xb0a2d));
  for (int64_t c = 0; c < 3; ++c)
    fill_value_noise(b.image.data() + c * h * w,
                     h, w, std::max(3.0, static_cast<double>(w) / 6.0), rng);
  // A few hard-edged blocks for photometric contrast.
  const int64_t nblocks = 4;
  for (int64_t k = 0; k < nblocks; ++k) {
    const int64_t bw = std::max<int64_t>(2, w / 5);
    const int64_t bh = std::max<int64_t>(2, h / 5);
    const int64_t x0 = rng.uniform_int(std::max<int64_t>(1, w - bw));
    const int64_t y0 = rng.uniform_int(std::max<int64_t>(1, h - bh));
    const double col[3] = {rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92),
                           rng.uniform(0.08, 0.92)};
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = y0; y < std::min(h, y0 + bh); ++y)
        for (int64_t x = x0; x < std::min(w, x0 + bw); ++x)
          b.image.data()[c * h * w + y * w + x] = col[c];
  }
  b.validate();
  return b;
}

ObjectBoard load_board(const std::string& image_png,
                       const std::string& mask_png, double physical_w,
                       double physical_h) {
  ObjectBoard b;
  b.image = read_png_rgb(image_png);
  b.mask = read_png_mask(mask_png);
  b.physical_w = physical_w;
  b.physical_h = physical_h;
  b.validate();
  return b;
}

BackgroundPair load_background_pair(const std::string& stem,
                                    const CameraIntrinsics& K) {
  BackgroundPair bg;
  bg.frame_t = read_png_rgb(stem + "_t.png");
  bg.frame_s = read_png_rgb(stem + "_s.png");
  std::ifstream f(stem + ".json");
  if (!f) throw ConfigError("missing pose sidecar: " + stem + ".json");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad pose sidecar " + stem + ".json: " + e.what());
  }
  for (const char* key : {"fx", "fy", "cx", "cy", "rotation", "translation"})
    if (!j.contains(key))
      throw ConfigError(std::string("pose sidecar missing field: ") + key);
  const double fx = j["fx"], fy = j["fy"], cx = j["cx"], cy = j["cy"];
  if (std::fabs(fx - K.fx) > 1e-6 || std::fabs(fy - K.fy) > 1e-6 ||
      std::fabs(cx - K.cx) > 1e-6 || std::fabs(cy - K.cy) > 1e-6)
    throw ConfigError("pose sidecar intrinsics disagree with camera config");
  const auto rot = j["rotation"].get<std::vector<double>>();
  const auto tr = j["translation"].get<std::vector<double>>();
  if (rot.size() != 9 || tr.size() != 3)
    throw ConfigError("pose sidecar rotation/translation have wrong arity");
  std::copy(rot.begin(), rot.end(), bg.pose.rotation.begin());
  std::copy(tr.begin(), tr.end(), bg.pose.translation.begin());
  bg.validate();
  return bg;
}

}  // namespace dh
