#include <doctest.h>

#include <cmath>

#include "dh/metrics.hpp"
#include "dh/rng.hpp"

using namespace dh;

namespace {

// Scalar-loop reference for the five depth metrics.
MetricsReport metrics_oracle(const Tensor& X, const Tensor& Y,
                             const Tensor& mask) {
  MetricsReport r;
  double se = 0.0;
  for (int64_t i = 0; i < X.size(); ++i) {
    if (mask.data()[i] <= 0.5) continue;
    const double x = X.data()[i], y = Y.data()[i];
    r.abse += std::fabs(x - y);
    se += (x - y) * (x - y);
    r.absr += std::fabs(y - x) / y;
    r.sqr += (y - x) * (y - x) / y;
    if (std::max(x / y, y / x) < 1.25) r.delta += 1.0;
    ++r.n_pixels;
  }
  const double n = static_cast<double>(r.n_pixels);
  r.abse /= n;
  r.rmse = std::sqrt(se / n);
  r.absr /= n;
  r.sqr /= n;
  r.delta /= n;
  return r;
}

Tensor random_map(const Shape& s, uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(s);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("perfect estimate") {
  const Tensor y = random_map({1, 8, 8}, 70, 1.0, 20.0);
  const Tensor mask = Tensor::full({1, 8, 8}, 1.0);
  const MetricsReport r = compute_metrics(y, y, mask);
  CHECK(r.abse == 0.0);
  CHECK(r.rmse == 0.0);
  CHECK(r.absr == 0.0);
  CHECK(r.sqr == 0.0);
  CHECK(r.delta == 1.0);
  CHECK(r.n_pixels == 64);
}

TEST_CASE("hand example X={2,4}, Y={1,4}") {
  const Tensor x = Tensor::from({2}, {2.0, 4.0});
  const Tensor y = Tensor::from({2}, {1.0, 4.0});
  const Tensor mask = Tensor::full({2}, 1.0);
  const MetricsReport r = compute_metrics(x, y, mask);
  CHECK(r.abse == 0.5);
  CHECK(r.rmse == std::sqrt(0.5));
  CHECK(r.absr == 0.5);
  CHECK(r.sqr == 0.5);
  CHECK(r.delta == 0.5);
}

TEST_CASE("matches the scalar-loop oracle on random maps") {
  for (int trial = 0; trial < 100; ++trial) {
    const uint64_t seed = 100 + static_cast<uint64_t>(trial);
    const Tensor x = random_map({1, 16, 16}, seed, 0.5, 30.0);
    const Tensor y = random_map({1, 16, 16}, seed + 1000, 0.5, 30.0);
    Tensor mask = Tensor::zeros({1, 16, 16});
    Rng rng(seed + 2000);
    for (int64_t i = 0; i < mask.size(); ++i)
      mask.data()[i] = rng.uniform() < 0.7 ? 1.0 : 0.0;
    if ([&] {
          for (int64_t i = 0; i < mask.size(); ++i)
            if (mask.data()[i] > 0.5) return false;
          return true;
        }())
      mask.data()[0] = 1.0;
    const MetricsReport got = compute_metrics(x, y, mask);
    const MetricsReport want = metrics_oracle(x, y, mask);
    CHECK(std::fabs(got.abse - want.abse) < 1e-12);
    CHECK(std::fabs(got.rmse - want.rmse) < 1e-12);
    CHECK(std::fabs(got.absr - want.absr) < 1e-12);
    CHECK(std::fabs(got.sqr - want.sqr) < 1e-12);
    CHECK(got.delta == want.delta);
    CHECK(got.n_pixels == want.n_pixels);
  }
}

TEST_CASE("report invariants") {
  const Tensor x = random_map({1, 12, 12}, 71, 1.0, 15.0);
  const Tensor y = random_map({1, 12, 12}, 72, 1.0, 15.0);
  const Tensor mask = Tensor::full({1, 12, 12}, 1.0);
  const MetricsReport r = compute_metrics(x, y, mask);

  // Power-mean inequality: rmse^2 >= abse^2 (rmse >= abse does NOT hold in
  // general for signed errors, only through the squares).
  CHECK(r.rmse * r.rmse >= r.abse * r.abse - 1e-15);

  // delta is symmetric under swapping estimate and reference.
  const MetricsReport swapped = compute_metrics(y, x, mask);
  CHECK(r.delta == swapped.delta);

  // Scale behavior: x, y -> c x, c y.
  const double c = 3.0;
  Tensor xs = x.clone(), ys = y.clone();
  for (int64_t i = 0; i < xs.size(); ++i) {
    xs.data()[i] *= c;
    ys.data()[i] *= c;
  }
  const MetricsReport rs = compute_metrics(xs, ys, mask);
  CHECK(rs.absr == doctest::Approx(r.absr).epsilon(1e-12));
  CHECK(rs.delta == r.delta);
  CHECK(rs.abse == doctest::Approx(c * r.abse).epsilon(1e-12));
  CHECK(rs.rmse == doctest::Approx(c * r.rmse).epsilon(1e-12));
  CHECK(rs.sqr == doctest::Approx(c * r.sqr).epsilon(1e-12));
}

TEST_CASE("contract errors") {
  const Tensor x = random_map({1, 4, 4}, 73, 1.0, 5.0);
  CHECK_THROWS_AS(compute_metrics(x, x, Tensor::zeros({1, 4, 4})),
                  ContractError);
  Tensor bad_ref = x.clone();
  bad_ref.data()[3] = 0.0;
  CHECK_THROWS_AS(compute_metrics(x, bad_ref, Tensor::full({1, 4, 4}, 1.0)),
                  ContractError);
  CHECK_THROWS_AS(compute_metrics(x, x, Tensor::zeros({1, 5, 5})), ShapeError);
}

TEST_CASE("attack evaluation plumbing") {
  const CameraIntrinsics cam{100.0, 100.0, 31.5, 23.5, 64, 48};
  ScenePool pool;
  pool.boards = {make_test_board(74, 20, 20, 2.0, 2.0)};
  pool.backgrounds = {
      make_synthetic_background(75, cam, PoseTransform::stereo_baseline(0.54),
                                10.8, 6.0),
      make_synthetic_background(76, cam, PoseTransform::stereo_baseline(0.54),
                                10.8, 6.0)};
  pool.sampler = {5.0, 12.0, -0.3, 0.3};
  const DepthNet net = DepthNet::create(77);
  EvalOptions opt{6, 78};

  SUBCASE("disabled attack scores zero error") {
    AttackConfig cfg;
    cfg.kind = AttackKind::kNone;
    const AttackEvaluation ev =
        evaluate_attack(net, pool.boards[0], pool, cam, cfg, opt);
    CHECK(ev.averaged.abse == 0.0);
    CHECK(ev.averaged.delta == 1.0);
    CHECK(ev.per_scene.size() == 6);
    CHECK(ev.benign_vs_truth.n_pixels > 0);  // synthetic scenes carry truth
  }

  SUBCASE("deterministic under fixed seeds and 1x1 transfer degenerate") {
    AttackConfig cfg;
    cfg.kind = AttackKind::kSoftL0;
    cfg.epsilon = 0.1;
    cfg.steps = 5;
    cfg.lr = 0.08;
    cfg.seed = 79;
    const AttackEvaluation e1 =
        evaluate_attack(net, pool.boards[0], pool, cam, cfg, opt);
    const AttackEvaluation e2 =
        evaluate_attack(net, pool.boards[0], pool, cam, cfg, opt);
    CHECK(e1.averaged.abse == e2.averaged.abse);
    CHECK(e1.averaged.delta == e2.averaged.delta);

    const auto matrix =
        transfer_matrix({net}, pool.boards[0], pool, cam, cfg, opt);
    CHECK(matrix.size() == 1);
    CHECK(matrix[0][0].abse == doctest::Approx(e1.averaged.abse));
  }
}

TEST_CASE("average_reports") {
  MetricsReport a, b;
  a.abse = 1.0; a.rmse = 2.0; a.delta = 0.5; a.n_pixels = 10;
  b.abse = 3.0; b.rmse = 4.0; b.delta = 1.0; b.n_pixels = 30;
  const MetricsReport avg = average_reports({a, b});
  CHECK(avg.abse == 2.0);
  CHECK(avg.rmse == 3.0);
  CHECK(avg.delta == 0.75);
  CHECK(avg.n_pixels == 40);
  CHECK_THROWS_AS(average_reports({}), ContractError);
}

}  // TEST_SUITE
