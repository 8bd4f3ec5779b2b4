#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dh/kernels.hpp"
#include "dh/rng.hpp"
#include "dh/tensor.hpp"
#include "fd_check.hpp"

using namespace dh;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("elementwise examples") {
  const Tensor z = Tensor::scalar(0.0);
  CHECK(elementwise(EwOp::kTanh, z).item() == 0.0);

  Tensor x = Tensor::scalar(1.5).set_requires_grad(true);
  GradientTape tape;
  {
    TapeScope scope(tape);
    const Tensor y = clip01(x);
    CHECK(y.item() == 1.0);
    tape.backward(y);
  }
  CHECK(x.grad_data()[0] == 0.0);  // saturated: zero gradient

  const Tensor r = elementwise(EwOp::kReciprocal,
                               Tensor::from({2}, {2.0, 4.0}));
  CHECK(r.data()[0] == 0.5);
  CHECK(r.data()[1] == 0.25);
}

TEST_CASE("clip01 boundary subgradient is 1") {
  for (double v : {0.0, 1.0, 0.5}) {
    Tensor x = Tensor::scalar(v).set_requires_grad(true);
    GradientTape tape;
    TapeScope scope(tape);
    tape.backward(clip01(x));
    CHECK(x.grad_data()[0] == 1.0);
  }
}

TEST_CASE("broadcast rules") {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor s = Tensor::scalar(2.0);
  const Tensor p = mul(a, s);
  CHECK(p.data()[3] == 8.0);
  CHECK_THROWS_AS(add(a, Tensor::zeros({3})), ShapeError);
  CHECK_THROWS_AS(elementwise(EwOp::kAdd, a, Tensor::zeros({2, 3})),
                  ShapeError);
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}).set_requires_grad(true);
  GradientTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_all(square(x)));
  }
  CHECK(x.grad_data()[0] == doctest::Approx(2.0));
  CHECK(x.grad_data()[1] == doctest::Approx(4.0));

  Tensor y = Tensor::scalar(0.0).set_requires_grad(true);
  GradientTape tape2;
  {
    TapeScope scope(tape2);
    tape2.backward(mean_all(tanh(y)));
  }
  CHECK(y.grad_data()[0] == doctest::Approx(1.0));

  GradientTape tape3;
  TapeScope scope(tape3);
  CHECK_THROWS_AS(tape3.backward(Tensor::zeros({2})), ContractError);
}

TEST_CASE("finite differences for every elementwise op") {
  Rng rng(11);
  auto check_unary = [&](const char* name, Tensor (*op)(const Tensor&),
                         double lo, double hi) {
    CAPTURE(name);
    Tensor x = random_tensor({4, 5}, rng, lo, hi);
    auto build = [&] { return sum_all(op(x)); };
    const fd::Result r = fd::check_gradients(build, {x}, 20, rng);
    CHECK(r.max_rel_err < 1e-4);
  };
  check_unary("tanh", tanh, -1.5, 1.5);
  check_unary("sigmoid", sigmoid, -2.0, 2.0);
  check_unary("square", square, -2.0, 2.0);
  check_unary("abs", abs, 0.2, 2.0);
  check_unary("elu", elu, -2.0, 2.0);
  check_unary("reciprocal", reciprocal, 0.5, 2.0);
  check_unary("clip01", clip01, 0.05, 0.95);

  Tensor a = random_tensor({3, 4}, rng, 0.5, 2.0);
  Tensor b = random_tensor({3, 4}, rng, 0.5, 2.0);
  for (EwOp op : {EwOp::kAdd, EwOp::kSub, EwOp::kMul, EwOp::kDiv}) {
    auto build = [&] { return sum_all(elementwise(op, a, b)); };
    const fd::Result r = fd::check_gradients(build, {a, b}, 20, rng);
    CHECK(r.max_rel_err < 1e-4);
  }
  // max: keep operands separated so no tie sits near a sampled point.
  Tensor lo = random_tensor({3, 4}, rng, -1.0, -0.2);
  Tensor hi = random_tensor({3, 4}, rng, 0.2, 1.0);
  auto build = [&] { return sum_all(maximum(lo, hi)); };
  const fd::Result r = fd::check_gradients(build, {lo, hi}, 20, rng);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("finite differences for structural ops") {
  Rng rng(12);
  Tensor x = random_tensor({2, 3, 4}, rng);
  auto b1 = [&] {
    return sum_all(square(concat_channels({x, affine(x, 2.0, 0.1)})));
  };
  CHECK(fd::check_gradients(b1, {x}, 20, rng).max_rel_err < 1e-4);

  Tensor y = random_tensor({1, 2, 4, 4}, rng);
  auto b2 = [&] { return sum_all(square(upsample_nearest2(y))); };
  CHECK(fd::check_gradients(b2, {y}, 20, rng).max_rel_err < 1e-4);

  Tensor z = random_tensor({3, 2, 2}, rng);
  auto b3 = [&] { return sum_all(square(reshape(z, {12}))); };
  CHECK(fd::check_gradients(b3, {z}, 12, rng).max_rel_err < 1e-4);

  // channel_max: offsets keep the argmax unique at sampled points.
  Tensor w = random_tensor({3, 4, 4}, rng);
  for (int64_t p = 0; p < 16; ++p) w.data()[16 + p] += 2.0;
  auto b4 = [&] { return sum_all(square(channel_max(w))); };
  CHECK(fd::check_gradients(b4, {w}, 20, rng).max_rel_err < 1e-4);
}

TEST_CASE("conv2d examples") {
  const Tensor ones_in = Tensor::full({1, 1, 3, 3}, 1.0);
  const Tensor ones_k = Tensor::full({1, 1, 3, 3}, 1.0);
  const Tensor out = conv2d(ones_in, ones_k, Tensor(), 1, 1);
  CHECK(out.dim(2) == 3);
  CHECK(out.data()[4] == 9.0);  // center element sums all nine ones

  Rng rng(13);
  const Tensor img = random_tensor({1, 2, 5, 5}, rng);
  Tensor ident = Tensor::zeros({2, 2, 3, 3});
  ident.data()[0 * 18 + 0 * 9 + 4] = 1.0;  // f0 passes c0
  ident.data()[1 * 18 + 1 * 9 + 4] = 1.0;  // f1 passes c1
  const Tensor same = conv2d(img, ident, Tensor(), 1, 1);
  for (int64_t i = 0; i < img.size(); ++i)
    CHECK(same.data()[i] == doctest::Approx(img.data()[i]));

  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 3, 4, 4}),
                         Tensor::zeros({2, 2, 3, 3}), Tensor(), 1, 1),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}),
                         Tensor::zeros({2, 2, 2, 2}), Tensor(), 1, 1),
                  ContractError);
}

TEST_CASE("conv2d agrees with the direct nested-loop oracle") {
  Rng rng(14);
  for (int trial = 0; trial < 6; ++trial) {
    const int64_t n = 1 + rng.uniform_int(2);
    const int64_t cin = 1 + rng.uniform_int(3);
    const int64_t cout = 1 + rng.uniform_int(3);
    const int64_t hw = 4 + rng.uniform_int(5);  // up to 8x8
    const int64_t stride = 1 + rng.uniform_int(2);
    const int64_t pad = rng.uniform_int(2);
    const Tensor x = random_tensor({n, cin, hw, hw}, rng);
    const Tensor w = random_tensor({cout, cin, 3, 3}, rng);
    const Tensor b = random_tensor({cout}, rng);
    const Tensor y = conv2d(x, w, b, stride, pad);

    const kernels::ConvDims d =
        kernels::conv_dims(x.shape(), w.shape(), stride, pad);
    Tensor y_ref = Tensor::zeros(y.shape());
    kernels::ref::conv2d_forward(d, x.data(), w.data(), b.data(),
                                 y_ref.data());
    for (int64_t i = 0; i < y.size(); ++i)
      CHECK(std::fabs(y.data()[i] - y_ref.data()[i]) < 1e-12);
  }
}

TEST_CASE("conv2d parallel gradients match the scatter reference") {
  Rng rng(15);
  const Tensor x = random_tensor({2, 3, 7, 6}, rng);
  const Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const kernels::ConvDims d = kernels::conv_dims(x.shape(), w.shape(), 2, 1);
  std::vector<double> gy(static_cast<size_t>(2 * 4 * d.oh * d.ow));
  for (double& v : gy) v = rng.uniform(-1, 1);

  std::vector<double> gx_par(static_cast<size_t>(x.size()), 0.0);
  std::vector<double> gx_ref(gx_par.size(), 0.0);
  kernels::conv2d_grad_input(d, gy.data(), w.data(), gx_par.data());
  kernels::ref::conv2d_grad_input(d, gy.data(), w.data(), gx_ref.data());
  for (size_t i = 0; i < gx_par.size(); ++i)
    CHECK(std::fabs(gx_par[i] - gx_ref[i]) < 1e-12);

  std::vector<double> gw_par(static_cast<size_t>(w.size()), 0.0);
  std::vector<double> gw_ref(gw_par.size(), 0.0);
  kernels::conv2d_grad_weight(d, gy.data(), x.data(), gw_par.data());
  kernels::ref::conv2d_grad_weight(d, gy.data(), x.data(), gw_ref.data());
  for (size_t i = 0; i < gw_par.size(); ++i)
    CHECK(std::fabs(gw_par[i] - gw_ref[i]) < 1e-12);
}

TEST_CASE("conv2d gradient matches finite differences") {
  Rng rng(16);
  Tensor x = random_tensor({1, 2, 4, 4}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  auto build = [&] { return sum_all(square(conv2d(x, w, b, 1, 1))); };
  CHECK(fd::check_gradients(build, {x, w, b}, 30, rng).max_rel_err < 1e-4);
}

TEST_CASE("bilinear_sample examples") {
  const Tensor img = Tensor::from({1, 2, 2}, {0.0, 1.0, 2.0, 3.0});

  SUBCASE("integer coords reproduce pixels bit-for-bit") {
    Tensor coords = Tensor::zeros({2, 2, 2});
    coords.data()[0] = 0;  coords.data()[1] = 1;   // x
    coords.data()[2] = 0;  coords.data()[3] = 1;
    coords.data()[4] = 0;  coords.data()[5] = 0;   // y
    coords.data()[6] = 1;  coords.data()[7] = 1;
    const BilinearSample s = bilinear_sample(img, coords);
    CHECK(s.value.data()[0] == 0.0);
    CHECK(s.value.data()[1] == 1.0);
    CHECK(s.value.data()[2] == 2.0);
    CHECK(s.value.data()[3] == 3.0);
    for (int64_t i = 0; i < 4; ++i) CHECK(s.in_view.data()[i] == 1.0);
  }

  SUBCASE("center of a 2x2 cell") {
    Tensor coords = Tensor::from({2, 1, 1}, {0.5, 0.5});
    const BilinearSample s = bilinear_sample(img, coords);
    CHECK(s.value.item() == doctest::Approx(1.5));
  }

  SUBCASE("out-of-view samples are zero and masked") {
    Tensor coords = Tensor::from({2, 1, 2}, {-3.0, 7.0, 0.0, 0.0});
    const BilinearSample s = bilinear_sample(img, coords);
    CHECK(s.value.data()[0] == 0.0);
    CHECK(s.value.data()[1] == 0.0);
    CHECK(s.in_view.data()[0] == 0.0);
    CHECK(s.in_view.data()[1] == 0.0);
  }
}

TEST_CASE("bilinear_sample identity grid is exact on the interior") {
  Rng rng(17);
  const Tensor img = random_tensor({3, 6, 7}, rng, 0.0, 1.0);
  Tensor coords = Tensor::zeros({2, 6, 7});
  for (int64_t y = 0; y < 6; ++y)
    for (int64_t x = 0; x < 7; ++x) {
      coords.data()[y * 7 + x] = static_cast<double>(x);
      coords.data()[42 + y * 7 + x] = static_cast<double>(y);
    }
  const BilinearSample s = bilinear_sample(img, coords);
  for (int64_t i = 0; i < img.size(); ++i)
    CHECK(s.value.data()[i] == img.data()[i]);  // bitwise
}

TEST_CASE("bilinear_sample gradients match finite differences") {
  Rng rng(18);
  Tensor img = random_tensor({2, 5, 5}, rng, 0.0, 1.0);
  Tensor coords = Tensor::zeros({2, 3, 3});
  // Interior, non-integer points keep the FD step away from cell boundaries.
  for (int64_t p = 0; p < 9; ++p) {
    coords.data()[p] = rng.uniform(0.3, 3.6);
    coords.data()[9 + p] = rng.uniform(0.3, 3.6);
  }
  auto build = [&] {
    return sum_all(square(bilinear_sample(img, coords).value));
  };
  CHECK(fd::check_gradients(build, {img, coords}, 30, rng).max_rel_err <
        1e-4);
}

TEST_CASE("adam") {
  SUBCASE("descends a parabola") {
    Tensor x = Tensor::scalar(1.0).set_requires_grad(true);
    AdamState st;
    std::vector<Tensor> params{x};
    GradientTape tape;
    {
      TapeScope scope(tape);
      tape.backward(square(x));
    }
    adam_step(params, st, 0.1);
    CHECK(x.item() < 1.0);
  }

  SUBCASE("zero gradient is a fixed point") {
    Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
    x.ensure_grad();
    AdamState st;
    std::vector<Tensor> params{x};
    adam_step(params, st, 0.1);
    CHECK(x.item() == 3.0);
  }

  SUBCASE("missing gradient is a contract error") {
    Tensor x = Tensor::scalar(1.0).set_requires_grad(true);
    AdamState st;
    std::vector<Tensor> params{x};
    CHECK_THROWS_AS(adam_step(params, st, 0.1), ContractError);
  }

  SUBCASE("500 steps reach the minimizer of a quadratic bowl") {
    // f(x) = 2 (x0 - 0.7)^2 + 0.5 (x1 + 0.3)^2, minimizer (0.7, -0.3).
    Tensor x = Tensor::from({2}, {0.0, 0.0}).set_requires_grad(true);
    const Tensor target = Tensor::from({2}, {0.7, -0.3});
    const Tensor weights = Tensor::from({2}, {2.0, 0.5});
    AdamState st;
    std::vector<Tensor> params{x};
    for (int i = 0; i < 500; ++i) {
      x.zero_grad();
      GradientTape tape;
      TapeScope scope(tape);
      tape.backward(sum_all(mul(weights, square(sub(x, target)))));
      adam_step(params, st, 0.02);
    }
    CHECK(std::fabs(x.data()[0] - 0.7) < 1e-3);
    CHECK(std::fabs(x.data()[1] + 0.3) < 1e-3);
  }
}

TEST_CASE("tape replay is deterministic") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor({4, 4}, rng, 0.1, 1.0).set_requires_grad(true);
    Tensor b = random_tensor({4, 4}, rng, 0.1, 1.0).set_requires_grad(true);
    GradientTape tape;
    TapeScope scope(tape);
    const Tensor loss =
        mean_all(mul(sigmoid(div(a, b)), tanh(add(a, square(b)))));
    tape.backward(loss);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), a.grad_data(), a.grad_data() + a.size());
    out.insert(out.end(), b.grad_data(), b.grad_data() + b.size());
    return out;
  };
  const auto r1 = run(99);
  const auto r2 = run(99);
  CHECK(r1 == r2);  // bitwise
}

TEST_CASE("tensor dump round trip and failure modes") {
  Rng rng(19);
  const Tensor t = random_tensor({2, 3, 4}, rng);
  const std::string path = "test_tensor_dump.dhtn";
  save_tensor(path, t);
  const Tensor back = load_tensor(path);
  CHECK(back.shape() == t.shape());
  for (int64_t i = 0; i < t.size(); ++i)
    CHECK(back.data()[i] == t.data()[i]);

  // Truncation
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    std::ofstream out("test_tensor_trunc.dhtn", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_tensor("test_tensor_trunc.dhtn"), FormatError);

  // Bad magic
  {
    std::ofstream out("test_tensor_magic.dhtn", std::ios::binary);
    out << "NOPE1234567890";
  }
  CHECK_THROWS_AS(load_tensor("test_tensor_magic.dhtn"), FormatError);

  std::filesystem::remove(path);
  std::filesystem::remove("test_tensor_trunc.dhtn");
  std::filesystem::remove("test_tensor_magic.dhtn");
}

}  // TEST_SUITE
