#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dh/rng.hpp"
#include "dh/tensor.hpp"

// Central finite-difference gradient checking. `build` must reconstruct the
// scalar loss from the current leaf values on every call and stay independent
// of any recorded state.
namespace fd {

struct Result {
  double max_rel_err = 0.0;
  int checked = 0;
};

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-2});
}

inline Result check_gradients(const std::function<dh::Tensor()>& build,
                              std::vector<dh::Tensor> leaves, int n_coords,
                              dh::Rng& rng, double step = 1e-4) {
  for (dh::Tensor& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  dh::GradientTape tape;
  {
    dh::TapeScope scope(tape);
    dh::Tensor loss = build();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> grads;
  for (dh::Tensor& l : leaves) {
    l.ensure_grad();
    grads.emplace_back(l.grad_data(), l.grad_data() + l.size());
  }

  Result res;
  for (int k = 0; k < n_coords; ++k) {
    const size_t li = static_cast<size_t>(rng.uniform_int(
        static_cast<int64_t>(leaves.size())));
    dh::Tensor& leaf = leaves[li];
    const int64_t ci = rng.uniform_int(leaf.size());
    const double saved = leaf.data()[ci];
    leaf.data()[ci] = saved + step;
    const double up = build().item();
    leaf.data()[ci] = saved - step;
    const double down = build().item();
    leaf.data()[ci] = saved;
    const double fdg = (up - down) / (2.0 * step);
    const double adg = grads[li][static_cast<size_t>(ci)];
    res.max_rel_err = std::max(res.max_rel_err, rel_err(fdg, adg));
    ++res.checked;
  }
  return res;
}

}  // namespace fd
