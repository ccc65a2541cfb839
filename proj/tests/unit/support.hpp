#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "sslada/autodiff.hpp"
#include "sslada/network.hpp"
#include "sslada/rng.hpp"
#include "sslada/tensor.hpp"

namespace testing {

using namespace sslada;

inline Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = n(rng);
  return t;
}

/// Largest relative gap between analytic and central-difference gradients
/// over `coords` randomly chosen coordinates of every parameter.
/// `loss` must rebuild the whole computation on the tape it is given.
inline double max_fd_error(std::vector<Tensor*> params, const std::function<Var(Tape&)>& loss, Rng& rng,
                           std::size_t coords = 8, double eps = 1e-5) {
  Tape tape;
  for (Tensor* p : params) tape.parameter(*p);
  const GradientMap grads = tape.backward(loss(tape));
  auto eval = [&] {
    Tape t;
    return loss(t).value()[0];
  };
  double worst = 0.0;
  for (Tensor* p : params) {
    const Tensor& g = grads.at(p);
    std::uniform_int_distribution<std::size_t> pick(0, p->size() - 1);
    for (std::size_t c = 0; c < std::min(coords, p->size()); ++c) {
      const std::size_t i = coords >= p->size() ? c : pick(rng);
      const double saved = (*p)[i];
      (*p)[i] = saved + eps;
      const double up = eval();
      (*p)[i] = saved - eps;
      const double down = eval();
      (*p)[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      const double denom = std::max({std::abs(numeric), std::abs(g[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - g[i]) / denom);
    }
  }
  return worst;
}

}  // namespace testing
