#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mathlm/rng.hpp"
#include "mathlm/tensor.hpp"

namespace mathlm {

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, CounterRng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> data(fan_in * fan_out);
  for (auto& v : data) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * a);
  return Tensor<T>::from_data({fan_in, fan_out}, std::move(data), true);
}

template <typename T>
Tensor<T> zeros_param(std::size_t n) {
  return Tensor<T>::zeros({n}, true);
}

template <typename T>
Tensor<T> ones_param(std::size_t n) {
  return Tensor<T>::full({n}, T(1), true);
}

}  // namespace mathlm
