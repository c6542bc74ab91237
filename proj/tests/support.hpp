#pragma once

// Shared test helpers: random tensors, central finite differences and
// brute-force oracles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "lat/parameters.hpp"
#include "lat/tensor.hpp"

namespace lat::testing {

template <typename T>
BasicTensor<T> uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                       bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> values(shape.numel());
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return BasicTensor<T>(shape, std::move(values), requires_grad);
}

/// Overwrites every parameter with uniform values in [-scale, scale].
inline void randomize(const ParameterList<double>& params, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (const auto& p : params) {
    BasicTensor<double> t = p.tensor;
    for (auto& v : t.mutable_data()) v = dist(rng);
  }
}

/// Norm-wise relative error between the tape gradient and central finite
/// differences (step h) of `loss` with respect to every tensor in `inputs`.
inline double gradcheck(std::vector<TensorD> inputs, const std::function<TensorD()>& loss,
                        double h = 1e-4) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  {
    Tape<double> tape;
    const TensorD value = loss();
    tape.backward(value);
  }
  double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
  for (auto& x : inputs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    auto data = x.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = loss().item();
      data[i] = keep - h;
      const double down = loss().item();
      data[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      diff_sq += (numeric - analytic[i]) * (numeric - analytic[i]);
      analytic_sq += analytic[i] * analytic[i];
      numeric_sq += numeric * numeric;
    }
  }
  const double scale = std::max({std::sqrt(analytic_sq), std::sqrt(numeric_sq), 1e-12});
  return std::sqrt(diff_sq) / scale;
}

/// Triple-loop matrix product in double.
inline std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b,
                                        std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
  return c;
}

/// InfoNCE computed without log-sum-exp stabilization.
inline double naive_info_nce(const std::vector<double>& sim, std::size_t n, double tau, bool over_rows) {
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      denom += std::exp((over_rows ? sim[j * n + i] : sim[i * n + j]) / tau);
    }
    loss -= std::log(std::exp(sim[i * n + i] / tau) / denom);
  }
  return loss / static_cast<double>(n);
}

/// Rank of each query's true item by sorting the gallery (descending score,
/// true item placed after every equal score).
inline std::vector<std::size_t> sort_ranks(const std::vector<double>& scores, std::size_t queries,
                                           std::size_t gallery, const std::vector<std::size_t>& truth) {
  std::vector<std::size_t> ranks;
  for (std::size_t q = 0; q < queries; ++q) {
    std::vector<std::size_t> order(gallery);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const double* row = scores.data() + q * gallery;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return (a == truth[q]) < (b == truth[q]);
    });
    ranks.push_back(static_cast<std::size_t>(std::find(order.begin(), order.end(), truth[q]) - order.begin()) + 1);
  }
  return ranks;
}

inline double sorted_median(std::vector<std::size_t> ranks) {
  std::sort(ranks.begin(), ranks.end());
  const std::size_t n = ranks.size();
  return n % 2 ? static_cast<double>(ranks[n / 2]) : (ranks[n / 2 - 1] + ranks[n / 2]) / 2.0;
}

}  // namespace lat::testing
