#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "lat/tensor.hpp"

namespace lat {

/// A trainable tensor together with its stable, dotted name
/// ("G.layer1.cross_attn.q_proj.weight"). Handles share storage with the
/// owning module, so updating the tensor updates the module.
template <typename T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

template <typename T>
std::size_t parameter_count(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

/// Fills a fresh trainable tensor.
template <typename T>
BasicTensor<T> xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
template <typename T>
BasicTensor<T> gaussian(Shape shape, double stddev, std::mt19937_64& rng);

}  // namespace lat
