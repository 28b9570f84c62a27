#include "recall/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace recall {

Adam::Adam(std::size_t size, kernels::AdamHyper hyper)
    : hyper_(hyper), m_(size, 0.0), v_(size, 0.0), steps_(size, 0), bias1_{1.0}, bias2_{1.0} {}

void Adam::reset() {
  std::fill(m_.begin(), m_.end(), 0.0);
  std::fill(v_.begin(), v_.end(), 0.0);
  std::fill(steps_.begin(), steps_.end(), 0U);
  max_step_ = 0;
}

void Adam::restore(std::vector<double> m, std::vector<double> v, std::vector<std::uint32_t> steps) {
  if (m.size() != m_.size() || v.size() != m_.size() || steps.size() != m_.size())
    throw std::invalid_argument("Adam: restored state size mismatch");
  m_ = std::move(m);
  v_ = std::move(v);
  steps_ = std::move(steps);
  max_step_ = steps_.empty() ? 0 : *std::max_element(steps_.begin(), steps_.end());
  extend_tables(max_step_);
}

void Adam::extend_tables(std::uint32_t t) {
  while (bias1_.size() <= t) {
    const auto k = static_cast<double>(bias1_.size());
    bias1_.push_back(1.0 - std::pow(hyper_.beta1, k));
    bias2_.push_back(1.0 - std::pow(hyper_.beta2, k));
  }
}

void Adam::step(std::span<double> params, std::span<const double> grad, const ParamMask& mask,
                kernels::Exec exec) {
  if (params.size() != m_.size()) throw std::invalid_argument("Adam: parameter size mismatch");
  // every masked scalar advances by one, so max_step_ + 1 bounds the tables
  extend_tables(++max_step_);
  kernels::adam_update(params, grad, mask, {m_, v_, steps_}, hyper_, bias1_, bias2_, exec);
}

}  // namespace recall
