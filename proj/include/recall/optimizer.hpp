#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "recall/kernels.hpp"
#include "recall/params.hpp"

namespace recall {

/// Adam over a flat parameter vector. Step counts are kept per scalar, so a
/// scalar's bias correction only advances when the mask selects it.
class Adam {
 public:
  explicit Adam(std::size_t size, kernels::AdamHyper hyper = {});

  void reset();
  void step(std::span<double> params, std::span<const double> grad, const ParamMask& mask,
            kernels::Exec exec = kernels::Exec::kSerial);

  const kernels::AdamHyper& hyper() const noexcept { return hyper_; }
  void set_lr(double lr) { hyper_.lr = lr; }
  const std::vector<double>& first_moment() const noexcept { return m_; }
  const std::vector<double>& second_moment() const noexcept { return v_; }
  const std::vector<std::uint32_t>& steps() const noexcept { return steps_; }
  /// Replaces the moments and step counts; sizes must match.
  void restore(std::vector<double> m, std::vector<double> v, std::vector<std::uint32_t> steps);

 private:
  void extend_tables(std::uint32_t t);

  kernels::AdamHyper hyper_;
  std::vector<double> m_, v_;
  std::vector<std::uint32_t> steps_;
  std::uint32_t max_step_ = 0;
  std::vector<double> bias1_, bias2_;
};

}  // namespace recall
