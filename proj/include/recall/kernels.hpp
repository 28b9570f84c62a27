#pragma once

#include <optional>
#include <span>
#include <vector>

#include "recall/parser.hpp"
#include "recall/smatch.hpp"

// Hot loops, each with a serial reference and an OpenMP variant. Parallel
// results equal the serial ones up to floating-point summation order.
namespace recall::kernels {

enum class Exec { kSerial, kParallel };

/// Symmetric matrix of lf_similarity over all pairs; the diagonal is 1.
RowMatrix pairwise_similarity(std::span<const LogicalForm> lfs, const SmatchOptions& options, Exec exec);

/// Adds scale * sum of per-example gradients into `grad` and returns the
/// summed nll. Example i is scored in spaces[examples[i].task].
double batch_gradient(const ParserModel& model, std::span<const Example> examples,
                      std::span<const ActionSpace> spaces, std::span<double> grad, double scale, bool encoder_grad,
                      Exec exec);

/// Greedy (beam <= 1) or beam decoding of many utterances. Entries are empty
/// when decoding fails (timeout or dead end).
std::vector<std::optional<ActionSequence>> batch_decode(const ParserModel& model,
                                                        std::span<const std::vector<int>> utterances,
                                                        std::span<const int> tasks,
                                                        std::span<const ActionSpace> spaces, int beam, Exec exec);

struct AdamState {
  std::span<double> m;
  std::span<double> v;
  std::span<std::uint32_t> steps;
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update of the masked scalars. bias1[t] = 1 - beta1^t and
/// bias2[t] = 1 - beta2^t must cover every step count reached.
void adam_update(std::span<double> params, std::span<const double> grad, const ParamMask& mask, AdamState state,
                 const AdamHyper& hyper, std::span<const double> bias1, std::span<const double> bias2, Exec exec);

/// sum_i fisher_i * (theta_i - anchor_i)^2
double ewc_penalty(std::span<const double> theta, std::span<const double> anchor, std::span<const double> fisher,
                   Exec exec);

/// grad += 2 * lambda * fisher * (theta - anchor)
void ewc_gradient(std::span<double> grad, std::span<const double> theta, std::span<const double> anchor,
                  std::span<const double> fisher, double lambda, Exec exec);

}  // namespace recall::kernels
