#include "recall/kernels.hpp"

#include <omp.h>

#include <exception>
#include <stdexcept>

#include "recall/errors.hpp"

namespace recall::kernels {

namespace {

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": size mismatch");
}

// Rethrows the first exception captured inside a parallel region.
class ExceptionSlot {
 public:
  void capture() {
#pragma omp critical(recall_exception_slot)
    if (!ptr_) ptr_ = std::current_exception();
  }
  void rethrow() const {
    if (ptr_) std::rethrow_exception(ptr_);
  }

 private:
  std::exception_ptr ptr_;
};

}  // namespace

RowMatrix pairwise_similarity(std::span<const LogicalForm> lfs, const SmatchOptions& options, Exec exec) {
  const auto n = static_cast<Eigen::Index>(lfs.size());
  RowMatrix sim = RowMatrix::Identity(n, n);
  if (exec == Exec::kSerial) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j)
        sim(i, j) = sim(j, i) = lf_similarity(lfs[static_cast<std::size_t>(i)], lfs[static_cast<std::size_t>(j)], options);
    return sim;
  }
  ExceptionSlot err;
#pragma omp parallel for schedule(dynamic, 4)
  for (Eigen::Index i = 0; i < n; ++i) {
    try {
      for (Eigen::Index j = i + 1; j < n; ++j)
        sim(i, j) = sim(j, i) =
            lf_similarity(lfs[static_cast<std::size_t>(i)], lfs[static_cast<std::size_t>(j)], options);
    } catch (...) {
      err.capture();
    }
  }
  err.rethrow();
  return sim;
}

double batch_gradient(const ParserModel& model, std::span<const Example> examples,
                      std::span<const ActionSpace> spaces, std::span<double> grad, double scale, bool encoder_grad,
                      Exec exec) {
  check_same(grad.size(), model.params().size(), "batch_gradient");
  auto space_of = [&](const Example& ex) -> const ActionSpace& {
    if (ex.task < 0 || static_cast<std::size_t>(ex.task) >= spaces.size())
      throw std::out_of_range("example task has no action space");
    return spaces[static_cast<std::size_t>(ex.task)];
  };
  if (exec == Exec::kSerial) {
    double nll = 0.0;
    for (const Example& ex : examples) nll += model.accumulate_gradient(ex, space_of(ex), scale, grad, encoder_grad);
    return nll;
  }

  const int threads = omp_get_max_threads();
  std::vector<std::vector<double>> buffers(static_cast<std::size_t>(threads));
  std::vector<double> nll(static_cast<std::size_t>(threads), 0.0);
  ExceptionSlot err;
  const auto n = static_cast<std::ptrdiff_t>(examples.size());
#pragma omp parallel
  {
    const auto tid = static_cast<std::size_t>(omp_get_thread_num());
    std::vector<double>& buf = buffers[tid];
    buf.assign(grad.size(), 0.0);
#pragma omp for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        const Example& ex = examples[static_cast<std::size_t>(i)];
        nll[tid] += model.accumulate_gradient(ex, space_of(ex), 1.0, buf, encoder_grad);
      } catch (...) {
        err.capture();
      }
    }
  }
  err.rethrow();
  const auto size = static_cast<std::ptrdiff_t>(grad.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < size; ++j) {
    double s = 0.0;
    for (const auto& buf : buffers) s += buf[static_cast<std::size_t>(j)];
    grad[static_cast<std::size_t>(j)] += scale * s;
  }
  double total = 0.0;
  for (double v : nll) total += v;
  return total;
}

std::vector<std::optional<ActionSequence>> batch_decode(const ParserModel& model,
                                                        std::span<const std::vector<int>> utterances,
                                                        std::span<const int> tasks,
                                                        std::span<const ActionSpace> spaces, int beam, Exec exec) {
  check_same(utterances.size(), tasks.size(), "batch_decode");
  std::vector<std::optional<ActionSequence>> out(utterances.size());
  ExceptionSlot err;
  auto one = [&](std::size_t i) {
    const int task = tasks[i];
    if (task < 0 || static_cast<std::size_t>(task) >= spaces.size())
      throw std::out_of_range("decode task has no action space");
    try {
      const ActionSpace& space = spaces[static_cast<std::size_t>(task)];
      out[i] = (beam > 1 ? model.beam_decode(utterances[i], space, task, beam)
                         : model.greedy_decode(utterances[i], space, task))
                   .actions;
    } catch (const ParseTimeout&) {
      out[i].reset();
    } catch (const NoApplicableActions&) {
      out[i].reset();
    }
  };
  if (exec == Exec::kSerial) {
    for (std::size_t i = 0; i < utterances.size(); ++i) one(i);
    return out;
  }
  const auto n = static_cast<std::ptrdiff_t>(utterances.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      one(static_cast<std::size_t>(i));
    } catch (...) {
      err.capture();
    }
  }
  err.rethrow();
  return out;
}

void adam_update(std::span<double> params, std::span<const double> grad, const ParamMask& mask, AdamState state,
                 const AdamHyper& hyper, std::span<const double> bias1, std::span<const double> bias2, Exec exec) {
  const std::size_t n = params.size();
  check_same(grad.size(), n, "adam_update");
  check_same(mask.size(), n, "adam_update");
  check_same(state.m.size(), n, "adam_update");
  check_same(state.v.size(), n, "adam_update");
  check_same(state.steps.size(), n, "adam_update");
  const auto& bits = mask.bits();
  auto update = [&](std::size_t j) {
    if (!bits[j]) return;
    const std::uint32_t t = ++state.steps[j];
    const double g = grad[j];
    state.m[j] = hyper.beta1 * state.m[j] + (1.0 - hyper.beta1) * g;
    state.v[j] = hyper.beta2 * state.v[j] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = state.m[j] / bias1[t];
    const double v_hat = state.v[j] / bias2[t];
    params[j] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  };
  if (exec == Exec::kSerial) {
    for (std::size_t j = 0; j < n; ++j) update(j);
    return;
  }
  const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < sn; ++j) update(static_cast<std::size_t>(j));
}

double ewc_penalty(std::span<const double> theta, std::span<const double> anchor, std::span<const double> fisher,
                   Exec exec) {
  check_same(theta.size(), anchor.size(), "ewc_penalty");
  check_same(theta.size(), fisher.size(), "ewc_penalty");
  double total = 0.0;
  const auto n = static_cast<std::ptrdiff_t>(theta.size());
  if (exec == Exec::kSerial) {
    for (std::ptrdiff_t j = 0; j < n; ++j) {
      const double d = theta[static_cast<std::size_t>(j)] - anchor[static_cast<std::size_t>(j)];
      total += fisher[static_cast<std::size_t>(j)] * d * d;
    }
    return total;
  }
#pragma omp parallel for schedule(static) reduction(+ : total)
  for (std::ptrdiff_t j = 0; j < n; ++j) {
    const double d = theta[static_cast<std::size_t>(j)] - anchor[static_cast<std::size_t>(j)];
    total += fisher[static_cast<std::size_t>(j)] * d * d;
  }
  return total;
}

void ewc_gradient(std::span<double> grad, std::span<const double> theta, std::span<const double> anchor,
                  std::span<const double> fisher, double lambda, Exec exec) {
  check_same(grad.size(), theta.size(), "ewc_gradient");
  check_same(theta.size(), anchor.size(), "ewc_gradient");
  check_same(theta.size(), fisher.size(), "ewc_gradient");
  const auto n = static_cast<std::ptrdiff_t>(theta.size());
  auto one = [&](std::ptrdiff_t j) {
    const auto k = static_cast<std::size_t>(j);
    grad[k] += 2.0 * lambda * fisher[k] * (theta[k] - anchor[k]);
  };
  if (exec == Exec::kSerial) {
    for (std::ptrdiff_t j = 0; j < n; ++j) one(j);
    return;
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < n; ++j) one(j);
}

}  // namespace recall::kernels
