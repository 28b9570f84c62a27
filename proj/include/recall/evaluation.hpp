#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recall/actions.hpp"
#include "recall/kernels.hpp"
#include "recall/logical_form.hpp"
#include "recall/parser.hpp"

namespace recall {

bool exact_match(const LogicalForm& pred, const LogicalForm& gold);
/// Compares canonical forms; an unparsable prediction never matches.
bool exact_match(std::string_view pred, std::string_view gold);

struct TaskAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double acc() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Mean of per-task accuracies.
double acc_avg(std::span<const double> accs);
/// Instance-weighted accuracy over the combined test sets.
double acc_whole(std::span<const TaskAccuracy> per_task);

/// acc_{i,k}: accuracy on task i after training through task k (i <= k).
class EvalResult {
 public:
  explicit EvalResult(std::size_t num_tasks = 0);

  std::size_t num_tasks() const noexcept { return n_; }
  /// Throws std::out_of_range when i > k or either index is out of range.
  void set(std::size_t i, std::size_t k, TaskAccuracy result);
  const TaskAccuracy& at(std::size_t i, std::size_t k) const;
  double acc(std::size_t i, std::size_t k) const { return at(i, k).acc(); }
  /// (1/(k+1)) sum_{i<=k} acc_{i,k}
  double acc_avg(std::size_t k) const;
  double acc_whole(std::size_t k) const;

 private:
  std::size_t index(std::size_t i, std::size_t k) const;

  std::size_t n_;
  std::vector<TaskAccuracy> cells_;
};

/// Test utterances of one task with their gold forms.
struct EvalSet {
  int task = 0;
  std::vector<std::vector<int>> words;
  std::vector<LogicalForm> gold;
};

/// Decodes every utterance with spaces[set.task] and counts exact matches.
/// Failed decodes count as wrong. Reads the model only.
TaskAccuracy evaluate_task(const ParserModel& model, const EvalSet& set, std::span<const ActionSpace> spaces,
                           int beam = 1, kernels::Exec exec = kernels::Exec::kSerial);

/// Mean teacher-forced P(a_t | a_<t, x) of every action over its occurrences
/// in `examples`, all scored in `space`. Returns one entry per action of
/// `actions` (ascending); actions that never occur get -1.
std::vector<double> mean_gold_probability(const ParserModel& model, std::span<const Example> examples,
                                          const ActionSpace& space, std::span<const ActionId> actions);

/// Per-action probability trace over the first task's training set.
struct ActionTrace {
  ActionId action = -1;
  std::string text;
  int origin_task = 0;
  bool cross_task = false;
  std::vector<double> mean_prob;  // one value per trained task
};

class TraceRecorder {
 public:
  /// `occurrences[a]` is the number of task grammars containing action a.
  TraceRecorder(std::vector<Example> first_task_train, const ActionSpace& first_space,
                const ActionRegistry& registry, const std::vector<int>& occurrences);

  /// Appends one snapshot's means to every trace.
  void record(const ParserModel& model);
  const std::vector<ActionTrace>& traces() const noexcept { return traces_; }

 private:
  std::vector<Example> examples_;
  const ActionSpace* space_;
  std::vector<ActionId> actions_;
  std::vector<ActionTrace> traces_;
};

/// Mean drop mean_prob[0] - mean_prob[k] over traces of one class.
double mean_trace_drop(std::span<const ActionTrace> traces, bool cross_task, std::size_t k);

}  // namespace recall
