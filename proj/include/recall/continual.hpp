#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "recall/actions.hpp"
#include "recall/corpus.hpp"
#include "recall/evaluation.hpp"
#include "recall/optimizer.hpp"
#include "recall/parser.hpp"
#include "recall/random.hpp"
#include "recall/sampling.hpp"

namespace recall {

enum class Method { kFineTune, kEmr, kEwc, kTr, kTrEwc };

std::string method_name(Method m);
/// Accepts FINE_TUNE, EMR, EWC, TR, TR_EWC.
Method parse_method(const std::string& name);

bool uses_replay(Method m);
bool uses_ewc(Method m);
bool uses_fast_stage(Method m);
/// Methods that keep memories, for replay or for the Fisher estimate.
bool uses_memory(Method m);

struct TrainSchedule {
  int epochs_fast = 5;
  int epochs_slow = 10;
  double lr = 0.0025;
  std::optional<double> lr_fast;  // defaults to lr
  std::size_t batch_size = 16;
  double ewc_lambda = 10.0;
  int replay_batches = 1;  // per memory per epoch
  std::size_t capacity = 10;
  int beam = 1;

  /// Throws std::invalid_argument.
  void validate() const;
};

struct RunSpec {
  Method method = Method::kTr;
  SamplerKind sampler = SamplerKind::kDlfs;
  TrainSchedule schedule;
  ParserConfig parser;
  std::uint64_t seed = 1;
  kernels::Exec exec = kernels::Exec::kSerial;
};

struct RunLogRow {
  std::uint64_t seed = 0;
  std::string method;
  std::string sampler;
  int task_index = 0;
  std::string eval_task;
  double acc = 0.0;
  double acc_avg = 0.0;
  double acc_whole = 0.0;
  double loss_fast = 0.0;
  double loss_slow = 0.0;
  double wall_ms = 0.0;
  int order = 0;  // task-order permutation index
};

struct RunLog {
  std::vector<RunLogRow> rows;
  std::vector<ActionTrace> traces;
  EvalResult eval;
};

/// Per-epoch slow-stage losses. l_emr is the mean current-task loss plus the
/// mean loss of every replayed memory; omega is the EWC penalty at the end
/// of the epoch.
struct SlowEpochStats {
  double current_mean = 0.0;
  std::vector<double> replay_means;
  double l_emr = 0.0;
  double omega = 0.0;
};

class ContinualLearner;

/// Hooks called with the parameters as they were before the stage.
struct StageObserver {
  std::function<void(int task, const std::vector<double>& before, const ContinualLearner&)> after_fast;
  std::function<void(int task, const std::vector<double>& before, const ContinualLearner&)> after_slow;
  std::function<void(int task, const ContinualLearner&)> after_task;
};

/// Trains one parser over an ordered task stream.
///
/// The action registry, vocabulary and partition tags are built over the
/// whole stream on construction. An action used by exactly one task grammar
/// is specific to that task; all others are shared.
class ContinualLearner {
 public:
  ContinualLearner(const std::vector<TaskData>& tasks, const RunSpec& spec);
  ContinualLearner(const ContinualLearner&) = delete;
  ContinualLearner& operator=(const ContinualLearner&) = delete;

  const RunSpec& spec() const noexcept { return spec_; }
  std::size_t num_tasks() const noexcept { return tasks_.size(); }
  const ActionRegistry& registry() const noexcept { return registry_; }
  std::span<const ActionSpace> spaces() const noexcept { return spaces_; }
  ParserModel& model() noexcept { return model_; }
  const ParserModel& model() const noexcept { return model_; }
  const std::vector<Example>& train_examples(int task) const { return train_[static_cast<std::size_t>(task)]; }
  const EvalSet& test_set(int task) const { return test_[static_cast<std::size_t>(task)]; }
  const std::vector<Memory>& memories() const noexcept { return memories_; }
  const std::vector<double>& fisher() const noexcept { return fisher_; }
  const std::vector<double>& anchor() const noexcept { return anchor_; }
  /// Number of task grammars containing each action.
  const std::vector<int>& action_occurrences() const noexcept { return occurrences_; }

  /// Actions of task k's training data not used by any earlier task's.
  std::vector<ActionId> unseen_actions(int task) const;

  /// Trains only the embedding rows of unseen actions. Returns the mean loss
  /// of the last epoch (0 when nothing is unseen).
  double fast_stage(int task);
  /// Current-task batches with shared and task-k parameters, interleaved
  /// with replay batches that train shared parameters only.
  std::vector<SlowEpochStats> slow_stage(int task);
  /// Selects this task's memory with the run's sampler.
  void populate_memory(int task);
  /// Mean squared per-instance gradient over every stored memory. Throws
  /// EmptyMemory.
  std::vector<double> compute_fisher() const;
  /// Stores the current parameters as the EWC anchor and refreshes Fisher.
  void snapshot();
  /// lambda * sum F (theta - anchor)^2; 0 before the first snapshot.
  double ewc_penalty() const;

  TaskAccuracy evaluate(int eval_task) const;

  /// Runs the whole stream with the configured method.
  RunLog run(const StageObserver& observer = {});
  /// Rows and traces logged so far; complete tasks only when a run throws.
  const RunLog& partial_log() const noexcept { return log_; }
  /// Supervised training on every task's data at once, evaluated on the
  /// combined test set. One log row with eval_task "all".
  RunLog run_joint();

 private:
  ParamMask action_rows(const std::vector<ActionId>& actions) const;
  void train_step(std::span<const Example> batch, const ParamMask& mask, bool ewc, bool encoder_grad,
                  double& loss_sum);
  std::vector<Example> replay_batch(std::size_t memory);
  RowMatrix utterance_features(int task) const;

  RunSpec spec_;
  std::vector<std::string> task_names_;
  std::vector<const TaskData*> tasks_;
  ActionRegistry registry_;
  std::vector<ActionSpace> spaces_;
  std::vector<int> occurrences_;
  std::vector<std::vector<Example>> train_;
  std::vector<std::vector<LogicalForm>> train_lfs_;
  std::vector<EvalSet> test_;
  ParserModel model_;
  Adam optimizer_;
  Rng rng_;
  std::vector<Memory> memories_;
  std::vector<std::vector<Example>> memory_examples_;
  std::vector<double> anchor_, fisher_;
  std::vector<double> grad_;
  RunLog log_;
};

/// Convenience wrappers.
RunLog run_stream(const std::vector<TaskData>& tasks, const RunSpec& spec, const StageObserver& observer = {});
RunLog oracle_train(const std::vector<TaskData>& tasks, const RunSpec& spec);

/// Parser vocabulary over every training utterance of the stream.
Vocabulary build_vocabulary(const std::vector<TaskData>& tasks);

std::string runlog_header();
std::string format_runlog_row(const RunLogRow& row);
/// Throws MalformedRecord.
std::vector<RunLogRow> read_runlog(const std::filesystem::path& path);

std::string traces_header();
/// Rows of traces.csv for one run: seed, method, sampler, order, action_id,
/// action_text, origin_task, class, k, mean_prob.
std::vector<std::string> format_trace_rows(const RunLog& log, std::uint64_t seed, const std::string& method,
                                           const std::string& sampler, int order = 0);

}  // namespace recall
