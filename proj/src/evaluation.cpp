#include "recall/evaluation.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include "recall/errors.hpp"

namespace recall {

bool exact_match(const LogicalForm& pred, const LogicalForm& gold) { return pred.text() == gold.text(); }

bool exact_match(std::string_view pred, std::string_view gold) {
  try {
    return canonicalize(pred) == canonicalize(gold);
  } catch (const MalformedLf&) {
    return false;
  }
}

double acc_avg(std::span<const double> accs) {
  if (accs.empty()) return 0.0;
  double sum = 0.0;
  for (double a : accs) sum += a;
  return sum / static_cast<double>(accs.size());
}

double acc_whole(std::span<const TaskAccuracy> per_task) {
  std::size_t correct = 0, total = 0;
  for (const auto& t : per_task) {
    correct += t.correct;
    total += t.total;
  }
  return TaskAccuracy{correct, total}.acc();
}

EvalResult::EvalResult(std::size_t num_tasks) : n_(num_tasks), cells_(num_tasks * num_tasks) {}

std::size_t EvalResult::index(std::size_t i, std::size_t k) const {
  if (i > k || k >= n_) throw std::out_of_range("acc_{i,k} needs i <= k < num_tasks");
  return k * n_ + i;
}

void EvalResult::set(std::size_t i, std::size_t k, TaskAccuracy result) { cells_[index(i, k)] = result; }

const TaskAccuracy& EvalResult::at(std::size_t i, std::size_t k) const { return cells_[index(i, k)]; }

double EvalResult::acc_avg(std::size_t k) const {
  std::vector<double> accs;
  for (std::size_t i = 0; i <= k; ++i) accs.push_back(acc(i, k));
  return recall::acc_avg(accs);
}

double EvalResult::acc_whole(std::size_t k) const {
  index(0, k);
  return recall::acc_whole(std::span<const TaskAccuracy>(cells_.data() + k * n_, k + 1));
}

TaskAccuracy evaluate_task(const ParserModel& model, const EvalSet& set, std::span<const ActionSpace> spaces,
                           int beam, kernels::Exec exec) {
  if (set.words.size() != set.gold.size()) throw std::invalid_argument("evaluate_task: size mismatch");
  const std::vector<int> tasks(set.words.size(), set.task);
  const auto decoded = kernels::batch_decode(model, set.words, tasks, spaces, beam, exec);
  const ActionSpace& space = spaces[static_cast<std::size_t>(set.task)];
  TaskAccuracy out{0, set.words.size()};
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    if (!decoded[i]) continue;
    if (exact_match(space.actions_to_lf(*decoded[i]), set.gold[i])) ++out.correct;
  }
  return out;
}

std::vector<double> mean_gold_probability(const ParserModel& model, std::span<const Example> examples,
                                          const ActionSpace& space, std::span<const ActionId> actions) {
  std::map<ActionId, std::pair<double, long>> acc;
  for (const Example& ex : examples) {
    const auto probs = model.gold_probabilities(ex, space);
    for (std::size_t t = 0; t < probs.size(); ++t) {
      auto& [sum, n] = acc[ex.actions[t]];
      sum += probs[t];
      ++n;
    }
  }
  std::vector<double> out;
  out.reserve(actions.size());
  for (ActionId a : actions) {
    const auto it = acc.find(a);
    out.push_back(it == acc.end() ? -1.0 : it->second.first / static_cast<double>(it->second.second));
  }
  return out;
}

TraceRecorder::TraceRecorder(std::vector<Example> first_task_train, const ActionSpace& first_space,
                             const ActionRegistry& registry, const std::vector<int>& occurrences)
    : examples_(std::move(first_task_train)), space_(&first_space) {
  std::vector<bool> seen(registry.size(), false);
  for (const auto& ex : examples_)
    for (ActionId a : ex.actions) seen[static_cast<std::size_t>(a)] = true;
  for (ActionId a = 0; a < static_cast<ActionId>(registry.size()); ++a) {
    if (!seen[static_cast<std::size_t>(a)]) continue;
    actions_.push_back(a);
    const int owners = static_cast<std::size_t>(a) < occurrences.size() ? occurrences[static_cast<std::size_t>(a)] : 1;
    traces_.push_back({a, registry.info(a).key, examples_.empty() ? 0 : examples_.front().task, owners >= 2, {}});
  }
}

void TraceRecorder::record(const ParserModel& model) {
  const auto means = mean_gold_probability(model, examples_, *space_, actions_);
  for (std::size_t i = 0; i < traces_.size(); ++i) traces_[i].mean_prob.push_back(means[i]);
}

double mean_trace_drop(std::span<const ActionTrace> traces, bool cross_task, std::size_t k) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& t : traces) {
    if (t.cross_task != cross_task || t.mean_prob.size() <= k) continue;
    sum += t.mean_prob[0] - t.mean_prob[k];
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace recall
