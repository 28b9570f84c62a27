#include "recall/continual.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "recall/errors.hpp"

namespace recall {

std::string method_name(Method m) {
  switch (m) {
    case Method::kFineTune: return "FINE_TUNE";
    case Method::kEmr: return "EMR";
    case Method::kEwc: return "EWC";
    case Method::kTr: return "TR";
    case Method::kTrEwc: return "TR_EWC";
  }
  throw std::invalid_argument("unknown method");
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::kFineTune, Method::kEmr, Method::kEwc, Method::kTr, Method::kTrEwc})
    if (method_name(m) == name) return m;
  throw std::invalid_argument("unknown method '" + name + "'");
}

bool uses_replay(Method m) { return m == Method::kEmr || m == Method::kTr || m == Method::kTrEwc; }
bool uses_ewc(Method m) { return m == Method::kEwc || m == Method::kTrEwc; }
bool uses_fast_stage(Method m) { return m == Method::kTr || m == Method::kTrEwc; }
bool uses_memory(Method m) { return uses_replay(m) || uses_ewc(m); }

void TrainSchedule::validate() const {
  if (epochs_fast < 0 || epochs_slow < 1) throw std::invalid_argument("epoch counts must be positive");
  if (!(lr > 0) || (lr_fast && !(*lr_fast > 0))) throw std::invalid_argument("learning rates must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (ewc_lambda < 0) throw std::invalid_argument("ewc_lambda must be nonnegative");
  if (replay_batches < 1) throw std::invalid_argument("replay_batches must be positive");
  if (capacity < 1) throw std::invalid_argument("capacity must be positive");
  if (beam < 1) throw std::invalid_argument("beam must be positive");
}

Vocabulary build_vocabulary(const std::vector<TaskData>& tasks) {
  Vocabulary v;
  for (const auto& t : tasks)
    for (const auto& ex : t.train)
      for (const auto& w : tokenize(ex.utterance)) v.add(w);
  return v;
}

namespace {

struct StreamSetup {
  Vocabulary vocab;
  std::size_t num_actions;
};

StreamSetup build_stream(const std::vector<TaskData>& tasks, ActionRegistry& registry,
                         std::vector<ActionSpace>& spaces) {
  if (tasks.empty()) throw std::invalid_argument("task stream is empty");
  spaces.reserve(tasks.size());
  for (const auto& t : tasks) spaces.emplace_back(t.grammar, registry);
  return {build_vocabulary(tasks), registry.size()};
}

}  // namespace

ContinualLearner::ContinualLearner(const std::vector<TaskData>& tasks, const RunSpec& spec)
    : spec_(spec),
      model_([&] {
        StreamSetup s = build_stream(tasks, registry_, spaces_);
        ParserConfig pc = spec.parser;
        pc.rng_seed = mix_seed(spec.seed, 3);
        return ParserModel(pc, std::move(s.vocab), s.num_actions, static_cast<int>(tasks.size()));
      }()),
      optimizer_(model_.params().size(), kernels::AdamHyper{spec.schedule.lr}),
      rng_(mix_seed(spec.seed, 7)) {
  spec_.schedule.validate();
  const std::size_t k_tasks = tasks.size();
  occurrences_.assign(registry_.size(), 0);
  std::vector<int> owner(registry_.size(), -1);
  for (std::size_t k = 0; k < k_tasks; ++k) {
    tasks_.push_back(&tasks[k]);
    task_names_.push_back(tasks[k].name);
    for (ActionId a : spaces_[k].all_actions()) {
      if (occurrences_[static_cast<std::size_t>(a)]++ == 0) owner[static_cast<std::size_t>(a)] = static_cast<int>(k);
    }
  }
  for (std::size_t a = 0; a < registry_.size(); ++a)
    if (occurrences_[a] == 1) model_.tag_action(static_cast<ActionId>(a), owner[a]);

  const Vocabulary& vocab = model_.vocabulary();
  for (std::size_t k = 0; k < k_tasks; ++k) {
    std::vector<Example> train;
    std::vector<LogicalForm> lfs;
    for (const auto& ex : tasks[k].train) {
      train.push_back({vocab.encode(ex.utterance), spaces_[k].lf_to_actions(ex.lf), static_cast<int>(k)});
      lfs.push_back(ex.lf);
    }
    train_.push_back(std::move(train));
    train_lfs_.push_back(std::move(lfs));
    EvalSet test{static_cast<int>(k), {}, {}};
    for (const auto& ex : tasks[k].test) {
      test.words.push_back(vocab.encode(ex.utterance));
      test.gold.push_back(ex.lf);
    }
    test_.push_back(std::move(test));
  }
  grad_.assign(model_.params().size(), 0.0);
}

std::vector<ActionId> ContinualLearner::unseen_actions(int task) const {
  std::set<ActionId> seen;
  for (int i = 0; i < task; ++i)
    for (const auto& ex : train_[static_cast<std::size_t>(i)]) seen.insert(ex.actions.begin(), ex.actions.end());
  std::set<ActionId> current;
  for (const auto& ex : train_[static_cast<std::size_t>(task)]) current.insert(ex.actions.begin(), ex.actions.end());
  std::vector<ActionId> out;
  std::set_difference(current.begin(), current.end(), seen.begin(), seen.end(), std::back_inserter(out));
  return out;
}

ParamMask ContinualLearner::action_rows(const std::vector<ActionId>& actions) const {
  return model_.params().row_mask(model_.action_tensor(), std::set<int>(actions.begin(), actions.end()));
}

void ContinualLearner::train_step(std::span<const Example> batch, const ParamMask& mask, bool ewc, bool encoder_grad,
                                  double& loss_sum) {
  std::fill(grad_.begin(), grad_.end(), 0.0);
  loss_sum += kernels::batch_gradient(model_, batch, spaces_, grad_, 1.0 / static_cast<double>(batch.size()),
                                      encoder_grad, spec_.exec);
  auto& theta = model_.params().values();
  if (ewc && !fisher_.empty())
    kernels::ewc_gradient(grad_, theta, anchor_, fisher_, spec_.schedule.ewc_lambda, spec_.exec);
  optimizer_.step(theta, grad_, mask, spec_.exec);
}

double ContinualLearner::fast_stage(int task) {
  const std::vector<ActionId> unseen = unseen_actions(task);
  if (unseen.empty() || spec_.schedule.epochs_fast == 0) return 0.0;
  const ParamMask mask = action_rows(unseen);
  optimizer_.set_lr(spec_.schedule.lr_fast.value_or(spec_.schedule.lr));
  std::vector<Example> data = train_[static_cast<std::size_t>(task)];
  const std::size_t bs = spec_.schedule.batch_size;
  double last = 0.0;
  for (int epoch = 0; epoch < spec_.schedule.epochs_fast; ++epoch) {
    shuffle(data, rng_);
    double loss = 0.0;
    for (std::size_t b = 0; b < data.size(); b += bs) {
      const std::size_t len = std::min(bs, data.size() - b);
      double batch_loss = 0.0;
      train_step(std::span<const Example>(data).subspan(b, len), mask, false, false, batch_loss);
      loss += batch_loss;
    }
    last = loss / static_cast<double>(data.size());
  }
  optimizer_.set_lr(spec_.schedule.lr);
  return last;
}

std::vector<Example> ContinualLearner::replay_batch(std::size_t memory) {
  const auto& pool = memory_examples_[memory];
  if (pool.size() <= spec_.schedule.batch_size) return pool;
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  shuffle(idx, rng_);
  idx.resize(spec_.schedule.batch_size);
  std::sort(idx.begin(), idx.end());
  std::vector<Example> out;
  for (std::size_t i : idx) out.push_back(pool[i]);
  return out;
}

std::vector<SlowEpochStats> ContinualLearner::slow_stage(int task) {
  const bool replay = uses_replay(spec_.method);
  const bool ewc = uses_ewc(spec_.method) && task > 0;
  const ParamStore& ps = model_.params();
  const ParamMask current_mask = ps.partition_mask(true, {task});
  const ParamMask replay_mask = ps.partition_mask(true, {});
  optimizer_.set_lr(spec_.schedule.lr);

  std::vector<std::size_t> replay_order;
  if (replay)
    for (int r = 0; r < spec_.schedule.replay_batches; ++r)
      for (std::size_t i = 0; i < memory_examples_.size() && static_cast<int>(i) < task; ++i)
        if (!memory_examples_[i].empty()) replay_order.push_back(i);

  std::vector<Example> data = train_[static_cast<std::size_t>(task)];
  const std::size_t bs = spec_.schedule.batch_size;
  const std::size_t nb = (data.size() + bs - 1) / bs;
  const std::size_t nr = replay_order.size();
  std::vector<SlowEpochStats> stats;
  for (int epoch = 0; epoch < spec_.schedule.epochs_slow; ++epoch) {
    shuffle(data, rng_);
    SlowEpochStats s;
    std::vector<double> replay_loss(memory_examples_.size(), 0.0);
    std::vector<std::size_t> replay_count(memory_examples_.size(), 0);
    double current_loss = 0.0;
    std::size_t next_replay = 0;
    for (std::size_t b = 0; b < nb; ++b) {
      const std::size_t len = std::min(bs, data.size() - b * bs);
      train_step(std::span<const Example>(data).subspan(b * bs, len), current_mask, ewc, true, current_loss);
      // replay j follows current batch floor((j + 1) * nb / (nr + 1))
      while (next_replay < nr && (next_replay + 1) * nb / (nr + 1) <= b + 1) {
        const std::size_t mem = replay_order[next_replay++];
        const std::vector<Example> batch = replay_batch(mem);
        double loss = 0.0;
        train_step(batch, replay_mask, ewc, true, loss);
        replay_loss[mem] += loss;
        replay_count[mem] += batch.size();
      }
    }
    s.current_mean = current_loss / static_cast<double>(data.size());
    s.l_emr = s.current_mean;
    for (std::size_t i = 0; i < replay_loss.size(); ++i) {
      if (replay_count[i] == 0) continue;
      s.replay_means.push_back(replay_loss[i] / static_cast<double>(replay_count[i]));
      s.l_emr += s.replay_means.back();
    }
    s.omega = ewc ? ewc_penalty() : 0.0;
    stats.push_back(std::move(s));
  }
  return stats;
}

RowMatrix ContinualLearner::utterance_features(int task) const {
  const auto& data = train_[static_cast<std::size_t>(task)];
  RowMatrix f(static_cast<Eigen::Index>(data.size()), model_.config().hidden_dim);
  for (std::size_t i = 0; i < data.size(); ++i)
    f.row(static_cast<Eigen::Index>(i)) = model_.mean_encoding(data[i].words).transpose();
  return f;
}

void ContinualLearner::populate_memory(int task) {
  const auto k = static_cast<std::size_t>(task);
  if (memories_.size() <= k) {
    memories_.resize(k + 1);
    memory_examples_.resize(k + 1);
  }
  std::vector<ActionSequence> actions;
  for (const auto& ex : train_[k]) actions.push_back(ex.actions);
  RowMatrix features;
  SamplerInput in;
  in.lfs = train_lfs_[k];
  in.actions = actions;
  in.capacity = spec_.schedule.capacity;
  in.seed = mix_seed(spec_.seed, 1000 + k);
  in.exec = spec_.exec;
  if (spec_.sampler == SamplerKind::kFss) {
    features = utterance_features(task);
    in.features = &features;
  }
  const Selection sel = select_memory(spec_.sampler, in);
  Memory mem;
  mem.capacity = spec_.schedule.capacity;
  std::vector<Example> examples;
  for (std::size_t j = 0; j < sel.indices.size(); ++j) {
    const std::size_t i = sel.indices[j];
    mem.entries.push_back({tasks_[k]->train[i].utterance, train_lfs_[k][i], actions[i], task, sel.clusters[j]});
    examples.push_back(train_[k][i]);
  }
  memories_[k] = std::move(mem);
  memory_examples_[k] = std::move(examples);
}

std::vector<double> ContinualLearner::compute_fisher() const {
  std::size_t n = 0;
  for (const auto& m : memory_examples_) n += m.size();
  if (n == 0) throw EmptyMemory();
  std::vector<double> fisher(model_.params().size(), 0.0), g(model_.params().size());
  for (const auto& mem : memory_examples_)
    for (const Example& ex : mem) {
      std::fill(g.begin(), g.end(), 0.0);
      model_.accumulate_gradient(ex, spaces_[static_cast<std::size_t>(ex.task)], 1.0, g);
      for (std::size_t j = 0; j < g.size(); ++j) fisher[j] += g[j] * g[j];
    }
  for (double& f : fisher) f /= static_cast<double>(n);
  return fisher;
}

void ContinualLearner::snapshot() {
  anchor_ = model_.params().values();
  fisher_ = compute_fisher();
}

double ContinualLearner::ewc_penalty() const {
  if (fisher_.empty()) return 0.0;
  return spec_.schedule.ewc_lambda * kernels::ewc_penalty(model_.params().values(), anchor_, fisher_, spec_.exec);
}

TaskAccuracy ContinualLearner::evaluate(int eval_task) const {
  return evaluate_task(model_, test_[static_cast<std::size_t>(eval_task)], spaces_, spec_.schedule.beam, spec_.exec);
}

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

RunLog ContinualLearner::run(const StageObserver& observer) {
  const int n = static_cast<int>(num_tasks());
  RunLog& log = log_;
  log.rows.clear();
  log.traces.clear();
  log.eval = EvalResult(num_tasks());
  TraceRecorder traces(train_[0], spaces_[0], registry_, occurrences_);
  for (int k = 0; k < n; ++k) {
    const auto start = std::chrono::steady_clock::now();
    optimizer_.reset();
    double loss_fast = 0.0;
    if (uses_fast_stage(spec_.method)) {
      const std::vector<double> before = model_.params().values();
      loss_fast = fast_stage(k);
      if (observer.after_fast) observer.after_fast(k, before, *this);
    }
    const std::vector<double> before = model_.params().values();
    const auto epochs = slow_stage(k);
    if (observer.after_slow) observer.after_slow(k, before, *this);
    const double loss_slow = epochs.back().l_emr + epochs.back().omega;
    if (uses_memory(spec_.method)) populate_memory(k);
    if (uses_ewc(spec_.method)) snapshot();
    const double wall = elapsed_ms(start);

    for (int i = 0; i <= k; ++i) log.eval.set(static_cast<std::size_t>(i), static_cast<std::size_t>(k), evaluate(i));
    traces.record(model_);
    log.traces = traces.traces();
    for (int i = 0; i <= k; ++i)
      log.rows.push_back({spec_.seed, method_name(spec_.method), sampler_name(spec_.sampler), k,
                          task_names_[static_cast<std::size_t>(i)],
                          log.eval.acc(static_cast<std::size_t>(i), static_cast<std::size_t>(k)),
                          log.eval.acc_avg(static_cast<std::size_t>(k)), log.eval.acc_whole(static_cast<std::size_t>(k)),
                          loss_fast, loss_slow, wall});
    if (observer.after_task) observer.after_task(k, *this);
  }
  return log;
}

RunLog ContinualLearner::run_joint() {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = num_tasks();
  std::vector<Example> data;
  for (const auto& t : train_) data.insert(data.end(), t.begin(), t.end());
  optimizer_.reset();
  optimizer_.set_lr(spec_.schedule.lr);
  const ParamMask all(model_.params().size(), true);
  const std::size_t bs = spec_.schedule.batch_size;
  double last = 0.0;
  for (int epoch = 0; epoch < spec_.schedule.epochs_slow; ++epoch) {
    shuffle(data, rng_);
    double loss = 0.0;
    for (std::size_t b = 0; b < data.size(); b += bs)
      train_step(std::span<const Example>(data).subspan(b, std::min(bs, data.size() - b)), all, false, true, loss);
    last = loss / static_cast<double>(data.size());
  }
  const double wall = elapsed_ms(start);
  RunLog log;
  log.eval = EvalResult(n);
  std::vector<TaskAccuracy> per_task;
  std::vector<double> accs;
  for (std::size_t i = 0; i < n; ++i) {
    per_task.push_back(evaluate(static_cast<int>(i)));
    log.eval.set(i, n - 1, per_task.back());
    accs.push_back(per_task.back().acc());
  }
  const double whole = acc_whole(per_task);
  log.rows.push_back({spec_.seed, "ORACLE", "NONE", static_cast<int>(n) - 1, "all", whole, acc_avg(accs), whole, 0.0,
                      last, wall});
  return log;
}

RunLog run_stream(const std::vector<TaskData>& tasks, const RunSpec& spec, const StageObserver& observer) {
  ContinualLearner learner(tasks, spec);
  return learner.run(observer);
}

RunLog oracle_train(const std::vector<TaskData>& tasks, const RunSpec& spec) {
  ContinualLearner learner(tasks, spec);
  return learner.run_joint();
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string runlog_header() {
  return "seed,method,sampler,task_index,eval_task,acc,acc_avg,acc_whole,loss_fast,loss_slow,wall_ms,order";
}

std::string format_runlog_row(const RunLogRow& r) {
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.1f", r.wall_ms);
  return std::to_string(r.seed) + "," + r.method + "," + r.sampler + "," + std::to_string(r.task_index) + "," +
         r.eval_task + "," + num(r.acc) + "," + num(r.acc_avg) + "," + num(r.acc_whole) + "," + num(r.loss_fast) +
         "," + num(r.loss_slow) + "," + wall + "," + std::to_string(r.order);
}

std::vector<RunLogRow> read_runlog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<RunLogRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != runlog_header()) throw MalformedRecord(line_no, "unexpected header");
      continue;
    }
    const auto c = split_csv(line);
    if (c.size() != 12) throw MalformedRecord(line_no, "expected 12 columns");
    try {
      RunLogRow r;
      r.seed = std::stoull(c[0]);
      r.method = c[1];
      r.sampler = c[2];
      r.task_index = std::stoi(c[3]);
      r.eval_task = c[4];
      r.acc = std::stod(c[5]);
      r.acc_avg = std::stod(c[6]);
      r.acc_whole = std::stod(c[7]);
      r.loss_fast = std::stod(c[8]);
      r.loss_slow = std::stod(c[9]);
      r.wall_ms = std::stod(c[10]);
      r.order = std::stoi(c[11]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw MalformedRecord(line_no, e.what());
    }
  }
  return rows;
}

std::string traces_header() {
  return "seed,method,sampler,order,action_id,action_text,origin_task,class,k,mean_prob";
}

std::vector<std::string> format_trace_rows(const RunLog& log, std::uint64_t seed, const std::string& method,
                                           const std::string& sampler, int order) {
  std::vector<std::string> out;
  for (const auto& t : log.traces) {
    std::string text = t.text;
    std::replace(text.begin(), text.end(), ',', ';');
    for (std::size_t k = 0; k < t.mean_prob.size(); ++k)
      out.push_back(std::to_string(seed) + "," + method + "," + sampler + "," + std::to_string(order) + "," +
                    std::to_string(t.action) + "," + text +
                    "," + std::to_string(t.origin_task) + "," + (t.cross_task ? "cross-task" : "task-specific") + "," +
                    std::to_string(k) + "," + num(t.mean_prob[k]));
  }
  return out;
}

}  // namespace recall
