#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "recall/continual.hpp"
#include "recall/errors.hpp"

using namespace recall;

namespace {

SynthSpec small_stream(int tasks, std::uint64_t seed = 1) {
  SynthSpec s;
  s.num_tasks = tasks;
  s.train_per_task = 24;
  s.valid_per_task = 4;
  s.test_per_task = 8;
  s.seed = seed;
  return s;
}

RunSpec small_run(Method m, std::uint64_t seed = 1) {
  RunSpec r;
  r.method = m;
  r.sampler = SamplerKind::kRandom;
  r.seed = seed;
  r.parser.word_emb_dim = 12;
  r.parser.hidden_dim = 12;
  r.parser.action_emb_dim = 6;
  r.schedule.epochs_fast = 2;
  r.schedule.epochs_slow = 2;
  r.schedule.lr = 0.02;
  r.schedule.batch_size = 8;
  r.schedule.capacity = 4;
  return r;
}

std::vector<TaskData> stream(int tasks, std::uint64_t seed = 1) {
  return tasks_from_synthetic(generate_synthetic(small_stream(tasks, seed)));
}

double mean_nll(const ContinualLearner& l, int task) {
  double s = 0.0;
  for (const auto& ex : l.train_examples(task)) s += l.model().sequence_nll(ex, l.spaces()[static_cast<std::size_t>(task)]);
  return s / static_cast<double>(l.train_examples(task).size());
}

std::vector<std::size_t> changed(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::memcmp(&a[i], &b[i], sizeof(double)) != 0) out.push_back(i);
  return out;
}

}  // namespace

TEST_CASE("method names round trip") {
  for (Method m : {Method::kFineTune, Method::kEmr, Method::kEwc, Method::kTr, Method::kTrEwc})
    CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("GEM"), std::invalid_argument);
  CHECK(uses_fast_stage(Method::kTr));
  CHECK_FALSE(uses_fast_stage(Method::kEmr));
  CHECK(uses_memory(Method::kEwc));
  CHECK_FALSE(uses_replay(Method::kEwc));
  CHECK_FALSE(uses_memory(Method::kFineTune));
}

TEST_CASE("schedule validation") {
  TrainSchedule s;
  CHECK_NOTHROW(s.validate());
  s.lr = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = {};
  s.batch_size = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = {};
  s.lr_fast = -1.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("action partition follows grammar membership") {
  const auto tasks = stream(3);
  ContinualLearner l(tasks, small_run(Method::kTr));
  const auto& occ = l.action_occurrences();
  std::set<ActionId> in_task[3];
  for (int k = 0; k < 3; ++k)
    for (ActionId a : l.spaces()[static_cast<std::size_t>(k)].all_actions()) in_task[k].insert(a);
  for (ActionId a = 0; a < static_cast<ActionId>(l.registry().size()); ++a) {
    int owners = 0, owner = -1;
    for (int k = 0; k < 3; ++k)
      if (in_task[k].count(a)) {
        ++owners;
        owner = k;
      }
    CHECK(occ[static_cast<std::size_t>(a)] == owners);
    CHECK(l.model().action_tag(a) == (owners == 1 ? owner : kShared));
  }
}

TEST_CASE("registries of different task orders are equal as sets") {
  auto tasks = stream(3);
  ContinualLearner a(tasks, small_run(Method::kFineTune));
  std::swap(tasks[0], tasks[2]);
  ContinualLearner b(tasks, small_run(Method::kFineTune));
  std::set<std::string> ka, kb;
  for (const auto& i : a.registry().actions()) ka.insert(i.key);
  for (const auto& i : b.registry().actions()) kb.insert(i.key);
  CHECK(ka == kb);
}

TEST_CASE("unseen actions") {
  const auto tasks = stream(2);
  ContinualLearner l(tasks, small_run(Method::kTr));
  std::set<ActionId> first;
  for (const auto& ex : l.train_examples(0)) first.insert(ex.actions.begin(), ex.actions.end());
  const auto u0 = l.unseen_actions(0);
  CHECK(std::set<ActionId>(u0.begin(), u0.end()) == first);
  for (ActionId a : l.unseen_actions(1)) CHECK(first.count(a) == 0);

  // a task identical to its predecessor brings nothing new
  std::vector<TaskData> twice{tasks[0], tasks[0]};
  twice[1].name = "again";
  ContinualLearner same(twice, small_run(Method::kTr));
  CHECK(same.unseen_actions(1).empty());

  // disjoint grammars: everything is new
  SynthSpec disjoint = small_stream(2);
  disjoint.shared_rule_count = 0;
  disjoint.shared_leaf_count = 0;
  disjoint.private_leaf_count = 8;
  const auto dtasks = tasks_from_synthetic(generate_synthetic(disjoint));
  ContinualLearner d(dtasks, small_run(Method::kTr));
  std::set<ActionId> second;
  for (const auto& ex : d.train_examples(1)) second.insert(ex.actions.begin(), ex.actions.end());
  const auto u1 = d.unseen_actions(1);
  CHECK(std::set<ActionId>(u1.begin(), u1.end()) == second);
}

TEST_CASE("fast stage touches only unseen action rows") {
  const auto tasks = stream(2);
  ContinualLearner l(tasks, small_run(Method::kTr));
  l.slow_stage(0);
  const auto before = l.model().params().values();
  l.fast_stage(1);
  const auto& ps = l.model().params();
  const ParamMask allowed = ps.row_mask(l.model().action_tensor(),
                                        [&] {
                                          const auto u = l.unseen_actions(1);
                                          return std::set<int>(u.begin(), u.end());
                                        }());
  const auto diff = changed(before, ps.values());
  CHECK_FALSE(diff.empty());
  for (std::size_t i : diff) CHECK(allowed[i]);

  std::vector<TaskData> twice{tasks[0], tasks[0]};
  twice[1].name = "again";
  ContinualLearner same(twice, small_run(Method::kTr));
  const auto b2 = same.model().params().values();
  CHECK(same.fast_stage(1) == 0.0);
  CHECK(same.model().params().values() == b2);
}

TEST_CASE("fast stage lowers the training loss on a fresh task") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto tasks = stream(1, seed);
    RunSpec spec = small_run(Method::kTr, seed);
    spec.schedule.epochs_fast = 5;
    ContinualLearner l(tasks, spec);
    const double before = mean_nll(l, 0);
    l.fast_stage(0);
    CHECK(mean_nll(l, 0) < before);
  }
}

TEST_CASE("slow stage freezes earlier task-specific parameters") {
  const auto tasks = stream(3);
  for (bool dar : {false, true}) {
    RunSpec spec = small_run(Method::kTrEwc);
    spec.parser.dar_enabled = dar;
    int slow_checks = 0;
    StageObserver obs;
    obs.after_slow = [&](int k, const std::vector<double>& before, const ContinualLearner& l) {
      const auto& tags = l.model().params().tags();
      for (std::size_t i : changed(before, l.model().params().values())) CHECK((tags[i] == kShared || tags[i] == k));
      ++slow_checks;
    };
    std::vector<std::vector<double>> end_of_task;
    obs.after_task = [&](int, const ContinualLearner& l) { end_of_task.push_back(l.model().params().values()); };
    ContinualLearner l(tasks, spec);
    l.run(obs);
    CHECK(slow_checks == 3);
    // after the run, each task's own parameters still hold their end-of-task values
    const auto& tags = l.model().params().tags();
    const auto& final_values = l.model().params().values();
    for (std::size_t i = 0; i < tags.size(); ++i)
      if (tags[i] >= 0) CHECK(std::memcmp(&final_values[i], &end_of_task[static_cast<std::size_t>(tags[i])][i], 8) == 0);
  }
}

TEST_CASE("k = 1 slow stage is plain supervised training") {
  const auto tasks = stream(1);
  const RunLog ft = run_stream(tasks, small_run(Method::kFineTune));
  for (Method m : {Method::kEmr, Method::kEwc}) {
    const RunLog other = run_stream(tasks, small_run(m));
    REQUIRE(other.rows.size() == ft.rows.size());
    CHECK(other.rows[0].acc == ft.rows[0].acc);
    CHECK(other.rows[0].loss_slow == ft.rows[0].loss_slow);
  }
  const RunLog tr = run_stream(tasks, small_run(Method::kTr));
  const RunLog tr_ewc = run_stream(tasks, small_run(Method::kTrEwc));
  CHECK(tr.rows[0].acc == tr_ewc.rows[0].acc);
  CHECK(tr.rows[0].loss_slow == tr_ewc.rows[0].loss_slow);

  const RunLog oracle = oracle_train(tasks, small_run(Method::kFineTune));
  REQUIRE(oracle.rows.size() == 1);
  CHECK(oracle.rows[0].eval_task == "all");
  CHECK(oracle.rows[0].acc_whole == ft.rows[0].acc_whole);
  CHECK(oracle.rows[0].loss_slow == ft.rows[0].loss_slow);
}

TEST_CASE("EWC penalty, gradient and Fisher") {
  const auto tasks = stream(2);
  ContinualLearner l(tasks, small_run(Method::kTrEwc));
  CHECK_THROWS_AS(l.compute_fisher(), EmptyMemory);
  CHECK(l.ewc_penalty() == 0.0);
  l.slow_stage(0);
  l.populate_memory(0);
  l.snapshot();
  CHECK(l.ewc_penalty() == 0.0);
  for (double f : l.fisher()) CHECK(f >= 0.0);
  std::vector<double> grad(l.fisher().size(), 0.0);
  kernels::ewc_gradient(grad, l.model().params().values(), l.anchor(), l.fisher(), 10.0, kernels::Exec::kSerial);
  for (double g : grad) CHECK(g == 0.0);
  l.slow_stage(1);
  CHECK(l.ewc_penalty() > 0.0);
}

TEST_CASE("Fisher of a single instance is its squared gradient") {
  const auto tasks = stream(1);
  RunSpec spec = small_run(Method::kEwc);
  spec.schedule.capacity = 1;
  ContinualLearner l(tasks, spec);
  l.populate_memory(0);
  REQUIRE(l.memories()[0].entries.size() == 1);
  const MemoryEntry& e = l.memories()[0].entries[0];
  const Example ex{l.model().vocabulary().encode(e.utterance), e.actions, 0};
  std::vector<double> g(l.model().params().size(), 0.0);
  l.model().accumulate_gradient(ex, l.spaces()[0], 1.0, g);
  const auto fisher = l.compute_fisher();
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(fisher[i] == g[i] * g[i]);
}

TEST_CASE("a huge EWC weight holds high-Fisher coordinates in place") {
  const auto tasks = stream(2);
  auto movement = [&](double lambda) {
    RunSpec spec = small_run(Method::kEwc);
    spec.schedule.ewc_lambda = lambda;
    ContinualLearner l(tasks, spec);
    l.slow_stage(0);
    l.populate_memory(0);
    l.snapshot();
    l.slow_stage(1);
    const auto& f = l.fisher();
    std::vector<std::size_t> idx(f.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return f[a] > f[b]; });
    double m = 0.0;
    for (std::size_t j = 0; j < 50; ++j) {
      const double d = l.model().params().values()[idx[j]] - l.anchor()[idx[j]];
      m += d * d;
    }
    return std::sqrt(m);
  };
  CHECK(movement(1e9) < movement(0.0));
}

TEST_CASE("L_EMR is the current mean plus each memory's mean") {
  const auto tasks = stream(3);
  RunSpec spec = small_run(Method::kEmr);
  ContinualLearner l(tasks, spec);
  l.slow_stage(0);
  l.populate_memory(0);
  l.slow_stage(1);
  l.populate_memory(1);

  // a vanishing learning rate leaves the parameters bitwise fixed, so the
  // epoch statistics can be recomputed on the same values
  RunSpec frozen = spec;
  frozen.schedule.lr = 1e-300;
  ContinualLearner f(tasks, frozen);
  f.model().params().values() = l.model().params().values();
  f.populate_memory(0);
  f.populate_memory(1);
  const auto before = f.model().params().values();
  const auto stats = f.slow_stage(2);
  CHECK(f.model().params().values() == before);

  double current = mean_nll(f, 2);
  std::vector<double> replay;
  for (int i = 0; i < 2; ++i) {
    double s = 0.0;
    for (const auto& e : f.memories()[static_cast<std::size_t>(i)].entries)
      s += f.model().sequence_nll({f.model().vocabulary().encode(e.utterance), e.actions, i},
                                  f.spaces()[static_cast<std::size_t>(i)]);
    replay.push_back(s / static_cast<double>(f.memories()[static_cast<std::size_t>(i)].entries.size()));
  }
  for (const auto& s : stats) {
    REQUIRE(s.replay_means.size() == 2);
    CHECK(std::abs(s.current_mean - current) <= 1e-9);
    CHECK(std::abs(s.replay_means[0] - replay[0]) <= 1e-9);
    CHECK(std::abs(s.replay_means[1] - replay[1]) <= 1e-9);
    CHECK(std::abs(s.l_emr - (current + replay[0] + replay[1])) <= 1e-9);
    CHECK(s.omega == 0.0);
  }
}

TEST_CASE("memories respect capacity and sampler constraints") {
  const auto tasks = stream(2);
  for (SamplerKind kind : {SamplerKind::kRandom, SamplerKind::kFss, SamplerKind::kLfs, SamplerKind::kDlfs,
                           SamplerKind::kBalance}) {
    RunSpec spec = small_run(Method::kTr);
    spec.sampler = kind;
    ContinualLearner l(tasks, spec);
    l.populate_memory(0);
    const auto& m = l.memories()[0];
    CHECK(m.entries.size() == spec.schedule.capacity);
    if (kind == SamplerKind::kDlfs || kind == SamplerKind::kLfs) {
      std::set<int> clusters;
      for (const auto& e : m.entries) clusters.insert(e.cluster_id);
      CHECK(clusters.size() == m.entries.size());
    }
  }
  RunSpec big = small_run(Method::kTr);
  big.schedule.capacity = 1000;
  ContinualLearner l(tasks, big);
  l.populate_memory(0);
  CHECK(l.memories()[0].entries.size() == tasks[0].train.size());
}

TEST_CASE("runs are reproducible and logs are complete") {
  const auto tasks = stream(3);
  for (Method m : {Method::kFineTune, Method::kTrEwc}) {
    const RunLog a = run_stream(tasks, small_run(m, 4));
    const RunLog b = run_stream(tasks, small_run(m, 4));
    REQUIRE(a.rows.size() == 6);
    REQUIRE(b.rows.size() == 6);
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      RunLogRow x = a.rows[i], y = b.rows[i];
      x.wall_ms = y.wall_ms = 0;
      CHECK(format_runlog_row(x) == format_runlog_row(y));
    }
    CHECK(a.traces.size() == b.traces.size());
    for (const auto& t : a.traces) {
      CHECK(t.mean_prob.size() == 3);
      for (double p : t.mean_prob) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
      }
    }
    for (const auto& r : a.rows) {
      CHECK(r.task_index >= 0);
      CHECK(r.acc >= 0.0);
      CHECK(r.acc <= 1.0);
    }
  }
}

TEST_CASE("run log csv round trip") {
  const auto path = std::filesystem::temp_directory_path() / "recall_runlog_test.csv";
  const RunLog log = run_stream(stream(2), small_run(Method::kTr));
  {
    std::ofstream out(path);
    out << runlog_header() << '\n';
    for (const auto& r : log.rows) out << format_runlog_row(r) << '\n';
  }
  const auto rows = read_runlog(path);
  REQUIRE(rows.size() == log.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].method == "TR");
    CHECK(rows[i].sampler == "RANDOM");
    CHECK(rows[i].eval_task == log.rows[i].eval_task);
    CHECK(rows[i].acc == doctest::Approx(log.rows[i].acc).epsilon(1e-9));
  }
  {
    std::ofstream out(path, std::ios::app);
    out << "1,TR,RANDOM,notanumber\n";
  }
  CHECK_THROWS_AS(read_runlog(path), MalformedRecord);
  std::filesystem::remove(path);

  const auto trace_rows = format_trace_rows(log, 1, "TR", "RANDOM");
  CHECK(trace_rows.size() == log.traces.size() * 2);
}

TEST_CASE("full replay keeps more than fine-tuning on a two-task stream") {
  double tr = 0.0, ft = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthSpec s = small_stream(2, seed);
    s.train_per_task = 60;
    s.test_per_task = 20;
    const auto tasks = tasks_from_synthetic(generate_synthetic(s));
    RunSpec spec = small_run(Method::kTr, seed);
    spec.parser.word_emb_dim = spec.parser.hidden_dim = 32;
    spec.parser.action_emb_dim = 16;
    spec.schedule.epochs_slow = 10;
    spec.schedule.capacity = 60;
    tr += run_stream(tasks, spec).rows.back().acc_whole;
    spec.method = Method::kFineTune;
    ft += run_stream(tasks, spec).rows.back().acc_whole;
  }
  MESSAGE("mean ACC_whole TR " << tr / 5 << " FINE_TUNE " << ft / 5);
  CHECK(tr >= ft);
}
