#include <random>

#include "doctest.h"
#include "recall/errors.hpp"
#include "recall/evaluation.hpp"
#include "recall/optimizer.hpp"

using namespace recall;

namespace {

const char* kGrammar = R"(
start Q
slot ent : a b c
Q -> ( count E )
Q -> ( size E )
E -> ( city ent )
E -> ( river ent )
)";

struct Toy {
  ActionRegistry registry;
  std::vector<ActionSpace> spaces;
  std::vector<std::string> utterances{"count city a", "size river b", "count river c", "size city c"};
  std::vector<std::string> lfs{"(count (city a))", "(size (river b))", "(count (river c))", "(size (city c))"};
  std::unique_ptr<ParserModel> model;
  std::vector<Example> examples;

  Toy() {
    spaces.emplace_back(Grammar::parse(kGrammar), registry);
    Vocabulary v;
    for (const auto& u : utterances)
      for (const auto& w : tokenize(u)) v.add(w);
    ParserConfig pc;
    pc.word_emb_dim = pc.hidden_dim = 8;
    pc.action_emb_dim = 4;
    model = std::make_unique<ParserModel>(pc, v, registry.size(), 1);
    for (std::size_t i = 0; i < lfs.size(); ++i)
      examples.push_back({model->vocabulary().encode(utterances[i]), spaces[0].lf_to_actions(parse_lf(lfs[i])), 0});
  }

  EvalSet eval_set() const {
    EvalSet s;
    for (std::size_t i = 0; i < lfs.size(); ++i) {
      s.words.push_back(model->vocabulary().encode(utterances[i]));
      s.gold.push_back(parse_lf(lfs[i]));
    }
    return s;
  }

  void train(int steps) {
    Adam adam(model->params().size(), kernels::AdamHyper{0.05});
    std::vector<double> grad(model->params().size());
    const ParamMask all(grad.size(), true);
    for (int s = 0; s < steps; ++s) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (const auto& ex : examples) model->accumulate_gradient(ex, spaces[0], 0.25, grad);
      adam.step(model->params().values(), grad, all);
    }
  }
};

}  // namespace

TEST_CASE("exact match compares canonical forms") {
  CHECK(exact_match(parse_lf("(count (city a))"), parse_lf("(count (city a))")));
  CHECK_FALSE(exact_match(parse_lf("(next a b)"), parse_lf("(next b a)")));
  CHECK(exact_match("( count  (city a) )", "(count (city a))"));
  CHECK_FALSE(exact_match("(count (city a)", "(count (city a))"));
  CHECK_FALSE(exact_match("(next a b)", "(next b a)"));
}

TEST_CASE("acc_avg hand cases") {
  const std::vector<double> one{0.8};
  CHECK(acc_avg(one) == 0.8);
  const std::vector<double> two{1.0, 0.5};
  CHECK(acc_avg(two) == 0.75);
  const std::vector<double> zeros{0.0, 0.0, 0.0};
  CHECK(acc_avg(zeros) == 0.0);
  CHECK(acc_avg(std::vector<double>{}) == 0.0);
}

TEST_CASE("acc_whole is instance weighted") {
  const std::vector<TaskAccuracy> skewed{{10, 10}, {0, 30}};
  CHECK(acc_whole(skewed) == 0.25);
  const std::vector<TaskAccuracy> single{{7, 9}};
  CHECK(acc_whole(single) == single[0].acc());
  // equal sizes: the weighted and unweighted means coincide
  const std::vector<TaskAccuracy> equal{{3, 10}, {8, 10}, {5, 10}};
  const std::vector<double> accs{0.3, 0.8, 0.5};
  CHECK(acc_whole(equal) == doctest::Approx(acc_avg(accs)).epsilon(1e-15));
}

TEST_CASE("acc_whole equals the count-weighted mean of per-task accuracies") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<TaskAccuracy> tasks(1 + rng() % 6);
    double weighted = 0.0, total = 0.0;
    for (auto& t : tasks) {
      t.total = 1 + rng() % 200;
      t.correct = rng() % (t.total + 1);
      weighted += t.acc() * static_cast<double>(t.total);
      total += static_cast<double>(t.total);
    }
    CHECK(std::abs(acc_whole(tasks) - weighted / total) <= 1e-12);
  }
}

TEST_CASE("EvalResult is lower triangular") {
  EvalResult r(3);
  r.set(0, 0, {9, 10});
  r.set(0, 1, {5, 10});
  r.set(1, 1, {10, 10});
  CHECK(r.acc_avg(0) == 0.9);
  CHECK(r.acc_avg(1) == 0.75);
  CHECK(r.acc_whole(1) == 0.75);
  CHECK_THROWS_AS(r.set(2, 1, {1, 1}), std::out_of_range);
  CHECK_THROWS_AS(r.at(0, 3), std::out_of_range);
  r.set(0, 2, {10, 10});
  r.set(1, 2, {0, 30});
  r.set(2, 2, {0, 0});
  CHECK(r.acc_whole(2) == 0.25);
}

TEST_CASE("evaluation never mutates parameters") {
  Toy toy;
  toy.train(60);
  const std::vector<double> before = toy.model->params().values();
  const TaskAccuracy acc = evaluate_task(*toy.model, toy.eval_set(), toy.spaces, 1);
  const TaskAccuracy beam = evaluate_task(*toy.model, toy.eval_set(), toy.spaces, 3, kernels::Exec::kParallel);
  CHECK(toy.model->params().values() == before);
  CHECK(acc.total == 4);
  CHECK(acc.correct == 4);
  CHECK(beam.correct == 4);
}

TEST_CASE("untrained parser scores through the same exact match") {
  Toy toy;
  const EvalSet set = toy.eval_set();
  const TaskAccuracy acc = evaluate_task(*toy.model, set, toy.spaces);
  std::size_t expected = 0;
  for (std::size_t i = 0; i < set.words.size(); ++i)
    expected += exact_match(toy.model->parse(set.words[i], toy.spaces[0], 0), set.gold[i]);
  CHECK(acc.correct == expected);
}

TEST_CASE("mean gold probability and traces") {
  Toy toy;
  const auto& space = toy.spaces[0];
  const std::vector<ActionId> actions = space.all_actions();
  const auto means = mean_gold_probability(*toy.model, toy.examples, space, actions);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    // every LF here uses a, b or c; they all occur
    CHECK(means[i] >= 0.0);
    CHECK(means[i] <= 1.0);
  }

  // average of the teacher-forced probabilities, by hand
  const ActionId count = space.rule_action(0);
  double sum = 0.0;
  int n = 0;
  for (const auto& ex : toy.examples) {
    const auto p = toy.model->gold_probabilities(ex, space);
    for (std::size_t t = 0; t < p.size(); ++t)
      if (ex.actions[t] == count) {
        sum += p[t];
        ++n;
      }
  }
  const std::vector<ActionId> just_count{count};
  CHECK(mean_gold_probability(*toy.model, toy.examples, space, just_count)[0] ==
        doctest::Approx(sum / n).epsilon(1e-15));

  // "b" only occurs in one LF; drop that example and it is absent
  std::vector<Example> without_b{toy.examples[0], toy.examples[2], toy.examples[3]};
  std::vector<int> occurrences(toy.registry.size(), 1);
  TraceRecorder rec(without_b, space, toy.registry, occurrences);
  const ActionId gen_b = space.gen_action("ent", "b");
  for (const auto& t : rec.traces()) CHECK(t.action != gen_b);
  rec.record(*toy.model);
  toy.train(20);
  rec.record(*toy.model);
  for (const auto& t : rec.traces()) {
    CHECK(t.mean_prob.size() == 2);
    CHECK_FALSE(t.cross_task);
  }
}

TEST_CASE("a single-choice position traces at exactly one") {
  ActionRegistry registry;
  std::vector<ActionSpace> spaces;
  spaces.emplace_back(Grammar::parse("start Q\nslot ent : a b\nQ -> ( only E )\nE -> ( x ent )\nE -> ( y ent )\n"),
                      registry);
  Vocabulary v;
  v.add("q");
  ParserConfig pc;
  pc.word_emb_dim = pc.hidden_dim = 8;
  pc.action_emb_dim = 4;
  const ParserModel model(pc, v, registry.size(), 1);
  std::vector<Example> ex{{{1}, spaces[0].lf_to_actions(parse_lf("(only (x a))")), 0},
                          {{1}, spaces[0].lf_to_actions(parse_lf("(only (y b))")), 0}};
  std::vector<int> occurrences(registry.size(), 2);
  TraceRecorder rec(ex, spaces[0], registry, occurrences);
  rec.record(model);
  rec.record(model);
  const ActionId only = spaces[0].rule_action(0);
  bool found = false;
  for (const auto& t : rec.traces())
    if (t.action == only) {
      found = true;
      CHECK(t.cross_task);
      CHECK(t.mean_prob == std::vector<double>{1.0, 1.0});
    }
  CHECK(found);
}

TEST_CASE("trace drop averages one class") {
  std::vector<ActionTrace> traces{{0, "a", 0, false, {0.9, 0.5}},
                                  {1, "b", 0, false, {0.8, 0.6}},
                                  {2, "c", 0, true, {0.7, 0.7}}};
  CHECK(mean_trace_drop(traces, false, 1) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(mean_trace_drop(traces, true, 1) == 0.0);
}
