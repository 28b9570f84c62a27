#include <omp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <random>

#include "doctest.h"
#include "recall/errors.hpp"
#include "recall/sampling.hpp"
#include "test_util.hpp"

using namespace recall;

namespace {

// Entropy straight from a count table.
double entropy_of_counts(const std::vector<double>& counts) {
  double total = 0.0;
  for (double c : counts) total += c;
  double e = 0.0;
  for (double c : counts)
    if (c > 0) e -= (c / total) * std::log(c / total);
  return e;
}

ActionSequence random_sequence(std::mt19937_64& rng, int alphabet, int max_len) {
  ActionSequence s(1 + rng() % static_cast<unsigned>(max_len));
  for (auto& a : s) a = static_cast<ActionId>(rng() % static_cast<unsigned>(alphabet));
  return s;
}

double entropy_of(std::span<const ActionSequence> all, const std::vector<std::size_t>& pick,
                  const ActionSupport& support = std::nullopt) {
  std::vector<ActionSequence> chosen;
  for (std::size_t i : pick) chosen.push_back(all[i]);
  return memory_entropy(chosen, support);
}

// Best entropy over every one-per-cluster selection.
double exhaustive_dlfs(std::span<const ActionSequence> all, const std::vector<std::vector<std::size_t>>& members) {
  std::vector<std::size_t> pick(members.size());
  double best = -1.0;
  auto rec = [&](auto&& self, std::size_t j) -> void {
    if (j == members.size()) {
      best = std::max(best, entropy_of(all, pick));
      return;
    }
    for (std::size_t c : members[j]) {
      pick[j] = c;
      self(self, j + 1);
    }
  };
  rec(rec, 0);
  return best;
}

}  // namespace

TEST_CASE("entropy examples") {
  const std::vector<ActionSequence> counts_224{{1, 1}, {2, 2}, {3, 3, 3, 3}};
  const double oracle = -(0.25 * std::log(0.25) + 0.25 * std::log(0.25) + 0.5 * std::log(0.5));
  CHECK(memory_entropy(counts_224) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(memory_entropy(counts_224) == doctest::Approx(1.0397207708399179));
  const std::vector<ActionSequence> uniform{{0, 1, 2, 3, 4}};
  CHECK(memory_entropy(uniform) == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  CHECK(memory_entropy(std::vector<ActionSequence>{{7, 7, 7}}) == 0.0);
  CHECK(memory_entropy(std::vector<ActionSequence>{}) == 0.0);
  // restricted to {1, 2}: counts 2 and 2
  CHECK(memory_entropy(counts_224, std::unordered_set<ActionId>{1, 2}) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("histogram probabilities") {
  const std::vector<ActionSequence> seqs{{0, 1, 1}, {1, 2}};
  const ActionHistogram h = histogram_of(seqs);
  CHECK(h.total() == 5);
  CHECK(h.count(1) == 3);
  CHECK(h.probability(1) == doctest::Approx(0.6));
  CHECK(h.probability(0) + h.probability(1) + h.probability(2) == doctest::Approx(1.0));
  CHECK(h.actions() == std::vector<ActionId>{0, 1, 2});
}

TEST_CASE("incremental entropy matches recomputation") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const ActionSupport support =
        trial % 2 ? ActionSupport(std::unordered_set<ActionId>{0, 2, 4, 6}) : ActionSupport(std::nullopt);
    ActionHistogram hist(support);
    std::vector<ActionSequence> live;
    for (int step = 0; step < 60; ++step) {
      if (!live.empty() && rng() % 3 == 0) {
        const std::size_t k = rng() % live.size();
        hist.remove(live[k]);
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
      } else {
        live.push_back(random_sequence(rng, 8, 6));
        hist.add(live.back());
      }
      CHECK(std::abs(hist.entropy() - memory_entropy(live, support)) <= 1e-12);
    }
  }
}

TEST_CASE("kmedoids: k equal to n and two identical groups") {
  const std::vector<LogicalForm> lfs{parse_lf("(a b)"), parse_lf("(c d e)"), parse_lf("(f (g h))"), parse_lf("x")};
  const RowMatrix dist = lf_distance_matrix(lfs);
  const Clustering all = kmedoids(dist, 4, 1);
  CHECK(all.cost == 0.0);
  std::vector<std::size_t> sorted = all.medoids;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK_THROWS_AS(kmedoids(dist, 5, 1), InsufficientPoints);

  std::vector<LogicalForm> groups;
  for (int i = 0; i < 4; ++i) groups.push_back(parse_lf("(count (river ny))"));
  for (int i = 0; i < 3; ++i) groups.push_back(parse_lf("(answer (state (next_to tx)))"));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Clustering c = kmedoids(lf_distance_matrix(groups), 2, seed);
    CHECK(c.cost == 0.0);
    for (int i = 1; i < 4; ++i) CHECK(c.assignment[static_cast<std::size_t>(i)] == c.assignment[0]);
    for (int i = 5; i < 7; ++i) CHECK(c.assignment[static_cast<std::size_t>(i)] == c.assignment[4]);
    CHECK(c.assignment[0] != c.assignment[4]);
  }
}

TEST_CASE("kmedoids on random trees against exhaustive medoid triples") {
  std::mt19937_64 rng(7);
  int optimal = 0;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<LogicalForm> lfs;
    for (int i = 0; i < 12; ++i) lfs.push_back(testing::random_tree(rng, 2 + static_cast<int>(rng() % 6), 4));
    const RowMatrix dist = lf_distance_matrix(lfs);
    const Clustering c = kmedoids(dist, 3, static_cast<std::uint64_t>(trial));
    CHECK(c.cost == doctest::Approx(medoid_cost(dist, c.medoids)).epsilon(1e-12));
    // nearest-medoid consistency
    for (std::size_t i = 0; i < 12; ++i) {
      const double own = dist(static_cast<Eigen::Index>(i),
                              static_cast<Eigen::Index>(c.medoids[static_cast<std::size_t>(c.assignment[i])]));
      for (std::size_t m : c.medoids) CHECK(own <= dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)));
    }
    double best = 1e18, mean = 0.0;
    int triples = 0;
    for (std::size_t a = 0; a < 12; ++a)
      for (std::size_t b = a + 1; b < 12; ++b)
        for (std::size_t d = b + 1; d < 12; ++d) {
          const std::vector<std::size_t> m{a, b, d};
          const double cost = medoid_cost(dist, m);
          best = std::min(best, cost);
          mean += cost;
          ++triples;
        }
    mean /= triples;
    CHECK(c.cost >= best - 1e-12);
    CHECK(c.cost <= mean + 1e-12);
    // a random assignment to the same medoids is never cheaper
    double random_cost = 0.0;
    for (std::size_t i = 0; i < 12; ++i)
      random_cost += dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c.medoids[rng() % 3]));
    CHECK(c.cost <= random_cost + 1e-12);
    if (c.cost <= best + 1e-12) ++optimal;
  }
  MESSAGE("kmedoids reached the exhaustive optimum in " << optimal << " of 30 trials");
}

TEST_CASE("pairwise similarity kernels agree") {
  std::mt19937_64 rng(3);
  std::vector<LogicalForm> lfs;
  for (int i = 0; i < 20; ++i) lfs.push_back(testing::random_tree(rng, 1 + static_cast<int>(rng() % 10), 3));
  const int saved = omp_get_max_threads();
  omp_set_num_threads(3);
  const RowMatrix a = kernels::pairwise_similarity(lfs, {}, kernels::Exec::kSerial);
  const RowMatrix b = kernels::pairwise_similarity(lfs, {}, kernels::Exec::kParallel);
  omp_set_num_threads(saved);
  CHECK(a == b);
  CHECK(a.isApprox(a.transpose()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(a(i, i) == 1.0);
}

TEST_CASE("action subset sampling") {
  const ActionHistogram hist = histogram_of(std::vector<ActionSequence>{{0, 0, 0, 1}, {5}});
  CHECK(sample_action_subset(hist, 3, 1) == std::unordered_set<ActionId>{0, 1, 5});
  CHECK(sample_action_subset(hist, 10, 1) == std::unordered_set<ActionId>{0, 1, 5});

  const ActionHistogram two = histogram_of(std::vector<ActionSequence>{{4, 4, 4, 9}});
  int first = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const auto s = sample_action_subset(two, 1, seed);
    REQUIRE(s.size() == 1);
    first += s.count(4) ? 1 : 0;
  }
  CHECK(std::abs(first / 10000.0 - 0.75) <= 0.02);

  // zero-count actions are outside the histogram's support entirely
  ActionHistogram partial;
  partial.add({1, 2});
  partial.remove({2});
  for (std::uint64_t seed = 0; seed < 50; ++seed) CHECK(sample_action_subset(partial, 1, seed) == std::unordered_set<ActionId>{1});
  CHECK(sample_action_subset(two, 1, 77) == sample_action_subset(two, 1, 77));
}

TEST_CASE("dlfs: constant objective keeps the medoids") {
  const std::vector<ActionSequence> actions{{1, 2}, {2, 1}, {1, 2}, {2, 1}, {1, 2}};
  Clustering c{{0, 0, 1, 1, 1}, {1, 3}, 0.0};
  CHECK(dlfs_select(actions, c, std::nullopt) == std::vector<std::size_t>{1, 3});
}

TEST_CASE("dlfs: single cluster picks the highest own entropy") {
  const std::vector<ActionSequence> actions{{1, 1, 1}, {1, 2}, {1, 2, 3, 3}, {1, 2, 3}, {4}};
  Clustering c{{0, 0, 0, 0, 0}, {0}, 0.0};
  std::size_t oracle = 0;
  double best = -1;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const double e = memory_entropy(std::span(&actions[i], 1));
    if (e > best + 1e-12) {
      best = e;
      oracle = i;
    }
  }
  CHECK(oracle == 3);
  CHECK(dlfs_select(actions, c, std::nullopt) == std::vector<std::size_t>{oracle});
}

TEST_CASE("dlfs differs from the medoids exactly when a swap raises entropy") {
  const std::vector<ActionSequence> actions{{1, 1}, {3}, {1, 2}, {2}};
  Clustering c{{0, 0, 1, 1}, {0, 2}, 0.0};
  const auto picked = dlfs_select(actions, c, std::nullopt);
  CHECK(picked != c.medoids);
  CHECK(entropy_of(actions, picked) > entropy_of(actions, c.medoids));
  CHECK(entropy_of(actions, picked) == doctest::Approx(std::log(3.0)));

  const std::vector<ActionSequence> flat{{1, 2}, {1, 1}, {3, 4}, {3, 3}};
  Clustering c2{{0, 0, 1, 1}, {0, 2}, 0.0};
  CHECK(dlfs_select(flat, c2, std::nullopt) == c2.medoids);
}

TEST_CASE("dlfs against the exhaustive optimum") {
  std::mt19937_64 rng(2024);
  int hits = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng() % 8;
    std::vector<ActionSequence> actions;
    std::vector<std::vector<std::size_t>> members(k);
    Clustering c;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t size = 1 + rng() % 5;
      for (std::size_t s = 0; s < size; ++s) {
        members[j].push_back(actions.size());
        c.assignment.push_back(static_cast<int>(j));
        actions.push_back(random_sequence(rng, 6, 5));
      }
      c.medoids.push_back(members[j][rng() % size]);
    }
    const auto picked = dlfs_select(actions, c, std::nullopt);
    REQUIRE(picked.size() == k);
    for (std::size_t j = 0; j < k; ++j) CHECK(c.assignment[picked[j]] == static_cast<int>(j));
    const double got = entropy_of(actions, picked);
    const double opt = exhaustive_dlfs(actions, members);
    CHECK(got <= opt + 1e-12);
    CHECK(got >= entropy_of(actions, c.medoids) - 1e-12);
    if (got >= opt - 1e-12) ++hits;
  }
  MESSAGE("dlfs matched the optimum in " << hits << " of 100 trials");
  CHECK(hits >= 90);
}

TEST_CASE("random sampler") {
  CHECK(sample_random(4, 10, 1) == std::vector<std::size_t>{0, 1, 2, 3});
  const auto a = sample_random(50, 10, 9);
  CHECK(a == sample_random(50, 10, 9));
  CHECK(a.size() == 10);
  CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 10);
  CHECK(a != sample_random(50, 10, 10));
}

TEST_CASE("fss sampler") {
  RowMatrix f(5, 2);
  f << 0, 0, 1, 0, 10, 10, 11, 10, 5, -8;
  std::vector<std::size_t> all = sample_fss(f, 5, 3);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(sample_fss(f, 3, 1) == sample_fss(f, 3, 1));
  CHECK_THROWS_AS(sample_fss(f, 6, 1), InsufficientPoints);

  RowMatrix same = RowMatrix::Ones(4, 3);
  CHECK(sample_fss(same, 2, 5) == std::vector<std::size_t>{0});
}

TEST_CASE("balance sampler") {
  const std::vector<ActionSequence> actions{{1, 1, 1}, {1, 2}, {2, 3, 4}, {3, 3}, {5}};
  const auto one = sample_balance(actions, 1);
  CHECK(one == std::vector<std::size_t>{2});
  CHECK(sample_balance(actions, 10).size() == actions.size());
  // every accepted step maximizes the one-step objective
  const auto picked = sample_balance(actions, 4);
  std::vector<std::size_t> prefix;
  for (std::size_t step = 0; step < picked.size(); ++step) {
    double best = -1;
    for (std::size_t i = 0; i < actions.size(); ++i) {
      if (std::find(prefix.begin(), prefix.end(), i) != prefix.end()) continue;
      auto trial = prefix;
      trial.push_back(i);
      best = std::max(best, entropy_of(actions, trial));
    }
    prefix.push_back(picked[step]);
    CHECK(entropy_of(actions, prefix) == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("select_memory: dlfs keeps one entry per cluster and dominates lfs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<LogicalForm> lfs;
    std::vector<ActionSequence> actions;
    for (int i = 0; i < 30; ++i) {
      lfs.push_back(testing::random_tree(rng, 1 + static_cast<int>(rng() % 7), 4));
      actions.push_back(random_sequence(rng, 10, 6));
    }
    SamplerInput in{lfs, actions, nullptr, 6, static_cast<std::uint64_t>(trial)};
    const Selection lfs_sel = select_memory(SamplerKind::kLfs, in);
    const Selection dlfs_sel = select_memory(SamplerKind::kDlfs, in);
    REQUIRE(dlfs_sel.indices.size() == 6);
    CHECK(std::set<int>(dlfs_sel.clusters.begin(), dlfs_sel.clusters.end()).size() == 6);
    CHECK(entropy_of(actions, dlfs_sel.indices) >= entropy_of(actions, lfs_sel.indices) - 1e-12);
    const Selection rnd = select_memory(SamplerKind::kRandom, in);
    CHECK(rnd.indices.size() == 6);
    CHECK(rnd.clusters == std::vector<int>(6, -1));
  }
  CHECK(parse_sampler("DLFS") == SamplerKind::kDlfs);
  CHECK(sampler_name(SamplerKind::kBalance) == "BALANCE");
  CHECK_THROWS_AS(parse_sampler("dlfs?"), std::invalid_argument);
}

TEST_CASE("memories round trip through jsonl") {
  ActionRegistry reg;
  std::vector<ActionSpace> spaces;
  spaces.emplace_back(Grammar::parse("start Q\nslot e : a b\nQ -> ( f e )\n"), reg);
  spaces.emplace_back(Grammar::parse("start Q\nslot e : a b\nQ -> ( g e e )\n"), reg);
  std::vector<Memory> mems(2);
  mems[0].entries.push_back({"f of a", parse_lf("(f a)"), spaces[0].lf_to_actions(parse_lf("(f a)")), 0, 3});
  mems[1].entries.push_back({"g a b", parse_lf("(g a b)"), spaces[1].lf_to_actions(parse_lf("(g a b)")), 1, -1});
  const auto path = std::filesystem::temp_directory_path() / "recall_memories_test.jsonl";
  save_memories(path, mems);
  const auto back = load_memories(path, spaces, 5);
  REQUIRE(back.size() == 2);
  CHECK(back[0].entries[0].utterance == "f of a");
  CHECK(back[0].entries[0].cluster_id == 3);
  CHECK(back[1].entries[0].actions == mems[1].entries[0].actions);
  CHECK(back[1].capacity == 5);
  {
    std::ofstream(path) << "{\"task\": 0, \"utterance\": \"x\", \"lf\": \"(f c)\"}\n";
  }
  CHECK_THROWS_AS(load_memories(path, spaces, 5), MalformedRecord);
  std::filesystem::remove(path);
}
