#pragma once

#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "recall/logical_form.hpp"

namespace recall::testing {

/// Random tree with `n` nodes and labels drawn from the first `alphabet`
/// letters, built by attaching each node to a random earlier node.
inline LogicalForm random_tree(std::mt19937_64& rng, int n, int alphabet) {
  std::vector<int> parent(static_cast<std::size_t>(n), -1);
  for (int i = 1; i < n; ++i) parent[static_cast<std::size_t>(i)] = static_cast<int>(rng() % static_cast<unsigned>(i));
  std::vector<std::vector<int>> kids(static_cast<std::size_t>(n));
  for (int i = 1; i < n; ++i) kids[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])].push_back(i);
  std::vector<std::string> label(static_cast<std::size_t>(n));
  for (auto& l : label) l = std::string(1, static_cast<char>('a' + rng() % static_cast<unsigned>(alphabet)));
  std::string text;
  auto emit = [&](auto&& self, int v) -> void {
    const auto& ch = kids[static_cast<std::size_t>(v)];
    if (ch.empty()) {
      text += label[static_cast<std::size_t>(v)];
      return;
    }
    text += "(" + label[static_cast<std::size_t>(v)];
    for (int c : ch) {
      text += " ";
      self(self, c);
    }
    text += ")";
  };
  emit(emit, 0);
  return parse_lf(text);
}

/// Brute-force directed Smatch: tries every maximal one-to-one node mapping
/// (all permutations of a common padded index space) and scores each by
/// literal triple-set lookup.
inline double brute_force_smatch(const LogicalForm& src, const LogicalForm& dst) {
  const TripleSet s = extract_triples(src);
  const TripleSet d = extract_triples(dst);
  std::set<std::pair<int, std::string>> d_inst;
  for (const auto& t : d.instances) d_inst.insert({t.node, t.label});
  std::set<std::tuple<int, int, int>> d_rel;
  for (const auto& t : d.relations) d_rel.insert({t.parent, t.slot, t.child});

  const int n = static_cast<int>(src.size());
  const int m = static_cast<int>(dst.size());
  const int size = std::max(n, m);
  std::vector<int> perm(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) perm[static_cast<std::size_t>(i)] = i;
  int best = 0;
  do {
    auto target = [&](int i) { return perm[static_cast<std::size_t>(i)] < m ? perm[static_cast<std::size_t>(i)] : -1; };
    std::vector<char> inst_ok(static_cast<std::size_t>(n), 0);
    int score = 0;
    for (const auto& t : s.instances) {
      const int j = target(t.node);
      if (j >= 0 && d_inst.count({j, t.label})) {
        inst_ok[static_cast<std::size_t>(t.node)] = 1;
        ++score;
      }
    }
    for (const auto& t : s.relations) {
      const int p = target(t.parent), c = target(t.child);
      if (p >= 0 && c >= 0 && inst_ok[static_cast<std::size_t>(t.parent)] && inst_ok[static_cast<std::size_t>(t.child)] &&
          d_rel.count({p, t.slot, c}))
        ++score;
    }
    best = std::max(best, score);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(s.size());
}

}  // namespace recall::testing
