#include "recall/smatch.hpp"

#include <algorithm>
#include <random>
#include <vector>

namespace recall {

namespace {

constexpr int kUnmapped = -1;

// Tree shape flattened for fast scoring. Node ids follow preorder, so every
// parent precedes its children.
struct Shape {
  std::vector<int> parent;
  std::vector<int> slot;  // ordinal in parent, -1 for the root
  std::vector<const std::string*> label;

  explicit Shape(const LogicalForm& lf) {
    const std::size_t n = lf.size();
    parent.assign(n, -1);
    slot.assign(n, -1);
    label.resize(n);
    for (const AstNode& node : lf.nodes()) {
      label[static_cast<std::size_t>(node.id)] = &node.label;
      for (std::size_t k = 0; k < node.children.size(); ++k) {
        const auto c = static_cast<std::size_t>(node.children[k]);
        parent[c] = node.id;
        slot[c] = static_cast<int>(k);
      }
    }
  }
  std::size_t size() const { return parent.size(); }
};

class Matcher {
 public:
  Matcher(const LogicalForm& src, const LogicalForm& dst) : src_(src), dst_(dst) {
    candidates_.resize(src_.size());
    for (std::size_t i = 0; i < src_.size(); ++i)
      for (std::size_t j = 0; j < dst_.size(); ++j)
        if (*src_.label[i] == *dst_.label[j]) candidates_[i].push_back(static_cast<int>(j));
    total_ = static_cast<int>(2 * src_.size() - 1);
  }

  int total_triples() const { return total_; }

  // Matched triples contributed by node i given its parent's mapping: its
  // instance triple plus the relation triple to its parent.
  int node_gain(const std::vector<int>& map, std::size_t i) const {
    const int t = map[i];
    if (t == kUnmapped || *src_.label[i] != *dst_.label[static_cast<std::size_t>(t)]) return 0;
    int gain = 1;
    const int p = src_.parent[i];
    if (p >= 0) {
      const int tp = map[static_cast<std::size_t>(p)];
      if (tp != kUnmapped && *src_.label[static_cast<std::size_t>(p)] == *dst_.label[static_cast<std::size_t>(tp)] &&
          dst_.parent[static_cast<std::size_t>(t)] == tp && dst_.slot[static_cast<std::size_t>(t)] == src_.slot[i])
        ++gain;
    }
    return gain;
  }

  int score(const std::vector<int>& map) const {
    int s = 0;
    for (std::size_t i = 0; i < map.size(); ++i) s += node_gain(map, i);
    return s;
  }

  int exhaustive() const {
    std::vector<int> map(src_.size(), kUnmapped);
    std::vector<char> used(dst_.size(), 0);
    int best = 0;
    search(0, 0, map, used, best);
    return best;
  }

  int hill_climb(int restarts, std::uint64_t seed) const {
    int best = 0;
    for (int r = 0; r < std::max(restarts, 1); ++r) {
      std::vector<int> map = r == 0 ? greedy_init() : random_init(seed + static_cast<std::uint64_t>(r));
      best = std::max(best, climb(map));
      if (best == total_) break;
    }
    return best;
  }

 private:
  void search(std::size_t i, int current, std::vector<int>& map, std::vector<char>& used, int& best) const {
    const std::size_t n = src_.size();
    // Each remaining node adds at most its instance triple and its parent edge.
    const int bound = current + static_cast<int>(2 * (n - i));
    if (bound - (i == 0 ? 1 : 0) <= best) return;
    if (i == n) {
      best = std::max(best, current);
      return;
    }
    for (int t : candidates_[i]) {
      if (used[static_cast<std::size_t>(t)]) continue;
      used[static_cast<std::size_t>(t)] = 1;
      map[i] = t;
      search(i + 1, current + node_gain(map, i), map, used, best);
      used[static_cast<std::size_t>(t)] = 0;
    }
    map[i] = kUnmapped;
    search(i + 1, current, map, used, best);
  }

  std::vector<int> greedy_init() const {
    std::vector<int> map(src_.size(), kUnmapped);
    std::vector<char> used(dst_.size(), 0);
    for (std::size_t i = 0; i < src_.size(); ++i) {
      for (int t : candidates_[i]) {
        if (!used[static_cast<std::size_t>(t)]) {
          used[static_cast<std::size_t>(t)] = 1;
          map[i] = t;
          break;
        }
      }
    }
    return map;
  }

  std::vector<int> random_init(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::vector<int> map(src_.size(), kUnmapped);
    std::vector<char> used(dst_.size(), 0);
    std::vector<std::size_t> order(src_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    for (std::size_t i : order) {
      std::vector<int> free;
      for (int t : candidates_[i])
        if (!used[static_cast<std::size_t>(t)]) free.push_back(t);
      if (free.empty()) continue;
      const int t = free[rng() % free.size()];
      used[static_cast<std::size_t>(t)] = 1;
      map[i] = t;
    }
    return map;
  }

  // Steepest ascent over two move types: retarget one node to a free
  // candidate (or unmap it), and swap the targets of two nodes.
  int climb(std::vector<int>& map) const {
    std::vector<int> owner(dst_.size(), kUnmapped);
    for (std::size_t i = 0; i < map.size(); ++i)
      if (map[i] != kUnmapped) owner[static_cast<std::size_t>(map[i])] = static_cast<int>(i);
    int current = score(map);
    for (;;) {
      int best_gain = 0;
      std::size_t best_i = 0, best_j = 0;
      int best_t = kUnmapped;
      bool best_is_swap = false;
      for (std::size_t i = 0; i < map.size(); ++i) {
        const int old = map[i];
        auto try_target = [&](int t) {
          map[i] = t;
          const int gain = score(map) - current;
          map[i] = old;
          if (gain > best_gain) {
            best_gain = gain;
            best_i = i;
            best_t = t;
            best_is_swap = false;
          }
        };
        if (old != kUnmapped) try_target(kUnmapped);
        for (int t : candidates_[i])
          if (t != old && owner[static_cast<std::size_t>(t)] == kUnmapped) try_target(t);
        for (std::size_t j = i + 1; j < map.size(); ++j) {
          if (map[j] == old) continue;
          std::swap(map[i], map[j]);
          const int gain = score(map) - current;
          std::swap(map[i], map[j]);
          if (gain > best_gain) {
            best_gain = gain;
            best_i = i;
            best_j = j;
            best_is_swap = true;
          }
        }
      }
      if (best_gain <= 0) return current;
      if (best_is_swap) {
        std::swap(map[best_i], map[best_j]);
      } else {
        map[best_i] = best_t;
      }
      std::fill(owner.begin(), owner.end(), kUnmapped);
      for (std::size_t i = 0; i < map.size(); ++i)
        if (map[i] != kUnmapped) owner[static_cast<std::size_t>(map[i])] = static_cast<int>(i);
      current += best_gain;
    }
  }

  Shape src_;
  Shape dst_;
  std::vector<std::vector<int>> candidates_;
  int total_ = 0;
};

}  // namespace

double smatch_directed(const LogicalForm& src, const LogicalForm& dst, const SmatchOptions& options) {
  if (src.empty() || dst.empty()) return 0.0;
  const Matcher matcher(src, dst);
  bool exact = options.search == SmatchSearch::kExhaustive;
  if (options.search == SmatchSearch::kAuto)
    exact = src.size() <= options.exact_node_limit && dst.size() <= options.exact_node_limit;
  const int matched = exact ? matcher.exhaustive() : matcher.hill_climb(options.restarts, options.seed);
  return static_cast<double>(matched) / static_cast<double>(matcher.total_triples());
}

double lf_similarity(const LogicalForm& a, const LogicalForm& b, const SmatchOptions& options) {
  return (smatch_directed(a, b, options) + smatch_directed(b, a, options)) / 2.0;
}

}  // namespace recall
