#include "recall/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "recall/errors.hpp"
#include "recall/random.hpp"

namespace recall {

namespace {

constexpr double kTieTolerance = 1e-12;

double nlogn(long n) { return n > 0 ? static_cast<double>(n) * std::log(static_cast<double>(n)) : 0.0; }

}  // namespace

ActionHistogram::ActionHistogram(ActionSupport support) : support_(std::move(support)) {}

void ActionHistogram::bump(ActionId a, long delta) {
  if (a < 0) throw std::invalid_argument("negative action id");
  if (!counted(a)) return;
  const auto i = static_cast<std::size_t>(a);
  if (i >= counts_.size()) counts_.resize(i + 1, 0);
  const long before = counts_[i];
  const long after = before + delta;
  if (after < 0) throw std::logic_error("histogram count below zero");
  sum_nlogn_ += nlogn(after) - nlogn(before);
  counts_[i] = after;
  total_ += delta;
}

void ActionHistogram::add(const ActionSequence& seq) {
  for (ActionId a : seq) bump(a, 1);
}

void ActionHistogram::remove(const ActionSequence& seq) {
  for (ActionId a : seq) bump(a, -1);
}

long ActionHistogram::count(ActionId a) const {
  const auto i = static_cast<std::size_t>(a);
  return a >= 0 && i < counts_.size() ? counts_[i] : 0;
}

double ActionHistogram::probability(ActionId a) const {
  return total_ > 0 ? static_cast<double>(count(a)) / static_cast<double>(total_) : 0.0;
}

std::vector<ActionId> ActionHistogram::actions() const {
  std::vector<ActionId> out;
  for (std::size_t i = 0; i < counts_.size(); ++i)
    if (counts_[i] > 0) out.push_back(static_cast<ActionId>(i));
  return out;
}

double ActionHistogram::entropy() const {
  if (total_ <= 0) return 0.0;
  const double n = static_cast<double>(total_);
  return std::max(0.0, std::log(n) - sum_nlogn_ / n);
}

ActionHistogram histogram_of(std::span<const ActionSequence> seqs, const ActionSupport& support) {
  ActionHistogram h(support);
  for (const auto& s : seqs) h.add(s);
  return h;
}

double memory_entropy(std::span<const ActionSequence> seqs, const ActionSupport& support) {
  const ActionHistogram h = histogram_of(seqs, support);
  if (h.total() == 0) return 0.0;
  double e = 0.0;
  for (ActionId a : h.actions()) {
    const double p = h.probability(a);
    e -= p * std::log(p);
  }
  return e;
}

RowMatrix lf_distance_matrix(std::span<const LogicalForm> lfs, const SmatchOptions& options, kernels::Exec exec) {
  RowMatrix d = kernels::pairwise_similarity(lfs, options, exec);
  d = (1.0 - d.array()).matrix();
  return d;
}

double medoid_cost(const RowMatrix& distance, std::span<const std::size_t> medoids) {
  double cost = 0.0;
  for (Eigen::Index i = 0; i < distance.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m : medoids) best = std::min(best, distance(i, static_cast<Eigen::Index>(m)));
    cost += best;
  }
  return cost;
}

namespace {

// Nearest medoid, lower cluster index on ties; medoids stay in their own cluster.
double assign(const RowMatrix& distance, const std::vector<std::size_t>& medoids, std::vector<int>& assignment) {
  const auto n = static_cast<std::size_t>(distance.rows());
  assignment.assign(n, -1);
  for (std::size_t j = 0; j < medoids.size(); ++j) assignment[medoids[j]] = static_cast<int>(j);
  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (assignment[i] >= 0) continue;
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < medoids.size(); ++j) {
      const double dij = distance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(medoids[j]));
      if (dij < bd) {
        bd = dij;
        best = static_cast<int>(j);
      }
    }
    assignment[i] = best;
    cost += bd;
  }
  return cost;
}

}  // namespace

Clustering kmedoids(const RowMatrix& distance, std::size_t k, std::uint64_t seed, int max_iterations) {
  const auto n = static_cast<std::size_t>(distance.rows());
  if (k == 0) throw std::invalid_argument("kmedoids: k must be positive");
  if (k > n) throw InsufficientPoints(k, n);
  Rng rng(seed);
  std::vector<std::size_t> medoids{uniform_index(rng, n)};
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i)
    nearest[i] = distance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(medoids[0]));
  std::vector<bool> is_medoid(n, false);
  is_medoid[medoids[0]] = true;
  while (medoids.size() < k) {
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i)
      if (!is_medoid[i] && (pick == n || nearest[i] > nearest[pick])) pick = i;
    medoids.push_back(pick);
    is_medoid[pick] = true;
    for (std::size_t i = 0; i < n; ++i)
      nearest[i] = std::min(nearest[i], distance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(pick)));
  }

  Clustering out;
  out.cost = assign(distance, medoids, out.assignment);
  for (int it = 0; it < max_iterations; ++it) {
    std::vector<std::size_t> next = medoids;
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < n; ++i)
        if (out.assignment[i] == static_cast<int>(j)) members.push_back(i);
      auto within = [&](std::size_t c) {
        double s = 0.0;
        for (std::size_t i : members) s += distance(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i));
        return s;
      };
      double best = within(medoids[j]);
      for (std::size_t c : members) {
        const double v = within(c);
        if (v < best - kTieTolerance) {
          best = v;
          next[j] = c;
        }
      }
    }
    if (next == medoids) break;
    std::vector<int> assignment;
    const double cost = assign(distance, next, assignment);
    if (cost > out.cost - kTieTolerance) break;
    medoids = std::move(next);
    out.assignment = std::move(assignment);
    out.cost = cost;
  }
  out.medoids = std::move(medoids);
  return out;
}

std::unordered_set<ActionId> sample_action_subset(const ActionHistogram& hist, std::size_t h, std::uint64_t seed) {
  std::vector<ActionId> pool = hist.actions();
  std::unordered_set<ActionId> out;
  if (h >= pool.size()) {
    out.insert(pool.begin(), pool.end());
    return out;
  }
  Rng rng(seed);
  std::vector<double> w;
  for (ActionId a : pool) w.push_back(static_cast<double>(hist.count(a)));
  double total = std::accumulate(w.begin(), w.end(), 0.0);
  while (out.size() < h) {
    double r = uniform01(rng) * total;
    std::size_t pick = 0;
    for (; pick + 1 < pool.size(); ++pick) {
      if (w[pick] > 0 && r < w[pick]) break;
      r -= w[pick];
    }
    while (w[pick] == 0) --pick;  // float slack at the tail
    out.insert(pool[pick]);
    total -= w[pick];
    w[pick] = 0;
  }
  return out;
}

namespace {

// Coordinate ascent over one-per-cluster selections: single-slot moves until
// none improves, then the first improving two-slot move, repeated.
std::vector<std::size_t> ascend(std::span<const ActionSequence> actions,
                                const std::vector<std::vector<std::size_t>>& members, std::vector<std::size_t> slots,
                                const ActionSupport& support, int max_rounds) {
  const std::size_t k = slots.size();
  ActionHistogram hist(support);
  for (std::size_t s : slots) hist.add(actions[s]);

  auto single_pass = [&] {
    bool changed = false;
    for (std::size_t j = 0; j < k; ++j) {
      hist.remove(actions[slots[j]]);
      auto score = [&](std::size_t c) {
        hist.add(actions[c]);
        const double e = hist.entropy();
        hist.remove(actions[c]);
        return e;
      };
      std::size_t best = slots[j];
      double best_e = score(best);
      for (std::size_t c : members[j]) {
        if (c == slots[j]) continue;
        const double e = score(c);
        if (e > best_e + kTieTolerance) {
          best_e = e;
          best = c;
        }
      }
      if (best != slots[j]) changed = true;
      slots[j] = best;
      hist.add(actions[best]);
    }
    return changed;
  };

  auto pair_pass = [&] {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t l = j + 1; l < k; ++l) {
        hist.remove(actions[slots[j]]);
        hist.remove(actions[slots[l]]);
        auto score = [&](std::size_t a, std::size_t b) {
          hist.add(actions[a]);
          hist.add(actions[b]);
          const double e = hist.entropy();
          hist.remove(actions[a]);
          hist.remove(actions[b]);
          return e;
        };
        std::size_t bj = slots[j], bl = slots[l];
        double best_e = score(bj, bl);
        for (std::size_t a : members[j])
          for (std::size_t b : members[l]) {
            const double e = score(a, b);
            if (e > best_e + kTieTolerance) {
              best_e = e;
              bj = a;
              bl = b;
            }
          }
        const bool changed = bj != slots[j] || bl != slots[l];
        slots[j] = bj;
        slots[l] = bl;
        hist.add(actions[bj]);
        hist.add(actions[bl]);
        if (changed) return true;
      }
    }
    return false;
  };

  for (int round = 0; round < max_rounds; ++round) {
    if (single_pass()) continue;
    if (!pair_pass()) break;
  }
  return slots;
}

double selection_entropy(std::span<const ActionSequence> actions, const std::vector<std::size_t>& slots,
                         const ActionSupport& support) {
  ActionHistogram h(support);
  for (std::size_t s : slots) h.add(actions[s]);
  return h.entropy();
}

}  // namespace

std::vector<std::size_t> dlfs_select(std::span<const ActionSequence> actions, const Clustering& clusters,
                                     const ActionSupport& support, int max_rounds, int starts, std::uint64_t seed) {
  const std::size_t k = clusters.medoids.size();
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < clusters.assignment.size(); ++i)
    members[static_cast<std::size_t>(clusters.assignment[i])].push_back(i);

  std::vector<std::size_t> best = ascend(actions, members, clusters.medoids, support, max_rounds);
  double best_e = selection_entropy(actions, best, support);
  auto consider = [&](std::vector<std::size_t> start) {
    std::vector<std::size_t> got = ascend(actions, members, std::move(start), support, max_rounds);
    const double e = selection_entropy(actions, got, support);
    if (e > best_e + kTieTolerance) {
      best_e = e;
      best = std::move(got);
    }
  };
  if (starts > 1) {
    // greedy construction in cluster order
    std::vector<std::size_t> greedy;
    ActionHistogram hist(support);
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t pick = members[j].front();
      double pe = -1.0;
      for (std::size_t c : members[j]) {
        hist.add(actions[c]);
        const double e = hist.entropy();
        hist.remove(actions[c]);
        if (e > pe + kTieTolerance) {
          pe = e;
          pick = c;
        }
      }
      greedy.push_back(pick);
      hist.add(actions[pick]);
    }
    consider(std::move(greedy));
  }
  Rng rng(seed);
  for (int s = 2; s < starts; ++s) {
    std::vector<std::size_t> start;
    for (std::size_t j = 0; j < k; ++j) start.push_back(members[j][uniform_index(rng, members[j].size())]);
    consider(std::move(start));
  }
  return best;
}

std::vector<std::size_t> sample_random(std::size_t n, std::size_t m, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (m >= n) return idx;
  Rng rng(seed);
  shuffle(idx, rng);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<std::size_t> sample_fss(const RowMatrix& features, std::size_t m, std::uint64_t seed,
                                    int max_iterations) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (m == 0) throw std::invalid_argument("sample_fss: m must be positive");
  if (m > n) throw InsufficientPoints(m, n);
  const std::vector<std::size_t> init = sample_random(n, m, seed);
  RowMatrix centroids(static_cast<Eigen::Index>(m), features.cols());
  for (std::size_t j = 0; j < m; ++j)
    centroids.row(static_cast<Eigen::Index>(j)) = features.row(static_cast<Eigen::Index>(init[j]));
  std::vector<std::size_t> assignment(n, m);
  auto nearest = [&](Eigen::Index i) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      const double d = (features.row(i) - centroids.row(static_cast<Eigen::Index>(j))).squaredNorm();
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    return best;
  };
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = nearest(static_cast<Eigen::Index>(i));
      if (c != assignment[i]) {
        assignment[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    RowMatrix sums = RowMatrix::Zero(static_cast<Eigen::Index>(m), features.cols());
    std::vector<std::size_t> sizes(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(assignment[i])) += features.row(static_cast<Eigen::Index>(i));
      ++sizes[assignment[i]];
    }
    for (std::size_t j = 0; j < m; ++j)
      if (sizes[j] > 0) centroids.row(static_cast<Eigen::Index>(j)) = sums.row(static_cast<Eigen::Index>(j)) / sizes[j];
  }
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < m; ++j) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (features.row(static_cast<Eigen::Index>(i)) - centroids.row(static_cast<Eigen::Index>(j))).squaredNorm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    if (std::find(out.begin(), out.end(), best) == out.end()) out.push_back(best);
  }
  return out;
}

std::vector<std::size_t> sample_balance(std::span<const ActionSequence> actions, std::size_t m,
                                        const ActionSupport& support) {
  const std::size_t n = actions.size();
  std::vector<std::size_t> out;
  std::vector<bool> taken(n, false);
  ActionHistogram hist(support);
  while (out.size() < std::min(m, n)) {
    std::size_t best = n;
    double best_e = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      hist.add(actions[i]);
      const double e = hist.entropy();
      hist.remove(actions[i]);
      if (e > best_e + kTieTolerance) {
        best_e = e;
        best = i;
      }
    }
    taken[best] = true;
    hist.add(actions[best]);
    out.push_back(best);
  }
  return out;
}

std::string sampler_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kRandom: return "RANDOM";
    case SamplerKind::kFss: return "FSS";
    case SamplerKind::kLfs: return "LFS";
    case SamplerKind::kDlfs: return "DLFS";
    case SamplerKind::kBalance: return "BALANCE";
  }
  return "?";
}

SamplerKind parse_sampler(const std::string& name) {
  for (SamplerKind k : {SamplerKind::kRandom, SamplerKind::kFss, SamplerKind::kLfs, SamplerKind::kDlfs,
                        SamplerKind::kBalance})
    if (sampler_name(k) == name) return k;
  throw std::invalid_argument("unknown sampler: " + name);
}

Selection select_memory(SamplerKind kind, const SamplerInput& in) {
  const std::size_t n = in.actions.size();
  if (in.lfs.size() != n) throw std::invalid_argument("select_memory: lfs and actions differ in length");
  Selection sel;
  if (n == 0 || in.capacity == 0) return sel;
  const std::size_t m = std::min(in.capacity, n);
  switch (kind) {
    case SamplerKind::kRandom:
      sel.indices = sample_random(n, m, in.seed);
      break;
    case SamplerKind::kBalance:
      sel.indices = sample_balance(in.actions, m);
      break;
    case SamplerKind::kFss:
      if (!in.features) throw std::invalid_argument("FSS needs utterance features");
      sel.indices = sample_fss(*in.features, m, in.seed);
      break;
    case SamplerKind::kLfs:
    case SamplerKind::kDlfs: {
      const RowMatrix dist = lf_distance_matrix(in.lfs, in.smatch, in.exec);
      const Clustering cl = kmedoids(dist, m, in.seed);
      if (kind == SamplerKind::kLfs) {
        sel.indices = cl.medoids;
      } else {
        ActionSupport support;
        const ActionHistogram full = histogram_of(in.actions);
        if (in.subset_threshold > 0 && full.actions().size() > in.subset_threshold)
          support = sample_action_subset(full, in.subset_threshold, mix_seed(in.seed, 1));
        sel.indices = dlfs_select(in.actions, cl, support, in.max_rounds, in.dlfs_starts, mix_seed(in.seed, 2));
      }
      for (std::size_t i : sel.indices) sel.clusters.push_back(cl.assignment[i]);
      return sel;
    }
  }
  sel.clusters.assign(sel.indices.size(), -1);
  return sel;
}

void save_memories(const std::filesystem::path& path, std::span<const Memory> memories) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const Memory& mem : memories)
    for (const MemoryEntry& e : mem.entries)
      out << nlohmann::json{{"task", e.source_task}, {"utterance", e.utterance}, {"lf", e.lf.text()},
                            {"cluster", e.cluster_id}}
                 .dump()
          << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<Memory> load_memories(const std::filesystem::path& path, std::span<const ActionSpace> spaces,
                                  std::size_t capacity) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<Memory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      MemoryEntry e;
      e.source_task = j.at("task").get<int>();
      e.utterance = j.at("utterance").get<std::string>();
      e.lf = parse_lf(j.at("lf").get<std::string>());
      e.cluster_id = j.value("cluster", -1);
      if (e.source_task < 0 || static_cast<std::size_t>(e.source_task) >= spaces.size())
        throw MalformedRecord(line_no, "task index out of range");
      e.actions = spaces[static_cast<std::size_t>(e.source_task)].lf_to_actions(e.lf);
      if (out.size() <= static_cast<std::size_t>(e.source_task)) out.resize(static_cast<std::size_t>(e.source_task) + 1);
      out[static_cast<std::size_t>(e.source_task)].entries.push_back(std::move(e));
    } catch (const MalformedRecord&) {
      throw;
    } catch (const nlohmann::json::exception& ex) {
      throw MalformedRecord(line_no, ex.what());
    } catch (const Error& ex) {
      throw MalformedRecord(line_no, ex.what());
    }
  }
  for (Memory& m : out) m.capacity = capacity;
  return out;
}

}  // namespace recall
