#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "recall/actions.hpp"
#include "recall/kernels.hpp"
#include "recall/params.hpp"
#include "recall/smatch.hpp"

namespace recall {

/// Action set an entropy is restricted to; nullopt means every action.
using ActionSupport = std::optional<std::unordered_set<ActionId>>;

/// Action frequencies over a multiset of action sequences, restricted to a
/// support. Adding and removing sequences updates the entropy incrementally.
class ActionHistogram {
 public:
  explicit ActionHistogram(ActionSupport support = std::nullopt);

  void add(const ActionSequence& seq);
  void remove(const ActionSequence& seq);

  long count(ActionId a) const;
  long total() const noexcept { return total_; }
  double probability(ActionId a) const;
  /// Actions with a nonzero count, ascending.
  std::vector<ActionId> actions() const;
  /// Shannon entropy in nats; 0 for an empty histogram.
  double entropy() const;

 private:
  bool counted(ActionId a) const { return !support_ || support_->count(a) != 0; }
  void bump(ActionId a, long delta);

  ActionSupport support_;
  std::vector<long> counts_;
  long total_ = 0;
  double sum_nlogn_ = 0.0;
};

ActionHistogram histogram_of(std::span<const ActionSequence> seqs, const ActionSupport& support = std::nullopt);

/// Entropy of the histogram of `seqs` restricted to `support`, from scratch.
double memory_entropy(std::span<const ActionSequence> seqs, const ActionSupport& support = std::nullopt);

struct Clustering {
  std::vector<int> assignment;        // cluster of each point
  std::vector<std::size_t> medoids;   // point index of each cluster's medoid
  double cost = 0.0;                  // sum of point-to-medoid distances
};

/// Distance matrix 1 - lf_similarity.
RowMatrix lf_distance_matrix(std::span<const LogicalForm> lfs, const SmatchOptions& options = {},
                             kernels::Exec exec = kernels::Exec::kSerial);

/// K-medoids with farthest-point initialization from a seeded first point.
/// Throws InsufficientPoints when k exceeds the number of points.
Clustering kmedoids(const RowMatrix& distance, std::size_t k, std::uint64_t seed, int max_iterations = 100);

/// Cost of assigning every point to its nearest medoid.
double medoid_cost(const RowMatrix& distance, std::span<const std::size_t> medoids);

/// Weighted sampling of h actions without replacement, weights proportional to
/// counts. Returns every counted action when h covers them all.
std::unordered_set<ActionId> sample_action_subset(const ActionHistogram& hist, std::size_t h, std::uint64_t seed);

/// One instance per cluster maximizing memory entropy. Coordinate ascent
/// (single-slot moves, then two-slot moves when those stall) runs from the
/// medoids, from a greedy construction and from seeded random selections;
/// the best result wins, the medoid start on ties. Returns point indices
/// ordered by cluster.
std::vector<std::size_t> dlfs_select(std::span<const ActionSequence> actions, const Clustering& clusters,
                                     const ActionSupport& support, int max_rounds = 10, int starts = 8,
                                     std::uint64_t seed = 0);

std::vector<std::size_t> sample_random(std::size_t n, std::size_t m, std::uint64_t seed);

/// k-means over utterance features, then the instance nearest each centroid.
/// Instances chosen by several centroids appear once.
std::vector<std::size_t> sample_fss(const RowMatrix& features, std::size_t m, std::uint64_t seed,
                                    int max_iterations = 100);

/// Greedy entropy maximization without a cluster constraint.
std::vector<std::size_t> sample_balance(std::span<const ActionSequence> actions, std::size_t m,
                                        const ActionSupport& support = std::nullopt);

enum class SamplerKind { kRandom, kFss, kLfs, kDlfs, kBalance };

std::string sampler_name(SamplerKind kind);
/// Accepts the upper-case names RANDOM, FSS, LFS, DLFS, BALANCE.
SamplerKind parse_sampler(const std::string& name);

struct SamplerInput {
  std::span<const LogicalForm> lfs;
  std::span<const ActionSequence> actions;
  const RowMatrix* features = nullptr;  // required by FSS
  std::size_t capacity = 0;
  std::uint64_t seed = 0;
  SmatchOptions smatch;
  kernels::Exec exec = kernels::Exec::kSerial;
  int max_rounds = 10;
  int dlfs_starts = 8;
  /// DLFS restricts the entropy to a sampled action subset of this size when
  /// the task has more actions than this; 0 disables.
  std::size_t subset_threshold = 300;
};

struct Selection {
  std::vector<std::size_t> indices;
  std::vector<int> clusters;  // -1 for samplers without clustering
};

Selection select_memory(SamplerKind kind, const SamplerInput& input);

struct MemoryEntry {
  std::string utterance;
  LogicalForm lf;
  ActionSequence actions;
  int source_task = 0;
  int cluster_id = -1;
};

struct Memory {
  std::vector<MemoryEntry> entries;
  std::size_t capacity = 0;
};

/// One JSON object per line: task, utterance, lf, cluster.
void save_memories(const std::filesystem::path& path, std::span<const Memory> memories);
/// Actions are re-derived with spaces[task]. Throws MalformedRecord.
std::vector<Memory> load_memories(const std::filesystem::path& path, std::span<const ActionSpace> spaces,
                                  std::size_t capacity);

}  // namespace recall
