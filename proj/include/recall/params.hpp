#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace recall {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using Vec = Eigen::VectorXd;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

/// Partition tag of a scalar parameter: shared across tasks, or specific to
/// one task (the task's position in the stream, >= 0).
using PartitionTag = int;
inline constexpr PartitionTag kShared = -1;

struct TensorInfo {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Boolean selection over every scalar of a ParamStore.
class ParamMask {
 public:
  ParamMask() = default;
  explicit ParamMask(std::size_t n, bool value = false) : bits_(n, value ? 1 : 0) {}

  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }
  std::size_t size() const noexcept { return bits_.size(); }
  std::size_t count() const;
  bool any() const { return count() > 0; }
  ParamMask& operator|=(const ParamMask& other);
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

 private:
  std::vector<std::uint8_t> bits_;
};

/// Zeroes every entry the mask does not select.
void apply_mask(std::span<double> values, const ParamMask& mask);

/// All trainable scalars in one contiguous buffer. Tensors are row-major views
/// into it; every scalar carries exactly one partition tag.
class ParamStore {
 public:
  /// Appends a tensor; all of its scalars get `tag`.
  int add(const std::string& name, int rows, int cols, PartitionTag tag = kShared);

  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<TensorInfo>& tensors() const noexcept { return tensors_; }
  const TensorInfo& tensor(int index) const { return tensors_[static_cast<std::size_t>(index)]; }
  int find(const std::string& name) const;

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }
  const std::vector<PartitionTag>& tags() const noexcept { return tags_; }

  void set_row_tag(int tensor, int row, PartitionTag tag);

  MatMap mat(int tensor) { return view(values_.data(), tensor); }
  ConstMatMap mat(int tensor) const { return view(values_.data(), tensor); }
  MatMap view(double* base, int tensor) const;
  ConstMatMap view(const double* base, int tensor) const;

  /// Scalars whose tag is kShared (if `shared`) or one of `tasks`.
  ParamMask partition_mask(bool shared, const std::set<PartitionTag>& tasks) const;
  /// Selected rows of one tensor.
  ParamMask row_mask(int tensor, const std::set<int>& rows) const;
  /// Scalars of one whole tensor.
  ParamMask tensor_mask(int tensor) const;

  /// Replaces tags wholesale; size must match.
  void set_tags(std::vector<PartitionTag> tags);

 private:
  std::vector<double> values_;
  std::vector<PartitionTag> tags_;
  std::vector<TensorInfo> tensors_;
};

}  // namespace recall
