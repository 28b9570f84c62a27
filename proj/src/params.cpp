#include "recall/params.hpp"

#include <algorithm>
#include <stdexcept>

namespace recall {

std::size_t ParamMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

ParamMask& ParamMask::operator|=(const ParamMask& other) {
  if (other.size() != size()) throw std::invalid_argument("mask size mismatch");
  for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] = bits_[i] | other.bits_[i];
  return *this;
}

void apply_mask(std::span<double> values, const ParamMask& mask) {
  if (values.size() != mask.size()) throw std::invalid_argument("mask size mismatch");
  const auto& bits = mask.bits();
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!bits[i]) values[i] = 0.0;
}

int ParamStore::add(const std::string& name, int rows, int cols, PartitionTag tag) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("negative tensor shape for " + name);
  TensorInfo info{name, rows, cols, values_.size()};
  values_.resize(values_.size() + info.size(), 0.0);
  tags_.resize(values_.size(), tag);
  tensors_.push_back(info);
  return static_cast<int>(tensors_.size() - 1);
}

int ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i)
    if (tensors_[i].name == name) return static_cast<int>(i);
  return -1;
}

void ParamStore::set_row_tag(int tensor, int row, PartitionTag tag) {
  const TensorInfo& t = this->tensor(tensor);
  const std::size_t begin = t.offset + static_cast<std::size_t>(row) * static_cast<std::size_t>(t.cols);
  std::fill_n(tags_.begin() + static_cast<std::ptrdiff_t>(begin), t.cols, tag);
}

MatMap ParamStore::view(double* base, int tensor) const {
  const TensorInfo& t = this->tensor(tensor);
  return MatMap(base + t.offset, t.rows, t.cols);
}

ConstMatMap ParamStore::view(const double* base, int tensor) const {
  const TensorInfo& t = this->tensor(tensor);
  return ConstMatMap(base + t.offset, t.rows, t.cols);
}

ParamMask ParamStore::partition_mask(bool shared, const std::set<PartitionTag>& tasks) const {
  ParamMask m(size());
  for (std::size_t i = 0; i < tags_.size(); ++i)
    if ((shared && tags_[i] == kShared) || (tags_[i] != kShared && tasks.count(tags_[i]))) m.set(i);
  return m;
}

ParamMask ParamStore::row_mask(int tensor, const std::set<int>& rows) const {
  ParamMask m(size());
  const TensorInfo& t = this->tensor(tensor);
  for (int r : rows) {
    if (r < 0 || r >= t.rows) throw std::out_of_range("row out of range in " + t.name);
    const std::size_t begin = t.offset + static_cast<std::size_t>(r) * static_cast<std::size_t>(t.cols);
    for (int c = 0; c < t.cols; ++c) m.set(begin + static_cast<std::size_t>(c));
  }
  return m;
}

ParamMask ParamStore::tensor_mask(int tensor) const {
  ParamMask m(size());
  const TensorInfo& t = this->tensor(tensor);
  for (std::size_t i = 0; i < t.size(); ++i) m.set(t.offset + i);
  return m;
}

void ParamStore::set_tags(std::vector<PartitionTag> tags) {
  if (tags.size() != values_.size()) throw std::invalid_argument("tag vector size mismatch");
  tags_ = std::move(tags);
}

}  // namespace recall
