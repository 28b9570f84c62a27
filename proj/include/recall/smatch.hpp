#pragma once

#include <cstddef>
#include <cstdint>

#include "recall/logical_form.hpp"

namespace recall {

enum class SmatchSearch { kAuto, kExhaustive, kHillClimb };

struct SmatchOptions {
  SmatchSearch search = SmatchSearch::kAuto;
  /// kAuto searches exhaustively when both trees have at most this many nodes.
  std::size_t exact_node_limit = 8;
  int restarts = 4;
  std::uint64_t seed = 0x5eed;
};

/// Fraction of `src` triples matched in `dst` under the best node mapping found.
///
/// An instance triple matches when its node maps to a node with the same
/// label. A relation triple matches when both endpoints map to label-equal
/// nodes and `dst` holds the same argument slot between them. Mappings are
/// one-to-one; unmatched nodes may stay unmapped.
double smatch_directed(const LogicalForm& src, const LogicalForm& dst, const SmatchOptions& options = {});

/// Symmetric similarity: mean of both directed scores.
double lf_similarity(const LogicalForm& a, const LogicalForm& b, const SmatchOptions& options = {});

}  // namespace recall
