#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace recall {

/// One node of a logical-form syntax tree. Nodes live in a flat arena owned by
/// LogicalForm; `id` is the node's depth-first preorder position.
struct AstNode {
  std::string label;
  std::vector<int> children;
  int parent = -1;
  int id = 0;
};

/// An s-expression logical form, head-first: "(a (b c) d)" is a node `a` with
/// children `b` (which has child `c`) and `d`. Immutable after construction.
class LogicalForm {
 public:
  LogicalForm() = default;

  /// Builds from a preorder node arena. Node 0 is the root.
  explicit LogicalForm(std::vector<AstNode> nodes);

  const std::vector<AstNode>& nodes() const noexcept { return nodes_; }
  const AstNode& root() const { return nodes_.front(); }
  const AstNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }

  /// Canonical text: single spaces, no leading or trailing whitespace.
  const std::string& text() const noexcept { return text_; }

  friend bool operator==(const LogicalForm& a, const LogicalForm& b) { return a.text_ == b.text_; }

 private:
  std::vector<AstNode> nodes_;
  std::string text_;
};

/// Parses an s-expression. Throws MalformedLf on unbalanced parentheses, an
/// empty expression, an empty list, a list whose head is not an atom, or
/// trailing content.
LogicalForm parse_lf(std::string_view text);

/// Re-serializes a (sub)tree rooted at `id` in canonical form.
std::string serialize(const LogicalForm& lf, int id = 0);

/// Whitespace-insensitive canonical form of an s-expression string.
std::string canonicalize(std::string_view text);

struct InstanceTriple {
  int node;
  std::string label;
  auto operator<=>(const InstanceTriple&) const = default;
};

struct RelationTriple {
  int parent;
  int slot;  // child ordinal, named "arg<slot>"
  int child;
  auto operator<=>(const RelationTriple&) const = default;
};

/// Smatch-style triples of a tree: one instance triple per node and one
/// relation triple per parent-child edge.
struct TripleSet {
  std::vector<InstanceTriple> instances;
  std::vector<RelationTriple> relations;

  std::size_t size() const noexcept { return instances.size() + relations.size(); }
};

TripleSet extract_triples(const LogicalForm& lf);

/// "arg0", "arg1", ...
std::string slot_name(int slot);

}  // namespace recall
