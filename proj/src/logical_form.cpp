#include "recall/logical_form.hpp"

#include <cctype>

#include "recall/errors.hpp"

namespace recall {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

class SexprReader {
 public:
  explicit SexprReader(std::string_view text) : text_(text) {}

  std::vector<AstNode> read() {
    skip_space();
    if (pos_ >= text_.size()) throw MalformedLf(pos_, "empty expression");
    read_node(-1);
    skip_space();
    if (pos_ < text_.size()) throw MalformedLf(pos_, "trailing content");
    return std::move(nodes_);
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
  }

  std::string read_atom() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !is_space(text_[pos_]) && text_[pos_] != '(' && text_[pos_] != ')') ++pos_;
    if (pos_ == start) throw MalformedLf(pos_, "empty atom");
    return std::string(text_.substr(start, pos_ - start));
  }

  int add_node(std::string label, int parent) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(AstNode{std::move(label), {}, parent, id});
    if (parent >= 0) nodes_[static_cast<std::size_t>(parent)].children.push_back(id);
    return id;
  }

  void read_node(int parent) {
    skip_space();
    if (pos_ >= text_.size()) throw MalformedLf(pos_, "unexpected end of input");
    if (text_[pos_] == ')') throw MalformedLf(pos_, "unbalanced ')'");
    if (text_[pos_] != '(') {
      add_node(read_atom(), parent);
      return;
    }
    const std::size_t open = pos_++;
    skip_space();
    if (pos_ >= text_.size()) throw MalformedLf(open, "unbalanced '('");
    if (text_[pos_] == ')') throw MalformedLf(pos_, "empty list");
    if (text_[pos_] == '(') throw MalformedLf(pos_, "list head must be an atom");
    const int id = add_node(read_atom(), parent);
    for (;;) {
      skip_space();
      if (pos_ >= text_.size()) throw MalformedLf(open, "unbalanced '('");
      if (text_[pos_] == ')') {
        ++pos_;
        return;
      }
      read_node(id);
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::vector<AstNode> nodes_;
};

void serialize_into(const LogicalForm& lf, int id, std::string& out) {
  const AstNode& n = lf.node(id);
  if (n.children.empty()) {
    out += n.label;
    return;
  }
  out += '(';
  out += n.label;
  for (int c : n.children) {
    out += ' ';
    serialize_into(lf, c, out);
  }
  out += ')';
}

}  // namespace

LogicalForm::LogicalForm(std::vector<AstNode> nodes) : nodes_(std::move(nodes)) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) nodes_[i].id = static_cast<int>(i);
  if (!nodes_.empty()) text_ = serialize(*this, 0);
}

LogicalForm parse_lf(std::string_view text) { return LogicalForm(SexprReader(text).read()); }

std::string serialize(const LogicalForm& lf, int id) {
  std::string out;
  serialize_into(lf, id, out);
  return out;
}

std::string canonicalize(std::string_view text) { return parse_lf(text).text(); }

TripleSet extract_triples(const LogicalForm& lf) {
  TripleSet t;
  t.instances.reserve(lf.size());
  for (const AstNode& n : lf.nodes()) {
    t.instances.push_back({n.id, n.label});
    for (std::size_t k = 0; k < n.children.size(); ++k) t.relations.push_back({n.id, static_cast<int>(k), n.children[k]});
  }
  return t;
}

std::string slot_name(int slot) { return "arg" + std::to_string(slot); }

}  // namespace recall
