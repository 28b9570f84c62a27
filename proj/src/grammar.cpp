#include "recall/grammar.hpp"

#include <cctype>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "recall/errors.hpp"

namespace recall {

namespace {

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : line) {
    if (c == '(' || c == ')') {
      flush();
      out.emplace_back(1, c);
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      cur += c;
    }
  }
  flush();
  return out;
}

struct RawRule {
  std::string lhs;
  std::vector<std::string> rhs;
  std::size_t line;
};

class TemplateReader {
 public:
  TemplateReader(const std::vector<std::string>& tokens, const std::set<std::string>& nonterminals,
                 const std::set<std::string>& slots, std::size_t line)
      : tokens_(tokens), nonterminals_(nonterminals), slots_(slots), line_(line) {}

  TemplateNode read() {
    TemplateNode node = read_node();
    if (pos_ != tokens_.size()) fail("trailing symbols after template");
    return node;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw GrammarError("line " + std::to_string(line_) + ": " + what);
  }

  SymbolKind kind_of(const std::string& s) const {
    if (nonterminals_.count(s)) return SymbolKind::kNonTerminal;
    if (slots_.count(s)) return SymbolKind::kSlot;
    return SymbolKind::kLiteral;
  }

  TemplateNode read_node() {
    if (pos_ >= tokens_.size()) fail("unexpected end of template");
    const std::string& tok = tokens_[pos_++];
    if (tok == ")") fail("unbalanced ')'");
    if (tok != "(") return TemplateNode{kind_of(tok), tok, {}};
    if (pos_ >= tokens_.size() || tokens_[pos_] == "(" || tokens_[pos_] == ")") fail("list head must be a symbol");
    TemplateNode node{kind_of(tokens_[pos_]), tokens_[pos_], {}};
    ++pos_;
    if (node.kind == SymbolKind::kNonTerminal) fail("list head cannot be a nonterminal");
    for (;;) {
      if (pos_ >= tokens_.size()) fail("unbalanced '('");
      if (tokens_[pos_] == ")") {
        ++pos_;
        return node;
      }
      node.children.push_back(read_node());
    }
  }

  const std::vector<std::string>& tokens_;
  const std::set<std::string>& nonterminals_;
  const std::set<std::string>& slots_;
  std::size_t line_;
  std::size_t pos_ = 0;
};

void collect_pending(const TemplateNode& node, std::vector<FrontierSymbol>& out) {
  if (node.kind != SymbolKind::kLiteral) out.push_back({node.kind, node.symbol});
  for (const auto& c : node.children) collect_pending(c, out);
}

void render_into(const TemplateNode& node, std::string& out) {
  if (node.children.empty()) {
    out += node.symbol;
    return;
  }
  out += '(';
  out += node.symbol;
  for (const auto& c : node.children) {
    out += ' ';
    render_into(c, out);
  }
  out += ')';
}

}  // namespace

std::string render_template(const TemplateNode& node) {
  std::string out;
  render_into(node, out);
  return out;
}

Grammar Grammar::parse(std::string_view text) {
  Grammar g;
  std::vector<RawRule> raw;
  std::set<std::string> nonterminals;
  std::set<std::string> slot_names;

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::vector<std::string> words = split_words(line);
    if (words.empty()) continue;
    auto fail = [&](const std::string& what) {
      throw GrammarError("line " + std::to_string(line_no) + ": " + what);
    };
    if (words[0] == "start") {
      if (words.size() != 2) fail("expected 'start <nonterminal>'");
      if (!g.start_.empty()) fail("duplicate start declaration");
      g.start_ = words[1];
    } else if (words[0] == "slot") {
      if (words.size() < 4 || words[2] != ":") fail("expected 'slot <name> : <token> ...'");
      if (slot_names.count(words[1])) fail("duplicate slot '" + words[1] + "'");
      std::vector<std::string> vocab(words.begin() + 3, words.end());
      std::set<std::string> seen;
      for (const auto& t : vocab) {
        if (t == "(" || t == ")") fail("slot tokens cannot be parentheses");
        if (!seen.insert(t).second) fail("duplicate token '" + t + "' in slot '" + words[1] + "'");
      }
      slot_names.insert(words[1]);
      g.slot_order_.push_back(words[1]);
      g.slots_[words[1]] = std::move(vocab);
    } else if (words.size() >= 3 && words[1] == "->") {
      if (words[0] == "(" || words[0] == ")") fail("bad left-hand side");
      nonterminals.insert(words[0]);
      raw.push_back({words[0], std::vector<std::string>(words.begin() + 2, words.end()), line_no});
    } else {
      fail("unrecognized declaration");
    }
  }
  if (g.start_.empty()) throw GrammarError("missing start declaration");
  for (const auto& s : slot_names)
    if (nonterminals.count(s)) throw GrammarError("'" + s + "' is both a slot and a nonterminal");

  std::set<std::string> seen_rules;
  for (const auto& r : raw) {
    Rule rule;
    rule.lhs = r.lhs;
    rule.rhs = TemplateReader(r.rhs, nonterminals, slot_names, r.line).read();
    rule.text = r.lhs + " -> " + render_template(rule.rhs);
    collect_pending(rule.rhs, rule.pending);
    if (!seen_rules.insert(rule.text).second)
      throw GrammarError("line " + std::to_string(r.line) + ": duplicate rule '" + rule.text + "'");
    g.rules_by_lhs_[rule.lhs].push_back(static_cast<int>(g.rules_.size()));
    g.rules_.push_back(std::move(rule));
  }
  g.validate();
  return g;
}

Grammar Grammar::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open grammar file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

const std::vector<int>& Grammar::rules_for(const std::string& nonterminal) const {
  static const std::vector<int> kNone;
  auto it = rules_by_lhs_.find(nonterminal);
  return it == rules_by_lhs_.end() ? kNone : it->second;
}

void Grammar::validate() const {
  if (!is_nonterminal(start_)) throw GrammarError("start symbol '" + start_ + "' has no productions");

  // Unit rules (N -> M) consume no tree structure; a cycle of them would make
  // derivations unbounded.
  std::map<std::string, std::vector<std::string>> unit;
  for (const auto& r : rules_)
    if (r.rhs.kind == SymbolKind::kNonTerminal) unit[r.lhs].push_back(r.rhs.symbol);
  std::map<std::string, int> color;
  std::function<void(const std::string&)> visit = [&](const std::string& n) {
    color[n] = 1;
    for (const auto& m : unit[n]) {
      if (color[m] == 1) throw GrammarError("cycle of unit rules through '" + m + "'");
      if (color[m] == 0) visit(m);
    }
    color[n] = 2;
  };
  for (const auto& [n, _] : rules_by_lhs_)
    if (color[n] == 0) visit(n);

  // Every nonterminal must derive at least one finite tree.
  std::set<std::string> productive;
  std::function<bool(const TemplateNode&)> finite = [&](const TemplateNode& t) {
    if (t.kind == SymbolKind::kNonTerminal && !productive.count(t.symbol)) return false;
    for (const auto& c : t.children)
      if (!finite(c)) return false;
    return true;
  };
  for (bool changed = true; changed;) {
    changed = false;
    for (const auto& r : rules_)
      if (!productive.count(r.lhs) && finite(r.rhs)) changed = productive.insert(r.lhs).second || changed;
  }
  for (const auto& [n, _] : rules_by_lhs_)
    if (!productive.count(n)) throw GrammarError("nonterminal '" + n + "' derives no finite tree");
}

std::string Grammar::to_text() const {
  std::string out = "start " + start_ + "\n";
  for (const auto& s : slot_order_) {
    out += "slot " + s + " :";
    for (const auto& t : slots_.at(s)) out += " " + t;
    out += "\n";
  }
  for (const auto& r : rules_) out += r.text + "\n";
  return out;
}

}  // namespace recall
