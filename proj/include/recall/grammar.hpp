#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace recall {

enum class SymbolKind { kLiteral, kNonTerminal, kSlot };

/// Right-hand side of a production as an s-expression template. A list
/// template's head is a literal or a slot; its children may be anything.
struct TemplateNode {
  SymbolKind kind = SymbolKind::kLiteral;
  std::string symbol;
  std::vector<TemplateNode> children;
};

/// A nonterminal or slot still waiting to be expanded.
struct FrontierSymbol {
  SymbolKind kind = SymbolKind::kNonTerminal;
  std::string name;
  friend bool operator==(const FrontierSymbol&, const FrontierSymbol&) = default;
};

struct Rule {
  std::string lhs;
  TemplateNode rhs;
  /// Canonical "LHS -> (head ...)" text; identifies the rule across grammars.
  std::string text;
  /// Nonterminals and slots of `rhs` in preorder.
  std::vector<FrontierSymbol> pending;
};

/// Context-free grammar over s-expression templates.
///
/// Text format, one declaration per line, `#` starts a comment:
///
///     start Q
///     slot ent : city river lake
///     Q -> ( count ent )
///     Q -> ( answer ( and E E ) )
///
/// Symbols that appear on some left-hand side are nonterminals, symbols named
/// by a `slot` line are slot types, and anything else is a literal atom.
class Grammar {
 public:
  static Grammar parse(std::string_view text);
  static Grammar load(const std::filesystem::path& path);

  const std::string& start() const noexcept { return start_; }
  const std::vector<Rule>& rules() const noexcept { return rules_; }
  const Rule& rule(int index) const { return rules_[static_cast<std::size_t>(index)]; }
  /// Indices of the rules expanding `nonterminal`, in file order.
  const std::vector<int>& rules_for(const std::string& nonterminal) const;
  const std::map<std::string, std::vector<std::string>>& slots() const noexcept { return slots_; }
  /// Slot names in declaration order.
  const std::vector<std::string>& slot_order() const noexcept { return slot_order_; }
  bool is_nonterminal(const std::string& symbol) const { return rules_by_lhs_.count(symbol) != 0; }
  bool is_slot(const std::string& symbol) const { return slots_.count(symbol) != 0; }

  /// Serializes back to the text format.
  std::string to_text() const;

 private:
  void validate() const;

  std::string start_;
  std::vector<Rule> rules_;
  std::map<std::string, std::vector<int>> rules_by_lhs_;
  std::map<std::string, std::vector<std::string>> slots_;
  std::vector<std::string> slot_order_;
};

std::string render_template(const TemplateNode& node);

}  // namespace recall
