#include "recall/actions.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>

#include "recall/errors.hpp"

namespace recall {

ActionId ActionRegistry::intern(ActionKind kind, const std::string& key) {
  if (auto it = index_.find(key); it != index_.end()) return it->second;
  const auto id = static_cast<ActionId>(actions_.size());
  actions_.push_back({kind, key});
  index_.emplace(key, id);
  return id;
}

ActionId ActionRegistry::find(const std::string& key) const {
  auto it = index_.find(key);
  return it == index_.end() ? -1 : it->second;
}

std::string apply_key(const Rule& rule) { return "APPLY " + rule.text; }
std::string gen_key(const std::string& slot, const std::string& token) { return "GEN " + slot + " " + token; }

ActionSpace::ActionSpace(Grammar grammar, ActionRegistry& registry) : grammar_(std::move(grammar)) {
  for (std::size_t r = 0; r < grammar_.rules().size(); ++r) {
    const Rule& rule = grammar_.rules()[r];
    const ActionId id = registry.intern(ActionKind::kApply, apply_key(rule));
    rule_actions_.push_back(id);
    by_nonterminal_[rule.lhs].push_back(id);
    local_[id] = Local{ActionKind::kApply, static_cast<int>(r), {}, {}};
  }
  for (const auto& slot : grammar_.slot_order()) {
    for (const auto& token : grammar_.slots().at(slot)) {
      const ActionId id = registry.intern(ActionKind::kGen, gen_key(slot, token));
      by_slot_[slot].push_back(id);
      gen_ids_[slot][token] = id;
      local_[id] = Local{ActionKind::kGen, -1, slot, token};
    }
  }
  for (const auto& [id, _] : local_) all_.push_back(id);
  std::sort(all_.begin(), all_.end());
}

DerivationState ActionSpace::initial_state() const {
  return DerivationState{{FrontierSymbol{SymbolKind::kNonTerminal, grammar_.start()}}};
}

const std::vector<ActionId>& ActionSpace::applicable(const DerivationState& state) const {
  static const std::vector<ActionId> kNone;
  if (state.stack.empty()) return kNone;
  const FrontierSymbol& top = state.stack.back();
  const auto& table = top.kind == SymbolKind::kSlot ? by_slot_ : by_nonterminal_;
  auto it = table.find(top.name);
  return it == table.end() ? kNone : it->second;
}

void ActionSpace::advance(DerivationState& state, ActionId action, std::size_t step) const {
  if (state.stack.empty()) throw InvalidAction(step);
  auto it = local_.find(action);
  if (it == local_.end()) throw InvalidAction(step);
  const FrontierSymbol top = state.stack.back();
  const Local& local = it->second;
  if (local.kind == ActionKind::kGen) {
    if (top.kind != SymbolKind::kSlot || top.name != local.slot) throw InvalidAction(step);
    state.stack.pop_back();
    return;
  }
  const Rule& rule = grammar_.rule(local.rule);
  if (top.kind != SymbolKind::kNonTerminal || top.name != rule.lhs) throw InvalidAction(step);
  state.stack.pop_back();
  for (auto p = rule.pending.rbegin(); p != rule.pending.rend(); ++p) state.stack.push_back(*p);
}

namespace {

// Leftmost-derivation matcher. Counts derivations (saturating at 2) so that
// ambiguity is detected, then emits the unique one.
class Deriver {
 public:
  Deriver(const ActionSpace& space, const Grammar& g, const LogicalForm& lf) : space_(space), g_(g), lf_(lf) {}

  ActionSequence run() {
    const int n = count_nt(g_.start(), 0);
    if (n == 0) throw NotDerivable("'" + lf_.text() + "' is not derivable from '" + g_.start() + "'");
    if (n > 1) throw AmbiguousDerivation("'" + lf_.text() + "' has more than one derivation");
    ActionSequence out;
    emit_nt(g_.start(), 0, out);
    return out;
  }

 private:
  static int sat(long v) { return v > 2 ? 2 : static_cast<int>(v); }

  bool in_vocab(const std::string& slot, const std::string& token) const {
    const auto& vocab = g_.slots().at(slot);
    return std::find(vocab.begin(), vocab.end(), token) != vocab.end();
  }

  int count_nt(const std::string& nt, int node) {
    const auto key = std::make_pair(nt, node);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    long total = 0;
    for (int r : g_.rules_for(nt)) total += count_tpl(g_.rule(r).rhs, node);
    return memo_[key] = sat(total);
  }

  int count_tpl(const TemplateNode& t, int node) {
    const AstNode& a = lf_.node(node);
    switch (t.kind) {
      case SymbolKind::kNonTerminal:
        return count_nt(t.symbol, node);
      case SymbolKind::kLiteral:
        if (a.label != t.symbol) return 0;
        break;
      case SymbolKind::kSlot:
        if (!in_vocab(t.symbol, a.label)) return 0;
        break;
    }
    if (a.children.size() != t.children.size()) return 0;
    long prod = 1;
    for (std::size_t i = 0; i < t.children.size() && prod > 0; ++i)
      prod = sat(prod * count_tpl(t.children[i], a.children[i]));
    return sat(prod);
  }

  void emit_nt(const std::string& nt, int node, ActionSequence& out) {
    for (int r : g_.rules_for(nt)) {
      if (count_tpl(g_.rule(r).rhs, node) > 0) {
        out.push_back(space_.rule_action(r));
        emit_tpl(g_.rule(r).rhs, node, out);
        return;
      }
    }
  }

  void emit_tpl(const TemplateNode& t, int node, ActionSequence& out) {
    if (t.kind == SymbolKind::kNonTerminal) {
      emit_nt(t.symbol, node, out);
      return;
    }
    const AstNode& a = lf_.node(node);
    if (t.kind == SymbolKind::kSlot) out.push_back(space_.gen_action(t.symbol, a.label));
    for (std::size_t i = 0; i < t.children.size(); ++i) emit_tpl(t.children[i], a.children[i], out);
  }

  const ActionSpace& space_;
  const Grammar& g_;
  const LogicalForm& lf_;
  std::map<std::pair<std::string, int>, int> memo_;
};

}  // namespace

ActionId ActionSpace::gen_action(const std::string& slot, const std::string& token) const {
  return gen_ids_.at(slot).at(token);
}

ActionSequence ActionSpace::lf_to_actions(const LogicalForm& lf) const {
  if (lf.empty()) throw NotDerivable("empty logical form");
  return Deriver(*this, grammar_, lf).run();
}

LogicalForm ActionSpace::actions_to_lf(const ActionSequence& actions) const {
  std::vector<AstNode> nodes;
  std::size_t step = 0;

  auto next = [&](const FrontierSymbol& expected) -> const Local& {
    if (step >= actions.size()) throw IncompleteTree();
    auto it = local_.find(actions[step]);
    if (it == local_.end()) throw InvalidAction(step);
    const Local& l = it->second;
    const bool ok = expected.kind == SymbolKind::kSlot
                        ? l.kind == ActionKind::kGen && l.slot == expected.name
                        : l.kind == ActionKind::kApply && grammar_.rule(l.rule).lhs == expected.name;
    if (!ok) throw InvalidAction(step);
    ++step;
    return l;
  };
  auto add = [&](std::string label, int parent) {
    const int id = static_cast<int>(nodes.size());
    nodes.push_back(AstNode{std::move(label), {}, parent, id});
    if (parent >= 0) nodes[static_cast<std::size_t>(parent)].children.push_back(id);
    return id;
  };

  std::function<void(const TemplateNode&, int)> build_tpl;
  auto build_nt = [&](const std::string& nt, int parent) {
    const Local& l = next({SymbolKind::kNonTerminal, nt});
    build_tpl(grammar_.rule(l.rule).rhs, parent);
  };
  build_tpl = [&](const TemplateNode& t, int parent) {
    int id = -1;
    switch (t.kind) {
      case SymbolKind::kNonTerminal:
        build_nt(t.symbol, parent);
        return;
      case SymbolKind::kLiteral:
        id = add(t.symbol, parent);
        break;
      case SymbolKind::kSlot:
        id = add(next({SymbolKind::kSlot, t.symbol}).token, parent);
        break;
    }
    for (const auto& c : t.children) build_tpl(c, id);
  };

  build_nt(grammar_.start(), -1);
  if (step != actions.size()) throw InvalidAction(step);
  return LogicalForm(std::move(nodes));
}

std::vector<ActionId> action_set_of(const std::vector<LogicalForm>& lfs, const ActionSpace& space) {
  std::set<ActionId> ids;
  for (std::size_t i = 0; i < lfs.size(); ++i) {
    try {
      for (ActionId a : space.lf_to_actions(lfs[i])) ids.insert(a);
    } catch (const NotDerivable& e) {
      throw NotDerivable("example " + std::to_string(i) + ": " + e.what());
    }
  }
  return {ids.begin(), ids.end()};
}

}  // namespace recall
