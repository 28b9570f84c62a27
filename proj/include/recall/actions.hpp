#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "recall/grammar.hpp"
#include "recall/logical_form.hpp"

namespace recall {

/// Index into the global action vocabulary.
using ActionId = int;
using ActionSequence = std::vector<ActionId>;

enum class ActionKind { kApply, kGen };

struct ActionInfo {
  ActionKind kind = ActionKind::kApply;
  /// "APPLY Q -> (count ent)" or "GEN ent city".
  std::string key;
};

/// Append-only vocabulary of actions shared by every task. Actions are keyed
/// by their text, so rules that are textually identical across grammars map
/// to one id.
class ActionRegistry {
 public:
  ActionId intern(ActionKind kind, const std::string& key);
  /// Returns -1 when the key is unknown.
  ActionId find(const std::string& key) const;
  const ActionInfo& info(ActionId id) const { return actions_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return actions_.size(); }
  const std::vector<ActionInfo>& actions() const noexcept { return actions_; }

 private:
  std::vector<ActionInfo> actions_;
  std::unordered_map<std::string, ActionId> index_;
};

std::string apply_key(const Rule& rule);
std::string gen_key(const std::string& slot, const std::string& token);

/// Frontier stack of an in-progress depth-first derivation. The next symbol
/// to expand is `stack.back()`.
struct DerivationState {
  std::vector<FrontierSymbol> stack;
  bool complete() const noexcept { return stack.empty(); }
};

/// A grammar bound to the global registry: every rule and every slot token of
/// the grammar is registered on construction.
class ActionSpace {
 public:
  ActionSpace(Grammar grammar, ActionRegistry& registry);

  const Grammar& grammar() const noexcept { return grammar_; }
  /// Every action this grammar can emit, ascending.
  const std::vector<ActionId>& all_actions() const noexcept { return all_; }
  bool contains(ActionId id) const { return local_.count(id) != 0; }

  DerivationState initial_state() const;
  /// APPLY actions of the rules expanding a nonterminal on top of the stack,
  /// or GEN actions of the slot on top; empty when the derivation is complete.
  const std::vector<ActionId>& applicable(const DerivationState& state) const;
  /// Advances the derivation. Throws InvalidAction(step) if `action` is not
  /// applicable.
  void advance(DerivationState& state, ActionId action, std::size_t step = 0) const;

  ActionSequence lf_to_actions(const LogicalForm& lf) const;
  LogicalForm actions_to_lf(const ActionSequence& actions) const;

  ActionId rule_action(int rule_index) const { return rule_actions_[static_cast<std::size_t>(rule_index)]; }
  ActionId gen_action(const std::string& slot, const std::string& token) const;

 private:
  struct Local {
    ActionKind kind;
    int rule = -1;
    std::string slot;
    std::string token;
  };

  Grammar grammar_;
  std::vector<ActionId> rule_actions_;
  std::unordered_map<std::string, std::vector<ActionId>> by_nonterminal_;
  std::unordered_map<std::string, std::vector<ActionId>> by_slot_;
  std::unordered_map<std::string, std::unordered_map<std::string, ActionId>> gen_ids_;
  std::unordered_map<ActionId, Local> local_;
  std::vector<ActionId> all_;
};

/// Free-function forms of the conversions.
inline ActionSequence lf_to_actions(const LogicalForm& lf, const ActionSpace& space) { return space.lf_to_actions(lf); }
inline LogicalForm actions_to_lf(const ActionSequence& seq, const ActionSpace& space) {
  return space.actions_to_lf(seq);
}
inline const std::vector<ActionId>& applicable_actions(const DerivationState& state, const ActionSpace& space) {
  return space.applicable(state);
}

/// Union of the gold actions over a dataset of logical forms, ascending.
/// Throws NotDerivable naming the offending example index.
std::vector<ActionId> action_set_of(const std::vector<LogicalForm>& lfs, const ActionSpace& space);

}  // namespace recall
