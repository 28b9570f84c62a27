#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "recall/actions.hpp"
#include "recall/nn_ops.hpp"
#include "recall/params.hpp"

namespace recall {

struct ParserConfig {
  int word_emb_dim = 64;
  int hidden_dim = 64;  // encoder directions get hidden_dim / 2 each
  int action_emb_dim = 32;
  bool dar_enabled = false;
  std::uint64_t rng_seed = 1;
  double init_range = 0.1;
  std::size_t max_decode_steps = 200;

  /// Throws std::invalid_argument on non-positive dims or an odd hidden_dim.
  void validate() const;
};

/// Utterance word ids. Id 0 is the shared unknown-word entry.
class Vocabulary {
 public:
  static constexpr int kUnk = 0;

  Vocabulary();
  int add(const std::string& word);
  int id(const std::string& word) const;
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  std::vector<int> encode(std::string_view utterance) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

std::vector<std::string> tokenize(std::string_view utterance);

/// One supervised instance: utterance word ids, the gold action sequence, and
/// the task it belongs to (position in the stream).
struct Example {
  std::vector<int> words;
  ActionSequence actions;
  int task = 0;
};

struct EncoderOutput {
  RowMatrix states;  // one row per token, forward half then backward half
  Vec h_final;       // [forward last; backward first]
  Vec c_final;
};

struct DecoderState {
  Vec h;
  Vec c;
  ActionId prev = -1;  // -1 before the first action
  DerivationState frontier;
  std::size_t steps = 0;
};

struct StepDistribution {
  DecoderState next;  // recurrent state after consuming `prev`; frontier unchanged
  Vec state;          // s_t
  std::vector<ActionId> actions;
  std::vector<double> probs;
};

/// Intermediate vectors of one decoder step, for inspection.
struct StepInspection {
  Vec h;        // LSTM output
  Vec h_hat;    // after the task adapter (equals h without adapters)
  Vec context;  // attention over encoder states
  Vec state;    // s_t
};

struct Hypothesis {
  ActionSequence actions;
  double log_prob = 0.0;
};

/// Attention-based encoder-decoder over grammar actions.
///
/// Encoder: bidirectional LSTM over word embeddings. Decoder: LSTM fed with
/// the previous action's embedding; its hidden state (optionally passed through
/// a per-task gated adapter) attends over the encoder states, and
/// s_t = tanh(W_c [h_t; o_t]) scores the applicable actions by dot product
/// with their embeddings.
class ParserModel {
 public:
  ParserModel(const ParserConfig& config, Vocabulary words, std::size_t num_actions, int num_tasks);

  const ParserConfig& config() const noexcept { return config_; }
  const Vocabulary& vocabulary() const noexcept { return words_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }
  std::size_t num_actions() const noexcept { return num_actions_; }
  int num_tasks() const noexcept { return num_tasks_; }

  int action_tensor() const noexcept { return t_action_; }
  int word_tensor() const noexcept { return t_word_; }
  /// Adapter tensors of a task; -1 when adapters are disabled.
  int adapter_phi_tensor(int task) const;
  int adapter_gate_tensor(int task) const;
  /// Number of scalars in one task's adapter.
  std::size_t adapter_param_count() const;

  void tag_action(ActionId action, PartitionTag tag);
  PartitionTag action_tag(ActionId action) const;

  /// Throws EmptyUtterance.
  EncoderOutput encode(std::span<const int> words) const;
  DecoderState start(const EncoderOutput& enc, const ActionSpace& space) const;
  /// Throws NoApplicableActions when the frontier is complete.
  StepDistribution decode_step(const DecoderState& state, const EncoderOutput& enc, const ActionSpace& space,
                               int task) const;
  DecoderState advance(const StepDistribution& step, ActionId chosen, const ActionSpace& space) const;
  StepInspection inspect_step(const DecoderState& state, const EncoderOutput& enc, int task) const;

  /// -log P(actions | words), each step normalized over the applicable set.
  double sequence_nll(const Example& ex, const ActionSpace& space) const;
  /// Teacher-forced P(a_t | a_<t, x) of every gold action.
  std::vector<double> gold_probabilities(const Example& ex, const ActionSpace& space) const;
  /// Adds scale * d(nll)/d(theta) into `grad` (full parameter length) and
  /// returns the nll. With `encoder_grad` false, word and encoder gradients
  /// are not computed.
  double accumulate_gradient(const Example& ex, const ActionSpace& space, double scale, std::span<double> grad,
                             bool encoder_grad = true) const;

  Hypothesis greedy_decode(std::span<const int> words, const ActionSpace& space, int task) const;
  /// Beam search; the result is never less probable than the greedy one.
  Hypothesis beam_decode(std::span<const int> words, const ActionSpace& space, int task, int width) const;
  /// Throws ParseTimeout.
  LogicalForm parse(std::span<const int> words, const ActionSpace& space, int task, int beam = 1) const;

  /// Mean of the encoder states; utterance features for clustering.
  Vec mean_encoding(std::span<const int> words) const;

  /// Test hook: replaces every adapter gate pre-activation with a constant.
  void force_gate_logit(std::optional<double> logit) { forced_gate_ = logit; }

 private:
  struct StepCache {
    int input_action = -1;
    nn::LstmCache lstm;
    Vec h, c;
    nn::AdapterCache adapter;
    Vec h_hat;
    nn::AttentionCache attention;
    Vec joint;  // [h_hat; context]
    Vec s;
  };
  struct EncoderCache {
    std::vector<nn::LstmCache> fwd, bwd;
  };

  EncoderOutput encode_impl(std::span<const int> words, EncoderCache* cache) const;
  void step_forward(const EncoderOutput& enc, int prev, const Vec& h_prev, const Vec& c_prev, int task,
                    StepCache& cache) const;
  ConstVecMap bias(int tensor) const;

  ParserConfig config_;
  Vocabulary words_;
  std::size_t num_actions_;
  int num_tasks_;
  ParamStore params_;
  int t_word_, t_enc_fwd_w_, t_enc_fwd_b_, t_enc_bwd_w_, t_enc_bwd_b_;
  int t_dec_w_, t_dec_b_, t_start_, t_combine_, t_action_;
  std::vector<int> t_adapter_phi_, t_adapter_gate_;
  std::optional<double> forced_gate_;
};

}  // namespace recall
