#include "recall/parser.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "recall/errors.hpp"
#include "recall/random.hpp"

namespace recall {

void ParserConfig::validate() const {
  if (word_emb_dim <= 0 || hidden_dim <= 0 || action_emb_dim <= 0)
    throw std::invalid_argument("parser dimensions must be positive");
  if (hidden_dim % 2 != 0) throw std::invalid_argument("hidden_dim must be even");
  if (max_decode_steps == 0) throw std::invalid_argument("max_decode_steps must be positive");
}

Vocabulary::Vocabulary() { add("<unk>"); }

int Vocabulary::add(const std::string& word) {
  auto it = index_.find(word);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  words_.push_back(word);
  index_.emplace(word, id);
  return id;
}

int Vocabulary::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(std::string_view utterance) const {
  std::vector<int> ids;
  for (const auto& w : tokenize(utterance)) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> tokenize(std::string_view utterance) {
  std::istringstream in{std::string(utterance)};
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

ParserModel::ParserModel(const ParserConfig& config, Vocabulary words, std::size_t num_actions, int num_tasks)
    : config_(config), words_(std::move(words)), num_actions_(num_actions), num_tasks_(num_tasks) {
  config_.validate();
  if (num_tasks < 1) throw std::invalid_argument("num_tasks must be positive");
  const int we = config_.word_emb_dim, d = config_.hidden_dim, ae = config_.action_emb_dim, half = d / 2;
  t_word_ = params_.add("word_emb", static_cast<int>(words_.size()), we);
  t_enc_fwd_w_ = params_.add("enc_fwd_w", 4 * half, we + half);
  t_enc_fwd_b_ = params_.add("enc_fwd_b", 1, 4 * half);
  t_enc_bwd_w_ = params_.add("enc_bwd_w", 4 * half, we + half);
  t_enc_bwd_b_ = params_.add("enc_bwd_b", 1, 4 * half);
  t_dec_w_ = params_.add("dec_w", 4 * d, ae + d);
  t_dec_b_ = params_.add("dec_b", 1, 4 * d);
  t_start_ = params_.add("start_emb", 1, ae);
  t_combine_ = params_.add("combine_w", ae, 2 * d);
  t_action_ = params_.add("action_emb", static_cast<int>(num_actions), ae);
  if (config_.dar_enabled) {
    for (int k = 0; k < num_tasks; ++k) {
      t_adapter_phi_.push_back(params_.add("adapter_phi_" + std::to_string(k), d, d, k));
      t_adapter_gate_.push_back(params_.add("adapter_gate_" + std::to_string(k), d, 2 * d, k));
    }
  }

  Rng rng(config_.rng_seed);
  for (double& v : params_.values()) v = uniform(rng, -config_.init_range, config_.init_range);
  for (int t : {t_enc_fwd_b_, t_enc_bwd_b_, t_dec_b_}) {
    MatMap b = params_.mat(t);
    const int n = b.cols() / 4;
    b.setZero();
    b.block(0, n, 1, n).setOnes();  // forget gate
  }
}

int ParserModel::adapter_phi_tensor(int task) const {
  return config_.dar_enabled ? t_adapter_phi_.at(static_cast<std::size_t>(task)) : -1;
}

int ParserModel::adapter_gate_tensor(int task) const {
  return config_.dar_enabled ? t_adapter_gate_.at(static_cast<std::size_t>(task)) : -1;
}

std::size_t ParserModel::adapter_param_count() const {
  if (!config_.dar_enabled) return 0;
  return params_.tensor(t_adapter_phi_[0]).size() + params_.tensor(t_adapter_gate_[0]).size();
}

void ParserModel::tag_action(ActionId action, PartitionTag tag) { params_.set_row_tag(t_action_, action, tag); }

PartitionTag ParserModel::action_tag(ActionId action) const {
  const TensorInfo& t = params_.tensor(t_action_);
  return params_.tags()[t.offset + static_cast<std::size_t>(action) * static_cast<std::size_t>(t.cols)];
}

ConstVecMap ParserModel::bias(int tensor) const {
  const TensorInfo& t = params_.tensor(tensor);
  return ConstVecMap(params_.values().data() + t.offset, static_cast<Eigen::Index>(t.size()));
}

EncoderOutput ParserModel::encode_impl(std::span<const int> words, EncoderCache* cache) const {
  if (words.empty()) throw EmptyUtterance();
  const int d = config_.hidden_dim, half = d / 2;
  const auto n = static_cast<Eigen::Index>(words.size());
  const ConstMatMap emb = params_.mat(t_word_);
  auto word = [&](Eigen::Index i) -> Vec {
    const int w = words[static_cast<std::size_t>(i)];
    return emb.row(w >= 0 && w < emb.rows() ? w : Vocabulary::kUnk).transpose();
  };

  EncoderOutput out;
  out.states.resize(n, d);
  if (cache) {
    cache->fwd.resize(static_cast<std::size_t>(n));
    cache->bwd.resize(static_cast<std::size_t>(n));
  }
  nn::LstmCache scratch;
  Vec h = Vec::Zero(half), c = Vec::Zero(half), hn, cn;
  for (Eigen::Index i = 0; i < n; ++i) {
    nn::LstmCache& lc = cache ? cache->fwd[static_cast<std::size_t>(i)] : scratch;
    nn::lstm_forward(params_.mat(t_enc_fwd_w_), bias(t_enc_fwd_b_), word(i), h, c, lc, hn, cn);
    h = hn;
    c = cn;
    out.states.row(i).head(half) = h.transpose();
  }
  Vec hf = h, cf = c;
  h.setZero();
  c.setZero();
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    nn::LstmCache& lc = cache ? cache->bwd[static_cast<std::size_t>(i)] : scratch;
    nn::lstm_forward(params_.mat(t_enc_bwd_w_), bias(t_enc_bwd_b_), word(i), h, c, lc, hn, cn);
    h = hn;
    c = cn;
    out.states.row(i).tail(half) = h.transpose();
  }
  out.h_final.resize(d);
  out.h_final << hf, h;
  out.c_final.resize(d);
  out.c_final << cf, c;
  return out;
}

EncoderOutput ParserModel::encode(std::span<const int> words) const { return encode_impl(words, nullptr); }

Vec ParserModel::mean_encoding(std::span<const int> words) const {
  return encode(words).states.colwise().mean().transpose();
}

DecoderState ParserModel::start(const EncoderOutput& enc, const ActionSpace& space) const {
  DecoderState s;
  s.h = enc.h_final;
  s.c = enc.c_final;
  s.frontier = space.initial_state();
  return s;
}

void ParserModel::step_forward(const EncoderOutput& enc, int prev, const Vec& h_prev, const Vec& c_prev, int task,
                               StepCache& sc) const {
  sc.input_action = prev;
  const Vec x = prev < 0 ? Vec(params_.mat(t_start_).row(0).transpose())
                         : Vec(params_.mat(t_action_).row(prev).transpose());
  nn::lstm_forward(params_.mat(t_dec_w_), bias(t_dec_b_), x, h_prev, c_prev, sc.lstm, sc.h, sc.c);
  if (config_.dar_enabled) {
    if (task < 0 || task >= num_tasks_) throw std::out_of_range("task index out of range");
    const double* forced = forced_gate_ ? &*forced_gate_ : nullptr;
    sc.h_hat = nn::adapter_forward(params_.mat(t_adapter_phi_[static_cast<std::size_t>(task)]),
                                   params_.mat(t_adapter_gate_[static_cast<std::size_t>(task)]), sc.h, sc.adapter,
                                   forced);
  } else {
    sc.h_hat = sc.h;
  }
  const Vec context = nn::attention_forward(enc.states, sc.h_hat, sc.attention);
  sc.joint.resize(2 * config_.hidden_dim);
  sc.joint << sc.h_hat, context;
  sc.s = (params_.mat(t_combine_) * sc.joint).array().tanh();
}

StepDistribution ParserModel::decode_step(const DecoderState& state, const EncoderOutput& enc,
                                          const ActionSpace& space, int task) const {
  const auto& cands = space.applicable(state.frontier);
  if (cands.empty()) throw NoApplicableActions();
  StepCache sc;
  step_forward(enc, state.prev, state.h, state.c, task, sc);
  StepDistribution out;
  out.next.h = std::move(sc.h);
  out.next.c = std::move(sc.c);
  out.next.prev = state.prev;
  out.next.frontier = state.frontier;
  out.next.steps = state.steps;
  out.state = std::move(sc.s);
  out.actions = cands;
  out.probs = nn::subset_softmax(params_.mat(t_action_), cands, out.state);
  return out;
}

StepInspection ParserModel::inspect_step(const DecoderState& state, const EncoderOutput& enc, int task) const {
  StepCache sc;
  step_forward(enc, state.prev, state.h, state.c, task, sc);
  const int d = config_.hidden_dim;
  return {sc.h, sc.h_hat, sc.joint.tail(d), sc.s};
}

DecoderState ParserModel::advance(const StepDistribution& step, ActionId chosen, const ActionSpace& space) const {
  DecoderState s = step.next;
  space.advance(s.frontier, chosen, s.steps);
  s.prev = chosen;
  ++s.steps;
  return s;
}

std::vector<double> ParserModel::gold_probabilities(const Example& ex, const ActionSpace& space) const {
  const EncoderOutput enc = encode(ex.words);
  DecoderState st = start(enc, space);
  std::vector<double> out;
  out.reserve(ex.actions.size());
  for (ActionId a : ex.actions) {
    const StepDistribution dist = decode_step(st, enc, space, ex.task);
    const auto it = std::find(dist.actions.begin(), dist.actions.end(), a);
    if (it == dist.actions.end()) throw InvalidAction(st.steps);
    out.push_back(dist.probs[static_cast<std::size_t>(it - dist.actions.begin())]);
    st = advance(dist, a, space);
  }
  if (!st.frontier.complete()) throw IncompleteTree();
  return out;
}

double ParserModel::sequence_nll(const Example& ex, const ActionSpace& space) const {
  double nll = 0.0;
  for (double p : gold_probabilities(ex, space)) nll -= std::log(p);
  return nll;
}

double ParserModel::accumulate_gradient(const Example& ex, const ActionSpace& space, double scale,
                                        std::span<double> grad, bool encoder_grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
  const int d = config_.hidden_dim, half = d / 2;
  EncoderCache ecache;
  const EncoderOutput enc = encode_impl(ex.words, encoder_grad ? &ecache : nullptr);

  // forward with caches
  const std::size_t T = ex.actions.size();
  std::vector<StepCache> steps(T);
  std::vector<std::vector<ActionId>> cands(T);
  std::vector<std::vector<double>> probs(T);
  std::vector<std::size_t> gold(T);
  DerivationState frontier = space.initial_state();
  Vec h = enc.h_final, c = enc.c_final;
  int prev = -1;
  double nll = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    cands[t] = space.applicable(frontier);
    if (cands[t].empty()) throw InvalidAction(t);
    const auto it = std::find(cands[t].begin(), cands[t].end(), ex.actions[t]);
    if (it == cands[t].end()) throw InvalidAction(t);
    gold[t] = static_cast<std::size_t>(it - cands[t].begin());
    step_forward(enc, prev, h, c, ex.task, steps[t]);
    probs[t] = nn::subset_softmax(params_.mat(t_action_), cands[t], steps[t].s);
    nll -= std::log(probs[t][gold[t]]);
    space.advance(frontier, ex.actions[t], t);
    h = steps[t].h;
    c = steps[t].c;
    prev = ex.actions[t];
  }
  if (!frontier.complete()) throw IncompleteTree();

  std::vector<double> local;
  if (scale != 1.0) local.assign(grad.size(), 0.0);
  double* g = scale != 1.0 ? local.data() : grad.data();
  MatMap d_action = params_.view(g, t_action_);
  MatMap d_start = params_.view(g, t_start_);
  MatMap d_combine = params_.view(g, t_combine_);
  MatMap d_dec_w = params_.view(g, t_dec_w_);
  VecMap d_dec_b(g + params_.tensor(t_dec_b_).offset, 4 * d);
  const ConstMatMap action = params_.mat(t_action_);
  const ConstMatMap combine = params_.mat(t_combine_);

  RowMatrix d_states = RowMatrix::Zero(enc.states.rows(), d);
  Vec dh_next = Vec::Zero(d), dc_next = Vec::Zero(d), dx, dh_prev, dc_prev;
  for (std::size_t t = T; t-- > 0;) {
    const StepCache& sc = steps[t];
    const Vec ds = nn::subset_nll_backward(action, cands[t], probs[t], gold[t], sc.s, d_action);
    const Vec dz = ds.cwiseProduct((1.0 - sc.s.array().square()).matrix());
    d_combine.noalias() += dz * sc.joint.transpose();
    const Vec d_joint = combine.transpose() * dz;
    Vec d_hat = d_joint.head(d);
    nn::attention_backward(enc.states, sc.h_hat, sc.attention, d_joint.tail(d), d_states, d_hat);
    Vec dh;
    if (config_.dar_enabled) {
      const auto k = static_cast<std::size_t>(ex.task);
      MatMap d_phi = params_.view(g, t_adapter_phi_[k]);
      MatMap d_gate = params_.view(g, t_adapter_gate_[k]);
      if (forced_gate_) {
        // gate is a constant: out = gate * tanh(Wphi h) + (1 - gate) h
        const Vec d_phi_out = d_hat.cwiseProduct(sc.adapter.gate);
        const Vec d_v = d_phi_out.cwiseProduct((1.0 - sc.adapter.phi.array().square()).matrix());
        d_phi.noalias() += d_v * sc.h.transpose();
        dh = d_hat.cwiseProduct((1.0 - sc.adapter.gate.array()).matrix()) +
             params_.mat(t_adapter_phi_[k]).transpose() * d_v;
      } else {
        dh = nn::adapter_backward(params_.mat(t_adapter_phi_[k]), params_.mat(t_adapter_gate_[k]), sc.h, sc.adapter,
                                  d_hat, d_phi, d_gate);
      }
    } else {
      dh = d_hat;
    }
    dh += dh_next;
    nn::lstm_backward(params_.mat(t_dec_w_), sc.lstm, dh, dc_next, d_dec_w, d_dec_b, dx, dh_prev, dc_prev);
    if (sc.input_action < 0)
      d_start.row(0) += dx.transpose();
    else
      d_action.row(sc.input_action) += dx.transpose();
    dh_next = dh_prev;
    dc_next = dc_prev;
  }

  if (encoder_grad) {
    const auto n = static_cast<Eigen::Index>(ex.words.size());
    MatMap d_word = params_.view(g, t_word_);
    const int we_rows = static_cast<int>(params_.tensor(t_word_).rows);
    auto word_row = [&](Eigen::Index i) {
      const int w = ex.words[static_cast<std::size_t>(i)];
      return w >= 0 && w < we_rows ? w : Vocabulary::kUnk;
    };
    {
      MatMap dw = params_.view(g, t_enc_fwd_w_);
      VecMap db(g + params_.tensor(t_enc_fwd_b_).offset, 4 * half);
      Vec dh = dh_next.head(half), dc = dc_next.head(half);
      for (Eigen::Index i = n - 1; i >= 0; --i) {
        dh += d_states.row(i).head(half).transpose();
        nn::lstm_backward(params_.mat(t_enc_fwd_w_), ecache.fwd[static_cast<std::size_t>(i)], dh, dc, dw, db, dx,
                          dh_prev, dc_prev);
        d_word.row(word_row(i)) += dx.transpose();
        dh = dh_prev;
        dc = dc_prev;
      }
    }
    {
      MatMap dw = params_.view(g, t_enc_bwd_w_);
      VecMap db(g + params_.tensor(t_enc_bwd_b_).offset, 4 * half);
      Vec dh = dh_next.tail(half), dc = dc_next.tail(half);
      for (Eigen::Index i = 0; i < n; ++i) {
        dh += d_states.row(i).tail(half).transpose();
        nn::lstm_backward(params_.mat(t_enc_bwd_w_), ecache.bwd[static_cast<std::size_t>(i)], dh, dc, dw, db, dx,
                          dh_prev, dc_prev);
        d_word.row(word_row(i)) += dx.transpose();
        dh = dh_prev;
        dc = dc_prev;
      }
    }
  }

  if (scale != 1.0)
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += scale * local[i];
  return nll;
}

Hypothesis ParserModel::greedy_decode(std::span<const int> words, const ActionSpace& space, int task) const {
  const EncoderOutput enc = encode(words);
  DecoderState st = start(enc, space);
  Hypothesis hyp;
  while (!st.frontier.complete()) {
    if (st.steps >= config_.max_decode_steps) throw ParseTimeout(config_.max_decode_steps);
    const StepDistribution dist = decode_step(st, enc, space, task);
    const auto best = static_cast<std::size_t>(std::max_element(dist.probs.begin(), dist.probs.end()) -
                                               dist.probs.begin());
    hyp.actions.push_back(dist.actions[best]);
    hyp.log_prob += std::log(dist.probs[best]);
    st = advance(dist, dist.actions[best], space);
  }
  return hyp;
}

Hypothesis ParserModel::beam_decode(std::span<const int> words, const ActionSpace& space, int task,
                                    int width) const {
  if (width <= 1) return greedy_decode(words, space, task);
  struct Beam {
    DecoderState state;
    Hypothesis hyp;
  };
  const EncoderOutput enc = encode(words);
  std::vector<Beam> beams{{start(enc, space), {}}};
  auto done = [](const Beam& b) { return b.state.frontier.complete(); };
  while (!std::all_of(beams.begin(), beams.end(), done)) {
    std::vector<Beam> next;
    for (const Beam& b : beams) {
      if (done(b)) {
        next.push_back(b);
        continue;
      }
      if (b.state.steps >= config_.max_decode_steps) throw ParseTimeout(config_.max_decode_steps);
      const StepDistribution dist = decode_step(b.state, enc, space, task);
      for (std::size_t k = 0; k < dist.actions.size(); ++k) {
        Beam nb{advance(dist, dist.actions[k], space), b.hyp};
        nb.hyp.actions.push_back(dist.actions[k]);
        nb.hyp.log_prob += std::log(dist.probs[k]);
        next.push_back(std::move(nb));
      }
    }
    std::stable_sort(next.begin(), next.end(),
                     [](const Beam& a, const Beam& b) { return a.hyp.log_prob > b.hyp.log_prob; });
    if (next.size() > static_cast<std::size_t>(width)) next.resize(static_cast<std::size_t>(width));
    beams = std::move(next);
  }
  Hypothesis best = beams.front().hyp;
  Hypothesis greedy = greedy_decode(words, space, task);
  return greedy.log_prob > best.log_prob ? greedy : best;
}

LogicalForm ParserModel::parse(std::span<const int> words, const ActionSpace& space, int task, int beam) const {
  const Hypothesis h = beam > 1 ? beam_decode(words, space, task, beam) : greedy_decode(words, space, task);
  return space.actions_to_lf(h.actions);
}

}  // namespace recall
