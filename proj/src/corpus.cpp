#include "recall/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "recall/actions.hpp"
#include "recall/errors.hpp"

namespace recall {

using nlohmann::json;

std::vector<CorpusRecord> read_corpus_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    CorpusRecord r;
    r.line = line_no;
    try {
      const json j = json::parse(line);
      r.task = j.at("task").get<std::string>();
      r.split = j.at("split").get<std::string>();
      r.utterance = j.at("utterance").get<std::string>();
      r.lf = j.at("lf").get<std::string>();
    } catch (const json::exception& e) {
      throw MalformedRecord(line_no, e.what());
    }
    if (r.split != "train" && r.split != "valid" && r.split != "test")
      throw MalformedRecord(line_no, "unknown split '" + r.split + "'");
    if (r.task.empty()) throw MalformedRecord(line_no, "empty task name");
    try {
      parse_lf(r.lf);
    } catch (const MalformedLf& e) {
      throw MalformedRecord(line_no, e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_corpus_records(const std::filesystem::path& path, const std::vector<CorpusRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records)
    out << json{{"task", r.task}, {"split", r.split}, {"utterance", r.utterance}, {"lf", r.lf}}.dump() << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<TaskData> tasks_from_records(const std::vector<CorpusRecord>& records,
                                         const std::vector<std::pair<std::string, Grammar>>& grammars) {
  std::map<std::string, const Grammar*> by_name;
  for (const auto& [name, g] : grammars) by_name[name] = &g;
  std::vector<TaskData> tasks;
  std::map<std::string, std::size_t> index;
  std::vector<ActionRegistry> registries;
  std::vector<ActionSpace> spaces;
  spaces.reserve(records.size());
  registries.reserve(records.size());
  std::map<std::string, std::size_t> space_of;
  for (std::size_t line = 0; line < records.size(); ++line) {
    const CorpusRecord& r = records[line];
    auto it = index.find(r.task);
    if (it == index.end()) {
      auto g = by_name.find(r.task);
      if (g == by_name.end()) throw Error("no grammar for task '" + r.task + "'");
      it = index.emplace(r.task, tasks.size()).first;
      tasks.push_back({r.task, *g->second, {}, {}, {}});
      registries.emplace_back();
      spaces.emplace_back(*g->second, registries.back());
    }
    TaskData& t = tasks[it->second];
    LabeledExample ex{r.utterance, parse_lf(r.lf)};
    try {
      spaces[it->second].lf_to_actions(ex.lf);
    } catch (const NotDerivable& e) {
      throw NotDerivable("task " + r.task + ", line " + std::to_string(r.line ? r.line : line + 1) + ": " + e.what());
    }
    if (r.split == "train")
      t.train.push_back(std::move(ex));
    else if (r.split == "valid")
      t.valid.push_back(std::move(ex));
    else
      t.test.push_back(std::move(ex));
  }
  return tasks;
}

std::vector<TaskData> load_corpus(const std::filesystem::path& path, const std::filesystem::path& grammar_dir) {
  const auto records = read_corpus_records(path);
  std::vector<std::pair<std::string, Grammar>> grammars;
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.task).second) continue;
    grammars.emplace_back(r.task, Grammar::load(grammar_dir / (r.task + ".grammar")));
  }
  return tasks_from_records(records, grammars);
}

void SynthSpec::validate() const {
  if (num_tasks < 1) throw std::invalid_argument("num_tasks must be at least 1");
  if (shared_rule_count < 0 || shared_leaf_count < 0 || private_rule_count < 1 || private_leaf_count < 1)
    throw std::invalid_argument("private counts must be positive and shared counts nonnegative");
  if (shared_rule_count < 2 && private_rule_count < 2)
    throw std::invalid_argument("shared or private rule count must be at least two");
  if (!(suffix_word_rate >= 0 && suffix_word_rate <= 1))
    throw std::invalid_argument("suffix_word_rate must be in [0, 1]");
  if (template_skew < 0) throw std::invalid_argument("template_skew must be nonnegative");
  if (templates_per_task < 1) throw std::invalid_argument("templates_per_task must be positive");
  if (train_per_task < 1 || valid_per_task < 0 || test_per_task < 1)
    throw std::invalid_argument("split sizes must be positive");
}

SynthSpec synth_spec_from_json(const std::string& text) {
  SynthSpec s;
  try {
    const json j = json::parse(text);
    s.num_tasks = j.value("num_tasks", s.num_tasks);
    s.shared_rule_count = j.value("shared_rule_count", s.shared_rule_count);
    s.private_rule_count = j.value("private_rule_count", s.private_rule_count);
    s.shared_leaf_count = j.value("shared_leaf_count", s.shared_leaf_count);
    s.private_leaf_count = j.value("private_leaf_count", s.private_leaf_count);
    s.template_skew = j.value("template_skew", s.template_skew);
    s.templates_per_task = j.value("templates_per_task", s.templates_per_task);
    s.train_per_task = j.value("train_per_task", s.train_per_task);
    s.valid_per_task = j.value("valid_per_task", s.valid_per_task);
    s.test_per_task = j.value("test_per_task", s.test_per_task);
    s.shared_surface_words = j.value("shared_surface_words", s.shared_surface_words);
    s.suffix_word_rate = j.value("suffix_word_rate", s.suffix_word_rate);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::string synth_spec_to_json(const SynthSpec& s) {
  return json{{"num_tasks", s.num_tasks},
              {"shared_rule_count", s.shared_rule_count},
              {"private_rule_count", s.private_rule_count},
              {"shared_leaf_count", s.shared_leaf_count},
              {"private_leaf_count", s.private_leaf_count},
              {"template_skew", s.template_skew},
              {"templates_per_task", s.templates_per_task},
              {"train_per_task", s.train_per_task},
              {"valid_per_task", s.valid_per_task},
              {"test_per_task", s.test_per_task},
              {"shared_surface_words", s.shared_surface_words},
              {"suffix_word_rate", s.suffix_word_rate},
              {"seed", s.seed}}
      .dump(2);
}

std::vector<double> zipf_weights(std::size_t n, double skew) {
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) total += (w[r] = std::pow(static_cast<double>(r + 1), -skew));
  for (double& v : w) v /= total;
  return w;
}

std::size_t sample_categorical(const std::vector<double>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double r = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (r < weights[i]) return i;
    r -= weights[i];
  }
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0) return i;
  throw std::invalid_argument("sample_categorical: all weights are zero");
}

namespace {

enum class Arg { kE, kEnt };

struct SynthRule {
  std::string lhs;  // Q or E
  std::string head;
  std::vector<Arg> args;
  std::string word;
  bool word_last = false;  // verbalized after the arguments

  std::string text() const {
    std::string s = lhs + " -> ( " + head;
    for (Arg a : args) s += a == Arg::kE ? " E" : " ent";
    return s + " )";
  }
  bool terminal() const {
    return std::none_of(args.begin(), args.end(), [](Arg a) { return a == Arg::kE; });
  }
};

// A derivation skeleton with open entity slots.
struct Skeleton {
  int rule = -1;
  std::vector<Skeleton> kids;  // one per E argument

  std::string key() const {
    std::string s = std::to_string(rule);
    if (!kids.empty()) {
      s += "(";
      for (const auto& k : kids) s += k.key() + ",";
      s += ")";
    }
    return s;
  }
};

const std::vector<std::vector<Arg>> kQShapes{{Arg::kE}, {Arg::kE, Arg::kEnt}};
const std::vector<std::vector<Arg>> kEShapes{{Arg::kEnt}, {Arg::kE}, {Arg::kEnt, Arg::kEnt}};

class TaskGenerator {
 public:
  TaskGenerator(std::vector<SynthRule> rules, std::vector<std::string> leaves, std::vector<std::string> leaf_words,
                Rng& rng)
      : rules_(std::move(rules)), leaves_(std::move(leaves)), leaf_words_(std::move(leaf_words)), rng_(rng) {
    for (std::size_t i = 0; i < rules_.size(); ++i) (rules_[i].lhs == "Q" ? q_ : e_).push_back(static_cast<int>(i));
    for (int i : e_)
      if (rules_[static_cast<std::size_t>(i)].terminal()) e_terminal_.push_back(i);
  }

  // At least `count` templates, more while their distinct fills fall short of
  // `min_fills`.
  std::vector<Skeleton> templates(int count, double min_fills) {
    std::vector<Skeleton> out;
    std::set<std::string> keys;
    auto push = [&](Skeleton s) {
      if (keys.insert(s.key()).second) out.push_back(std::move(s));
    };
    // every rule appears in at least one template
    for (int r = 0; r < static_cast<int>(rules_.size()); ++r) {
      for (int attempt = 0; attempt < 50; ++attempt) {
        Skeleton s = with_rule(r);
        if (keys.count(s.key())) continue;
        push(std::move(s));
        break;
      }
    }
    double fills = 0.0;
    for (const auto& t : out) fills += fill_count(t);
    for (int attempt = 0; attempt < 200 * count && (static_cast<int>(out.size()) < count || fills < min_fills);
         ++attempt) {
      const std::size_t before = out.size();
      push(random_q());
      if (out.size() > before) fills += fill_count(out.back());
    }
    shuffle(out, rng_);
    return out;
  }

  // Fills the entity slots; returns (utterance, lf).
  std::pair<std::string, std::string> realize(const Skeleton& s) {
    std::string utt, lf;
    emit(s, utt, lf);
    return {utt.substr(1), lf};
  }

 private:
  double fill_count(const Skeleton& s) const {
    double n = 1.0;
    for (Arg a : rules_[static_cast<std::size_t>(s.rule)].args)
      if (a == Arg::kEnt) n *= static_cast<double>(leaves_.size());
    for (const auto& k : s.kids) n *= fill_count(k);
    return n;
  }

  int pick(const std::vector<int>& from) { return from[uniform_index(rng_, from.size())]; }

  Skeleton expand(int rule, int depth) {
    Skeleton s{rule, {}};
    for (Arg a : rules_[static_cast<std::size_t>(rule)].args)
      if (a == Arg::kE) s.kids.push_back(random_e(depth + 1));
    return s;
  }

  Skeleton random_e(int depth) { return expand(depth >= 3 ? pick(e_terminal_) : pick(e_), depth); }
  Skeleton random_q() { return expand(pick(q_), 1); }

  // A random template containing `rule` (depth at most 3).
  Skeleton with_rule(int rule) {
    const SynthRule& r = rules_[static_cast<std::size_t>(rule)];
    if (r.lhs == "Q") return expand(rule, 1);
    const int q = pick(q_);
    Skeleton s{q, {}};
    // put the rule at depth 2 unless it recurses, which depth 2 also allows
    for (Arg a : rules_[static_cast<std::size_t>(q)].args)
      if (a == Arg::kE) s.kids.push_back(s.kids.empty() ? expand(rule, 2) : random_e(2));
    return s;
  }

  void emit(const Skeleton& s, std::string& utt, std::string& lf) {
    const SynthRule& r = rules_[static_cast<std::size_t>(s.rule)];
    if (!r.word_last) utt += " " + r.word;
    lf += "(" + r.head;
    std::size_t kid = 0;
    for (Arg a : r.args) {
      lf += " ";
      if (a == Arg::kE) {
        emit(s.kids[kid++], utt, lf);
      } else {
        const std::size_t leaf = uniform_index(rng_, leaves_.size());
        utt += " " + leaf_words_[leaf];
        lf += leaves_[leaf];
      }
    }
    lf += ")";
    if (r.word_last) utt += " " + r.word;
  }

  std::vector<SynthRule> rules_;
  std::vector<std::string> leaves_, leaf_words_;
  Rng& rng_;
  std::vector<int> q_, e_, e_terminal_;
};

std::string grammar_text(const std::vector<SynthRule>& rules, const std::vector<std::string>& leaves) {
  std::ostringstream out;
  out << "start Q\nslot ent :";
  for (const auto& l : leaves) out << ' ' << l;
  out << '\n';
  for (const auto& r : rules) out << r.text() << '\n';
  return out.str();
}

// Rule shapes: the first Q rule and the first terminal E rule are forced so
// every grammar is productive; the rest are drawn at random.
std::vector<SynthRule> make_rules(int count, const std::string& prefix, bool need_q, bool need_e, Rng& rng) {
  std::vector<SynthRule> rules;
  for (int j = 0; j < count; ++j) {
    SynthRule r;
    r.head = prefix + std::to_string(j);
    r.word = "w" + r.head;
    if (need_q) {
      r.lhs = "Q";
      r.args = kQShapes[0];
      need_q = false;
    } else if (need_e) {
      r.lhs = "E";
      r.args = kEShapes[0];
      need_e = false;
    } else if (uniform01(rng) < 0.3) {
      r.lhs = "Q";
      r.args = kQShapes[uniform_index(rng, kQShapes.size())];
    } else {
      r.lhs = "E";
      r.args = kEShapes[uniform_index(rng, kEShapes.size())];
    }
    rules.push_back(std::move(r));
  }
  return rules;
}

}  // namespace

SynthCorpus generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const bool private_can_cover = spec.private_rule_count >= 2;
  std::vector<SynthRule> shared = make_rules(spec.shared_rule_count, "s", !private_can_cover, !private_can_cover, rng);
  std::vector<std::string> shared_leaves;
  for (int j = 0; j < spec.shared_leaf_count; ++j) shared_leaves.push_back("es" + std::to_string(j));

  SynthCorpus out;
  for (int k = 0; k < spec.num_tasks; ++k) {
    const std::string name = "task" + std::to_string(k);
    std::vector<SynthRule> rules = shared;
    const std::string prefix = "t" + std::to_string(k) + "r";
    std::vector<int> rule_perm(static_cast<std::size_t>(spec.private_rule_count));
    std::vector<int> leaf_perm(static_cast<std::size_t>(spec.private_leaf_count));
    std::iota(rule_perm.begin(), rule_perm.end(), 0);
    std::iota(leaf_perm.begin(), leaf_perm.end(), 0);
    if (spec.shared_surface_words) {
      shuffle(rule_perm, rng);
      shuffle(leaf_perm, rng);
    }
    int j = 0;
    for (auto& r : make_rules(spec.private_rule_count, prefix, private_can_cover, private_can_cover, rng)) {
      if (spec.shared_surface_words) r.word = "wp" + std::to_string(rule_perm[static_cast<std::size_t>(j++)]);
      r.word_last = spec.suffix_word_rate > 0 && uniform01(rng) < spec.suffix_word_rate;
      rules.push_back(std::move(r));
    }
    std::vector<std::string> leaves = shared_leaves, leaf_words = shared_leaves;
    for (int x = 0; x < spec.private_leaf_count; ++x) {
      leaves.push_back("e" + std::to_string(k) + "x" + std::to_string(x));
      leaf_words.push_back(spec.shared_surface_words ? "n" + std::to_string(leaf_perm[static_cast<std::size_t>(x)])
                                                     : leaves.back());
    }

    out.task_names.push_back(name);
    out.grammar_texts.push_back(grammar_text(rules, leaves));

    TaskGenerator gen(rules, leaves, leaf_words, rng);
    const int total = spec.train_per_task + spec.valid_per_task + spec.test_per_task;
    const std::vector<Skeleton> templates = gen.templates(spec.templates_per_task, 2.0 * total);
    const std::vector<double> weights = zipf_weights(templates.size(), spec.template_skew);
    std::vector<std::pair<std::string, std::string>> examples;
    std::set<std::string> seen;
    for (int attempt = 0; attempt < 200 * total && static_cast<int>(examples.size()) < total; ++attempt) {
      auto ex = gen.realize(templates[sample_categorical(weights, rng)]);
      if (seen.insert(ex.second).second) examples.push_back(std::move(ex));
    }
    if (static_cast<int>(examples.size()) < total)
      throw Error("synthetic task " + name + " has too few distinct logical forms for the requested split sizes");
    shuffle(examples, rng);
    for (int i = 0; i < total; ++i) {
      const char* split = i < spec.train_per_task                          ? "train"
                          : i < spec.train_per_task + spec.valid_per_task ? "valid"
                                                                           : "test";
      const auto& [utt, lf] = examples[static_cast<std::size_t>(i)];
      out.records.push_back({name, split, utt, lf});
    }
  }
  return out;
}

std::vector<TaskData> tasks_from_synthetic(const SynthCorpus& corpus) {
  std::vector<std::pair<std::string, Grammar>> grammars;
  for (std::size_t k = 0; k < corpus.task_names.size(); ++k)
    grammars.emplace_back(corpus.task_names[k], Grammar::parse(corpus.grammar_texts[k]));
  return tasks_from_records(corpus.records, grammars);
}

void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < corpus.task_names.size(); ++k) {
    std::ofstream out(dir / (corpus.task_names[k] + ".grammar"));
    if (!out) throw Error("cannot write grammar for " + corpus.task_names[k]);
    out << corpus.grammar_texts[k];
  }
  write_corpus_records(dir / "corpus.jsonl", corpus.records);
}

}  // namespace recall
