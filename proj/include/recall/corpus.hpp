#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "recall/grammar.hpp"
#include "recall/logical_form.hpp"
#include "recall/random.hpp"

namespace recall {

struct LabeledExample {
  std::string utterance;
  LogicalForm lf;
};

struct TaskData {
  std::string name;
  Grammar grammar;
  std::vector<LabeledExample> train, valid, test;
};

/// One line of a corpus file.
struct CorpusRecord {
  std::string task;
  std::string split;  // train | valid | test
  std::string utterance;
  std::string lf;
  std::size_t line = 0;  // 1-based source line, 0 when generated
};

/// Reads a JSONL corpus and `<task>.grammar` files from `grammar_dir`. Tasks
/// come in first-appearance order. Throws MalformedRecord on bad lines and
/// NotDerivable when an LF does not fit its task grammar.
std::vector<TaskData> load_corpus(const std::filesystem::path& path, const std::filesystem::path& grammar_dir);

std::vector<CorpusRecord> read_corpus_records(const std::filesystem::path& path);
void write_corpus_records(const std::filesystem::path& path, const std::vector<CorpusRecord>& records);

/// Groups records by task (first-appearance order) and checks derivability.
std::vector<TaskData> tasks_from_records(const std::vector<CorpusRecord>& records,
                                         const std::vector<std::pair<std::string, Grammar>>& grammars);

struct SynthSpec {
  int num_tasks = 4;
  int shared_rule_count = 3;
  int private_rule_count = 8;
  int shared_leaf_count = 2;
  int private_leaf_count = 6;
  double template_skew = 1.2;  // Zipf exponent over LF templates
  int templates_per_task = 12;
  int train_per_task = 210;
  int valid_per_task = 30;
  int test_per_task = 60;
  /// Private rules and leaves of every task take their utterance words from
  /// one pool (permuted per task), so a word means different things in
  /// different tasks.
  bool shared_surface_words = true;
  /// Probability that a private rule's word follows its arguments instead of
  /// preceding them.
  double suffix_word_rate = 0.5;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on nonpositive counts (shared counts may
  /// be zero) or a negative skew.
  void validate() const;
};

SynthSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSpec& spec);

struct SynthCorpus {
  std::vector<std::string> task_names;
  std::vector<std::string> grammar_texts;
  std::vector<CorpusRecord> records;
};

/// Deterministic multi-task stream. Every task grammar has the same shared
/// rules (same text, so the same global actions) plus private rules with
/// their own heads; utterances are fixed per-rule words in preorder with one
/// word per entity.
SynthCorpus generate_synthetic(const SynthSpec& spec);

std::vector<TaskData> tasks_from_synthetic(const SynthCorpus& corpus);

/// Writes `<task>.grammar` files and corpus.jsonl into `dir`.
void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir);

/// Zipf weights 1 / rank^skew for ranks 1..n, normalized.
std::vector<double> zipf_weights(std::size_t n, double skew);

/// Index drawn with probability proportional to `weights`.
std::size_t sample_categorical(const std::vector<double>& weights, Rng& rng);

}  // namespace recall
