#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "recall/continual.hpp"
#include "recall/corpus.hpp"

namespace recall {

/// Everything `recall run` needs. Loaded from JSON:
///
///     {
///       "synth": { ...SynthSpec fields... },      // or
///       "corpus": {"path": "corpus.jsonl", "grammar_dir": "grammars"},
///       "methods": ["FINE_TUNE", "TR"],
///       "samplers": ["DLFS"],
///       "oracle": false,
///       "capacity": 10,
///       "schedule": {"epochs_fast": 5, "epochs_slow": 10, "lr": 0.0025, ...},
///       "parser": {"word_emb_dim": 64, "hidden_dim": 64, ...},
///       "seeds": [1, 2, 3],
///       "orders": 1,                                // or [["b", "a"], ...]
///       "output_dir": "runs",
///       "checkpoints": false,
///       "traces": true
///     }
struct ExperimentConfig {
  std::optional<SynthSpec> synth;
  std::filesystem::path corpus_path;
  std::filesystem::path grammar_dir;
  std::vector<Method> methods{Method::kTr};
  std::vector<SamplerKind> samplers{SamplerKind::kDlfs};
  bool oracle = false;
  TrainSchedule schedule;
  ParserConfig parser;
  std::vector<std::uint64_t> seeds{1};
  int order_count = 1;
  std::vector<std::vector<std::string>> orders;  // explicit task-name permutations
  std::filesystem::path output_dir = "runs";
  bool checkpoints = false;
  bool traces = true;

  /// Relative paths resolve against `base_dir`. Throws std::invalid_argument.
  static ExperimentConfig from_json(const std::string& text, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  void validate() const;
};

/// One stream to train: a method, its sampler ("NONE" for methods without
/// memory and for ORACLE), a seed and a task order.
struct Cell {
  std::string method;
  std::string sampler;
  std::uint64_t seed = 0;
  int order = 0;

  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// Cross product of methods x samplers x seeds x orders; methods without
/// memory run once per seed and order.
std::vector<Cell> enumerate_cells(const ExperimentConfig& config);

std::vector<TaskData> load_stream(const ExperimentConfig& config);

/// Task index permutations. Order 0 is the file order; further orders are
/// seeded shuffles unless listed explicitly.
std::vector<std::vector<int>> task_orders(const ExperimentConfig& config, const std::vector<TaskData>& tasks);

struct RunSummary {
  std::size_t total = 0;
  std::size_t ran = 0;
  std::size_t skipped = 0;
  std::size_t aborted = 0;
};

/// Runs every cell not already complete in `out_dir/runlog.csv` and appends
/// its rows in cell order. Rows of incomplete cells are dropped first. Cells
/// run on up to `jobs` threads; a cell that throws gets an "aborted" marker
/// row after its completed tasks.
RunSummary run_experiment(const ExperimentConfig& config, const std::filesystem::path& out_dir, int jobs,
                          std::ostream& progress);

struct ReportSummary {
  std::size_t runs = 0;
  std::size_t curves = 0;
};

/// Summary table, ACC_whole curves (CSV and SVG) and the trace extremes
/// table when a traces.csv sits next to the run log.
ReportSummary write_report(const std::filesystem::path& runlog, const std::filesystem::path& out_dir,
                           std::ostream& progress);

/// Self-contained SVG line chart; one polyline per series.
std::string svg_line_chart(const std::string& title, const std::vector<std::string>& names,
                           const std::vector<std::vector<double>>& series);

}  // namespace recall
