#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "recall/corpus.hpp"
#include "recall/experiment.hpp"
#include "recall/sampling.hpp"

using namespace recall;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_stream_summary(const std::vector<TaskData>& tasks, std::ostream& os) {
  ActionRegistry registry;
  std::vector<std::set<ActionId>> sets;
  for (const auto& t : tasks) {
    ActionSpace space(t.grammar, registry);
    sets.emplace_back(space.all_actions().begin(), space.all_actions().end());
  }
  std::map<ActionId, int> occurrences;
  for (const auto& s : sets)
    for (ActionId a : s) ++occurrences[a];
  os << "tasks: " << tasks.size() << ", global actions: " << registry.size() << "\n";
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    std::size_t apply = 0, gen = 0, cross = 0;
    for (ActionId a : sets[k]) {
      (registry.info(a).kind == ActionKind::kApply ? apply : gen)++;
      if (occurrences[a] > 1) ++cross;
    }
    char frac[16];
    std::snprintf(frac, sizeof frac, "%.3f", sets[k].empty() ? 0.0 : static_cast<double>(cross) / sets[k].size());
    os << "  " << tasks[k].name << ": " << tasks[k].train.size() << "/" << tasks[k].valid.size() << "/"
       << tasks[k].test.size() << " train/valid/test, " << apply << " APPLY + " << gen << " GEN actions, " << cross
       << " cross-task (" << frac << ")\n";
  }
}

int cmd_generate(const fs::path& config, const fs::path& out, std::optional<std::uint64_t> seed) {
  SynthSpec spec = synth_spec_from_json(read_text(config));
  if (seed) spec.seed = *seed;
  const SynthCorpus corpus = generate_synthetic(spec);
  write_synthetic(corpus, out);
  std::cout << "wrote " << (out / "corpus.jsonl").string() << " and " << corpus.task_names.size()
            << " grammar files\n";
  print_stream_summary(tasks_from_synthetic(corpus), std::cout);
  return 0;
}

int cmd_run(const fs::path& config_path, const std::string& out, int jobs, std::optional<std::uint64_t> seed) {
  ExperimentConfig config = ExperimentConfig::load(config_path);
  if (seed) config.seeds = {*seed};
  fs::path out_dir = config.output_dir;
  if (const char* env = std::getenv("RECALL_OUT_DIR"); env && *env) out_dir = env;
  if (!out.empty()) out_dir = out;
  const RunSummary s = run_experiment(config, out_dir, jobs, std::cout);
  std::cout << s.ran << " cells run, " << s.skipped << " already complete, " << s.aborted << " aborted; log at "
            << (out_dir / "runlog.csv").string() << "\n";
  return 0;
}

int cmd_report(const fs::path& runlog, const fs::path& out) {
  const ReportSummary r = write_report(runlog, out, std::cerr);
  std::cout << r.runs << " runs, " << r.curves << " curves; report in " << out.string() << "\n";
  std::ifstream table(out / "summary.csv");
  for (std::string line; std::getline(table, line);) std::cout << "  " << line << "\n";
  return 0;
}

RowMatrix bag_of_words(const std::vector<LabeledExample>& data) {
  std::map<std::string, Eigen::Index> vocab;
  for (const auto& ex : data) {
    std::istringstream words(ex.utterance);
    for (std::string w; words >> w;) vocab.emplace(w, static_cast<Eigen::Index>(vocab.size()));
  }
  RowMatrix f = RowMatrix::Zero(static_cast<Eigen::Index>(data.size()), std::max<Eigen::Index>(1, vocab.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::istringstream words(data[i].utterance);
    for (std::string w; words >> w;) f(static_cast<Eigen::Index>(i), vocab.at(w)) += 1.0;
  }
  return f;
}

int cmd_sample(const fs::path& corpus, const fs::path& grammars, const std::string& task_name,
               const std::string& sampler, std::size_t capacity, std::uint64_t seed, const fs::path& out) {
  const SamplerKind kind = parse_sampler(sampler);
  const std::vector<TaskData> tasks = load_corpus(corpus, grammars);
  int task = -1;
  for (std::size_t k = 0; k < tasks.size(); ++k)
    if (tasks[k].name == task_name) task = static_cast<int>(k);
  if (task < 0) throw std::runtime_error("no task '" + task_name + "' in " + corpus.string());
  const TaskData& data = tasks[static_cast<std::size_t>(task)];
  if (data.train.empty()) throw std::runtime_error("task '" + task_name + "' has no training examples");

  ActionRegistry registry;
  std::vector<ActionSpace> spaces;
  for (const auto& t : tasks) spaces.emplace_back(t.grammar, registry);
  const ActionSpace& space = spaces[static_cast<std::size_t>(task)];
  std::vector<LogicalForm> lfs;
  std::vector<ActionSequence> actions;
  for (const auto& ex : data.train) {
    lfs.push_back(ex.lf);
    actions.push_back(space.lf_to_actions(ex.lf));
  }
  if (capacity > data.train.size())
    std::cerr << "warning: capacity " << capacity << " exceeds the " << data.train.size()
              << " training examples; the memory holds all of them\n";
  const RowMatrix features = bag_of_words(data.train);
  SamplerInput in;
  in.lfs = lfs;
  in.actions = actions;
  in.features = &features;
  in.capacity = capacity;
  in.seed = seed;
  const Selection sel = select_memory(kind, in);

  Memory mem;
  mem.capacity = capacity;
  std::vector<ActionSequence> chosen;
  for (std::size_t j = 0; j < sel.indices.size(); ++j) {
    const std::size_t i = sel.indices[j];
    mem.entries.push_back({data.train[i].utterance, lfs[i], actions[i], task, sel.clusters[j]});
    chosen.push_back(actions[i]);
  }
  std::vector<Memory> memories(static_cast<std::size_t>(task) + 1);
  memories.back() = mem;
  save_memories(out, memories);

  std::set<std::size_t> unique(sel.indices.begin(), sel.indices.end());
  std::set<int> clusters(sel.clusters.begin(), sel.clusters.end());
  const bool clustered = kind == SamplerKind::kLfs || kind == SamplerKind::kDlfs;
  const bool within_capacity = sel.indices.size() <= capacity;
  const bool distinct_instances = unique.size() == sel.indices.size();
  const bool distinct_clusters = !clustered || clusters.size() == sel.clusters.size();
  std::printf("task %s, sampler %s, M=%zu, selected %zu of %zu\n", task_name.c_str(), sampler_name(kind).c_str(),
              capacity, sel.indices.size(), data.train.size());
  std::printf("memory entropy %.6f nats (task data %.6f)\n", memory_entropy(chosen), memory_entropy(actions));
  std::printf("within_capacity %s\ndistinct_instances %s\ndistinct_clusters %s\n", within_capacity ? "yes" : "no",
              distinct_instances ? "yes" : "no", clustered ? (distinct_clusters ? "yes" : "no") : "n/a");
  std::printf("memory written to %s\n", out.string().c_str());
  return within_capacity && distinct_instances && distinct_clusters ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual semantic parsing experiments"};
  app.require_subcommand(1);

  fs::path gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  auto* gen = app.add_subcommand("generate", "Write a synthetic task stream (grammars and corpus.jsonl)");
  gen->add_option("--config", gen_config, "Synthetic stream spec (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Override the spec seed");

  fs::path run_config;
  std::string run_out;
  int jobs = 1;
  std::optional<std::uint64_t> run_seed;
  auto* run = app.add_subcommand("run", "Run an experiment grid; resumes an existing run log");
  run->add_option("--config", run_config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", run_out, "Output directory (overrides RECALL_OUT_DIR and the config)");
  run->add_option("--jobs", jobs, "Cells run in parallel")->check(CLI::PositiveNumber);
  run->add_option("--seed", run_seed, "Run this single seed instead of the config's list");

  fs::path report_log, report_out;
  auto* report = app.add_subcommand("report", "Summarize a run log into tables and SVG curves");
  report->add_option("runlog", report_log, "runlog.csv")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "Output directory")->required();

  fs::path corpus, grammars = ".", sample_out = "memory.jsonl";
  std::string task, sampler = "DLFS";
  std::size_t capacity = 10;
  std::uint64_t sample_seed = 1;
  auto* sample = app.add_subcommand("sample", "Run one memory sampler on one task");
  sample->add_option("--corpus", corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  sample->add_option("--grammars", grammars, "Directory of <task>.grammar files")->check(CLI::ExistingDirectory);
  sample->add_option("--task", task, "Task name")->required();
  sample->add_option("--sampler", sampler, "RANDOM, FSS, LFS, DLFS or BALANCE");
  sample->add_option("--capacity,-M", capacity, "Memory size")->check(CLI::PositiveNumber);
  sample->add_option("--seed", sample_seed, "Sampler seed");
  sample->add_option("--out", sample_out, "Memory JSONL output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    if (gen->parsed()) return cmd_generate(gen_config, gen_out, gen_seed);
    if (run->parsed()) return cmd_run(run_config, run_out, jobs, run_seed);
    if (report->parsed()) return cmd_report(report_log, report_out);
    if (sample->parsed())
      return cmd_sample(corpus, grammars, task, sampler, capacity, sample_seed, sample_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
