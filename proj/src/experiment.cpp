#include "recall/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "recall/checkpoint.hpp"
#include "recall/errors.hpp"

namespace recall {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text, const fs::path& base_dir) {
  ExperimentConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("experiment config must be a JSON object");
    check_keys(j,
               {"synth", "corpus", "methods", "samplers", "oracle", "capacity", "schedule", "parser", "seeds", "orders",
                "output_dir", "checkpoints", "traces"},
               "experiment config");
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
    if (j.contains("synth")) c.synth = synth_spec_from_json(j.at("synth").dump());
    if (j.contains("corpus")) {
      const json& cj = j.at("corpus");
      check_keys(cj, {"path", "grammar_dir"}, "corpus");
      c.corpus_path = resolve(cj.at("path").get<std::string>());
      c.grammar_dir = resolve(cj.value("grammar_dir", std::string(".")));
    }
    if (j.contains("methods")) {
      c.methods.clear();
      for (const auto& m : j.at("methods")) {
        const std::string name = m.get<std::string>();
        if (name == "ORACLE")
          c.oracle = true;
        else
          c.methods.push_back(parse_method(name));
      }
    }
    if (j.contains("samplers")) {
      c.samplers.clear();
      for (const auto& s : j.at("samplers")) c.samplers.push_back(parse_sampler(s.get<std::string>()));
    }
    c.oracle = j.value("oracle", c.oracle);
    if (j.contains("capacity")) c.schedule.capacity = j.at("capacity").get<std::size_t>();
    if (j.contains("schedule")) {
      const json& s = j.at("schedule");
      check_keys(s, {"epochs_fast", "epochs_slow", "lr", "lr_fast", "batch_size", "ewc_lambda", "replay_batches", "beam"},
                 "schedule");
      TrainSchedule& t = c.schedule;
      t.epochs_fast = s.value("epochs_fast", t.epochs_fast);
      t.epochs_slow = s.value("epochs_slow", t.epochs_slow);
      t.lr = s.value("lr", t.lr);
      if (s.contains("lr_fast")) t.lr_fast = s.at("lr_fast").get<double>();
      t.batch_size = s.value("batch_size", t.batch_size);
      t.ewc_lambda = s.value("ewc_lambda", t.ewc_lambda);
      t.replay_batches = s.value("replay_batches", t.replay_batches);
      t.beam = s.value("beam", t.beam);
    }
    if (j.contains("parser")) {
      const json& p = j.at("parser");
      check_keys(p, {"word_emb_dim", "hidden_dim", "action_emb_dim", "dar_enabled", "init_range", "max_decode_steps"},
                 "parser");
      ParserConfig& q = c.parser;
      q.word_emb_dim = p.value("word_emb_dim", q.word_emb_dim);
      q.hidden_dim = p.value("hidden_dim", q.hidden_dim);
      q.action_emb_dim = p.value("action_emb_dim", q.action_emb_dim);
      q.dar_enabled = p.value("dar_enabled", q.dar_enabled);
      q.init_range = p.value("init_range", q.init_range);
      q.max_decode_steps = p.value("max_decode_steps", q.max_decode_steps);
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("orders")) {
      const json& o = j.at("orders");
      if (o.is_number_integer()) {
        c.order_count = o.get<int>();
      } else {
        c.orders = o.get<std::vector<std::vector<std::string>>>();
        c.order_count = static_cast<int>(c.orders.size());
      }
    }
    if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>());
    c.checkpoints = j.value("checkpoints", c.checkpoints);
    c.traces = j.value("traces", c.traces);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  return from_json(read_text(path), path.parent_path());
}

void ExperimentConfig::validate() const {
  if (synth.has_value() == !corpus_path.empty())
    throw std::invalid_argument("experiment config needs exactly one of 'synth' and 'corpus'");
  if (seeds.empty()) throw std::invalid_argument("experiment config needs at least one seed");
  if (methods.empty() && !oracle) throw std::invalid_argument("experiment config needs a method");
  if (samplers.empty() && std::any_of(methods.begin(), methods.end(), uses_memory))
    throw std::invalid_argument("memory methods need a sampler");
  if (order_count < 1) throw std::invalid_argument("orders must be at least 1");
  schedule.validate();
  parser.validate();
  if (synth) synth->validate();
}

std::vector<Cell> enumerate_cells(const ExperimentConfig& config) {
  std::vector<Cell> cells;
  for (int order = 0; order < config.order_count; ++order)
    for (std::uint64_t seed : config.seeds) {
      for (Method m : config.methods) {
        if (!uses_memory(m)) {
          cells.push_back({method_name(m), "NONE", seed, order});
          continue;
        }
        for (SamplerKind s : config.samplers) cells.push_back({method_name(m), sampler_name(s), seed, order});
      }
      if (config.oracle) cells.push_back({"ORACLE", "NONE", seed, order});
    }
  return cells;
}

std::vector<TaskData> load_stream(const ExperimentConfig& config) {
  if (config.synth) return tasks_from_synthetic(generate_synthetic(*config.synth));
  return load_corpus(config.corpus_path, config.grammar_dir);
}

std::vector<std::vector<int>> task_orders(const ExperimentConfig& config, const std::vector<TaskData>& tasks) {
  const int n = static_cast<int>(tasks.size());
  std::vector<int> identity(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) identity[static_cast<std::size_t>(i)] = i;
  std::vector<std::vector<int>> out;
  if (!config.orders.empty()) {
    std::map<std::string, int> index;
    for (int i = 0; i < n; ++i) index[tasks[static_cast<std::size_t>(i)].name] = i;
    for (const auto& names : config.orders) {
      std::vector<int> perm;
      for (const auto& name : names) {
        const auto it = index.find(name);
        if (it == index.end()) throw std::invalid_argument("order names unknown task '" + name + "'");
        perm.push_back(it->second);
      }
      std::vector<int> sorted = perm;
      std::sort(sorted.begin(), sorted.end());
      if (sorted != identity) throw std::invalid_argument("each order must list every task exactly once");
      out.push_back(std::move(perm));
    }
    return out;
  }
  out.push_back(identity);
  Rng rng(mix_seed(0x6f72646572ULL, static_cast<std::uint64_t>(n)));
  for (int o = 1; o < config.order_count; ++o) {
    std::vector<int> perm = identity;
    shuffle(perm, rng);
    out.push_back(std::move(perm));
  }
  return out;
}

namespace {

struct CellResult {
  std::vector<RunLogRow> rows;
  std::vector<std::string> traces;
  std::string error;
  double seconds = 0.0;
};

std::string cell_label(const Cell& c) {
  return c.method + " " + c.sampler + " seed " + std::to_string(c.seed) + " order " + std::to_string(c.order);
}

Cell cell_of(const RunLogRow& r) { return {r.method, r.sampler, r.seed, r.order}; }

std::size_t expected_rows(const Cell& c, std::size_t num_tasks) {
  return c.method == "ORACLE" ? 1 : num_tasks * (num_tasks + 1) / 2;
}

CellResult run_cell(const Cell& cell, const ExperimentConfig& config, const std::vector<TaskData>& tasks,
                    const std::vector<int>& order, const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  CellResult res;
  std::vector<TaskData> ordered;
  for (int i : order) ordered.push_back(tasks[static_cast<std::size_t>(i)]);
  RunSpec spec;
  spec.method = cell.method == "ORACLE" ? Method::kFineTune : parse_method(cell.method);
  spec.sampler = cell.sampler == "NONE" ? SamplerKind::kRandom : parse_sampler(cell.sampler);
  spec.schedule = config.schedule;
  spec.parser = config.parser;
  spec.seed = cell.seed;
  ContinualLearner learner(ordered, spec);
  RunLog log;
  try {
    log = cell.method == "ORACLE" ? learner.run_joint() : learner.run();
  } catch (const std::exception& e) {
    log = learner.partial_log();
    res.error = e.what();
  }
  for (auto& r : log.rows) {
    r.sampler = cell.sampler;
    r.order = cell.order;
    res.rows.push_back(r);
  }
  if (!res.error.empty()) {
    RunLogRow marker;
    marker.seed = cell.seed;
    marker.method = cell.method;
    marker.sampler = cell.sampler;
    marker.task_index = -1;
    marker.eval_task = "aborted";
    marker.order = cell.order;
    res.rows.push_back(marker);
  }
  if (config.traces) res.traces = format_trace_rows(log, cell.seed, cell.method, cell.sampler, cell.order);
  if (config.checkpoints && res.error.empty()) {
    fs::create_directories(out_dir / "checkpoints");
    save_checkpoint(out_dir / "checkpoints" /
                        (cell.method + "_" + cell.sampler + "_s" + std::to_string(cell.seed) + "_o" +
                         std::to_string(cell.order) + ".json"),
                    learner.model());
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// Keeps lines of a CSV whose cell is in `keep`; returns whether any line was
// dropped.
bool filter_traces(const fs::path& path, const std::set<Cell>& keep) {
  if (!fs::exists(path)) return false;
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string line;
  bool dropped = false;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (n++ == 0) {
      if (line != traces_header()) throw MalformedRecord(1, "unexpected traces header");
      continue;
    }
    std::istringstream cells(line);
    std::string seed, method, sampler, order;
    std::getline(cells, seed, ',');
    std::getline(cells, method, ',');
    std::getline(cells, sampler, ',');
    std::getline(cells, order, ',');
    Cell c;
    try {
      c = {method, sampler, std::stoull(seed), std::stoi(order)};
    } catch (const std::logic_error&) {
      throw MalformedRecord(n, "bad traces row");
    }
    if (keep.count(c))
      lines.push_back(line);
    else
      dropped = true;
  }
  in.close();
  if (dropped) {
    std::ofstream out(path, std::ios::trunc);
    out << traces_header() << '\n';
    for (const auto& l : lines) out << l << '\n';
  }
  return dropped;
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& config, const fs::path& out_dir, int jobs, std::ostream& progress) {
  config.validate();
  const std::vector<TaskData> tasks = load_stream(config);
  const auto orders = task_orders(config, tasks);
  const std::vector<Cell> cells = enumerate_cells(config);
  fs::create_directories(out_dir);
  const fs::path csv = out_dir / "runlog.csv";
  const fs::path traces_csv = out_dir / "traces.csv";

  // resume: keep complete cells only
  std::map<Cell, std::vector<RunLogRow>> existing;
  std::vector<Cell> existing_order;
  if (fs::exists(csv)) {
    for (auto& r : read_runlog(csv)) {
      const Cell c = cell_of(r);
      if (!existing.count(c)) existing_order.push_back(c);
      existing[c].push_back(std::move(r));
    }
  }
  std::set<Cell> complete;
  for (const auto& [c, rows] : existing) {
    const bool aborted = std::any_of(rows.begin(), rows.end(), [](const RunLogRow& r) { return r.eval_task == "aborted"; });
    if (aborted || rows.size() == expected_rows(c, tasks.size())) complete.insert(c);
  }
  if (complete.size() != existing.size() || !fs::exists(csv)) {
    std::ofstream out(csv, std::ios::trunc);
    out << runlog_header() << '\n';
    for (const Cell& c : existing_order)
      if (complete.count(c))
        for (const auto& r : existing[c]) out << format_runlog_row(r) << '\n';
  }
  if (config.traces) {
    filter_traces(traces_csv, complete);
    if (!fs::exists(traces_csv)) std::ofstream(traces_csv) << traces_header() << '\n';
  }

  RunSummary summary;
  summary.total = cells.size();
  std::vector<Cell> pending;
  for (const Cell& c : cells)
    if (complete.count(c))
      ++summary.skipped;
    else
      pending.push_back(c);

  std::vector<std::optional<CellResult>> results(pending.size());
  std::mutex mu;
  std::condition_variable ready;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pending.size(); i = next++) {
      CellResult r;
      try {
        r = run_cell(pending[i], config, tasks, orders[static_cast<std::size_t>(pending[i].order)], out_dir);
      } catch (const std::exception& e) {
        r.error = e.what();
        RunLogRow marker;
        marker.seed = pending[i].seed;
        marker.method = pending[i].method;
        marker.sampler = pending[i].sampler;
        marker.task_index = -1;
        marker.eval_task = "aborted";
        marker.order = pending[i].order;
        r.rows.push_back(marker);
      }
      {
        std::lock_guard lock(mu);
        results[i] = std::move(r);
      }
      ready.notify_all();
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(pending.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads && !pending.empty(); ++t) pool.emplace_back(worker);

  // single ordered writer
  std::ofstream out(csv, std::ios::app);
  std::ofstream trace_out;
  if (config.traces) trace_out.open(traces_csv, std::ios::app);
  for (std::size_t i = 0; i < pending.size(); ++i) {
    CellResult r;
    {
      std::unique_lock lock(mu);
      ready.wait(lock, [&] { return results[i].has_value(); });
      r = std::move(*results[i]);
      results[i].reset();
    }
    for (const auto& row : r.rows) out << format_runlog_row(row) << '\n';
    out.flush();
    if (config.traces) {
      for (const auto& line : r.traces) trace_out << line << '\n';
      trace_out.flush();
    }
    ++summary.ran;
    char secs[32];
    std::snprintf(secs, sizeof secs, "%.1f", r.seconds);
    progress << "[" << (summary.skipped + summary.ran) << "/" << summary.total << "] " << cell_label(pending[i]);
    if (!r.error.empty()) {
      ++summary.aborted;
      progress << ": aborted (" << r.error << ")\n";
    } else {
      const RunLogRow& last = r.rows.back();
      char acc[32];
      std::snprintf(acc, sizeof acc, "%.3f", last.acc_whole);
      progress << ": ACC_whole " << acc << " (" << secs << " s)\n";
    }
  }
  for (auto& t : pool) t.join();
  return summary;
}

namespace {

struct Stats {
  double mean = 0.0;
  double stdev = 0.0;
};

Stats stats_of(const std::vector<double>& v) {
  Stats s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stdev = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string file_safe(std::string s) {
  for (char& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-') ch = '_';
  return s;
}

struct TraceRow {
  Cell cell;
  int action = 0;
  std::string text;
  std::string cls;
  int k = 0;
  double prob = 0.0;
};

std::vector<TraceRow> read_traces(const fs::path& path) {
  std::ifstream in(path);
  std::vector<TraceRow> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (n++ == 0) {
      if (line != traces_header()) throw MalformedRecord(1, "unexpected traces header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, ',');) c.push_back(cell);
    if (c.size() != 10) throw MalformedRecord(n, "expected 10 columns");
    try {
      rows.push_back({{c[1], c[2], std::stoull(c[0]), std::stoi(c[3])}, std::stoi(c[4]), c[5], c[7], std::stoi(c[8]),
                      std::stod(c[9])});
    } catch (const std::logic_error& e) {
      throw MalformedRecord(n, e.what());
    }
  }
  return rows;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::vector<std::string>& names,
                           const std::vector<std::vector<double>>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const double w = 640, h = 400, left = 60, right = 170, top = 40, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  std::size_t points = 1;
  for (const auto& s : series) points = std::max(points, s.size());
  auto x_of = [&](std::size_t i) { return left + (points == 1 ? pw / 2 : pw * static_cast<double>(i) / (points - 1)); };
  auto y_of = [&](double v) { return top + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << ' ' << h << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
    << xml_escape(title) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0, y = y_of(v);
    o << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\"" << left + pw << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << left - 8 << "\" y=\"" << y + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << v << "</text>\n";
  }
  for (std::size_t i = 0; i < points; ++i)
    o << "<text x=\"" << x_of(i) << "\" y=\"" << top + ph + 18
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << i + 1 << "</text>\n";
  o << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">tasks learned</text>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 10];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].size(); ++i) o << (i ? " " : "") << x_of(i) << ',' << y_of(series[s][i]);
    o << "\"/>\n";
    for (std::size_t i = 0; i < series[s].size(); ++i)
      o << "<circle cx=\"" << x_of(i) << "\" cy=\"" << y_of(series[s][i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = top + 14 + 18 * static_cast<double>(s);
    o << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly - 4
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << xml_escape(s < names.size() ? names[s] : "") << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

ReportSummary write_report(const fs::path& runlog, const fs::path& out_dir, std::ostream& progress) {
  const std::vector<RunLogRow> rows = read_runlog(runlog);
  fs::create_directories(out_dir);
  ReportSummary summary;

  using Key = std::pair<std::string, std::string>;  // method, sampler
  // per run: task index -> (acc_avg, acc_whole)
  std::map<Key, std::map<Cell, std::map<int, std::pair<double, double>>>> runs;
  for (const auto& r : rows) {
    if (r.eval_task == "aborted") continue;
    runs[{r.method, r.sampler}][cell_of(r)][r.task_index] = {r.acc_avg, r.acc_whole};
  }
  if (rows.empty()) progress << "warning: " << runlog.string() << " has no rows; writing an empty report\n";

  std::ofstream table(out_dir / "summary.csv");
  table << "method,sampler,runs,acc_avg_mean,acc_avg_std,acc_whole_mean,acc_whole_std\n";
  std::ofstream curves(out_dir / "curves.csv");
  curves << "method,sampler,task_index,runs,acc_whole_mean,acc_whole_std\n";
  std::vector<std::string> names;
  std::vector<std::vector<double>> series;
  for (const auto& [key, by_run] : runs) {
    std::vector<double> avg, whole;
    std::map<int, std::vector<double>> per_task;
    for (const auto& [cell, by_task] : by_run) {
      const auto& last = by_task.rbegin()->second;
      avg.push_back(last.first);
      whole.push_back(last.second);
      for (const auto& [k, v] : by_task) per_task[k].push_back(v.second);
    }
    const Stats a = stats_of(avg), w = stats_of(whole);
    table << key.first << ',' << key.second << ',' << by_run.size() << ',' << fmt(a.mean) << ',' << fmt(a.stdev) << ','
          << fmt(w.mean) << ',' << fmt(w.stdev) << '\n';
    summary.runs += by_run.size();
    std::vector<double> curve;
    for (const auto& [k, v] : per_task) {
      const Stats s = stats_of(v);
      curves << key.first << ',' << key.second << ',' << k << ',' << v.size() << ',' << fmt(s.mean) << ','
             << fmt(s.stdev) << '\n';
      curve.push_back(s.mean);
    }
    const std::string name = key.first + (key.second == "NONE" ? "" : " (" + key.second + ")");
    std::ofstream(out_dir / ("curve_" + file_safe(key.first + "_" + key.second) + ".svg"))
        << svg_line_chart("ACC_whole: " + name, {name}, {curve});
    names.push_back(name);
    series.push_back(curve);
    ++summary.curves;
  }
  std::ofstream(out_dir / "curves.svg") << svg_line_chart("ACC_whole after each task", names, series);

  const fs::path traces_csv = runlog.parent_path() / "traces.csv";
  if (fs::exists(traces_csv)) {
    // mean drop from k = 0 to k = 1 per action, averaged over runs
    std::map<Key, std::map<std::pair<int, std::string>, std::map<Cell, std::map<int, double>>>> by_action;
    std::map<std::pair<int, std::string>, std::string> cls;
    for (const auto& t : read_traces(traces_csv)) {
      by_action[{t.cell.method, t.cell.sampler}][{t.action, t.text}][t.cell][t.k] = t.prob;
      cls[{t.action, t.text}] = t.cls;
    }
    std::ofstream ext(out_dir / "trace_extremes.csv");
    ext << "method,sampler,class,rank,action_id,action_text,mean_drop\n";
    for (const auto& [key, actions] : by_action) {
      std::map<std::string, std::vector<std::pair<double, std::pair<int, std::string>>>> drops;
      for (const auto& [action, per_run] : actions) {
        std::vector<double> d;
        for (const auto& [cell, by_k] : per_run)
          if (by_k.count(0) && by_k.count(1)) d.push_back(by_k.at(0) - by_k.at(1));
        if (!d.empty()) drops[cls[action]].push_back({stats_of(d).mean, action});
      }
      for (auto& [c, list] : drops) {
        std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
          return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        std::vector<double> all;
        for (const auto& e : list) all.push_back(e.first);
        auto emit = [&](const std::string& rank, const std::pair<double, std::pair<int, std::string>>& e) {
          ext << key.first << ',' << key.second << ',' << c << ',' << rank << ',' << e.second.first << ','
              << e.second.second << ',' << fmt(e.first) << '\n';
        };
        for (std::size_t i = 0; i < std::min<std::size_t>(2, list.size()); ++i) emit("most_forgotten", list[i]);
        for (std::size_t i = list.size(); i-- > 0 && i + 2 >= list.size();) emit("least_forgotten", list[i]);
        ext << key.first << ',' << key.second << ',' << c << ",mean,-1,," << fmt(stats_of(all).mean) << '\n';
      }
    }
  }
  return summary;
}

}  // namespace recall
