// SPDX-License-Identifier: Apache-2.0
#include "rmdt/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rmdt/errors.hpp"
#include "rmdt/io_util.hpp"
#include "rmdt/pipeline.hpp"

namespace rmdt {

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("sweep: expected a boolean, found: " + v);
}

void apply_axis(Preset& preset, const std::string& name,
                const std::string& value) {
  if (name == "preset") {
    std::string keep = preset.name;
    preset = get_preset(value);
    preset.name = keep;
  } else if (name == "n_segments") {
    preset.model.n_segments = std::stoi(value);
  } else if (name == "mem_tokens") {
    preset.model.mem_tokens = std::stoi(value);
  } else if (name == "mode") {
    preset.model.mode = arch_mode_from_name(value);
    if (preset.model.mode == ArchMode::dt) preset.model.n_segments = 1;
  } else if (name == "grad_mode") {
    preset.model.grad_mode = grad_mode_from_name(value);
  } else if (name == "overlay_fraction") {
    preset.model.overlay_fraction = std::stod(value);
  } else if (name == "memory_fixation") {
    preset.model.memory_fixation = parse_bool(value);
  } else if (name == "use_memory") {
    preset.model.use_memory = parse_bool(value);
  } else if (name == "memory_passing") {
    preset.model.memory_passing = parse_bool(value);
  } else if (name == "flow_hops") {
    preset.model.flow_hops = std::stoi(value);
  } else if (name == "lr") {
    preset.train.lr = std::stod(value);
  } else if (name == "epochs") {
    preset.train.epochs = std::stoi(value);
  } else if (name == "batch_size") {
    preset.train.batch_size = std::stoi(value);
  } else if (name == "windows_per_traj") {
    preset.train.windows_per_traj = std::stoi(value);
  } else if (name == "target_return") {
    preset.eval.target_return = std::stod(value);
  } else {
    throw UsageError("unknown sweep axis: " + name);
  }
}

nlohmann::json report_to_object(const EvalReport& report) {
  return nlohmann::json::parse(report.to_json());
}

EvalReport report_from_object(const nlohmann::json& j) {
  EvalReport report;
  report.n_seeds = j.at("n_seeds").get<int>();
  report.n_episodes = j.at("n_episodes").get<int>();
  report.target_return = j.at("target_return").get<double>();
  report.returns = j.at("returns").get<std::vector<std::vector<double>>>();
  report.seed_means = j.at("seed_means").get<std::vector<double>>();
  report.mean = j.at("mean").get<double>();
  report.std_dev = j.at("std").get<double>();
  report.normalized_mean = j.at("normalized_mean").is_null()
                               ? std::numeric_limits<double>::quiet_NaN()
                               : j.at("normalized_mean").get<double>();
  return report;
}

struct Pooled {
  int cells = 0;
  std::vector<double> returns;
  double normalized_sum = 0.0;
  int normalized_count = 0;
  bool any_unnormalized = false;
};

void pool_cell(Pooled& pool, const CellResult& cell) {
  ++pool.cells;
  for (const auto& per_seed : cell.report.returns)
    pool.returns.insert(pool.returns.end(), per_seed.begin(), per_seed.end());
  if (std::isnan(cell.report.normalized_mean)) {
    pool.any_unnormalized = true;
  } else {
    int episodes = cell.report.n_seeds * cell.report.n_episodes;
    pool.normalized_sum += cell.report.normalized_mean * episodes;
    pool.normalized_count += episodes;
  }
}

GroupStat pooled_stat(const Pooled& pool) {
  GroupStat stat;
  stat.cells = pool.cells;
  stat.episodes = static_cast<int>(pool.returns.size());
  for (double r : pool.returns) stat.mean += r;
  stat.mean /= stat.episodes;
  double sq = 0.0;
  for (double r : pool.returns) sq += (r - stat.mean) * (r - stat.mean);
  stat.std_dev = std::sqrt(sq / stat.episodes);
  if (!pool.any_unnormalized && pool.normalized_count > 0)
    stat.normalized_mean = pool.normalized_sum / pool.normalized_count;
  return stat;
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<CellConfig> expand_cells(const ExperimentSpec& spec) {
  if (spec.base_preset.empty())
    throw UsageError("experiment: base preset required");
  if (spec.seeds.empty()) throw UsageError("experiment: at least one seed");
  for (const SweepAxis& axis : spec.axes)
    if (axis.values.empty())
      throw UsageError("experiment: axis without values: " + axis.name);

  // Preset switches replace the whole config bundle, so they apply first.
  std::vector<const SweepAxis*> ordered;
  for (const SweepAxis& axis : spec.axes)
    if (axis.name == "preset") ordered.push_back(&axis);
  for (const SweepAxis& axis : spec.axes)
    if (axis.name != "preset") ordered.push_back(&axis);

  std::vector<CellConfig> cells;
  std::vector<size_t> index(ordered.size(), 0);
  while (true) {
    for (uint64_t seed : spec.seeds) {
      CellConfig cell;
      cell.seed = seed;
      cell.preset = get_preset(spec.base_preset);
      std::ostringstream key;
      for (size_t a = 0; a < ordered.size(); ++a) {
        const std::string& value = ordered[a]->values[index[a]];
        apply_axis(cell.preset, ordered[a]->name, value);
        cell.assignment[ordered[a]->name] = value;
        key << ordered[a]->name << '=' << value << "__";
      }
      key << "seed=" << seed;
      cell.key = key.str();
      cell.preset.train.seed = seed;
      cell.preset.model.validate();
      cell.preset.train.validate();
      cell.preset.eval.validate();
      cell.cell_hash = fnv1a64(to_json(cell.preset.model) +
                               to_json(cell.preset.train) +
                               to_json(cell.preset.eval) + std::to_string(seed));
      cells.push_back(std::move(cell));
    }
    size_t a = 0;
    for (; a < ordered.size(); ++a) {
      if (++index[a] < ordered[a]->values.size()) break;
      index[a] = 0;
    }
    if (a == ordered.size()) break;
  }

  std::set<uint64_t> hashes;
  for (const CellConfig& cell : cells)
    if (!hashes.insert(cell.cell_hash).second)
      throw UsageError("experiment: two sweep cells resolve to the same "
                       "configuration: " + cell.key);
  return cells;
}

ExperimentSpec experiment_spec_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("experiment spec: malformed JSON");
  if (!j.is_object())
    throw DataError("experiment spec: expected a JSON object");
  ExperimentSpec spec;
  try {
    auto take_string = [&](const char* key, std::string& out) {
      auto it = j.find(key);
      if (it == j.end()) return;
      out = it->get<std::string>();
      j.erase(it);
    };
    take_string("name", spec.name);
    take_string("base_preset", spec.base_preset);
    take_string("data_dir", spec.data_dir);
    take_string("out_dir", spec.out_dir);
    if (auto it = j.find("seeds"); it != j.end()) {
      spec.seeds = it->get<std::vector<uint64_t>>();
      j.erase(it);
    }
    if (auto it = j.find("axes"); it != j.end()) {
      for (const auto& a : *it) {
        SweepAxis axis;
        axis.name = a.at("name").get<std::string>();
        for (const auto& v : a.at("values"))
          axis.values.push_back(v.is_string() ? v.get<std::string>()
                                              : v.dump());
        spec.axes.push_back(std::move(axis));
      }
      j.erase(it);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("experiment spec: ") + e.what());
  }
  if (!j.empty())
    throw DataError("experiment spec: unknown key '" + j.begin().key() + "'");
  if (spec.base_preset.empty())
    throw UsageError("experiment spec: base_preset is required");
  return spec;
}

ExperimentResults load_results(const std::string& out_dir) {
  std::string manifest_path = out_dir + "/manifest.json";
  if (!file_exists(manifest_path))
    throw UsageError("experiment: no manifest at " + manifest_path);
  ExperimentSpec spec;
  try {
    nlohmann::json m = nlohmann::json::parse(read_file(manifest_path));
    spec.name = m.at("name").get<std::string>();
    spec.base_preset = m.at("base_preset").get<std::string>();
    spec.data_dir = m.at("data_dir").get<std::string>();
    spec.seeds = m.at("seeds").get<std::vector<uint64_t>>();
    for (const auto& a : m.at("axes")) {
      SweepAxis axis;
      axis.name = a.at("name").get<std::string>();
      axis.values = a.at("values").get<std::vector<std::string>>();
      spec.axes.push_back(std::move(axis));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("experiment: manifest " + manifest_path + ": " +
                    e.what());
  }
  spec.out_dir = out_dir;

  ExperimentResults results;
  results.spec = spec;
  for (CellConfig& cell : expand_cells(spec)) {
    std::string result_path = out_dir + "/cells/" + cell.key + ".json";
    std::string done_path = out_dir + "/ledger/" + cell.key + ".done";
    if (!file_exists(done_path) || !file_exists(result_path))
      throw DataError("experiment: cell " + cell.key +
                      " is not recorded; the run is unfinished");
    try {
      nlohmann::json j = nlohmann::json::parse(read_file(result_path));
      if (j.at("cell_hash").get<uint64_t>() != cell.cell_hash)
        throw DataError("experiment: recorded cell " + cell.key +
                        " was produced by a different configuration");
      CellResult out;
      out.config = cell;
      out.report = report_from_object(j.at("report"));
      out.checkpoint_path = j.at("checkpoint").get<std::string>();
      results.cells.push_back(std::move(out));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("experiment: cell record " + result_path + ": " +
                      e.what());
    }
  }
  return results;
}

std::string dataset_filename(const DatasetSpec& spec) {
  auto pct = [](double f) { return static_cast<int>(std::lround(f * 100)); };
  std::ostringstream name;
  name << spec.env_id << "_n" << spec.n_traj << "_e" << pct(spec.expert_frac)
       << "_m" << pct(spec.medium_frac) << "_r" << pct(spec.random_frac)
       << "_s" << spec.seed << ".traj";
  return name.str();
}

std::string gen_data_command(const DatasetSpec& spec,
                             const std::string& path) {
  std::ostringstream cmd;
  cmd << "rmdt gen-data --env " << spec.env_id << " --n-traj " << spec.n_traj
      << " --expert-frac " << spec.expert_frac << " --medium-frac "
      << spec.medium_frac << " --random-frac " << spec.random_frac
      << " --seed " << spec.seed << " --out " << path;
  return cmd.str();
}

void resolve_eval_refs(EvalConfig& eval, const Dataset& dataset) {
  auto stats = dataset.policy_stats();
  if (std::isnan(eval.target_return)) eval.target_return = dataset.best_return();
  if (std::isnan(eval.expert_ref) && stats.count(0))
    eval.expert_ref = stats.at(0).mean_return;
  if (std::isnan(eval.random_ref) && stats.count(2))
    eval.random_ref = stats.at(2).mean_return;
}

ExperimentResults run_experiment(const ExperimentSpec& spec,
                                 std::ostream* log) {
  ExperimentResults results;
  results.spec = spec;
  std::vector<CellConfig> cells = expand_cells(spec);

  ensure_dir(spec.out_dir);
  ensure_dir(spec.out_dir + "/cells");
  ensure_dir(spec.out_dir + "/checkpoints");
  ensure_dir(spec.out_dir + "/ledger");

  nlohmann::json manifest;
  manifest["name"] = spec.name;
  manifest["base_preset"] = spec.base_preset;
  manifest["data_dir"] = spec.data_dir;
  manifest["seeds"] = spec.seeds;
  nlohmann::json axes = nlohmann::json::array();
  for (const SweepAxis& axis : spec.axes)
    axes.push_back({{"name", axis.name}, {"values", axis.values}});
  manifest["axes"] = std::move(axes);
  manifest["cells"] = cells.size();
  atomic_write_file(spec.out_dir + "/manifest.json", manifest.dump(2));

  std::map<std::string, Dataset> dataset_cache;

  for (CellConfig& cell : cells) {
    std::string result_path = spec.out_dir + "/cells/" + cell.key + ".json";
    std::string done_path = spec.out_dir + "/ledger/" + cell.key + ".done";
    std::string claim_path = spec.out_dir + "/ledger/" + cell.key + ".claim";
    std::string ckpt_path = spec.out_dir + "/checkpoints/" + cell.key + ".ckpt";

    if (file_exists(done_path) && file_exists(result_path)) {
      nlohmann::json j = nlohmann::json::parse(read_file(result_path));
      if (j.at("cell_hash").get<uint64_t>() != cell.cell_hash)
        throw DataError("experiment: recorded cell " + cell.key +
                        " was produced by a different configuration");
      CellResult done;
      done.config = cell;
      done.report = report_from_object(j.at("report"));
      done.checkpoint_path = j.at("checkpoint").get<std::string>();
      results.cells.push_back(std::move(done));
      if (log) *log << "[skip] " << cell.key << " (already recorded)\n";
      continue;
    }

    if (!create_file_exclusive(claim_path, std::to_string(cell.cell_hash))) {
      throw UsageError(
          "experiment: cell " + cell.key + " is claimed but unfinished; "
          "another process owns it, or remove " + claim_path +
          " if that process died");
    }

    std::string data_path =
        spec.data_dir + "/" + dataset_filename(cell.preset.dataset);
    if (!file_exists(data_path))
      throw UsageError("experiment: missing dataset " + data_path +
                       "; generate it with: " +
                       gen_data_command(cell.preset.dataset, data_path));
    if (!dataset_cache.count(data_path))
      dataset_cache.emplace(data_path, load_dataset(data_path));
    const Dataset& dataset = dataset_cache.at(data_path);

    if (log)
      *log << "[cell] " << cell.key << " training "
           << arch_mode_name(cell.preset.model.mode) << " on "
           << dataset.env_id << " (" << dataset.size() << " trajectories)\n";

    RmdtModel model(cell.preset.model, derive_seed(cell.seed, 1));
    Trainer trainer(model, dataset, cell.preset.train);
    while (!trainer.done()) {
      TrainStats stats = trainer.step();
      if (log && cell.preset.train.log_every > 0 &&
          (stats.global_step % cell.preset.train.log_every == 0 ||
           trainer.done()))
        *log << "  step " << stats.global_step << "/" << trainer.total_steps()
             << " loss " << stats.loss << " lr " << stats.lr << "\n";
    }
    trainer.save_checkpoint(ckpt_path);

    auto env = make_env(cell.preset.dataset.env_id);
    EvalConfig eval = cell.preset.eval;
    eval.master_seed = derive_seed(cell.seed, 2);
    resolve_eval_refs(eval, dataset);
    EvalReport report = evaluate(model, *env, eval);
    if (log)
      *log << "  eval mean " << report.mean << " +- " << report.std_dev
           << "\n";

    nlohmann::json j;
    j["key"] = cell.key;
    j["assignment"] = cell.assignment;
    j["seed"] = cell.seed;
    j["cell_hash"] = cell.cell_hash;
    j["checkpoint"] = ckpt_path;
    j["model_config"] = nlohmann::json::parse(to_json(cell.preset.model));
    j["train_config"] = nlohmann::json::parse(to_json(cell.preset.train));
    j["eval_config"] = nlohmann::json::parse(to_json(eval));
    j["report"] = report_to_object(report);
    atomic_write_file(result_path, j.dump(2));
    atomic_write_file(done_path, std::to_string(cell.cell_hash));

    CellResult out;
    out.config = cell;
    out.report = std::move(report);
    out.checkpoint_path = ckpt_path;
    results.cells.push_back(std::move(out));
  }

  write_results_json(results, spec.out_dir + "/results.json");
  write_markdown_table(results, spec.out_dir + "/results.md");
  return results;
}

std::vector<GroupStat> group_results(const ExperimentResults& results) {
  if (results.cells.empty())
    throw UsageError("group_results: no cells to aggregate");
  // Group by assignment, preserving first-appearance order.
  std::vector<std::map<std::string, std::string>> order;
  std::map<std::string, Pooled> pools;
  auto group_key = [](const std::map<std::string, std::string>& a) {
    std::string key;
    for (const auto& [k, v] : a) key += k + "=" + v + ";";
    return key;
  };
  for (const CellResult& cell : results.cells) {
    std::string key = group_key(cell.config.assignment);
    if (!pools.count(key)) order.push_back(cell.config.assignment);
    pool_cell(pools[key], cell);
  }
  std::vector<GroupStat> stats;
  for (const auto& assignment : order) {
    GroupStat stat = pooled_stat(pools.at(group_key(assignment)));
    stat.assignment = assignment;
    stats.push_back(std::move(stat));
  }
  return stats;
}

void write_results_json(const ExperimentResults& results,
                        const std::string& path) {
  nlohmann::json j;
  j["name"] = results.spec.name;
  j["base_preset"] = results.spec.base_preset;
  nlohmann::json cells = nlohmann::json::array();
  for (const CellResult& cell : results.cells) {
    nlohmann::json c;
    c["key"] = cell.config.key;
    c["assignment"] = cell.config.assignment;
    c["seed"] = cell.config.seed;
    c["cell_hash"] = cell.config.cell_hash;
    c["checkpoint"] = cell.checkpoint_path;
    c["report"] = report_to_object(cell.report);
    cells.push_back(std::move(c));
  }
  j["cells"] = std::move(cells);
  nlohmann::json groups = nlohmann::json::array();
  for (const GroupStat& stat : group_results(results)) {
    nlohmann::json g;
    g["assignment"] = stat.assignment;
    g["cells"] = stat.cells;
    g["episodes"] = stat.episodes;
    g["mean"] = stat.mean;
    g["std"] = stat.std_dev;
    if (std::isnan(stat.normalized_mean))
      g["normalized_mean"] = nullptr;
    else
      g["normalized_mean"] = stat.normalized_mean;
    groups.push_back(std::move(g));
  }
  j["groups"] = std::move(groups);
  atomic_write_file(path, j.dump(2));
}

void write_markdown_table(const ExperimentResults& results,
                          const std::string& path) {
  std::vector<GroupStat> groups = group_results(results);
  std::ostringstream out;
  out << "# " << results.spec.name << "\n\nBase preset: `"
      << results.spec.base_preset << "`. Statistics pool every episode of "
      << "every seed (population std).\n\n";

  std::vector<std::string> axis_names;
  for (const auto& [k, v] : groups.front().assignment) axis_names.push_back(k);

  out << '|';
  for (const auto& name : axis_names) out << ' ' << name << " |";
  out << " cells | episodes | mean | std | normalized |\n|";
  for (size_t i = 0; i < axis_names.size() + 5; ++i) out << "---|";
  out << '\n';
  for (const GroupStat& stat : groups) {
    out << '|';
    for (const auto& name : axis_names) out << ' ' << stat.assignment.at(name) << " |";
    out << ' ' << stat.cells << " | " << stat.episodes << " | " << stat.mean
        << " | " << stat.std_dev << " | ";
    if (std::isnan(stat.normalized_mean))
      out << "-";
    else
      out << stat.normalized_mean;
    out << " |\n";
  }
  atomic_write_file(path, out.str());
}

std::string emit_plot_data(const ExperimentResults& results,
                           const std::string& axis) {
  const SweepAxis* target = nullptr;
  for (const SweepAxis& a : results.spec.axes)
    if (a.name == axis) target = &a;
  if (!target) throw UsageError("emit_plot_data: unknown axis: " + axis);

  std::ostringstream out;
  out << "value,mean,std,episodes\n";
  for (const std::string& value : target->values) {
    Pooled pool;
    for (const CellResult& cell : results.cells)
      if (cell.config.assignment.at(axis) == value) pool_cell(pool, cell);
    if (pool.returns.empty())
      throw DataError("emit_plot_data: no results for " + axis + "=" + value);
    GroupStat stat = pooled_stat(pool);
    out << value << ',' << format_g17(stat.mean) << ','
        << format_g17(stat.std_dev) << ',' << stat.episodes << '\n';
  }
  return out.str();
}

}  // namespace rmdt
