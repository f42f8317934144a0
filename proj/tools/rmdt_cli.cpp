// SPDX-License-Identifier: Apache-2.0
//
// rmdt: dataset generation, training, evaluation, attention inspection,
// ablation sweeps, and report regeneration, in one binary.
//
// Override precedence everywhere: flags > --config file > preset defaults,
// and the effective configuration is echoed into every output directory.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rmdt/attn_inspect.hpp"
#include "rmdt/config.hpp"
#include "rmdt/dataset.hpp"
#include "rmdt/env.hpp"
#include "rmdt/errors.hpp"
#include "rmdt/eval.hpp"
#include "rmdt/experiment.hpp"
#include "rmdt/io_util.hpp"
#include "rmdt/model.hpp"
#include "rmdt/pipeline.hpp"
#include "rmdt/rng.hpp"

namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::set<int> parse_int_set(const std::string& text, const char* what) {
  std::set<int> out;
  for (const std::string& item : split_csv(text)) {
    try {
      out.insert(std::stoi(item));
    } catch (const std::exception&) {
      throw rmdt::UsageError(std::string(what) + ": expected integers, found: " +
                             item);
    }
  }
  return out;
}

void ensure_parent_dir(const std::string& path) {
  auto slash = path.find_last_of('/');
  if (slash != std::string::npos && slash > 0)
    rmdt::ensure_dir(path.substr(0, slash));
}

json dataset_spec_to_object(const rmdt::DatasetSpec& spec) {
  json j;
  j["env"] = spec.env_id;
  j["n_traj"] = spec.n_traj;
  j["expert_frac"] = spec.expert_frac;
  j["medium_frac"] = spec.medium_frac;
  j["random_frac"] = spec.random_frac;
  j["seed"] = spec.seed;
  return j;
}

rmdt::DatasetSpec dataset_spec_from_object(const json& j) {
  rmdt::DatasetSpec spec;
  spec.env_id = j.at("env").get<std::string>();
  spec.n_traj = j.at("n_traj").get<int>();
  spec.expert_frac = j.at("expert_frac").get<double>();
  spec.medium_frac = j.at("medium_frac").get<double>();
  spec.random_frac = j.at("random_frac").get<double>();
  spec.seed = j.at("seed").get<uint64_t>();
  return spec;
}

// ---------------------------------------------------------------------------
// Flat config keys. A --config file and --set overrides address model,
// optimizer, and evaluation fields in one flat key space; every key belongs
// to exactly one section.
// ---------------------------------------------------------------------------

json parse_set_value(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded() || v.is_object() || v.is_array()) return json(text);
  return v;
}

json overrides_from_sets(const std::vector<std::string>& sets) {
  json flat = json::object();
  for (const std::string& item : sets) {
    auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw rmdt::UsageError("--set expects key=value, found: " + item);
    flat[item.substr(0, eq)] = parse_set_value(item.substr(eq + 1));
  }
  return flat;
}

void apply_flat_config(rmdt::Preset& preset, const json& flat,
                       bool eval_only = false) {
  json model = json::parse(rmdt::to_json(preset.model));
  json train = json::parse(rmdt::to_json(preset.train));
  json eval = json::parse(rmdt::to_json(preset.eval));
  bool m = false, t = false, e = false;
  for (const auto& [key, value] : flat.items()) {
    if (eval.contains(key)) {
      eval[key] = value;
      e = true;
    } else if (eval_only) {
      throw rmdt::UsageError(
          "only evaluation keys may change under a recorded model; found: " +
          key);
    } else if (model.contains(key)) {
      model[key] = value;
      m = true;
    } else if (train.contains(key)) {
      train[key] = value;
      t = true;
    } else {
      throw rmdt::UsageError("unknown config key: " + key);
    }
  }
  if (m) preset.model = rmdt::rmdt_config_from_json(model.dump());
  if (t) preset.train = rmdt::train_config_from_json(train.dump());
  if (e) preset.eval = rmdt::eval_config_from_json(eval.dump());
}

struct ConfigArgs {
  std::string preset;
  std::string config_file;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args, bool required) {
  auto* opt = cmd->add_option(
      "--preset", args.preset,
      "base configuration bundle: " + join(rmdt::preset_names(), ", "));
  if (required) opt->required();
  cmd->add_option("--config", args.config_file,
                  "JSON file of flat config keys (model, optimizer, and "
                  "evaluation fields share one key space)");
  cmd->add_option("--set", args.sets,
                  "override one config key as key=value; repeatable, wins "
                  "over --config");
}

rmdt::Preset resolve_preset(const ConfigArgs& args) {
  rmdt::Preset preset = rmdt::get_preset(args.preset);
  if (!args.config_file.empty()) {
    json flat = json::parse(rmdt::read_file(args.config_file), nullptr, false);
    if (flat.is_discarded() || !flat.is_object())
      throw rmdt::DataError("config file " + args.config_file +
                            ": expected a JSON object of config keys");
    apply_flat_config(preset, flat);
  }
  if (!args.sets.empty())
    apply_flat_config(preset, overrides_from_sets(args.sets));
  preset.model.validate();
  preset.train.validate();
  preset.eval.validate();
  return preset;
}

json config_echo(const rmdt::Preset& preset) {
  json j;
  j["preset"] = preset.name;
  j["dataset_spec"] = dataset_spec_to_object(preset.dataset);
  j["model_config"] = json::parse(rmdt::to_json(preset.model));
  j["train_config"] = json::parse(rmdt::to_json(preset.train));
  j["eval_config"] = json::parse(rmdt::to_json(preset.eval));
  return j;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string env;
  int n_traj = 1000;
  double expert_frac = 1.0;
  double medium_frac = 0.0;
  double random_frac = 0.0;
  uint64_t seed = 0;
  std::string out;
};

int run_gen_data(const GenDataArgs& args) {
  rmdt::DatasetSpec spec{args.env,        args.n_traj,      args.expert_frac,
                         args.medium_frac, args.random_frac, args.seed};
  rmdt::validate_dataset_spec(spec);
  std::string out =
      args.out.empty() ? "data/" + rmdt::dataset_filename(spec) : args.out;
  ensure_parent_dir(out);

  rmdt::Dataset dataset = rmdt::generate_dataset(spec, out);

  json meta;
  meta["command"] = "gen-data";
  meta["spec"] = dataset_spec_to_object(spec);
  meta["path"] = out;
  meta["n_traj"] = dataset.size();
  meta["max_length"] = dataset.max_length();
  meta["best_return"] = dataset.best_return();
  json per_policy = json::object();
  for (const auto& [policy, stats] : dataset.policy_stats()) {
    json p;
    p["count"] = stats.count;
    p["mean_return"] = stats.mean_return;
    p["min_return"] = stats.min_return;
    p["max_return"] = stats.max_return;
    per_policy[rmdt::policy_kind_from_id(policy)] = std::move(p);
  }
  meta["policies"] = std::move(per_policy);
  rmdt::atomic_write_file(out + ".json", meta.dump(2));

  std::cout << dataset.summary() << "wrote " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  ConfigArgs config;
  std::string data;
  std::string data_dir = "data";
  std::string out;
  bool resume = false;
  std::string lr, epochs, batch_size, seed;
};

std::string resolve_data_path(const rmdt::DatasetSpec& spec,
                              const std::string& explicit_path,
                              const std::string& data_dir) {
  std::string path = explicit_path.empty()
                         ? data_dir + "/" + rmdt::dataset_filename(spec)
                         : explicit_path;
  if (!rmdt::file_exists(path))
    throw rmdt::UsageError("missing dataset " + path + "; generate it with: " +
                           rmdt::gen_data_command(spec, path));
  return path;
}

int run_train(TrainArgs& args) {
  if (!args.lr.empty()) args.config.sets.push_back("lr=" + args.lr);
  if (!args.epochs.empty()) args.config.sets.push_back("epochs=" + args.epochs);
  if (!args.batch_size.empty())
    args.config.sets.push_back("batch_size=" + args.batch_size);
  if (!args.seed.empty()) args.config.sets.push_back("seed=" + args.seed);
  rmdt::Preset preset = resolve_preset(args.config);

  std::string data_path =
      resolve_data_path(preset.dataset, args.data, args.data_dir);
  rmdt::Dataset dataset = rmdt::load_dataset(data_path);

  std::string run_dir = args.out.empty() ? "runs/" + preset.name : args.out;
  rmdt::ensure_dir(run_dir);
  std::string ckpt_path = run_dir + "/model.ckpt";

  json manifest = config_echo(preset);
  manifest["command"] = "train";
  manifest["dataset"] = data_path;
  manifest["checkpoint"] = "model.ckpt";
  rmdt::atomic_write_file(run_dir + "/manifest.json", manifest.dump(2));

  rmdt::RmdtModel model(preset.model,
                        rmdt::derive_seed(preset.train.seed, 1));
  rmdt::Trainer trainer(model, dataset, preset.train);

  bool resumed = args.resume && rmdt::file_exists(ckpt_path);
  if (resumed) {
    trainer.load_checkpoint(ckpt_path);
    std::cout << "resumed " << ckpt_path << " at step "
              << trainer.global_step() << "\n";
  }

  std::ofstream log(run_dir + "/train_log.csv",
                    resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw rmdt::DataError("cannot open " + run_dir + "/train_log.csv");
  log << std::setprecision(17);
  if (!resumed) log << "step,epoch,batch,loss,lr,grad_norm\n";

  std::cout << "training " << preset.name << " on " << data_path << " ("
            << dataset.size() << " trajectories, "
            << trainer.total_steps() << " steps)\n";

  while (!trainer.done()) {
    rmdt::TrainStats stats = trainer.step();
    log << stats.global_step << ',' << stats.epoch << ','
        << stats.batch_in_epoch << ',' << stats.loss << ',' << stats.lr << ','
        << stats.grad_norm << '\n';
    if (preset.train.log_every > 0 &&
        (stats.global_step % preset.train.log_every == 0 || trainer.done()))
      std::cout << "step " << stats.global_step << "/"
                << trainer.total_steps() << " epoch " << stats.epoch
                << " loss " << stats.loss << " lr " << stats.lr << std::endl;
  }
  trainer.save_checkpoint(ckpt_path);
  std::cout << "saved " << ckpt_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval / inspect model loading
// ---------------------------------------------------------------------------

struct ModelSource {
  std::string run;
  std::string checkpoint;
  ConfigArgs config;
};

void add_model_source_options(CLI::App* cmd, ModelSource& src) {
  cmd->add_option("--run", src.run,
                  "training run directory (manifest.json + model.ckpt)");
  cmd->add_option("--checkpoint", src.checkpoint,
                  "checkpoint path (default: <run>/model.ckpt)");
  add_config_options(cmd, src.config, /*required=*/false);
}

/// A model plus the bundle that produced it, either from a run directory's
/// manifest or from --preset/--config/--set.
struct LoadedModel {
  rmdt::Preset preset;
  std::string checkpoint;
  std::string data_path;  // dataset recorded by the training run, if any
  uint64_t global_step = 0;
  std::unique_ptr<rmdt::RmdtModel> model;
};

LoadedModel load_model(const ModelSource& src) {
  LoadedModel out;
  if (!src.run.empty()) {
    std::string manifest_path = src.run + "/manifest.json";
    if (!rmdt::file_exists(manifest_path))
      throw rmdt::UsageError("no manifest at " + manifest_path);
    json manifest = json::parse(rmdt::read_file(manifest_path), nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object())
      throw rmdt::DataError("malformed manifest " + manifest_path);
    try {
      out.preset.name = manifest.at("preset").get<std::string>();
      out.preset.dataset =
          dataset_spec_from_object(manifest.at("dataset_spec"));
      out.preset.model =
          rmdt::rmdt_config_from_json(manifest.at("model_config").dump());
      out.preset.train =
          rmdt::train_config_from_json(manifest.at("train_config").dump());
      out.preset.eval =
          rmdt::eval_config_from_json(manifest.at("eval_config").dump());
      out.checkpoint =
          src.run + "/" + manifest.at("checkpoint").get<std::string>();
      out.data_path = manifest.at("dataset").get<std::string>();
    } catch (const json::exception& e) {
      throw rmdt::DataError("manifest " + manifest_path + ": " + e.what());
    }
    // Only evaluation-protocol keys may change: the model must still match
    // the checkpoint's config hash.
    if (!src.config.config_file.empty()) {
      json flat =
          json::parse(rmdt::read_file(src.config.config_file), nullptr, false);
      if (flat.is_discarded() || !flat.is_object())
        throw rmdt::DataError("config file " + src.config.config_file +
                              ": expected a JSON object of config keys");
      apply_flat_config(out.preset, flat, /*eval_only=*/true);
    }
    if (!src.config.sets.empty())
      apply_flat_config(out.preset, overrides_from_sets(src.config.sets),
                        /*eval_only=*/true);
  } else {
    if (src.config.preset.empty())
      throw rmdt::UsageError("pass --run or --preset to identify the model");
    if (src.checkpoint.empty())
      throw rmdt::UsageError("pass --checkpoint with --preset");
    out.preset = resolve_preset(src.config);
  }
  if (!src.checkpoint.empty()) out.checkpoint = src.checkpoint;
  if (!rmdt::file_exists(out.checkpoint))
    throw rmdt::UsageError("missing checkpoint " + out.checkpoint);

  out.model = std::make_unique<rmdt::RmdtModel>(
      out.preset.model, rmdt::derive_seed(out.preset.train.seed, 1));
  out.global_step = rmdt::load_model_checkpoint(*out.model, out.checkpoint);
  return out;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  ModelSource source;
  std::string env;
  std::string data;
  std::string data_dir = "data";
  std::string out;
};

int run_eval(const EvalArgs& args) {
  LoadedModel loaded = load_model(args.source);
  rmdt::EvalConfig eval = loaded.preset.eval;

  // Unset (NaN) target and normalization references come from dataset
  // statistics when the dataset is reachable. Default: the dataset the run
  // trained on, else the canonical recipe path.
  std::string data_path = args.data;
  if (data_path.empty()) data_path = loaded.data_path;
  if (data_path.empty())
    data_path =
        args.data_dir + "/" + rmdt::dataset_filename(loaded.preset.dataset);
  if (rmdt::file_exists(data_path)) {
    rmdt::Dataset dataset = rmdt::load_dataset(data_path);
    rmdt::resolve_eval_refs(eval, dataset);
  } else if (std::isnan(eval.target_return)) {
    throw rmdt::UsageError("target_return is unset and dataset " + data_path +
                           " is not available to resolve it; pass --data or "
                           "--set target_return=<value>");
  }

  std::string env_id = args.env.empty() ? loaded.preset.dataset.env_id : args.env;
  auto env = rmdt::make_env(env_id);
  rmdt::EvalReport report = rmdt::evaluate(*loaded.model, *env, eval);

  std::cout << "checkpoint " << loaded.checkpoint << " (step "
            << loaded.global_step << ") on " << env_id << "\n"
            << report.table();

  json out;
  out["command"] = "eval";
  out["checkpoint"] = loaded.checkpoint;
  out["global_step"] = loaded.global_step;
  out["env"] = env_id;
  out["eval_config"] = json::parse(rmdt::to_json(eval));
  out["model_config"] = json::parse(rmdt::to_json(loaded.preset.model));
  out["report"] = json::parse(report.to_json());
  std::string report_path =
      args.out.empty()
          ? (args.source.run.empty() ? "eval_report.json"
                                     : args.source.run + "/eval_report.json")
          : args.out;
  ensure_parent_dir(report_path);
  rmdt::atomic_write_file(report_path, out.dump(2));
  std::cout << "wrote " << report_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

struct InspectArgs {
  ModelSource source;
  std::string data;
  std::string data_dir = "data";
  int traj = 0;
  int start = 0;
  std::string layers;
  std::string heads;
  std::vector<std::string> formats = {"csv", "summary"};
  std::string out;
};

int run_inspect(const InspectArgs& args) {
  LoadedModel loaded = load_model(args.source);
  const rmdt::RmdtConfig& config = loaded.preset.model;

  std::string data_path = args.data.empty() ? loaded.data_path : args.data;
  if (data_path.empty() || !rmdt::file_exists(data_path))
    data_path =
        resolve_data_path(loaded.preset.dataset, args.data, args.data_dir);
  rmdt::Dataset dataset = rmdt::load_dataset(data_path);
  if (args.traj < 0 || args.traj >= dataset.size())
    throw rmdt::UsageError("trajectory index out of range: " +
                           std::to_string(args.traj) + " (dataset has " +
                           std::to_string(dataset.size()) + ")");
  const rmdt::Trajectory& traj = dataset.trajectories[args.traj];
  if (args.start < 0 || args.start >= traj.length())
    throw rmdt::UsageError("window start out of range: " +
                           std::to_string(args.start) + " (trajectory has " +
                           std::to_string(traj.length()) + " frames)");

  std::vector<rmdt::SegmentData> segments =
      rmdt::split_segments(traj, args.start, config);
  while (!segments.empty() && segments.back().valid_frames == 0)
    segments.pop_back();

  std::vector<rmdt::AttentionRecord> records =
      rmdt::capture_attention(*loaded.model, segments);

  std::set<int> layer_filter = parse_int_set(args.layers, "--layers");
  std::set<int> head_filter = parse_int_set(args.heads, "--heads");
  if (!layer_filter.empty() || !head_filter.empty()) {
    std::vector<rmdt::AttentionRecord> kept;
    for (auto& rec : records) {
      if (!layer_filter.empty() && !layer_filter.count(rec.layer)) continue;
      if (!head_filter.empty() && !head_filter.count(rec.head)) continue;
      kept.push_back(std::move(rec));
    }
    records = std::move(kept);
  }
  if (records.empty())
    throw rmdt::UsageError("layer/head filter matched no attention records");

  std::set<std::string> formats;
  for (const std::string& f : args.formats)
    for (const std::string& part : split_csv(f)) {
      if (part == "all") {
        formats.insert({"csv", "json", "summary", "pgm"});
      } else if (part == "csv" || part == "json" || part == "summary" ||
                 part == "pgm") {
        formats.insert(part);
      } else {
        throw rmdt::UsageError(
            "unknown format: " + part +
            " (expected csv, json, summary, pgm, or all)");
      }
    }

  std::string out_dir = args.out.empty()
                            ? (args.source.run.empty()
                                   ? "inspect"
                                   : args.source.run + "/inspect")
                            : args.out;
  rmdt::ensure_dir(out_dir);

  std::vector<std::string> written;
  if (formats.count("csv")) {
    rmdt::export_records_csv(records, out_dir + "/records.csv");
    written.push_back(out_dir + "/records.csv");
  }
  if (formats.count("json")) {
    rmdt::export_records_json(records, out_dir + "/records.json");
    written.push_back(out_dir + "/records.json");
  }
  if (formats.count("summary")) {
    rmdt::export_summaries_csv(rmdt::summarize_regions(records),
                               out_dir + "/summaries.csv");
    written.push_back(out_dir + "/summaries.csv");
  }
  if (formats.count("pgm")) {
    auto paths = rmdt::export_heatmaps_pgm(records, out_dir);
    written.insert(written.end(), paths.begin(), paths.end());
  }

  json manifest;
  manifest["command"] = "inspect";
  manifest["checkpoint"] = loaded.checkpoint;
  manifest["dataset"] = data_path;
  manifest["trajectory"] = args.traj;
  manifest["window_start"] = args.start;
  manifest["layers"] = args.layers;
  manifest["heads"] = args.heads;
  manifest["formats"] = std::vector<std::string>(formats.begin(), formats.end());
  manifest["records"] = records.size();
  manifest["model_config"] = json::parse(rmdt::to_json(config));
  rmdt::atomic_write_file(out_dir + "/inspect.json", manifest.dump(2));

  std::cout << records.size() << " attention records from "
            << segments.size() << " segments\n";
  for (const std::string& path : written) std::cout << "wrote " << path << "\n";
  std::cout << "wrote " << out_dir << "/inspect.json\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sweep / report
// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string spec_file;
  std::string name;
  std::string preset;
  std::vector<std::string> axes;
  std::string seeds;
  std::string data_dir;
  std::string out_dir;
};

int run_sweep(const SweepArgs& args) {
  rmdt::ExperimentSpec spec;
  if (!args.spec_file.empty())
    spec = rmdt::experiment_spec_from_json(rmdt::read_file(args.spec_file));
  if (!args.name.empty()) spec.name = args.name;
  if (!args.preset.empty()) spec.base_preset = args.preset;
  if (!args.data_dir.empty()) spec.data_dir = args.data_dir;
  if (!args.out_dir.empty()) spec.out_dir = args.out_dir;
  if (!args.axes.empty()) {
    spec.axes.clear();
    for (const std::string& item : args.axes) {
      auto eq = item.find('=');
      if (eq == std::string::npos || eq == 0)
        throw rmdt::UsageError("--axis expects name=v1,v2,..., found: " +
                               item);
      rmdt::SweepAxis axis;
      axis.name = item.substr(0, eq);
      axis.values = split_csv(item.substr(eq + 1));
      if (axis.values.empty())
        throw rmdt::UsageError("--axis " + axis.name + " has no values");
      spec.axes.push_back(std::move(axis));
    }
  }
  if (!args.seeds.empty()) {
    spec.seeds.clear();
    for (const std::string& item : split_csv(args.seeds)) {
      try {
        spec.seeds.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw rmdt::UsageError("--seeds expects integers, found: " + item);
      }
    }
  }
  if (spec.base_preset.empty())
    throw rmdt::UsageError("pass --preset or a --spec file with base_preset");

  rmdt::ExperimentResults results = rmdt::run_experiment(spec, &std::cout);
  std::cout << "completed " << results.cells.size() << " cells\n"
            << "wrote " << spec.out_dir << "/results.json and "
            << spec.out_dir << "/results.md\n";
  return 0;
}

struct ReportArgs {
  std::string run;
  std::vector<std::string> plots;
};

int run_report(const ReportArgs& args) {
  rmdt::ExperimentResults results = rmdt::load_results(args.run);
  rmdt::write_results_json(results, args.run + "/results.json");
  rmdt::write_markdown_table(results, args.run + "/results.md");
  for (const std::string& axis : args.plots) {
    std::string csv = rmdt::emit_plot_data(results, axis);
    rmdt::atomic_write_file(args.run + "/plot_" + axis + ".csv", csv);
    std::cout << "wrote " << args.run << "/plot_" << axis << ".csv\n";
  }
  std::cout << rmdt::read_file(args.run + "/results.md");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"recurrent-memory decision transformer toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "roll out scripted policies into a trajectory file");
  gen->add_option("--env", gen_args.env, "environment id (keydoor, masspoint)")
      ->required();
  gen->add_option("--n-traj", gen_args.n_traj, "number of trajectories");
  gen->add_option("--expert-frac", gen_args.expert_frac,
                  "fraction of expert-policy trajectories");
  gen->add_option("--medium-frac", gen_args.medium_frac,
                  "fraction of medium-policy trajectories");
  gen->add_option("--random-frac", gen_args.random_frac,
                  "fraction of random-policy trajectories");
  gen->add_option("--seed", gen_args.seed, "generation seed");
  gen->add_option("--out", gen_args.out,
                  "output path (default: data/<canonical name>)");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand(
      "train", "train a model and write a checkpointed run directory");
  add_config_options(train, train_args.config, /*required=*/true);
  train->add_option("--data", train_args.data,
                    "dataset path (default: <data-dir>/<canonical name>)");
  train->add_option("--data-dir", train_args.data_dir, "dataset directory");
  train->add_option("--out", train_args.out,
                    "run directory (default: runs/<preset>)");
  train->add_flag("--resume", train_args.resume,
                  "continue from the run's checkpoint if present");
  train->add_option("--lr", train_args.lr, "shorthand for --set lr=...");
  train->add_option("--epochs", train_args.epochs,
                    "shorthand for --set epochs=...");
  train->add_option("--batch-size", train_args.batch_size,
                    "shorthand for --set batch_size=...");
  train->add_option("--seed", train_args.seed, "shorthand for --set seed=...");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand(
      "eval", "roll out a trained model and report return statistics");
  add_model_source_options(eval, eval_args.source);
  eval->add_option("--env", eval_args.env, "environment id override");
  eval->add_option("--data", eval_args.data,
                   "dataset for unset target/normalization references");
  eval->add_option("--data-dir", eval_args.data_dir, "dataset directory");
  eval->add_option("--out", eval_args.out,
                   "report JSON path (default: <run>/eval_report.json)");

  InspectArgs inspect_args;
  CLI::App* inspect = app.add_subcommand(
      "inspect", "capture attention maps over a dataset window");
  add_model_source_options(inspect, inspect_args.source);
  inspect->add_option("--data", inspect_args.data, "dataset path");
  inspect->add_option("--data-dir", inspect_args.data_dir,
                      "dataset directory");
  inspect->add_option("--traj", inspect_args.traj,
                      "trajectory index in the dataset");
  inspect->add_option("--start", inspect_args.start, "window start frame");
  inspect->add_option("--layers", inspect_args.layers,
                      "comma-separated layer filter (default: all)");
  inspect->add_option("--heads", inspect_args.heads,
                      "comma-separated head filter (default: all)");
  inspect->add_option("--format", inspect_args.formats,
                      "csv, json, summary, pgm, or all (repeatable)");
  inspect->add_option("--out", inspect_args.out,
                      "output directory (default: <run>/inspect)");

  SweepArgs sweep_args;
  CLI::App* sweep = app.add_subcommand(
      "sweep", "train and evaluate a cartesian grid of configurations");
  sweep->add_option("--spec", sweep_args.spec_file,
                    "experiment spec JSON (name, base_preset, axes, seeds, "
                    "data_dir, out_dir)");
  sweep->add_option("--name", sweep_args.name, "experiment name");
  sweep->add_option("--preset", sweep_args.preset, "base preset");
  sweep->add_option("--axis", sweep_args.axes,
                    "sweep axis as name=v1,v2,... (repeatable)");
  sweep->add_option("--seeds", sweep_args.seeds,
                    "comma-separated training seeds");
  sweep->add_option("--data-dir", sweep_args.data_dir, "dataset directory");
  sweep->add_option("--out", sweep_args.out_dir, "experiment directory");

  ReportArgs report_args;
  CLI::App* report = app.add_subcommand(
      "report", "rebuild tables and plot data from a finished sweep");
  report->add_option("--run", report_args.run, "experiment directory")
      ->required();
  report->add_option("--plot", report_args.plots,
                     "axis to emit plot CSV for (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) return run_eval(eval_args);
    if (inspect->parsed()) return run_inspect(inspect_args);
    if (sweep->parsed()) return run_sweep(sweep_args);
    if (report->parsed()) return run_report(report_args);
    throw rmdt::UsageError("no subcommand");
  } catch (const rmdt::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const rmdt::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const rmdt::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
