// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "rmdt/config.hpp"
#include "rmdt/dataset.hpp"
#include "rmdt/eval.hpp"

namespace rmdt {

/// One sweep dimension; values are parsed per axis. Supported names:
/// preset, n_segments, mem_tokens, mode, grad_mode, overlay_fraction,
/// memory_fixation, use_memory, memory_passing, flow_hops, lr, epochs,
/// batch_size, windows_per_traj, target_return.
struct SweepAxis {
  std::string name;
  std::vector<std::string> values;
};

struct ExperimentSpec {
  std::string name = "experiment";
  std::string base_preset;
  std::string data_dir = "data";
  std::string out_dir = "runs";
  std::vector<SweepAxis> axes;
  std::vector<uint64_t> seeds = {0};
};

/// Fully resolved configs for one sweep cell.
struct CellConfig {
  std::string key;  // axis=value pairs + seed, filesystem-safe
  std::map<std::string, std::string> assignment;
  uint64_t seed = 0;
  Preset preset;         // after axis application
  uint64_t cell_hash = 0;  // fingerprint over configs + seed
};

struct CellResult {
  CellConfig config;
  EvalReport report;
  std::string checkpoint_path;
};

struct ExperimentResults {
  ExperimentSpec spec;
  std::vector<CellResult> cells;
};

/// The cartesian cell list (axes x seeds), validated: known axis names,
/// parseable values, unique cell hashes.
std::vector<CellConfig> expand_cells(const ExperimentSpec& spec);

/// Strict JSON parse; unknown keys are a usage error. Keys mirror the
/// struct: name, base_preset, data_dir, out_dir, seeds, axes (list of
/// {name, values}); axis values may be strings or JSON scalars.
ExperimentSpec experiment_spec_from_json(const std::string& text);

/// Rebuild results from a run directory written by run_experiment, without
/// training. Every cell must be recorded; an unfinished run is a data error
/// naming the first missing cell.
ExperimentResults load_results(const std::string& out_dir);

/// Canonical dataset file name for a generation recipe, so experiments and
/// gen-data agree on where a dataset lives.
std::string dataset_filename(const DatasetSpec& spec);

/// The exact CLI invocation that generates `spec` at `path`; quoted in
/// missing-dataset errors.
std::string gen_data_command(const DatasetSpec& spec, const std::string& path);

/// Fill unset (NaN) evaluation references from dataset statistics: target
/// return and expert reference from the best/expert returns, random
/// reference from the random-policy mean.
void resolve_eval_refs(EvalConfig& eval, const Dataset& dataset);

/// Train + evaluate every cell, skipping cells already recorded under
/// out_dir (idempotent resume via marker files created atomically; a claim
/// without a completion marker means another process owns the cell).
/// Missing datasets raise a UsageError naming the gen-data command.
/// Progress lines go to `log` when given.
ExperimentResults run_experiment(const ExperimentSpec& spec,
                                 std::ostream* log = nullptr);

/// Pooled statistics per axis assignment (seeds merged): mean and
/// population std over every episode of every seed.
struct GroupStat {
  std::map<std::string, std::string> assignment;
  int cells = 0;
  int episodes = 0;
  double mean = 0.0;
  double std_dev = 0.0;
  double normalized_mean = std::numeric_limits<double>::quiet_NaN();
};

std::vector<GroupStat> group_results(const ExperimentResults& results);

void write_results_json(const ExperimentResults& results,
                        const std::string& path);
void write_markdown_table(const ExperimentResults& results,
                          const std::string& path);

/// Plot-ready CSV (value,mean,std,episodes) over one axis, other axes and
/// seeds pooled. Unknown axis -> usage error.
std::string emit_plot_data(const ExperimentResults& results,
                           const std::string& axis);

}  // namespace rmdt
