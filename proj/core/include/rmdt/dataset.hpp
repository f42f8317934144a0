// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rmdt/config.hpp"
#include "rmdt/model.hpp"

namespace rmdt {

/// Policy fractions must sum to 1; trajectory counts are assigned
/// floor(frac * n) to expert and medium with the remainder going to random,
/// so the split is deterministic.
void validate_dataset_spec(const DatasetSpec& spec);
std::vector<int> policy_counts(const DatasetSpec& spec);  // [expert, medium, random]

struct PolicyStats {
  int count = 0;
  double mean_return = 0.0;
  double min_return = 0.0;
  double max_return = 0.0;
};

struct Dataset {
  std::string env_id;
  int d_obs = 0;
  ActionSpec action;
  std::vector<Trajectory> trajectories;

  int size() const { return static_cast<int>(trajectories.size()); }
  int max_length() const;
  double best_return() const;
  /// Per-policy return statistics, keyed by policy id.
  std::map<int, PolicyStats> policy_stats() const;
  /// Human-readable summary block (counts, returns, lengths).
  std::string summary() const;
};

/// Roll out the configured policy mixture and write the result to `path`.
/// Deterministic: the same spec produces a byte-identical file. Actions are
/// quantized to f32 before they reach the environment, so replaying a stored
/// trajectory through the environment with its stored episode seed
/// reproduces observations and rewards bit-exactly at file precision.
Dataset generate_dataset(const DatasetSpec& spec, const std::string& path);

/// Binary trajectory file: one JSON header line, fixed-layout little-endian
/// records (f32 payloads), CRC32 trailer.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Extension point for mapping external corpora into Dataset. No adapters
/// are registered in this build.
class DatasetAdapter {
 public:
  virtual ~DatasetAdapter() = default;
  virtual Dataset load(const std::string& uri) = 0;
};
std::unique_ptr<DatasetAdapter> make_dataset_adapter(const std::string& scheme);

}  // namespace rmdt
