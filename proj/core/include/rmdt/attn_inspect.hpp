// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "rmdt/model.hpp"

namespace rmdt {

/// Token region of a row or column index; xl_cache marks cached prefix
/// columns (dt_xl), which exist only on the column side.
enum class TokenRegion { read_mem, ret, obs, act, write_mem, xl_cache };
constexpr int kRegionCount = 6;

std::string region_name(TokenRegion region);

/// One attention map as used in the forward pass: post-softmax weights with
/// masked cells exactly 0, each row summing to 1 over allowed columns.
struct AttentionRecord {
  int layer = 0;
  int head = 0;
  int segment = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> weights;  // row-major [rows * cols]
  std::vector<TokenRegion> row_regions;
  std::vector<TokenRegion> col_regions;

  double weight(int r, int c) const {
    return weights[static_cast<size_t>(r) * cols + c];
  }
};

/// Teacher-forced capture over a window of segments: fresh memory, detached
/// handoffs, dropout off. One record per (layer, head, segment), in that
/// nesting order with segment outermost. Throws UsageError if a segment has
/// no valid frames.
std::vector<AttentionRecord> capture_attention(
    const RmdtModel& model, const std::vector<SegmentData>& segments);

/// Label a raw capture whose entries were appended by one or more forward
/// passes (n_layers * n_heads entries each, e.g. rollout completion
/// passes). Segment indices are assigned per pass in arrival order.
std::vector<AttentionRecord> annotate_capture(const AttentionCapture& capture,
                                              const RmdtConfig& config);

/// Mean attention mass from rows of one region into columns of each region.
/// mass[x][y] averages, over rows labeled x, the summed weight into columns
/// labeled y, so each row of `mass` sums to 1 for regions that have rows.
struct RegionSummary {
  int layer = 0;
  int head = 0;
  int segment = 0;
  std::array<int, kRegionCount> row_counts{};
  std::array<std::array<double, kRegionCount>, kRegionCount> mass{};
};

std::vector<RegionSummary> summarize_regions(
    const std::vector<AttentionRecord>& records);

/// Mean mass from trajectory rows (ret+obs+act pooled) into read-memory
/// columns; the per-layer, per-segment memory-use signal.
double trajectory_to_read_mass(const RegionSummary& summary);
/// Mean mass from write-memory rows into read-memory columns.
double write_to_read_mass(const RegionSummary& summary);
/// Mean mass from write-memory rows into the current trajectory columns.
double write_to_trajectory_mass(const RegionSummary& summary);

// Exports. Values are printed with 17 significant digits so a CSV
// round-trip reproduces the doubles exactly.
void export_records_csv(const std::vector<AttentionRecord>& records,
                        const std::string& path);
std::vector<AttentionRecord> import_records_csv(const std::string& path);
void export_records_json(const std::vector<AttentionRecord>& records,
                         const std::string& path);
void export_summaries_csv(const std::vector<RegionSummary>& summaries,
                          const std::string& path);
/// One plain-ASCII grayscale PGM per record (pixel = weight scaled by the
/// matrix max) plus a sidecar `legend.txt` recording the scaling and the
/// region labels. Returns the written image paths.
std::vector<std::string> export_heatmaps_pgm(
    const std::vector<AttentionRecord>& records, const std::string& dir);

}  // namespace rmdt
