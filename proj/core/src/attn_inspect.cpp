// SPDX-License-Identifier: Apache-2.0
#include "rmdt/attn_inspect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rmdt/errors.hpp"
#include "rmdt/io_util.hpp"
#include "rmdt/mask.hpp"

namespace rmdt {

namespace {

const char* kRegionNames[kRegionCount] = {"read-mem", "R",         "O",
                                          "A",        "write-mem", "xl-cache"};

TokenRegion region_from_kind(TokenKind kind) {
  switch (kind) {
    case TokenKind::read_mem: return TokenRegion::read_mem;
    case TokenKind::ret: return TokenRegion::ret;
    case TokenKind::obs: return TokenRegion::obs;
    case TokenKind::act: return TokenRegion::act;
    case TokenKind::write_mem: return TokenRegion::write_mem;
  }
  throw std::runtime_error("region_from_kind: bad kind");
}

TokenRegion region_from_name(const std::string& name) {
  for (int i = 0; i < kRegionCount; ++i)
    if (name == kRegionNames[i]) return static_cast<TokenRegion>(i);
  throw DataError("unknown region label: " + name);
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string region_name(TokenRegion region) {
  return kRegionNames[static_cast<int>(region)];
}

std::vector<AttentionRecord> annotate_capture(const AttentionCapture& capture,
                                              const RmdtConfig& config) {
  int per_pass = config.n_layers * config.n_heads;
  if (per_pass <= 0 || capture.entries.empty())
    throw UsageError("annotate_capture: empty capture");
  if (capture.entries.size() % per_pass != 0)
    throw DataError("annotate_capture: entry count not a whole pass");

  int mem = config.effective_mem_tokens();
  std::vector<AttentionRecord> records;
  records.reserve(capture.entries.size());
  for (size_t i = 0; i < capture.entries.size(); ++i) {
    const AttentionCapture::Entry& entry = capture.entries[i];
    AttentionRecord rec;
    rec.layer = entry.layer;
    rec.head = entry.head;
    rec.segment = static_cast<int>(i / per_pass);
    rec.rows = entry.rows;
    rec.cols = entry.cols;
    rec.weights = entry.probs;

    int frames = (entry.rows - 2 * mem) / 3;
    if (sequence_length(config.mode, frames, mem) != entry.rows)
      throw DataError("annotate_capture: row count does not match layout");
    int cache_len = entry.cols - entry.rows;
    if (cache_len < 0)
      throw DataError("annotate_capture: fewer columns than rows");

    rec.row_regions.resize(entry.rows);
    for (int r = 0; r < entry.rows; ++r)
      rec.row_regions[r] =
          region_from_kind(token_kind(config.mode, frames, mem, r));
    rec.col_regions.resize(entry.cols);
    for (int c = 0; c < entry.cols; ++c)
      rec.col_regions[c] =
          c < cache_len
              ? TokenRegion::xl_cache
              : region_from_kind(
                    token_kind(config.mode, frames, mem, c - cache_len));
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<AttentionRecord> capture_attention(
    const RmdtModel& model, const std::vector<SegmentData>& segments) {
  if (segments.empty()) throw UsageError("capture_attention: no segments");
  NoGradGuard no_grad;
  const RmdtConfig& config = model.config();
  AttentionCapture capture;
  MemoryState memory = model.fresh_memory(/*detached=*/true);
  XlCache cache;
  bool use_cache = config.mode == ArchMode::dt_xl;

  for (const SegmentData& segment : segments) {
    if (segment.valid_frames < 1)
      throw UsageError("capture_attention: segment without valid frames");
    ModelForwardOptions options;
    options.capture = &capture;
    if (use_cache) {
      options.cache = &cache;
      options.want_cache = true;
    }
    SegmentForward forward =
        model.forward_segment(segment, memory.vectors, options);
    memory = model.advance_memory(memory, forward.write_out);
    if (use_cache) cache = std::move(forward.new_cache);
  }
  return annotate_capture(capture, config);
}

std::vector<RegionSummary> summarize_regions(
    const std::vector<AttentionRecord>& records) {
  if (records.empty()) throw UsageError("summarize_regions: no records");
  std::vector<RegionSummary> out;
  out.reserve(records.size());
  for (const AttentionRecord& rec : records) {
    RegionSummary s;
    s.layer = rec.layer;
    s.head = rec.head;
    s.segment = rec.segment;
    for (int r = 0; r < rec.rows; ++r) {
      int x = static_cast<int>(rec.row_regions[r]);
      ++s.row_counts[x];
      for (int c = 0; c < rec.cols; ++c)
        s.mass[x][static_cast<int>(rec.col_regions[c])] += rec.weight(r, c);
    }
    for (int x = 0; x < kRegionCount; ++x)
      if (s.row_counts[x] > 0)
        for (int y = 0; y < kRegionCount; ++y) s.mass[x][y] /= s.row_counts[x];
    out.push_back(s);
  }
  return out;
}

double trajectory_to_read_mass(const RegionSummary& summary) {
  const int traj[3] = {static_cast<int>(TokenRegion::ret),
                       static_cast<int>(TokenRegion::obs),
                       static_cast<int>(TokenRegion::act)};
  int read = static_cast<int>(TokenRegion::read_mem);
  double mass = 0.0;
  int rows = 0;
  for (int x : traj) {
    mass += summary.mass[x][read] * summary.row_counts[x];
    rows += summary.row_counts[x];
  }
  if (rows == 0) throw UsageError("trajectory_to_read_mass: no trajectory rows");
  return mass / rows;
}

double write_to_read_mass(const RegionSummary& summary) {
  int w = static_cast<int>(TokenRegion::write_mem);
  if (summary.row_counts[w] == 0) return 0.0;
  return summary.mass[w][static_cast<int>(TokenRegion::read_mem)];
}

double write_to_trajectory_mass(const RegionSummary& summary) {
  int w = static_cast<int>(TokenRegion::write_mem);
  if (summary.row_counts[w] == 0) return 0.0;
  return summary.mass[w][static_cast<int>(TokenRegion::ret)] +
         summary.mass[w][static_cast<int>(TokenRegion::obs)] +
         summary.mass[w][static_cast<int>(TokenRegion::act)];
}

// ---------------------------------------------------------------------------
// Exports
// ---------------------------------------------------------------------------

void export_records_csv(const std::vector<AttentionRecord>& records,
                        const std::string& path) {
  std::ostringstream out;
  out << "layer,head,segment,row,col,row_region,col_region,weight\n";
  for (const AttentionRecord& rec : records)
    for (int r = 0; r < rec.rows; ++r)
      for (int c = 0; c < rec.cols; ++c)
        out << rec.layer << ',' << rec.head << ',' << rec.segment << ',' << r
            << ',' << c << ',' << region_name(rec.row_regions[r]) << ','
            << region_name(rec.col_regions[c]) << ','
            << format_g17(rec.weight(r, c)) << '\n';
  atomic_write_file(path, out.str());
}

std::vector<AttentionRecord> import_records_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) ||
      line != "layer,head,segment,row,col,row_region,col_region,weight")
    throw DataError("import_records_csv: bad header");

  std::vector<AttentionRecord> records;
  struct Cell {
    int row, col;
    TokenRegion row_region, col_region;
    double weight;
  };
  std::vector<Cell> cells;
  int cur_layer = 0, cur_head = 0, cur_segment = 0;
  bool open = false;

  auto flush = [&]() {
    if (!open) return;
    AttentionRecord rec;
    rec.layer = cur_layer;
    rec.head = cur_head;
    rec.segment = cur_segment;
    for (const Cell& cell : cells) {
      rec.rows = std::max(rec.rows, cell.row + 1);
      rec.cols = std::max(rec.cols, cell.col + 1);
    }
    rec.weights.assign(static_cast<size_t>(rec.rows) * rec.cols, 0.0);
    rec.row_regions.resize(rec.rows);
    rec.col_regions.resize(rec.cols);
    if (cells.size() != rec.weights.size())
      throw DataError("import_records_csv: incomplete matrix");
    for (const Cell& cell : cells) {
      rec.weights[static_cast<size_t>(cell.row) * rec.cols + cell.col] =
          cell.weight;
      rec.row_regions[cell.row] = cell.row_region;
      rec.col_regions[cell.col] = cell.col_region;
    }
    records.push_back(std::move(rec));
    cells.clear();
  };

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<std::string, 8> field;
    size_t pos = 0;
    for (int i = 0; i < 8; ++i) {
      size_t next = i == 7 ? line.size() : line.find(',', pos);
      if (next == std::string::npos)
        throw DataError("import_records_csv: short line");
      field[i] = line.substr(pos, next - pos);
      pos = next + 1;
    }
    int layer = std::stoi(field[0]);
    int head = std::stoi(field[1]);
    int segment = std::stoi(field[2]);
    if (!open || layer != cur_layer || head != cur_head ||
        segment != cur_segment) {
      flush();
      cur_layer = layer;
      cur_head = head;
      cur_segment = segment;
      open = true;
    }
    Cell cell;
    cell.row = std::stoi(field[3]);
    cell.col = std::stoi(field[4]);
    cell.row_region = region_from_name(field[5]);
    cell.col_region = region_from_name(field[6]);
    cell.weight = std::strtod(field[7].c_str(), nullptr);
    cells.push_back(cell);
  }
  flush();
  if (records.empty()) throw DataError("import_records_csv: no records");
  return records;
}

void export_records_json(const std::vector<AttentionRecord>& records,
                         const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const AttentionRecord& rec : records) {
    nlohmann::json j;
    j["layer"] = rec.layer;
    j["head"] = rec.head;
    j["segment"] = rec.segment;
    j["rows"] = rec.rows;
    j["cols"] = rec.cols;
    j["weights"] = rec.weights;
    nlohmann::json rr = nlohmann::json::array(), cr = nlohmann::json::array();
    for (TokenRegion r : rec.row_regions) rr.push_back(region_name(r));
    for (TokenRegion c : rec.col_regions) cr.push_back(region_name(c));
    j["row_regions"] = std::move(rr);
    j["col_regions"] = std::move(cr);
    arr.push_back(std::move(j));
  }
  atomic_write_file(path, arr.dump(2));
}

void export_summaries_csv(const std::vector<RegionSummary>& summaries,
                          const std::string& path) {
  std::ostringstream out;
  out << "layer,head,segment,from,to,row_count,mass\n";
  for (const RegionSummary& s : summaries)
    for (int x = 0; x < kRegionCount; ++x) {
      if (s.row_counts[x] == 0) continue;
      for (int y = 0; y < kRegionCount; ++y)
        out << s.layer << ',' << s.head << ',' << s.segment << ','
            << kRegionNames[x] << ',' << kRegionNames[y] << ','
            << s.row_counts[x] << ',' << format_g17(s.mass[x][y]) << '\n';
    }
  atomic_write_file(path, out.str());
}

std::vector<std::string> export_heatmaps_pgm(
    const std::vector<AttentionRecord>& records, const std::string& dir) {
  ensure_dir(dir);
  std::vector<std::string> paths;
  std::ostringstream legend;
  legend << "Linear grayscale, pixel = round(255 * weight / max_weight); "
            "max_weight is per matrix and listed below.\n";
  for (const AttentionRecord& rec : records) {
    std::ostringstream name;
    name << "attn_l" << rec.layer << "_h" << rec.head << "_s" << rec.segment
         << ".pgm";
    double mx = 0.0;
    for (double w : rec.weights) mx = std::max(mx, w);

    std::ostringstream img;
    img << "P2\n" << rec.cols << ' ' << rec.rows << "\n255\n";
    for (int r = 0; r < rec.rows; ++r) {
      for (int c = 0; c < rec.cols; ++c) {
        int v = mx > 0.0
                    ? static_cast<int>(std::lround(255.0 * rec.weight(r, c) / mx))
                    : 0;
        img << v << (c + 1 < rec.cols ? ' ' : '\n');
      }
    }
    std::string path = dir + "/" + name.str();
    atomic_write_file(path, img.str());
    paths.push_back(path);

    legend << name.str() << ": layer " << rec.layer << " head " << rec.head
           << " segment " << rec.segment << " rows " << rec.rows << " cols "
           << rec.cols << " max_weight " << format_g17(mx) << "\n  rows:";
    for (TokenRegion r : rec.row_regions) legend << ' ' << region_name(r);
    legend << "\n  cols:";
    for (TokenRegion c : rec.col_regions) legend << ' ' << region_name(c);
    legend << '\n';
  }
  atomic_write_file(dir + "/legend.txt", legend.str());
  return paths;
}

}  // namespace rmdt
