// SPDX-License-Identifier: Apache-2.0
#include "rmdt/mask.hpp"

#include <stdexcept>

namespace rmdt {

std::string arch_mode_name(ArchMode mode) {
  switch (mode) {
    case ArchMode::dt: return "dt";
    case ArchMode::dt_xl: return "dt_xl";
    case ArchMode::rmdt: return "rmdt";
  }
  throw std::runtime_error("arch_mode_name: bad mode");
}

ArchMode arch_mode_from_name(const std::string& name) {
  if (name == "dt") return ArchMode::dt;
  if (name == "dt_xl") return ArchMode::dt_xl;
  if (name == "rmdt") return ArchMode::rmdt;
  throw std::runtime_error("unknown architecture mode: " + name);
}

int sequence_length(ArchMode mode, int frames, int mem_tokens) {
  int traj = 3 * frames;
  return mode == ArchMode::rmdt ? traj + 2 * mem_tokens : traj;
}

AttentionMask build_mask(ArchMode mode, int frames, int mem_tokens,
                         int cache_len, int valid_frames) {
  if (frames <= 0) throw std::runtime_error("build_mask: frames must be > 0");
  if (valid_frames < 1 || valid_frames > frames)
    throw std::runtime_error("build_mask: valid_frames out of range");
  if (mode != ArchMode::dt_xl && cache_len != 0)
    throw std::runtime_error("build_mask: cache only applies to dt_xl");
  int traj = 3 * frames;
  int valid_tokens = 3 * valid_frames;
  int mem = mode == ArchMode::rmdt ? mem_tokens : 0;

  AttentionMask mask;
  mask.rows = 2 * mem + traj;
  mask.cols = cache_len + mask.rows;
  mask.allowed.assign(static_cast<size_t>(mask.rows) * mask.cols, 0);

  auto allow = [&](int r, int c) {
    mask.allowed[static_cast<size_t>(r) * mask.cols + c] = 1;
  };
  // Column index of segment token i (rows and columns differ by the cache).
  auto col_of = [&](int i) { return cache_len + i; };
  auto is_padding = [&](int i) {
    return i >= mem && i < mem + traj && (i - mem) >= valid_tokens;
  };

  for (int r = 0; r < mask.rows; ++r) {
    if (is_padding(r)) {
      allow(r, col_of(r));
      continue;
    }
    for (int c = 0; c < cache_len; ++c) allow(r, c);
    bool read_row = r < mem;
    bool write_row = r >= mem + traj;
    for (int i = 0; i < mask.rows; ++i) {
      if (is_padding(i)) continue;
      bool read_col = i < mem;
      bool write_col = i >= mem + traj;
      bool ok;
      if (read_col) {
        ok = true;
      } else if (read_row) {
        ok = false;  // read rows stay inside the read block
      } else if (write_row) {
        ok = true;
      } else if (write_col) {
        ok = false;  // write columns are visible only to write rows
      } else {
        ok = i <= r;  // causal within the trajectory
      }
      if (ok) allow(r, col_of(i));
    }
  }
  return mask;
}

std::string token_kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::read_mem: return "read_mem";
    case TokenKind::ret: return "return";
    case TokenKind::obs: return "observation";
    case TokenKind::act: return "action";
    case TokenKind::write_mem: return "write_mem";
  }
  throw std::runtime_error("token_kind_name: bad kind");
}

TokenKind token_kind(ArchMode mode, int frames, int mem_tokens, int index) {
  int mem = mode == ArchMode::rmdt ? mem_tokens : 0;
  int traj = 3 * frames;
  if (index < 0 || index >= 2 * mem + traj)
    throw std::runtime_error("token_kind: index out of range");
  if (index < mem) return TokenKind::read_mem;
  if (index >= mem + traj) return TokenKind::write_mem;
  switch ((index - mem) % 3) {
    case 0: return TokenKind::ret;
    case 1: return TokenKind::obs;
    default: return TokenKind::act;
  }
}

int token_frame(ArchMode mode, int frames, int mem_tokens, int index) {
  int mem = mode == ArchMode::rmdt ? mem_tokens : 0;
  int traj = 3 * frames;
  if (index < mem || index >= mem + traj) return -1;
  return (index - mem) / 3;
}

}  // namespace rmdt
