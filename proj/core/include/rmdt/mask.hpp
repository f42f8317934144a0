// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rmdt {

enum class ArchMode { dt, dt_xl, rmdt };

std::string arch_mode_name(ArchMode mode);
ArchMode arch_mode_from_name(const std::string& name);

/// Boolean attention mask; allowed.at(r * cols + c) != 0 means row r may
/// attend to column c. Rows always index the current segment's tokens;
/// columns may additionally cover a cached prefix (dt_xl).
struct AttentionMask {
  int rows = 0;
  int cols = 0;
  std::vector<uint8_t> allowed;

  bool at(int r, int c) const {
    return allowed[static_cast<size_t>(r) * cols + c] != 0;
  }
};

/// Token layout per segment: `frames` triplets of (return, observation,
/// action), bracketed in rmdt mode by `mem_tokens` read-memory tokens in
/// front and `mem_tokens` write-memory tokens behind.
///
///   rmdt:  [read | trajectory | write], square.
///     read columns are visible to every row; read rows see only the read
///     block; trajectory rows are causal; write rows see everything; write
///     columns are visible only to write rows.
///   dt:    plain causal over the trajectory. mem_tokens and cache ignored.
///   dt_xl: causal over the trajectory with `cache_len` prefix columns from
///          the previous segment visible to every row.
///
/// Frames at or beyond `valid_frames` are padding: their rows attend only
/// themselves and their columns are hidden from every other row.
AttentionMask build_mask(ArchMode mode, int frames, int mem_tokens,
                         int cache_len, int valid_frames);

inline AttentionMask build_mask(ArchMode mode, int frames, int mem_tokens) {
  return build_mask(mode, frames, mem_tokens, 0, frames);
}

/// Region of a token index within one segment's sequence (rmdt layout, or
/// plain trajectory for dt/dt_xl rows). Cache columns in dt_xl are labeled
/// separately by callers that deal with them.
enum class TokenKind { read_mem, ret, obs, act, write_mem };

std::string token_kind_name(TokenKind kind);

TokenKind token_kind(ArchMode mode, int frames, int mem_tokens, int index);

/// Frame number of a trajectory token, -1 for memory tokens.
int token_frame(ArchMode mode, int frames, int mem_tokens, int index);

int sequence_length(ArchMode mode, int frames, int mem_tokens);

}  // namespace rmdt
