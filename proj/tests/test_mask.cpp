// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "rmdt/mask.hpp"

using namespace rmdt;

TEST_SUITE("mask") {

TEST_CASE("dt single-frame mask is 3x3 lower-triangular") {
  AttentionMask mask = build_mask(ArchMode::dt, 1, 0);
  REQUIRE(mask.rows == 3);
  REQUIRE(mask.cols == 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(mask.at(r, c) == (c <= r));
}

TEST_CASE("rmdt K=1 M=1 mask matches the enumerated 5x5 layout") {
  AttentionMask mask = build_mask(ArchMode::rmdt, 1, 1);
  REQUIRE(mask.rows == 5);
  REQUIRE(mask.cols == 5);
  // [read | R O A | write]
  bool expected[5][5] = {
      {1, 0, 0, 0, 0},  // read row: read block only
      {1, 1, 0, 0, 0},  // R: causal plus read
      {1, 1, 1, 0, 0},  // O
      {1, 1, 1, 1, 0},  // A
      {1, 1, 1, 1, 1},  // write row: everything
  };
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      INFO("row ", r, " col ", c);
      CHECK(mask.at(r, c) == expected[r][c]);
    }
}

TEST_CASE("sequence length arithmetic") {
  CHECK(sequence_length(ArchMode::rmdt, 30, 15) == 120);
  CHECK(sequence_length(ArchMode::dt, 30, 15) == 90);
  CHECK(sequence_length(ArchMode::dt_xl, 30, 15) == 90);
}

TEST_CASE("rmdt mask block properties hold for larger shapes") {
  int K = 4, M = 3;
  AttentionMask mask = build_mask(ArchMode::rmdt, K, M);
  int T = 3 * K;
  REQUIRE(mask.rows == 2 * M + T);

  for (int r = 0; r < mask.rows; ++r)
    for (int c = 0; c < mask.cols; ++c) {
      bool read_row = r < M;
      bool write_row = r >= M + T;
      bool read_col = c < M;
      bool write_col = c >= M + T;
      bool allowed = mask.at(r, c);
      if (write_col) {
        CHECK(allowed == write_row);
      } else if (read_row) {
        CHECK(allowed == read_col);
      } else if (write_row) {
        CHECK(allowed);
      } else if (read_col) {
        CHECK(allowed);
      } else {
        CHECK(allowed == (c <= r));  // causal inside the trajectory
      }
    }
}

TEST_CASE("dt_xl cache prefix columns are visible to every row") {
  int K = 2, cache = 6;
  AttentionMask mask = build_mask(ArchMode::dt_xl, K, 0, cache, K);
  REQUIRE(mask.rows == 3 * K);
  REQUIRE(mask.cols == cache + 3 * K);
  for (int r = 0; r < mask.rows; ++r)
    for (int c = 0; c < mask.cols; ++c) {
      bool expected = c < cache ? true : (c - cache) <= r;
      CHECK(mask.at(r, c) == expected);
    }
}

TEST_CASE("padding frames attend only themselves and are hidden") {
  int K = 3, M = 2, valid = 2;
  AttentionMask mask = build_mask(ArchMode::rmdt, K, M, 0, valid);
  int pad_begin = M + 3 * valid;
  int pad_end = M + 3 * K;
  for (int r = 0; r < mask.rows; ++r)
    for (int c = 0; c < mask.cols; ++c) {
      bool row_pad = r >= pad_begin && r < pad_end;
      bool col_pad = c >= pad_begin && c < pad_end;
      if (row_pad) {
        CHECK(mask.at(r, c) == (r == c));
      } else if (col_pad) {
        CHECK_FALSE(mask.at(r, c));
      }
    }
  // Non-padding structure is unchanged elsewhere: write rows still see all
  // non-padding columns.
  int write_row = M + 3 * K;
  for (int c = 0; c < mask.cols; ++c) {
    bool col_pad = c >= pad_begin && c < pad_end;
    CHECK(mask.at(write_row, c) == !col_pad);
  }
}

TEST_CASE("every row can attend somewhere") {
  for (ArchMode mode : {ArchMode::dt, ArchMode::dt_xl, ArchMode::rmdt})
    for (int valid = 0; valid <= 3; ++valid) {
      AttentionMask mask = build_mask(mode, 3, 2, mode == ArchMode::dt_xl ? 4 : 0,
                                      valid);
      for (int r = 0; r < mask.rows; ++r) {
        int count = 0;
        for (int c = 0; c < mask.cols; ++c) count += mask.at(r, c);
        INFO("mode ", arch_mode_name(mode), " valid ", valid, " row ", r);
        CHECK(count > 0);
      }
    }
}

TEST_CASE("token kinds and frames follow the layout") {
  int K = 2, M = 2;
  CHECK(token_kind(ArchMode::rmdt, K, M, 0) == TokenKind::read_mem);
  CHECK(token_kind(ArchMode::rmdt, K, M, 1) == TokenKind::read_mem);
  CHECK(token_kind(ArchMode::rmdt, K, M, 2) == TokenKind::ret);
  CHECK(token_kind(ArchMode::rmdt, K, M, 3) == TokenKind::obs);
  CHECK(token_kind(ArchMode::rmdt, K, M, 4) == TokenKind::act);
  CHECK(token_kind(ArchMode::rmdt, K, M, 5) == TokenKind::ret);
  CHECK(token_kind(ArchMode::rmdt, K, M, 8) == TokenKind::write_mem);
  CHECK(token_kind(ArchMode::rmdt, K, M, 9) == TokenKind::write_mem);

  CHECK(token_frame(ArchMode::rmdt, K, M, 0) == -1);
  CHECK(token_frame(ArchMode::rmdt, K, M, 2) == 0);
  CHECK(token_frame(ArchMode::rmdt, K, M, 5) == 1);
  CHECK(token_frame(ArchMode::rmdt, K, M, 7) == 1);
  CHECK(token_frame(ArchMode::rmdt, K, M, 9) == -1);

  CHECK(token_kind(ArchMode::dt, K, 0, 0) == TokenKind::ret);
  CHECK(token_kind(ArchMode::dt, K, 0, 2) == TokenKind::act);
  CHECK(token_frame(ArchMode::dt, K, 0, 4) == 1);
}

TEST_CASE("mode names round-trip") {
  for (ArchMode mode : {ArchMode::dt, ArchMode::dt_xl, ArchMode::rmdt})
    CHECK(arch_mode_from_name(arch_mode_name(mode)) == mode);
}

}  // TEST_SUITE
