// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include <doctest.h>

#include "rmdt/errors.hpp"
#include "rmdt/model.hpp"
#include "rmdt/rng.hpp"
#include "test_util.hpp"

using namespace rmdt;

namespace {

RmdtConfig small_config() {
  RmdtConfig cfg;
  cfg.mode = ArchMode::rmdt;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.hidden_dropout = 0.0;
  cfg.attn_dropout = 0.0;
  cfg.context_frames = 3;
  cfg.mem_tokens = 2;
  cfg.n_segments = 2;
  cfg.d_obs = 4;
  cfg.action.discrete = true;
  cfg.action.n_actions = 5;
  cfg.max_timestep = 32;
  cfg.init_stddev = 0.1;
  return cfg;
}

SegmentData make_segment(const RmdtConfig& cfg, int valid, Rng& rng,
                         int first_timestep = 0) {
  SegmentData seg;
  seg.frames = cfg.context_frames;
  seg.valid_frames = valid;
  for (int i = 0; i < seg.frames; ++i) {
    bool pad = i >= valid;
    seg.rtg.push_back(pad ? 0.0 : rng.uniform());
    for (int j = 0; j < cfg.d_obs; ++j)
      seg.obs.push_back(pad ? 0.0 : rng.normal());
    if (cfg.action.discrete) {
      seg.action_ids.push_back(
          pad ? cfg.action.n_actions
              : static_cast<int>(rng.uniform_int(0, cfg.action.n_actions - 1)));
    } else {
      for (int j = 0; j < cfg.action.d_action; ++j)
        seg.action_vecs.push_back(pad ? 0.0 : rng.normal());
    }
    seg.timesteps.push_back(first_timestep + i);
    seg.loss_weights.push_back(pad ? 0.0 : 1.0);
  }
  return seg;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("segment forward produces memory-bracketed shapes") {
  RmdtConfig cfg = small_config();
  RmdtModel model(cfg, 11);
  Rng rng(3);
  SegmentData seg = make_segment(cfg, 3, rng);

  SegmentForward out =
      model.forward_segment(seg, model.fresh_memory(true).vectors, {});
  CHECK(out.hidden.shape() == std::vector<int>{2 * 2 + 3 * 3, 8});
  CHECK(out.action_out.shape() == std::vector<int>{3, 5});
  CHECK(out.write_out.shape() == std::vector<int>{2, 8});

  RmdtConfig dt_cfg = cfg;
  dt_cfg.mode = ArchMode::dt;
  dt_cfg.mem_tokens = 0;
  dt_cfg.use_memory = false;
  RmdtModel dt(dt_cfg, 11);
  SegmentForward dt_out = dt.forward_segment(seg, Tensor(), {});
  CHECK(dt_out.hidden.shape() == std::vector<int>{9, 8});
  CHECK(dt_out.action_out.shape() == std::vector<int>{3, 5});
  CHECK_FALSE(dt_out.write_out.defined());
}

TEST_CASE("later frames cannot influence earlier action outputs") {
  RmdtConfig cfg = small_config();
  RmdtModel model(cfg, 19);
  Rng rng(5);
  SegmentData seg = make_segment(cfg, 3, rng);
  Tensor mem = model.fresh_memory(true).vectors;

  SegmentForward base = model.forward_segment(seg, mem, {});

  SegmentData poked = seg;
  for (int j = 0; j < cfg.d_obs; ++j) poked.obs[2 * cfg.d_obs + j] += 3.0;
  poked.rtg[2] += 1.0;
  poked.action_ids[2] = (seg.action_ids[2] + 1) % cfg.action.n_actions;
  SegmentForward after = model.forward_segment(poked, mem, {});

  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 5; ++c)
      CHECK(after.action_out.at(r * 5 + c) == base.action_out.at(r * 5 + c));
  bool last_changed = false;
  for (int c = 0; c < 5; ++c)
    if (after.action_out.at(2 * 5 + c) != base.action_out.at(2 * 5 + c))
      last_changed = true;
  CHECK(last_changed);

  // Write slots see everything, so the perturbation must reach them.
  bool write_changed = false;
  for (size_t i = 0; i < base.write_out.data().size(); ++i)
    if (after.write_out.at(i) != base.write_out.at(i)) write_changed = true;
  CHECK(write_changed);
}

TEST_CASE("padding frames are invisible to valid tokens") {
  RmdtConfig cfg = small_config();
  RmdtModel model(cfg, 23);
  Rng rng(7);
  SegmentData seg = make_segment(cfg, 2, rng);
  Tensor mem = model.fresh_memory(true).vectors;

  SegmentForward base = model.forward_segment(seg, mem, {});
  SegmentData poked = seg;
  for (int j = 0; j < cfg.d_obs; ++j) poked.obs[2 * cfg.d_obs + j] = 50.0;
  poked.rtg[2] = -9.0;
  SegmentForward after = model.forward_segment(poked, mem, {});

  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 5; ++c)
      CHECK(after.action_out.at(r * 5 + c) == base.action_out.at(r * 5 + c));
  for (size_t i = 0; i < base.write_out.data().size(); ++i)
    CHECK(after.write_out.at(i) == base.write_out.at(i));
}

TEST_CASE("fresh memory carries the initial-memory parameter") {
  RmdtModel model(small_config(), 29);
  MemoryState train_mem = model.fresh_memory(false);
  CHECK(train_mem.vectors.node() == model.initial_memory().node());

  MemoryState eval_mem = model.fresh_memory(true);
  CHECK_FALSE(eval_mem.vectors.requires_grad());
  for (size_t i = 0; i < eval_mem.vectors.data().size(); ++i)
    CHECK(eval_mem.vectors.at(i) == model.initial_memory().at(i));
}

TEST_CASE("advance_memory hands off detached write outputs") {
  RmdtConfig cfg = small_config();
  RmdtModel model(cfg, 31);
  Rng rng(9);
  SegmentData seg = make_segment(cfg, 3, rng);
  MemoryState mem = model.fresh_memory(true);
  SegmentForward fwd = model.forward_segment(seg, mem.vectors, {});

  MemoryState next = model.advance_memory(mem, fwd.write_out);
  CHECK(next.segment_index == 1);
  CHECK_FALSE(next.fixed);
  CHECK_FALSE(next.vectors.requires_grad());
  for (size_t i = 0; i < next.vectors.data().size(); ++i)
    CHECK(next.vectors.at(i) == fwd.write_out.at(i));
}

TEST_CASE("severed passing always reads the initial memory") {
  RmdtConfig cfg = small_config();
  cfg.memory_passing = false;
  RmdtModel model(cfg, 31);
  Rng rng(9);
  SegmentData seg = make_segment(cfg, 3, rng);
  MemoryState mem = model.fresh_memory(true);
  SegmentForward fwd = model.forward_segment(seg, mem.vectors, {});

  MemoryState next = model.advance_memory(mem, fwd.write_out);
  CHECK(next.segment_index == 1);
  for (size_t i = 0; i < next.vectors.data().size(); ++i)
    CHECK(next.vectors.at(i) == model.initial_memory().at(i));
}

TEST_CASE("fixation freezes memory after the first update") {
  RmdtConfig cfg = small_config();
  cfg.memory_fixation = true;
  RmdtModel model(cfg, 37);
  Rng rng(13);
  MemoryState mem = model.fresh_memory(true);

  SegmentData seg1 = make_segment(cfg, 3, rng, 0);
  SegmentForward f1 = model.forward_segment(seg1, mem.vectors, {});
  MemoryState m1 = model.advance_memory(mem, f1.write_out);
  CHECK_FALSE(m1.fixed);
  for (size_t i = 0; i < m1.vectors.data().size(); ++i)
    CHECK(m1.vectors.at(i) == f1.write_out.at(i));

  SegmentData seg2 = make_segment(cfg, 3, rng, 3);
  SegmentForward f2 = model.forward_segment(seg2, m1.vectors, {});
  MemoryState m2 = model.advance_memory(m1, f2.write_out);
  CHECK(m2.fixed);
  CHECK(m2.segment_index == 2);
  for (size_t i = 0; i < m2.vectors.data().size(); ++i)
    CHECK(m2.vectors.at(i) == m1.vectors.at(i));

  // Still frozen on the next handoff.
  SegmentData seg3 = make_segment(cfg, 3, rng, 6);
  SegmentForward f3 = model.forward_segment(seg3, m2.vectors, {});
  MemoryState m3 = model.advance_memory(m2, f3.write_out);
  CHECK(m3.fixed);
  for (size_t i = 0; i < m3.vectors.data().size(); ++i)
    CHECK(m3.vectors.at(i) == m1.vectors.at(i));
}

TEST_CASE("memory handoff changes the next segment's outputs") {
  RmdtConfig cfg = small_config();
  RmdtModel model(cfg, 41);
  Rng rng(15);
  SegmentData seg1 = make_segment(cfg, 3, rng, 0);
  SegmentData seg2 = make_segment(cfg, 3, rng, 3);

  MemoryState mem = model.fresh_memory(true);
  SegmentForward f1 = model.forward_segment(seg1, mem.vectors, {});
  MemoryState passed = model.advance_memory(mem, f1.write_out);
  SegmentForward with_memory = model.forward_segment(seg2, passed.vectors, {});
  SegmentForward without = model.forward_segment(seg2, mem.vectors, {});

  bool differs = false;
  for (size_t i = 0; i < with_memory.action_out.data().size(); ++i)
    if (with_memory.action_out.at(i) != without.action_out.at(i))
      differs = true;
  CHECK(differs);
}

TEST_CASE("segment loss weights rows and skips padding") {
  RmdtConfig cfg = small_config();
  RmdtModel model(cfg, 43);
  Rng rng(17);
  SegmentData seg = make_segment(cfg, 2, rng);
  Tensor mem = model.fresh_memory(true).vectors;
  SegmentForward fwd = model.forward_segment(seg, mem, {});

  Tensor loss = model.segment_loss(fwd, seg);
  double expected = 0.0;
  for (int r = 0; r < 2; ++r) {
    double mx = fwd.action_out.at(r * 5);
    for (int c = 1; c < 5; ++c) mx = std::max(mx, fwd.action_out.at(r * 5 + c));
    double sum = 0.0;
    for (int c = 0; c < 5; ++c)
      sum += std::exp(fwd.action_out.at(r * 5 + c) - mx);
    expected +=
        -(fwd.action_out.at(r * 5 + seg.action_ids[r]) - mx - std::log(sum));
  }
  expected /= 2.0;
  CHECK(loss.scalar() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("continuous action spaces use mean squared error") {
  RmdtConfig cfg = small_config();
  cfg.action.discrete = false;
  cfg.action.n_actions = 0;
  cfg.action.d_action = 2;
  RmdtModel model(cfg, 47);
  Rng rng(19);
  SegmentData seg = make_segment(cfg, 3, rng);
  Tensor mem = model.fresh_memory(true).vectors;

  SegmentForward fwd = model.forward_segment(seg, mem, {});
  CHECK(fwd.action_out.shape() == std::vector<int>{3, 2});

  Tensor loss = model.segment_loss(fwd, seg);
  double expected = 0.0;
  for (int r = 0; r < 3; ++r) {
    double row = 0.0;
    for (int c = 0; c < 2; ++c) {
      double d = fwd.action_out.at(r * 2 + c) - seg.action_vecs[r * 2 + c];
      row += d * d;
    }
    expected += row / 2.0;
  }
  expected /= 3.0;
  CHECK(loss.scalar() == doctest::Approx(expected).epsilon(1e-12));

  std::vector<double> vec = model.predict_action_vec(fwd.action_out, 1);
  REQUIRE(vec.size() == 2);
  CHECK(vec[0] == fwd.action_out.at(2));
  CHECK(vec[1] == fwd.action_out.at(3));
}

TEST_CASE("greedy decode takes the lowest-index argmax") {
  RmdtConfig cfg = small_config();
  RmdtModel model(cfg, 53);
  Tensor logits = Tensor::from_data({2, 5}, {0.0, 3.0, 3.0, -1.0, 2.0,  //
                                             5.0, 4.0, 5.0, 5.0, 1.0});
  CHECK(model.predict_action_id(logits, 0) == 1);
  CHECK(model.predict_action_id(logits, 1) == 0);
}

TEST_CASE("model gradients match finite differences") {
  RmdtConfig cfg = small_config();
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.context_frames = 2;
  cfg.mem_tokens = 1;
  cfg.d_obs = 2;
  cfg.action.n_actions = 3;
  RmdtModel model(cfg, 59);
  Rng rng(21);
  SegmentData seg = make_segment(cfg, 2, rng);

  backward(model.segment_loss(
      model.forward_segment(seg, model.fresh_memory(false).vectors, {}), seg));

  auto loss_at = [&](const std::string& name, const std::vector<double>& x) {
    NoGradGuard guard;
    std::vector<double> keep;
    for (auto& [n, p] : model.named_parameters())
      if (n == name) {
        keep = p.data();
        p.data() = x;
      }
    double value = model
                       .segment_loss(model.forward_segment(
                                         seg, model.fresh_memory(false).vectors,
                                         {}),
                                     seg)
                       .scalar();
    for (auto& [n, p] : model.named_parameters())
      if (n == name) p.data() = keep;
    return value;
  };

  for (const char* name : {"enc.obs.w", "mem.init", "head.w", "emb.time"}) {
    Tensor param;
    for (auto& [n, p] : model.named_parameters())
      if (n == name) param = p;
    REQUIRE(param.defined());
    auto fd = testutil::finite_diff(param.data(),
                                    [&](const std::vector<double>& x) {
                                      return loss_at(name, x);
                                    });
    INFO("parameter ", name);
    CHECK(testutil::max_rel_error(param.grad(), fd) < 1e-6);
  }
}

TEST_CASE("parameter order is stable and complete") {
  RmdtConfig cfg = small_config();
  RmdtModel model(cfg, 61);
  auto params = model.named_parameters();
  REQUIRE(params.size() > 4);
  CHECK(params.front().first == "enc.ret.w");
  CHECK(params.back().first == "head.b");

  bool has_mem = false;
  size_t total = 0;
  for (const auto& [name, p] : params) {
    if (name == "mem.init") has_mem = true;
    total += p.numel();
  }
  CHECK(has_mem);
  CHECK(total == model.parameter_count());

  RmdtConfig plain = cfg;
  plain.write_prompt = true;
  plain.mem_positional = true;
  RmdtModel extras(plain, 61);
  bool has_prompt = false, has_pos = false;
  for (const auto& [name, p] : extras.named_parameters()) {
    if (name == "mem.write_prompt") {
      has_prompt = true;
      CHECK(p.shape() == std::vector<int>{2, 8});
    }
    if (name == "mem.pos") {
      has_pos = true;
      CHECK(p.shape() == std::vector<int>{4, 8});
    }
  }
  CHECK(has_prompt);
  CHECK(has_pos);
}

TEST_CASE("memory-free draws match across modes seed for seed") {
  RmdtConfig rmdt_cfg = small_config();
  rmdt_cfg.use_memory = false;
  rmdt_cfg.mem_tokens = 0;
  RmdtConfig dt_cfg = small_config();
  dt_cfg.mode = ArchMode::dt;
  dt_cfg.mem_tokens = 0;
  dt_cfg.use_memory = false;

  RmdtModel a(rmdt_cfg, 67);
  RmdtModel b(dt_cfg, 67);
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    REQUIRE(pa[i].second.numel() == pb[i].second.numel());
    for (size_t j = 0; j < pa[i].second.data().size(); ++j)
      CHECK(pa[i].second.at(j) == pb[i].second.at(j));
  }
}

TEST_CASE("invalid segments are rejected") {
  RmdtConfig cfg = small_config();
  RmdtModel model(cfg, 71);
  Rng rng(23);
  Tensor mem = model.fresh_memory(true).vectors;

  SegmentData bad_time = make_segment(cfg, 3, rng);
  bad_time.timesteps[2] = cfg.max_timestep;
  CHECK_THROWS_AS(model.forward_segment(bad_time, mem, {}), UsageError);

  SegmentData bad_action = make_segment(cfg, 3, rng);
  bad_action.action_ids[0] = cfg.action.n_actions + 1;
  CHECK_THROWS_AS(model.forward_segment(bad_action, mem, {}),
                  std::runtime_error);

  SegmentData bad_mem = make_segment(cfg, 3, rng);
  CHECK_THROWS_AS(model.forward_segment(bad_mem, Tensor(), {}),
                  std::runtime_error);
}

TEST_CASE("row gathers and interleaves invert each other") {
  Tensor r = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor o = Tensor::from_data({2, 2}, {5.0, 6.0, 7.0, 8.0});
  Tensor a = Tensor::from_data({2, 2}, {9.0, 10.0, 11.0, 12.0});
  Tensor seq = interleave_rows({r, o, a});
  REQUIRE(seq.shape() == std::vector<int>{6, 2});
  CHECK(seq.at(0) == 1.0);
  CHECK(seq.at(2) == 5.0);
  CHECK(seq.at(4) == 9.0);
  CHECK(seq.at(6) == 3.0);

  Tensor obs_rows = gather_rows(seq, {1, 4});
  CHECK(obs_rows.at(0) == 5.0);
  CHECK(obs_rows.at(1) == 6.0);
  CHECK(obs_rows.at(2) == 9.0);

  // Gathering the same row twice accumulates its gradient twice.
  Tensor x = Tensor::from_data({2, 2}, {1.0, 1.0, 1.0, 1.0}, true);
  Tensor g = gather_rows(x, {0, 0, 1});
  Tensor ones_row = Tensor::full({1, 3}, 1.0);
  Tensor ones_col = Tensor::full({2, 1}, 1.0);
  backward(matmul(matmul(ones_row, g), ones_col));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
  CHECK(x.grad()[2] == 1.0);
  CHECK(x.grad()[3] == 1.0);
}

TEST_CASE("suffix return sums fold rewards from the back") {
  auto rtg = returns_to_go({1.0, 0.0, 2.0});
  REQUIRE(rtg.size() == 3);
  CHECK(rtg[0] == 3.0);
  CHECK(rtg[1] == 2.0);
  CHECK(rtg[2] == 2.0);
  CHECK_THROWS_AS(returns_to_go({}), UsageError);
}

}  // TEST_SUITE
