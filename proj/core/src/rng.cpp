// SPDX-License-Identifier: Apache-2.0
#include "rmdt/rng.hpp"

#include <cmath>
#include <sstream>

#include "rmdt/errors.hpp"

namespace rmdt {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (lo > hi) throw UsageError("uniform_int: lo > hi");
  uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<int64_t>(gen_());  // full 64-bit span
  uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  uint64_t draw;
  do {
    draw = gen_();
  } while (draw >= limit);
  return lo + static_cast<int64_t>(draw % range);
}

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + spare_ * stddev;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  double radius = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = radius * std::sin(theta);
  has_spare_ = true;
  return mean + radius * std::cos(theta) * stddev;
}

Rng Rng::split(uint64_t stream_id) const {
  return Rng(derive_seed(seed_, stream_id));
}

uint64_t derive_seed(uint64_t base, uint64_t stream_id) {
  return splitmix64(base ^ splitmix64(stream_id + 0x51ed2701a32cull));
}

std::string Rng::save_state() const {
  std::ostringstream out;
  out << seed_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
  out.precision(17);
  out << spare_ << ' ' << gen_;
  return out.str();
}

void Rng::load_state(const std::string& state) {
  std::istringstream in(state);
  int has_spare = 0;
  in >> seed_ >> has_spare >> spare_ >> gen_;
  if (!in) throw DataError("Rng::load_state: malformed state string");
  has_spare_ = has_spare != 0;
}

}  // namespace rmdt
