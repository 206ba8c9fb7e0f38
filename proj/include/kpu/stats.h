#ifndef KPU_STATS_H_
#define KPU_STATS_H_

#include <array>
#include <cstdint>

#include "kpu/image.h"
#include "kpu/isa.h"

namespace kpu {

// Cycle accounting for one processor mode. Every cycle attributed to the
// mode either completes exactly one instruction or is a wait state.
struct ModeStats {
  std::array<uint64_t, kNumClasses> by_class{};
  uint64_t cached_loads = 0;
  uint64_t cached_stores = 0;
  uint64_t stalls = 0;
  uint64_t refills = 0;

  uint64_t completed() const {
    uint64_t n = 0;
    for (uint64_t c : by_class) n += c;
    return n;
  }
  uint64_t waits() const { return stalls + refills; }
  uint64_t cycles() const { return completed() + waits(); }
  uint64_t count(InstrClass c) const { return by_class[static_cast<size_t>(c)]; }

  friend bool operator==(const ModeStats&, const ModeStats&) = default;
};

struct BpbStats {
  uint64_t hit_right = 0;
  uint64_t hit_wrong = 0;
  uint64_t miss_right = 0;
  uint64_t miss_wrong = 0;

  uint64_t hits() const { return hit_right + hit_wrong; }
  uint64_t misses() const { return miss_right + miss_wrong; }
  friend bool operator==(const BpbStats&, const BpbStats&) = default;
};

struct CacheStats {
  uint64_t read_hits = 0;
  uint64_t read_misses = 0;
  uint64_t write_hits = 0;
  uint64_t write_misses = 0;
  friend bool operator==(const CacheStats&, const CacheStats&) = default;
};

struct CycleStats {
  std::array<ModeStats, 2> modes{};
  uint64_t cycles = 0;
  uint64_t instructions = 0;
  BpbStats bpb;
  CacheStats user_cache;

  ModeStats& of(Mode m) { return modes[m == Mode::kUser ? 0 : 1]; }
  const ModeStats& of(Mode m) const { return modes[m == Mode::kUser ? 0 : 1]; }

  // Cycles per completed instruction in a mode (0 if none completed).
  double cpi(Mode m) const {
    const ModeStats& s = of(m);
    return s.completed() == 0 ? 0.0 : static_cast<double>(s.cycles()) / s.completed();
  }

  friend bool operator==(const CycleStats&, const CycleStats&) = default;
};

}  // namespace kpu

#endif  // KPU_STATS_H_
