#ifndef KPU_FRONTEND_H_
#define KPU_FRONTEND_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kpu/codec.h"
#include "kpu/pipeline.h"
#include "kpu/stats.h"

namespace kpu {

struct RunConfig {
  std::string key_hex;
  std::string seed_hex = "0000000000000000";
  uint64_t max_cycles = 10'000'000;
  bool trace = false;
  std::optional<uint32_t> user_words;
  std::optional<uint32_t> cache_entries;
  std::optional<uint32_t> bpb_entries;
  std::string stats_path;  // empty: standard error

  // Throw ConfigError on a malformed key or seed.
  Codec codec() const;
  EngineConfig engine_config() const;
};

// Statistics report: class rows as percentages of all cycles per mode, wait
// states, totals, then the branch prediction and user data cache blocks.
std::string render_stats(const CycleStats& stats);

// The `kpu` command line. Returns the process exit code:
// 0 ok, 1 program fault or lint errors, 2 usage or format error, 3 mismatch.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kpu

#endif  // KPU_FRONTEND_H_
