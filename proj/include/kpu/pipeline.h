#ifndef KPU_PIPELINE_H_
#define KPU_PIPELINE_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kpu/codec.h"
#include "kpu/core.h"
#include "kpu/image.h"
#include "kpu/isa.h"
#include "kpu/memsys.h"
#include "kpu/stats.h"

namespace kpu {

enum class StageKind : uint8_t { kFetch, kDecode, kRead, kExecute, kMemory, kCodec, kWrite };

struct Stage {
  StageKind kind;
  int codec_index = 0;  // 0..9 for kCodec

  std::string name() const;
  friend bool operator==(const Stage&, const Stage&) = default;
};

enum class PlanKind : uint8_t { kShort, kA, kB };

// Ordered stage list an instruction traverses.
class PipelinePlan {
 public:
  static const PipelinePlan& get(PlanKind kind);

  PlanKind kind() const { return kind_; }
  int depth() const { return static_cast<int>(stages_.size()); }
  const Stage& at(int pos) const { return stages_[pos]; }
  int position_of(StageKind k) const;
  const std::vector<Stage>& stages() const { return stages_; }

 private:
  PipelinePlan(PlanKind kind, std::vector<Stage> stages)
      : kind_(kind), stages_(std::move(stages)) {}
  PlanKind kind_;
  std::vector<Stage> stages_;
};

inline constexpr int kShortDepth = 5;
inline constexpr int kLongDepth = 16;

// Supervisor: short pipeline. User: B for immediates (whose encrypted datum
// is decrypted before read), A for everything else.
PipelinePlan const& select_config(const Instruction& instr, Mode mode);

// 24 + 24 + 16 bit concatenation of an encrypted immediate.
constexpr uint64_t join_immediate(uint32_t prefix0, uint32_t prefix1, uint16_t imm16) {
  return (uint64_t{prefix0 & 0xFFFFFF} << 40) | (uint64_t{prefix1 & 0xFFFFFF} << 16) | imm16;
}

// Holds the payloads of the two prefixes preceding a user-mode immediate.
class PrefixLatch {
 public:
  void push(const Instruction& prefix);
  // Throws MissingPrefix unless prefix 0 then prefix 1 were pushed. The
  // latch is empty afterwards either way.
  uint64_t consume(uint16_t imm16);
  void clear() { state_ = 0; }
  bool full() const { return state_ == 2; }

 private:
  int state_ = 0;  // 0 empty, 1 have idx0, 2 have idx0+idx1
  uint32_t p0_ = 0;
  uint32_t p1_ = 0;
};

// Direct-mapped branch prediction buffer indexed by pc bits above the word
// offset (pc[7:2] for 64 entries).
class BranchPredictionBuffer {
 public:
  explicit BranchPredictionBuffer(uint32_t entries = 64);

  struct Prediction {
    bool hit = false;
    bool taken = false;
    uint32_t target = 0;
  };
  Prediction lookup(uint32_t pc) const;
  void update(uint32_t pc, bool taken, uint32_t target);
  uint32_t entries() const { return static_cast<uint32_t>(table_.size()); }
  uint32_t index_of(uint32_t pc) const { return (pc >> 2) & (entries() - 1); }

 private:
  struct Entry {
    bool valid = false;
    uint32_t tag = 0;
    uint32_t target = 0;
    bool taken = false;
  };
  std::vector<Entry> table_;
};

struct EngineConfig {
  MemoryConfig memory;
  uint32_t bpb_entries = 64;
  uint64_t max_cycles = 10'000'000;
  uint64_t seed = 0;
  bool trace = false;
  bool keep_retired_log = false;
};

enum class RunOutcome { kExited, kMaxCycles, kFault };

// One committed instruction (kept only with keep_retired_log).
struct RetiredRecord {
  uint64_t seq;
  uint32_t pc;
  Instruction instr;
  Mode mode;
  uint64_t fetch_cycle;
  uint64_t commit_cycle;
  uint64_t stall_cycles;  // cycles spent waiting in read for operands
  bool cache_hit;
};

// Cycle-level engine. One block per codec stage, lockstep advance, stalls
// freeze the stalled slot and everything younger.
class Engine {
 public:
  Engine(const Image& img, const Codec& codec, const EngineConfig& cfg = {});
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // Advances one cycle. Returns false once the run has finished.
  bool step();
  RunOutcome run();

  bool finished() const;
  RunOutcome outcome() const;
  const std::string& fault_message() const;

  const MachineState& state() const;
  MachineState& mutable_state();
  const CycleStats& stats() const;
  const BranchPredictionBuffer& bpb() const;
  const std::vector<uint32_t>& debug_output() const;
  const std::vector<std::string>& trace() const;
  const std::vector<RetiredRecord>& retired() const;
  uint64_t cycle() const;

  // Instrumentation counters.
  uint64_t forwards() const;
  uint64_t cross_mode_forwards() const;
  uint64_t codec_checks() const;

  // Called for every l.nop 2 at commit.
  void set_output_sink(std::function<void(uint32_t)> sink);

 private:
  class Impl;
  std::unique_ptr<Impl> impl_;
};

struct RunResult {
  RunOutcome outcome = RunOutcome::kExited;
  std::string message;
  MachineState state;
  CycleStats stats;
  std::vector<uint32_t> output;
  std::vector<std::string> trace;

  // Throws MaxCyclesExceeded or ProgramFault for unsuccessful runs.
  const RunResult& check() const;
};

RunResult run(const Image& img, const Codec& codec, const EngineConfig& cfg = {});

// Final architectural state and memory in the dump format:
//   KPUDUMP 1 / MODE / PC / SR / GPR <i> <hex16> / PHYS ... / TLBMAP ...
// Dirty shadows are sealed into the real registers first.
std::string write_state_dump(MachineState& state, const Codec& codec);

}  // namespace kpu

#endif  // KPU_PIPELINE_H_
