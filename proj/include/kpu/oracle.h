#ifndef KPU_ORACLE_H_
#define KPU_ORACLE_H_

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kpu/codec.h"
#include "kpu/core.h"
#include "kpu/image.h"
#include "kpu/isa.h"

namespace kpu {

struct OracleLimits {
  uint64_t max_steps = 1'000'000;
  uint64_t supervisor_bytes = 1u << 20;
};

// Architectural state of the plain sequential machine.
struct OracleState {
  Mode mode = Mode::kSupervisor;
  uint32_t pc = 0;
  std::array<uint32_t, kNumGprs> regs{};
  // Whether a register currently holds a program address (set by linkage
  // and by supervisor writes, which user mode sees unencrypted).
  std::array<bool, kNumGprs> is_address{};
  uint64_t sr = sr::kSm;
  uint64_t epcr = 0;
  uint64_t esr = 0;
  std::map<uint32_t, uint64_t> other_sprs;
  std::map<uint32_t, uint32_t> memory;          // user data by 32-bit address
  std::map<uint32_t, bool> memory_is_address;
  std::map<uint64_t, uint64_t> supervisor_memory;  // raw cells by byte address
  std::vector<uint32_t> output;
  uint64_t steps = 0;
  bool exited = false;

  bool flag_f() const { return (sr & sr::kF) != 0; }
  bool flag_cy() const { return (sr & sr::kCy) != 0; }
  bool flag_ov() const { return (sr & sr::kOv) != 0; }
};

// Sequential interpreter over 32-bit values. Prefixes merge into the
// following immediate instruction and are not counted as steps; the key is
// used only to decrypt those immediates. Halts on l.nop 1.
// Throws MaxStepsExceeded, ProgramFault (unmapped fetch, bad supervisor
// access).
OracleState interpret(const Image& img, const Codec& codec, const OracleLimits& limits = {});

// "REG i hex8" lines, flags, then "MEM addr hex8" sorted by address.
std::string format_oracle_state(const OracleState& s);

// Parsed form of the simulator's state dump.
struct StateDump {
  Mode mode = Mode::kSupervisor;
  uint32_t pc = 0;
  uint64_t sr = 0;
  std::array<uint64_t, kNumGprs> gpr{};
  std::map<uint64_t, uint64_t> phys;
  std::vector<std::pair<uint64_t, uint64_t>> tlb;  // cipher address, index
};
StateDump parse_state_dump(std::string_view text);  // throws FormatError

struct CompareReport {
  std::vector<std::string> mismatches;
  uint32_t registers_checked = 0;
  uint32_t memory_checked = 0;

  bool ok() const { return mismatches.empty(); }
};

// Decrypts the dump with the key and checks it against the oracle: every
// GPR, the user flags, and every written user TLB entry. Throws
// AliasDetected when two entries hold one logical address with different
// values.
CompareReport compare(const StateDump& dump, const Codec& codec, const OracleState& oracle);

}  // namespace kpu

#endif  // KPU_ORACLE_H_
