#ifndef KPU_CORE_H_
#define KPU_CORE_H_

#include <array>
#include <cstdint>
#include <map>
#include <optional>

#include "kpu/codec.h"
#include "kpu/image.h"
#include "kpu/isa.h"
#include "kpu/memsys.h"

namespace kpu {

namespace spr {
inline constexpr uint32_t kSr = 17;
inline constexpr uint32_t kConfig = 20;
inline constexpr uint32_t kEpcr = 32;
}  // namespace spr

namespace sr {
inline constexpr uint64_t kSm = 1u << 0;
inline constexpr uint64_t kF = 1u << 9;
inline constexpr uint64_t kCy = 1u << 10;
inline constexpr uint64_t kOv = 1u << 11;
inline constexpr uint64_t kUserFlags = kF | kCy | kOv;
}  // namespace sr

// Value of the read-only CONFIG register ("KPU1").
inline constexpr uint64_t kConfigId = 0x4B505531;

enum class ExceptionCause { kReset, kIllegal, kSyscall };

uint32_t exception_vector(ExceptionCause cause);

// Condition flags as produced by one operation. Unset optionals leave the
// corresponding SR bit unchanged.
struct FlagUpdate {
  std::optional<bool> f;
  std::optional<bool> cy;
  std::optional<bool> ov;

  bool empty() const { return !f && !cy && !ov; }
  uint64_t apply(uint64_t sr) const;
};

// 32-bit ALU used by both modes. `b` is the second register operand or the
// (sign- or zero-extended) immediate.
struct AluResult {
  uint32_t value = 0;
  FlagUpdate flags;
};
AluResult alu32(Op op, uint32_t a, uint32_t b);
bool alu_writes_flags(Op op);
unsigned pad_op_for(Op op);

// Architectural state. Real registers hold at-rest values (ciphertext or
// zero-filled program addresses); shadow registers hold the plain form and
// exist only for user mode.
class MachineState {
 public:
  explicit MachineState(const MemoryConfig& mem = {});

  // Loads the image and applies the reset state. `seed` supplies the padding
  // of the initial user registers when the image starts in user mode.
  void reset(const Image& img, const Codec& codec, uint64_t seed);

  Mode mode() const { return mode_; }
  uint32_t pc() const { return pc_; }
  void set_pc(uint32_t pc) { pc_ = pc; }

  // User mode: shadow (plain form). Supervisor: real register.
  uint64_t read_operand(int idx) const;
  void write_register(int idx, uint64_t v);

  uint64_t real(int idx) const { return idx == 0 ? 0 : gpr_[idx]; }
  void set_real(int idx, uint64_t v) {
    if (idx != 0) gpr_[idx] = v;
  }
  bool shadow_dirty(int idx) const { return dirty_[idx]; }

  uint64_t read_spr(uint32_t idx) const;
  void write_spr(uint32_t idx, uint64_t v);
  uint64_t sr() const { return sr_; }
  void set_flags(const FlagUpdate& f) { sr_ = f.apply(sr_); }
  bool flag() const { return (sr_ & sr::kF) != 0; }

  // Every dirty shadow register is sealed into its real register.
  void flush_shadows(const Codec& codec);

  void enter_exception(ExceptionCause cause, uint32_t return_pc, const Codec& codec);
  // Throws IllegalOpcode in user mode.
  void rfe(const Codec& codec);

  MemorySystem& memory() { return mem_; }
  const MemorySystem& memory() const { return mem_; }

  // Instrumentation: shadow accesses so far, and accesses attempted outside
  // user mode (always zero unless containment is broken).
  uint64_t shadow_accesses() const { return shadow_accesses_; }

  // Hidden saved status, reachable only from tests and the comparator.
  uint64_t hidden_esr_for_test() const { return hidden_esr_; }

 private:
  uint64_t shadow_read(int idx) const;

  Mode mode_ = Mode::kSupervisor;
  uint32_t pc_ = 0;
  std::array<uint64_t, kNumGprs> gpr_{};
  std::array<uint64_t, kNumGprs> shadow_{};
  std::array<bool, kNumGprs> dirty_{};
  uint64_t sr_ = sr::kSm;
  uint64_t epcr_ = 0;
  uint64_t hidden_esr_ = 0;
  std::map<uint32_t, uint64_t> other_sprs_;
  MemorySystem mem_;
  mutable uint64_t shadow_accesses_ = 0;
};

}  // namespace kpu

#endif  // KPU_CORE_H_
