#include "kpu/core.h"

#include "kpu/error.h"

namespace kpu {
namespace {

// Ordinal space for reset-state register padding, disjoint from the small
// ordinals the assembler uses.
constexpr uint64_t kResetPadOrdinal = 0xFFFF'FFFF'0000'0000ull;

constexpr uint64_t kZeroShadow = uint64_t{kZeroRegisterPad} << 32;

}  // namespace

uint32_t exception_vector(ExceptionCause cause) {
  switch (cause) {
    case ExceptionCause::kReset: return 0x100;
    case ExceptionCause::kIllegal: return 0x700;
    case ExceptionCause::kSyscall: return 0xC00;
  }
  return 0x100;
}

uint64_t FlagUpdate::apply(uint64_t s) const {
  auto put = [&s](uint64_t bit, const std::optional<bool>& v) {
    if (v) s = *v ? (s | bit) : (s & ~bit);
  };
  put(sr::kF, f);
  put(sr::kCy, cy);
  put(sr::kOv, ov);
  return s;
}

AluResult alu32(Op op, uint32_t a, uint32_t b) {
  AluResult r;
  const auto sa = static_cast<int32_t>(a);
  const auto sb = static_cast<int32_t>(b);
  switch (op) {
    case Op::kAdd:
    case Op::kAddi: {
      const uint64_t wide = uint64_t{a} + b;
      r.value = static_cast<uint32_t>(wide);
      const int64_t swide = int64_t{sa} + sb;
      r.flags.cy = (wide >> 32) != 0;
      r.flags.ov = swide != static_cast<int32_t>(r.value);
      break;
    }
    case Op::kSub: {
      r.value = a - b;
      const int64_t swide = int64_t{sa} - sb;
      r.flags.cy = a < b;
      r.flags.ov = swide != static_cast<int32_t>(r.value);
      break;
    }
    case Op::kAnd:
    case Op::kAndi: r.value = a & b; break;
    case Op::kOr:
    case Op::kOri: r.value = a | b; break;
    case Op::kXor:
    case Op::kXori: r.value = a ^ b; break;
    case Op::kMul:
    case Op::kMuli: {
      const uint64_t uwide = uint64_t{a} * b;
      const int64_t swide = int64_t{sa} * sb;
      r.value = static_cast<uint32_t>(uwide);
      r.flags.cy = (uwide >> 32) != 0;
      r.flags.ov = swide != static_cast<int32_t>(r.value);
      break;
    }
    case Op::kDivu:
      if (b == 0) {
        r.value = 0xFFFFFFFFu;
        r.flags.ov = true;
      } else {
        r.value = a / b;
        r.flags.ov = false;
      }
      break;
    case Op::kSll:
    case Op::kSlli: r.value = a << (b & 31); break;
    case Op::kSrl:
    case Op::kSrli: r.value = a >> (b & 31); break;
    case Op::kSra:
    case Op::kSrai: r.value = static_cast<uint32_t>(sa >> (b & 31)); break;
    case Op::kSfeq: r.flags.f = a == b; break;
    case Op::kSfne: r.flags.f = a != b; break;
    case Op::kSfgts: r.flags.f = sa > sb; break;
    case Op::kSfges: r.flags.f = sa >= sb; break;
    case Op::kSflts: r.flags.f = sa < sb; break;
    case Op::kSfles: r.flags.f = sa <= sb; break;
    default: break;
  }
  return r;
}

bool alu_writes_flags(Op op) {
  switch (op) {
    case Op::kAdd: case Op::kAddi: case Op::kSub: case Op::kMul: case Op::kMuli:
    case Op::kDivu: case Op::kSfeq: case Op::kSfne: case Op::kSfgts:
    case Op::kSfges: case Op::kSflts: case Op::kSfles:
      return true;
    default:
      return false;
  }
}

unsigned pad_op_for(Op op) {
  switch (op) {
    case Op::kAdd: case Op::kAddi: return kPadAdd;
    case Op::kSub: return kPadSub;
    case Op::kAnd: case Op::kAndi: return kPadAnd;
    case Op::kOr: case Op::kOri: return kPadOr;
    case Op::kXor: case Op::kXori: return kPadXor;
    case Op::kMul: case Op::kMuli: return kPadMul;
    case Op::kDivu: return kPadDiv;
    case Op::kSll: case Op::kSlli: return kPadSll;
    case Op::kSrl: case Op::kSrli: return kPadSrl;
    case Op::kSra: case Op::kSrai: return kPadSra;
    default: return kPadAdd;
  }
}

MachineState::MachineState(const MemoryConfig& mem) : mem_(mem) { shadow_.fill(kZeroShadow); }

void MachineState::reset(const Image& img, const Codec& codec, uint64_t seed) {
  mem_ = MemorySystem(mem_.config());
  mem_.load(img);
  mode_ = img.start_mode;
  pc_ = img.entry;
  gpr_.fill(0);
  dirty_.fill(false);
  shadow_.fill(kZeroShadow);
  epcr_ = 0;
  hidden_esr_ = 0;
  other_sprs_.clear();
  sr_ = mode_ == Mode::kSupervisor ? sr::kSm : 0;
  if (mode_ == Mode::kUser) {
    for (int i = 1; i < kNumGprs; ++i) {
      const PaddedWord zero{0, make_padding(seed, kResetPadOrdinal + static_cast<uint64_t>(i))};
      shadow_[i] = zero.bits();
      gpr_[i] = codec.seal(shadow_[i]);
    }
  }
}

uint64_t MachineState::shadow_read(int idx) const {
  if (mode_ != Mode::kUser) throw SimulationFault("shadow register accessed outside user mode");
  ++shadow_accesses_;
  return idx == 0 ? kZeroShadow : shadow_[idx];
}

uint64_t MachineState::read_operand(int idx) const {
  if (mode_ == Mode::kUser) return shadow_read(idx);
  return real(idx);
}

void MachineState::write_register(int idx, uint64_t v) {
  if (idx == 0) return;
  if (mode_ == Mode::kUser) {
    ++shadow_accesses_;
    shadow_[idx] = v;
    dirty_[idx] = true;
  } else {
    gpr_[idx] = v;
  }
}

uint64_t MachineState::read_spr(uint32_t idx) const {
  if (idx == spr::kConfig) return kConfigId;
  if (mode_ == Mode::kUser) return 0;
  switch (idx) {
    case spr::kSr: return sr_;
    case spr::kEpcr: return epcr_;
    default: {
      auto it = other_sprs_.find(idx);
      return it == other_sprs_.end() ? 0 : it->second;
    }
  }
}

void MachineState::write_spr(uint32_t idx, uint64_t v) {
  if (mode_ == Mode::kUser) return;
  switch (idx) {
    case spr::kConfig: return;
    // Mode changes only through exceptions and l.rfe.
    case spr::kSr: sr_ = v | sr::kSm; return;
    case spr::kEpcr: epcr_ = v; return;
    default: other_sprs_[idx] = v; return;
  }
}

void MachineState::flush_shadows(const Codec& codec) {
  for (int i = 1; i < kNumGprs; ++i) {
    if (dirty_[i]) {
      gpr_[i] = codec.seal(shadow_[i]);
      dirty_[i] = false;
    }
  }
}

void MachineState::enter_exception(ExceptionCause cause, uint32_t return_pc, const Codec& codec) {
  flush_shadows(codec);
  hidden_esr_ = sr_;
  sr_ = (sr_ & ~sr::kUserFlags) | sr::kSm;
  mode_ = Mode::kSupervisor;
  epcr_ = return_pc;
  pc_ = exception_vector(cause);
}

void MachineState::rfe(const Codec& codec) {
  if (mode_ == Mode::kUser) throw IllegalOpcode("l.rfe in user mode");
  sr_ = hidden_esr_;
  pc_ = static_cast<uint32_t>(epcr_);
  mode_ = (sr_ & sr::kSm) ? Mode::kSupervisor : Mode::kUser;
  if (mode_ == Mode::kUser) {
    for (int i = 1; i < kNumGprs; ++i) {
      shadow_[i] = codec.open(gpr_[i]);
      dirty_[i] = false;
    }
  }
}

}  // namespace kpu
