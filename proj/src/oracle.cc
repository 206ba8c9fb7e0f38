#include "kpu/oracle.h"

#include <fmt/format.h>

#include <sstream>

#include "kpu/error.h"

namespace kpu {
namespace {

void set_bit(uint64_t& sr, uint64_t bit, bool v) { sr = v ? (sr | bit) : (sr & ~bit); }

class Interpreter {
 public:
  Interpreter(const Image& img, const Codec& codec, const OracleLimits& limits)
      : img_(img), codec_(codec), limits_(limits) {
    s_.mode = img.start_mode;
    s_.pc = img.entry;
    s_.sr = s_.mode == Mode::kSupervisor ? sr::kSm : 0;
    s_.is_address.fill(s_.mode == Mode::kSupervisor);
    s_.is_address[0] = false;
    for (const auto& [addr, v] : img.data) s_.supervisor_memory[addr] = v;
  }

  OracleState run() {
    while (!s_.exited) {
      if (s_.steps >= limits_.max_steps) {
        throw MaxStepsExceeded(fmt::format("oracle exceeded {} steps", limits_.max_steps));
      }
      step();
    }
    return s_;
  }

 private:
  bool user() const { return s_.mode == Mode::kUser; }

  uint32_t reg(int r) const { return r == 0 ? 0 : s_.regs[r]; }

  void write(int r, uint32_t v, bool address) {
    if (r == 0) return;
    s_.regs[r] = v;
    // Supervisor writes land unencrypted in the real register.
    s_.is_address[r] = user() ? address : true;
  }

  void trap(ExceptionCause cause, uint32_t return_pc) {
    latch_ = 0;
    s_.esr = s_.sr;
    s_.sr = (s_.sr & ~sr::kUserFlags) | sr::kSm;
    s_.mode = Mode::kSupervisor;
    s_.epcr = return_pc;
    s_.pc = cause == ExceptionCause::kSyscall ? 0xC00 : cause == ExceptionCause::kIllegal ? 0x700 : 0x100;
  }

  void illegal() {
    ++s_.steps;
    trap(ExceptionCause::kIllegal, s_.pc);
  }

  uint64_t sup_cell(uint64_t addr) const {
    check_supervisor(addr);
    auto it = s_.supervisor_memory.find(addr);
    return it == s_.supervisor_memory.end() ? 0 : it->second;
  }

  void check_supervisor(uint64_t addr) const {
    if (addr % 8 != 0 || addr >= limits_.supervisor_bytes) {
      throw ProgramFault(fmt::format("oracle: supervisor access at 0x{:x}", addr));
    }
  }

  uint32_t read_spr(uint32_t idx) const {
    if (idx == spr::kConfig) return static_cast<uint32_t>(kConfigId);
    if (user()) return 0;
    if (idx == spr::kSr) return static_cast<uint32_t>(s_.sr);
    if (idx == spr::kEpcr) return static_cast<uint32_t>(s_.epcr);
    auto it = s_.other_sprs.find(idx);
    return it == s_.other_sprs.end() ? 0 : static_cast<uint32_t>(it->second);
  }

  void write_spr(uint32_t idx, uint32_t v) {
    if (user() || idx == spr::kConfig) return;
    if (idx == spr::kSr) {
      s_.sr = v | sr::kSm;
    } else if (idx == spr::kEpcr) {
      s_.epcr = v;
    } else {
      s_.other_sprs[idx] = v;
    }
  }

  // Plain 32-bit arithmetic with the flag conventions of the machine.
  uint32_t arith(Op op, uint32_t a, uint32_t b) {
    const int64_t sa = static_cast<int32_t>(a);
    const int64_t sb = static_cast<int32_t>(b);
    switch (op) {
      case Op::kAdd:
      case Op::kAddi: {
        const uint32_t r = a + b;
        set_bit(s_.sr, sr::kCy, r < a);
        set_bit(s_.sr, sr::kOv, sa + sb > INT32_MAX || sa + sb < INT32_MIN);
        return r;
      }
      case Op::kSub: {
        set_bit(s_.sr, sr::kCy, b > a);
        set_bit(s_.sr, sr::kOv, sa - sb > INT32_MAX || sa - sb < INT32_MIN);
        return a - b;
      }
      case Op::kMul:
      case Op::kMuli: {
        const uint64_t u = static_cast<uint64_t>(a) * b;
        const int64_t p = sa * sb;
        set_bit(s_.sr, sr::kCy, u > UINT32_MAX);
        set_bit(s_.sr, sr::kOv, p > INT32_MAX || p < INT32_MIN);
        return static_cast<uint32_t>(u);
      }
      case Op::kDivu:
        set_bit(s_.sr, sr::kOv, b == 0);
        return b == 0 ? UINT32_MAX : a / b;
      case Op::kAnd:
      case Op::kAndi: return a & b;
      case Op::kOr:
      case Op::kOri: return a | b;
      case Op::kXor:
      case Op::kXori: return a ^ b;
      case Op::kSll:
      case Op::kSlli: return a << (b % 32);
      case Op::kSrl:
      case Op::kSrli: return a >> (b % 32);
      case Op::kSra:
      case Op::kSrai: {
        const unsigned n = b % 32;
        const uint32_t fill = (a & 0x80000000u) && n ? ~(UINT32_MAX >> n) : 0;
        return (a >> n) | fill;
      }
      default: return 0;
    }
  }

  bool compare_op(Op op, uint32_t a, uint32_t b) const {
    const auto sa = static_cast<int32_t>(a);
    const auto sb = static_cast<int32_t>(b);
    switch (op) {
      case Op::kSfeq: return a == b;
      case Op::kSfne: return a != b;
      case Op::kSfgts: return sa > sb;
      case Op::kSfges: return sa >= sb;
      case Op::kSflts: return sa < sb;
      case Op::kSfles: return sa <= sb;
      default: return false;
    }
  }

  void step() {
    auto it = img_.text.find(s_.pc);
    if (it == img_.text.end()) {
      throw ProgramFault(fmt::format("oracle: fetch from unmapped address 0x{:08x}", s_.pc));
    }
    Instruction in;
    try {
      in = decode(it->second);
    } catch (const IllegalOpcode&) {
      latch_ = 0;
      illegal();
      return;
    }
    const uint32_t pc = s_.pc;
    uint32_t next = pc + 4;

    if (in.op == Op::kPrefix) {
      if (user()) {
        const uint32_t payload = static_cast<uint32_t>(in.imm) & 0xFFFFFF;
        if (in.prefix_index == 0) {
          p0_ = payload;
          latch_ = 1;
        } else {
          latch_ = latch_ == 1 ? 2 : 0;
          p1_ = payload;
        }
      }
      s_.pc = next;
      return;
    }

    const int latched = latch_;
    if (user()) latch_ = 0;
    const InstrClass cls = classify(in);
    if (user() && (cls == InstrClass::kClass64 || in.op == Op::kRfe)) {
      illegal();
      return;
    }

    uint32_t imm = static_cast<uint32_t>(in.imm);
    if (cls == InstrClass::kImmediate && user()) {
      if (latched != 2) {
        illegal();
        return;
      }
      const uint64_t block = (uint64_t{p0_} << 40) | (uint64_t{p1_} << 16) |
                             (encode(in) & 0xFFFF);
      imm = codec_.decrypt(CipherWord{block}).low;
    }

    ++s_.steps;
    switch (cls) {
      case InstrClass::kRegister:
        if (format_of(in.op) == Format::kSetFlag) {
          set_bit(s_.sr, sr::kF, compare_op(in.op, reg(in.ra), reg(in.rb)));
        } else {
          write(in.rd, arith(in.op, reg(in.ra), reg(in.rb)), false);
        }
        break;
      case InstrClass::kImmediate:
        write(in.rd, arith(in.op, reg(in.ra), imm), false);
        break;
      case InstrClass::kLoad: {
        const uint32_t addr = reg(in.ra) + imm;
        if (user()) {
          auto m = s_.memory.find(addr);
          const bool a = m != s_.memory.end() && s_.memory_is_address[addr];
          write(in.rd, m == s_.memory.end() ? 0 : m->second, a);
        } else {
          write(in.rd, static_cast<uint32_t>(sup_cell(addr)), true);
        }
        break;
      }
      case InstrClass::kStore: {
        const uint32_t addr = reg(in.ra) + imm;
        if (user()) {
          s_.memory[addr] = reg(in.rb);
          s_.memory_is_address[addr] = in.rb != 0 && s_.is_address[in.rb];
        } else {
          check_supervisor(addr);
          s_.supervisor_memory[addr] = reg(in.rb);
        }
        break;
      }
      case InstrClass::kBranch: {
        const bool taken = (in.op == Op::kBf) == s_.flag_f();
        if (taken) next = pc + imm * 4;
        break;
      }
      case InstrClass::kJump:
        if (in.op == Op::kJ || in.op == Op::kJal) {
          next = pc + imm * 4;
        } else {
          if (user() && (in.rb == 0 || !s_.is_address[in.rb])) {
            --s_.steps;
            illegal();
            return;
          }
          next = reg(in.rb);
        }
        if (in.op == Op::kJal || in.op == Op::kJalr) write(kLinkRegister, pc + 4, true);
        break;
      case InstrClass::kNop:
        if (in.imm == 2) s_.output.push_back(reg(3));
        if (in.imm == 1) s_.exited = true;
        break;
      case InstrClass::kSpr: {
        const uint32_t idx = reg(in.ra) | imm;
        if (in.op == Op::kMfspr) {
          write(in.rd, read_spr(idx), false);
        } else {
          write_spr(idx, reg(in.rb));
        }
        break;
      }
      case InstrClass::kSysTrap:
        if (in.op == Op::kSys) {
          trap(ExceptionCause::kSyscall, pc + 4);
        } else {
          s_.sr = s_.esr;
          s_.pc = static_cast<uint32_t>(s_.epcr);
          s_.mode = (s_.sr & sr::kSm) ? Mode::kSupervisor : Mode::kUser;
        }
        return;
      case InstrClass::kClass64:
        if (in.op == Op::kLd) {
          const uint64_t v = sup_cell(uint64_t{reg(in.ra)} + static_cast<uint32_t>(in.imm));
          write(in.rd, static_cast<uint32_t>(v), true);
        } else if (in.op == Op::kSd) {
          const uint64_t addr = uint64_t{reg(in.ra)} + static_cast<uint32_t>(in.imm);
          check_supervisor(addr);
          s_.supervisor_memory[addr] = reg(in.rb);
        } else {
          write(in.rd, reg(in.ra) + reg(in.rb), true);
        }
        break;
      case InstrClass::kPrefix: break;
    }
    s_.pc = next;
  }

  const Image& img_;
  const Codec& codec_;
  OracleLimits limits_;
  OracleState s_;
  int latch_ = 0;
  uint32_t p0_ = 0;
  uint32_t p1_ = 0;
};

uint64_t parse_hex(std::string_view tok, int line) {
  if (tok.starts_with("0x")) tok.remove_prefix(2);
  if (tok.empty() || tok.size() > 16) throw FormatError(line, "bad hex value");
  uint64_t v = 0;
  for (char c : tok) {
    int d;
    if (c >= '0' && c <= '9') {
      d = c - '0';
    } else if (c >= 'a' && c <= 'f') {
      d = c - 'a' + 10;
    } else if (c >= 'A' && c <= 'F') {
      d = c - 'A' + 10;
    } else {
      throw FormatError(line, fmt::format("bad hex value '{}'", tok));
    }
    v = (v << 4) | static_cast<uint64_t>(d);
  }
  return v;
}

uint64_t parse_dec(const std::string& tok, int line) {
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(tok, &used, 10);
    if (used != tok.size()) throw FormatError(line, "bad decimal value");
    return v;
  } catch (const std::logic_error&) {
    throw FormatError(line, fmt::format("bad decimal value '{}'", tok));
  }
}

}  // namespace

OracleState interpret(const Image& img, const Codec& codec, const OracleLimits& limits) {
  return Interpreter(img, codec, limits).run();
}

std::string format_oracle_state(const OracleState& s) {
  std::string out = fmt::format("MODE {}\nPC 0x{:08x}\n", mode_name(s.mode), s.pc);
  for (int i = 0; i < kNumGprs; ++i) out += fmt::format("REG {} {:08x}\n", i, s.regs[i]);
  out += fmt::format("FLAGS F={} CY={} OV={}\n", int{s.flag_f()}, int{s.flag_cy()},
                     int{s.flag_ov()});
  out += fmt::format("STEPS {}\n", s.steps);
  for (const auto& [addr, v] : s.memory) out += fmt::format("MEM 0x{:08x} {:08x}\n", addr, v);
  return out;
}

StateDump parse_state_dump(std::string_view text) {
  StateDump d;
  std::istringstream in{std::string(text)};
  std::string line;
  int no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++no;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    std::string a, b, extra;
    ls >> a >> b;
    if (ls >> extra) throw FormatError(no, "trailing fields");
    if (!header) {
      if (key != "KPUDUMP" || a != "1") throw FormatError(no, "expected 'KPUDUMP 1'");
      header = true;
      continue;
    }
    if (key == "MODE") {
      if (a == "user") {
        d.mode = Mode::kUser;
      } else if (a == "super") {
        d.mode = Mode::kSupervisor;
      } else {
        throw FormatError(no, "bad mode");
      }
    } else if (key == "PC") {
      d.pc = static_cast<uint32_t>(parse_hex(a, no));
    } else if (key == "SR") {
      d.sr = parse_hex(a, no);
    } else if (key == "GPR") {
      const uint64_t i = parse_dec(a, no);
      if (i >= kNumGprs) throw FormatError(no, "register index out of range");
      d.gpr[i] = parse_hex(b, no);
    } else if (key == "PHYS") {
      d.phys[parse_dec(a, no)] = parse_hex(b, no);
    } else if (key == "TLBMAP") {
      d.tlb.emplace_back(parse_hex(a, no), parse_dec(b, no));
    } else {
      throw FormatError(no, fmt::format("unknown record '{}'", key));
    }
  }
  if (!header) throw FormatError(1, "expected 'KPUDUMP 1'");
  return d;
}

CompareReport compare(const StateDump& dump, const Codec& codec, const OracleState& oracle) {
  CompareReport rep;
  for (int i = 0; i < kNumGprs; ++i) {
    const auto got = static_cast<uint32_t>(codec.open(dump.gpr[i]));
    ++rep.registers_checked;
    if (got != oracle.regs[i]) {
      rep.mismatches.push_back(
          fmt::format("r{}: simulator {:08x}, oracle {:08x}", i, got, oracle.regs[i]));
    }
  }
  constexpr uint64_t kFlagMask = sr::kF | sr::kCy | sr::kOv | sr::kSm;
  if ((dump.sr & kFlagMask) != (oracle.sr & kFlagMask)) {
    rep.mismatches.push_back(fmt::format("sr: simulator {:04x}, oracle {:04x}",
                                         dump.sr & kFlagMask, oracle.sr & kFlagMask));
  }

  std::map<uint32_t, uint32_t> seen;
  for (const auto& [cipher, idx] : dump.tlb) {
    auto cell = dump.phys.find(idx);
    if (cell == dump.phys.end() || cell->second == 0) continue;  // never written
    const auto addr = static_cast<uint32_t>(codec.open(cipher));
    const auto value = static_cast<uint32_t>(codec.open(cell->second));
    if (auto [it, fresh] = seen.emplace(addr, value); !fresh && it->second != value) {
      throw AliasDetected(fmt::format(
          "address 0x{:08x} held by two physical cells with values {:08x} and {:08x}", addr,
          it->second, value));
    }
  }
  for (const auto& [addr, value] : seen) {
    ++rep.memory_checked;
    auto o = oracle.memory.find(addr);
    if (o == oracle.memory.end()) {
      rep.mismatches.push_back(fmt::format("mem 0x{:08x}: simulator {:08x}, oracle unwritten", addr, value));
    } else if (o->second != value) {
      rep.mismatches.push_back(
          fmt::format("mem 0x{:08x}: simulator {:08x}, oracle {:08x}", addr, value, o->second));
    }
  }
  for (const auto& [addr, value] : oracle.memory) {
    if (!seen.count(addr)) {
      rep.mismatches.push_back(fmt::format("mem 0x{:08x}: oracle {:08x}, simulator unwritten", addr, value));
    }
  }
  return rep;
}

}  // namespace kpu
