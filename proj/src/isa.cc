#include "kpu/isa.h"

#include <array>
#include <cstdio>

#include "kpu/error.h"

namespace kpu {
namespace {

struct OpInfo {
  Op op;
  Opcode opcode;
  Format format;
  int sub;  // sub-operation code inside the opcode group, -1 if none
  std::string_view name;
  InstrClass cls;
};

constexpr std::array<OpInfo, kNumOps> kOps = {{
    {Op::kJ, Opcode::kJ, Format::kOffset26, -1, "l.j", InstrClass::kJump},
    {Op::kJal, Opcode::kJal, Format::kOffset26, -1, "l.jal", InstrClass::kJump},
    {Op::kBnf, Opcode::kBnf, Format::kOffset26, -1, "l.bnf", InstrClass::kBranch},
    {Op::kBf, Opcode::kBf, Format::kOffset26, -1, "l.bf", InstrClass::kBranch},
    {Op::kNop, Opcode::kNop, Format::kConst16, -1, "l.nop", InstrClass::kNop},
    {Op::kPrefix, Opcode::kPrefix, Format::kPrefix, -1, "l.prefix", InstrClass::kPrefix},
    {Op::kSys, Opcode::kSys, Format::kConst16, -1, "l.sys", InstrClass::kSysTrap},
    {Op::kRfe, Opcode::kRfe, Format::kNone, -1, "l.rfe", InstrClass::kSysTrap},
    {Op::kJr, Opcode::kJr, Format::kRegJump, -1, "l.jr", InstrClass::kJump},
    {Op::kJalr, Opcode::kJalr, Format::kRegJump, -1, "l.jalr", InstrClass::kJump},
    {Op::kLwz, Opcode::kLwz, Format::kLoad16, -1, "l.lwz", InstrClass::kLoad},
    {Op::kAddi, Opcode::kAddi, Format::kImmSigned, -1, "l.addi", InstrClass::kImmediate},
    {Op::kAndi, Opcode::kAndi, Format::kImmUnsigned, -1, "l.andi", InstrClass::kImmediate},
    {Op::kOri, Opcode::kOri, Format::kImmUnsigned, -1, "l.ori", InstrClass::kImmediate},
    {Op::kXori, Opcode::kXori, Format::kImmUnsigned, -1, "l.xori", InstrClass::kImmediate},
    {Op::kMuli, Opcode::kMuli, Format::kImmSigned, -1, "l.muli", InstrClass::kImmediate},
    {Op::kMfspr, Opcode::kMfspr, Format::kMfspr, -1, "l.mfspr", InstrClass::kSpr},
    {Op::kSlli, Opcode::kShiftImm, Format::kShiftImm, 0, "l.slli", InstrClass::kImmediate},
    {Op::kSrli, Opcode::kShiftImm, Format::kShiftImm, 1, "l.srli", InstrClass::kImmediate},
    {Op::kSrai, Opcode::kShiftImm, Format::kShiftImm, 2, "l.srai", InstrClass::kImmediate},
    {Op::kMtspr, Opcode::kMtspr, Format::kMtspr, -1, "l.mtspr", InstrClass::kSpr},
    {Op::kSw, Opcode::kSw, Format::kStore16, -1, "l.sw", InstrClass::kStore},
    {Op::kAdd, Opcode::kAlu, Format::kReg3, 0, "l.add", InstrClass::kRegister},
    {Op::kSub, Opcode::kAlu, Format::kReg3, 1, "l.sub", InstrClass::kRegister},
    {Op::kAnd, Opcode::kAlu, Format::kReg3, 2, "l.and", InstrClass::kRegister},
    {Op::kOr, Opcode::kAlu, Format::kReg3, 3, "l.or", InstrClass::kRegister},
    {Op::kXor, Opcode::kAlu, Format::kReg3, 4, "l.xor", InstrClass::kRegister},
    {Op::kMul, Opcode::kAlu, Format::kReg3, 5, "l.mul", InstrClass::kRegister},
    {Op::kDivu, Opcode::kAlu, Format::kReg3, 6, "l.divu", InstrClass::kRegister},
    {Op::kSll, Opcode::kAlu, Format::kReg3, 7, "l.sll", InstrClass::kRegister},
    {Op::kSrl, Opcode::kAlu, Format::kReg3, 8, "l.srl", InstrClass::kRegister},
    {Op::kSra, Opcode::kAlu, Format::kReg3, 9, "l.sra", InstrClass::kRegister},
    {Op::kSfeq, Opcode::kSetFlag, Format::kSetFlag, 0, "l.sfeq", InstrClass::kRegister},
    {Op::kSfne, Opcode::kSetFlag, Format::kSetFlag, 1, "l.sfne", InstrClass::kRegister},
    {Op::kSfgts, Opcode::kSetFlag, Format::kSetFlag, 2, "l.sfgts", InstrClass::kRegister},
    {Op::kSfges, Opcode::kSetFlag, Format::kSetFlag, 3, "l.sfges", InstrClass::kRegister},
    {Op::kSflts, Opcode::kSetFlag, Format::kSetFlag, 4, "l.sflts", InstrClass::kRegister},
    {Op::kSfles, Opcode::kSetFlag, Format::kSetFlag, 5, "l.sfles", InstrClass::kRegister},
    {Op::kLd, Opcode::kClass64, Format::kLoad11, 0, "l.ld", InstrClass::kClass64},
    {Op::kSd, Opcode::kClass64, Format::kStore11, 1, "l.sd", InstrClass::kClass64},
    {Op::kAdd64, Opcode::kClass64, Format::kReg3, 2, "l.add64", InstrClass::kClass64},
}};

const OpInfo& info(Op op) { return kOps[static_cast<size_t>(op)]; }

constexpr uint32_t bits(uint32_t w, int hi, int lo) {
  return (w >> lo) & ((1u << (hi - lo + 1)) - 1);
}

int32_t sign_extend(uint32_t v, int width) {
  const uint32_t m = 1u << (width - 1);
  v &= (width == 32) ? ~0u : ((1u << width) - 1);
  return static_cast<int32_t>((v ^ m) - m);
}

[[noreturn]] void illegal(uint32_t word, const char* why) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "illegal instruction 0x%08x (%s)", word, why);
  throw IllegalOpcode(buf);
}

const OpInfo* find_sub(Opcode opc, int sub) {
  for (const auto& i : kOps) {
    if (i.opcode == opc && i.sub == sub) return &i;
  }
  return nullptr;
}

const OpInfo* find_plain(Opcode opc) { return find_sub(opc, -1); }

}  // namespace

Opcode opcode_of(Op op) { return info(op).opcode; }
Format format_of(Op op) { return info(op).format; }
std::string_view mnemonic(Op op) { return info(op).name; }

std::string_view class_name(InstrClass c) {
  switch (c) {
    case InstrClass::kRegister: return "register";
    case InstrClass::kImmediate: return "immediate";
    case InstrClass::kLoad: return "load";
    case InstrClass::kStore: return "store";
    case InstrClass::kBranch: return "branch";
    case InstrClass::kJump: return "jump";
    case InstrClass::kNop: return "no-op";
    case InstrClass::kPrefix: return "prefix";
    case InstrClass::kSpr: return "mf/tspr";
    case InstrClass::kSysTrap: return "sys/trap";
    case InstrClass::kClass64: return "64-bit";
  }
  return "?";
}

ImmRange imm_range(Op op) {
  switch (format_of(op)) {
    case Format::kOffset26: return {-(1 << 25), (1 << 25) - 1};
    case Format::kConst16:
    case Format::kImmUnsigned:
    case Format::kMfspr:
    case Format::kMtspr: return {0, 0xFFFF};
    case Format::kPrefix: return {0, 0xFFFFFF};
    case Format::kLoad16:
    case Format::kImmSigned:
    case Format::kStore16: return {-32768, 32767};
    case Format::kShiftImm: return {0, 0x3FFF};
    case Format::kLoad11:
    case Format::kStore11: return {-1024, 1023};
    case Format::kNone:
    case Format::kRegJump:
    case Format::kReg3:
    case Format::kSetFlag: return {0, 0};
  }
  return {0, 0};
}

Instruction decode(uint32_t w) {
  const auto opc = static_cast<Opcode>(bits(w, 31, 26));
  Instruction in;
  const OpInfo* oi = nullptr;

  switch (opc) {
    case Opcode::kJ:
    case Opcode::kJal:
    case Opcode::kBnf:
    case Opcode::kBf:
      oi = find_plain(opc);
      in.imm = sign_extend(bits(w, 25, 0), 26);
      break;
    case Opcode::kNop:
      if (bits(w, 25, 16) != 0x100) illegal(w, "reserved nop bits");
      oi = find_plain(opc);
      in.imm = static_cast<int32_t>(bits(w, 15, 0));
      break;
    case Opcode::kPrefix:
      if (bits(w, 25, 25) != 0) illegal(w, "reserved prefix bit");
      oi = find_plain(opc);
      in.prefix_index = static_cast<uint8_t>(bits(w, 24, 24));
      in.imm = static_cast<int32_t>(bits(w, 23, 0));
      break;
    case Opcode::kSys:
      if (bits(w, 25, 16) != 0) illegal(w, "reserved sys bits");
      oi = find_plain(opc);
      in.imm = static_cast<int32_t>(bits(w, 15, 0));
      break;
    case Opcode::kRfe:
      if (bits(w, 25, 0) != 0) illegal(w, "reserved rfe bits");
      oi = find_plain(opc);
      break;
    case Opcode::kJr:
    case Opcode::kJalr:
      if (bits(w, 25, 16) != 0 || bits(w, 10, 0) != 0) illegal(w, "reserved jr bits");
      oi = find_plain(opc);
      in.rb = static_cast<uint8_t>(bits(w, 15, 11));
      break;
    case Opcode::kLwz:
    case Opcode::kAddi:
    case Opcode::kMuli:
      oi = find_plain(opc);
      in.rd = static_cast<uint8_t>(bits(w, 25, 21));
      in.ra = static_cast<uint8_t>(bits(w, 20, 16));
      in.imm = sign_extend(bits(w, 15, 0), 16);
      break;
    case Opcode::kAndi:
    case Opcode::kOri:
    case Opcode::kXori:
    case Opcode::kMfspr:
      oi = find_plain(opc);
      in.rd = static_cast<uint8_t>(bits(w, 25, 21));
      in.ra = static_cast<uint8_t>(bits(w, 20, 16));
      in.imm = static_cast<int32_t>(bits(w, 15, 0));
      break;
    case Opcode::kShiftImm:
      oi = find_sub(opc, static_cast<int>(bits(w, 15, 14)));
      if (!oi) illegal(w, "shift sub-op");
      in.rd = static_cast<uint8_t>(bits(w, 25, 21));
      in.ra = static_cast<uint8_t>(bits(w, 20, 16));
      in.imm = static_cast<int32_t>(bits(w, 13, 0));
      break;
    case Opcode::kMtspr:
    case Opcode::kSw: {
      oi = find_plain(opc);
      in.ra = static_cast<uint8_t>(bits(w, 20, 16));
      in.rb = static_cast<uint8_t>(bits(w, 15, 11));
      const uint32_t k = (bits(w, 25, 21) << 11) | bits(w, 10, 0);
      in.imm = opc == Opcode::kSw ? sign_extend(k, 16) : static_cast<int32_t>(k);
      break;
    }
    case Opcode::kAlu:
      if (bits(w, 10, 4) != 0) illegal(w, "reserved alu bits");
      oi = find_sub(opc, static_cast<int>(bits(w, 3, 0)));
      if (!oi) illegal(w, "alu funct");
      in.rd = static_cast<uint8_t>(bits(w, 25, 21));
      in.ra = static_cast<uint8_t>(bits(w, 20, 16));
      in.rb = static_cast<uint8_t>(bits(w, 15, 11));
      break;
    case Opcode::kSetFlag:
      if (bits(w, 10, 0) != 0) illegal(w, "reserved set-flag bits");
      oi = find_sub(opc, static_cast<int>(bits(w, 25, 21)));
      if (!oi) illegal(w, "set-flag condition");
      in.ra = static_cast<uint8_t>(bits(w, 20, 16));
      in.rb = static_cast<uint8_t>(bits(w, 15, 11));
      break;
    case Opcode::kClass64:
      oi = find_sub(opc, static_cast<int>(bits(w, 3, 0)));
      if (!oi) illegal(w, "64-bit funct");
      switch (oi->op) {
        case Op::kLd:
          if (bits(w, 15, 15) != 0) illegal(w, "reserved l.ld bit");
          in.rd = static_cast<uint8_t>(bits(w, 25, 21));
          in.ra = static_cast<uint8_t>(bits(w, 20, 16));
          in.imm = sign_extend(bits(w, 14, 4), 11);
          break;
        case Op::kSd:
          if (bits(w, 10, 10) != 0) illegal(w, "reserved l.sd bit");
          in.ra = static_cast<uint8_t>(bits(w, 20, 16));
          in.rb = static_cast<uint8_t>(bits(w, 15, 11));
          in.imm = sign_extend((bits(w, 25, 21) << 6) | bits(w, 9, 4), 11);
          break;
        default:
          if (bits(w, 10, 4) != 0) illegal(w, "reserved l.add64 bits");
          in.rd = static_cast<uint8_t>(bits(w, 25, 21));
          in.ra = static_cast<uint8_t>(bits(w, 20, 16));
          in.rb = static_cast<uint8_t>(bits(w, 15, 11));
          break;
      }
      break;
    default:
      illegal(w, "unassigned opcode");
  }
  in.op = oi->op;
  return in;
}

uint32_t encode(const Instruction& in) {
  const OpInfo& oi = info(in.op);
  if (in.rd > 31 || in.ra > 31 || in.rb > 31 || in.prefix_index > 1) {
    throw OperandOutOfRange(std::string(oi.name) + ": register index out of range");
  }
  const ImmRange r = imm_range(in.op);
  if (in.imm < r.min || in.imm > r.max) {
    throw OperandOutOfRange(std::string(oi.name) + ": immediate " +
                            std::to_string(in.imm) + " out of range");
  }
  const auto u = static_cast<uint32_t>(in.imm);
  uint32_t w = static_cast<uint32_t>(oi.opcode) << 26;
  const uint32_t rd = uint32_t{in.rd} << 21;
  const uint32_t ra = uint32_t{in.ra} << 16;
  const uint32_t rb = uint32_t{in.rb} << 11;

  switch (oi.format) {
    case Format::kOffset26: w |= u & 0x3FFFFFF; break;
    case Format::kConst16:
      w |= u & 0xFFFF;
      if (in.op == Op::kNop) w |= 1u << 24;
      break;
    case Format::kPrefix: w |= (uint32_t{in.prefix_index} << 24) | (u & 0xFFFFFF); break;
    case Format::kNone: break;
    case Format::kRegJump: w |= rb; break;
    case Format::kLoad16:
    case Format::kImmSigned:
    case Format::kImmUnsigned:
    case Format::kMfspr: w |= rd | ra | (u & 0xFFFF); break;
    case Format::kShiftImm:
      w |= rd | ra | (static_cast<uint32_t>(oi.sub) << 14) | (u & 0x3FFF);
      break;
    case Format::kMtspr:
    case Format::kStore16:
      w |= ((u >> 11) & 0x1F) << 21 | ra | rb | (u & 0x7FF);
      break;
    case Format::kReg3:
      w |= rd | ra | rb | static_cast<uint32_t>(oi.sub);
      break;
    case Format::kSetFlag:
      w |= static_cast<uint32_t>(oi.sub) << 21 | ra | rb;
      break;
    case Format::kLoad11:
      w |= rd | ra | ((u & 0x7FF) << 4) | static_cast<uint32_t>(oi.sub);
      break;
    case Format::kStore11:
      w |= ((u >> 6) & 0x1F) << 21 | ra | rb | ((u & 0x3F) << 4) |
           static_cast<uint32_t>(oi.sub);
      break;
  }
  return w;
}

InstrClass classify(const Instruction& in) { return info(in.op).cls; }

bool supervisor_only(const Instruction& in) {
  return classify(in) == InstrClass::kClass64;
}

bool is_immediate(const Instruction& in) {
  return classify(in) == InstrClass::kImmediate;
}

bool is_control_transfer(const Instruction& in) {
  const InstrClass c = classify(in);
  return c == InstrClass::kBranch || c == InstrClass::kJump;
}

int dest_register(const Instruction& in) {
  switch (in.op) {
    case Op::kJal:
    case Op::kJalr: return kLinkRegister;
    default: break;
  }
  switch (format_of(in.op)) {
    case Format::kLoad16:
    case Format::kImmSigned:
    case Format::kImmUnsigned:
    case Format::kShiftImm:
    case Format::kMfspr:
    case Format::kLoad11: return in.rd;
    case Format::kReg3: return in.rd;
    default: return -1;
  }
}

SourceRegs source_registers(const Instruction& in) {
  switch (format_of(in.op)) {
    case Format::kRegJump: return {in.rb, -1};
    case Format::kLoad16:
    case Format::kImmSigned:
    case Format::kImmUnsigned:
    case Format::kShiftImm:
    case Format::kMfspr:
    case Format::kLoad11: return {in.ra, -1};
    case Format::kMtspr:
    case Format::kStore16:
    case Format::kReg3:
    case Format::kSetFlag:
    case Format::kStore11: return {in.ra, in.rb};
    default: return {};
  }
}

uint16_t immediate_field_bits(const Instruction& in) {
  return static_cast<uint16_t>(encode(in) & 0xFFFF);
}

std::string to_string(const Instruction& in) {
  char buf[64];
  const std::string_view n = mnemonic(in.op);
  const int len = static_cast<int>(n.size());
  switch (format_of(in.op)) {
    case Format::kOffset26:
      std::snprintf(buf, sizeof(buf), "%.*s %d", len, n.data(), in.imm);
      break;
    case Format::kConst16:
      std::snprintf(buf, sizeof(buf), "%.*s %d", len, n.data(), in.imm);
      break;
    case Format::kPrefix:
      std::snprintf(buf, sizeof(buf), "%.*s %d,0x%06x", len, n.data(), in.prefix_index, in.imm);
      break;
    case Format::kNone:
      std::snprintf(buf, sizeof(buf), "%.*s", len, n.data());
      break;
    case Format::kRegJump:
      std::snprintf(buf, sizeof(buf), "%.*s r%d", len, n.data(), in.rb);
      break;
    case Format::kLoad16:
    case Format::kLoad11:
      std::snprintf(buf, sizeof(buf), "%.*s r%d,%d(r%d)", len, n.data(), in.rd, in.imm, in.ra);
      break;
    case Format::kImmSigned:
    case Format::kImmUnsigned:
    case Format::kShiftImm:
    case Format::kMfspr:
      std::snprintf(buf, sizeof(buf), "%.*s r%d,r%d,%d", len, n.data(), in.rd, in.ra, in.imm);
      break;
    case Format::kMtspr:
      std::snprintf(buf, sizeof(buf), "%.*s r%d,r%d,%d", len, n.data(), in.ra, in.rb, in.imm);
      break;
    case Format::kStore16:
    case Format::kStore11:
      std::snprintf(buf, sizeof(buf), "%.*s %d(r%d),r%d", len, n.data(), in.imm, in.ra, in.rb);
      break;
    case Format::kReg3:
      std::snprintf(buf, sizeof(buf), "%.*s r%d,r%d,r%d", len, n.data(), in.rd, in.ra, in.rb);
      break;
    case Format::kSetFlag:
      std::snprintf(buf, sizeof(buf), "%.*s r%d,r%d", len, n.data(), in.ra, in.rb);
      break;
  }
  return buf;
}

}  // namespace kpu
