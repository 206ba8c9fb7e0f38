#ifndef KPU_ISA_H_
#define KPU_ISA_H_

#include <cstdint>
#include <string>
#include <string_view>

namespace kpu {

// Primary opcodes, bits [31:26] of every code word.
enum class Opcode : uint8_t {
  kJ = 0x00,
  kJal = 0x01,
  kBnf = 0x03,
  kBf = 0x04,
  kNop = 0x05,
  kPrefix = 0x06,
  kSys = 0x08,
  kRfe = 0x09,
  kJr = 0x11,
  kJalr = 0x12,
  kLwz = 0x21,
  kAddi = 0x27,
  kAndi = 0x29,
  kOri = 0x2A,
  kXori = 0x2B,
  kMuli = 0x2C,
  kMfspr = 0x2D,
  kShiftImm = 0x2E,
  kMtspr = 0x30,
  kSw = 0x35,
  kAlu = 0x38,
  kSetFlag = 0x39,
  kClass64 = 0x3C,
};

// Fully resolved operation (opcode plus sub-operation field).
enum class Op : uint8_t {
  kJ, kJal, kBnf, kBf,
  kNop, kPrefix, kSys, kRfe,
  kJr, kJalr,
  kLwz,
  kAddi, kAndi, kOri, kXori, kMuli,
  kMfspr,
  kSlli, kSrli, kSrai,
  kMtspr,
  kSw,
  kAdd, kSub, kAnd, kOr, kXor, kMul, kDivu, kSll, kSrl, kSra,
  kSfeq, kSfne, kSfgts, kSfges, kSflts, kSfles,
  kLd, kSd, kAdd64,
};

inline constexpr int kNumOps = static_cast<int>(Op::kAdd64) + 1;

enum class InstrClass : uint8_t {
  kRegister,
  kImmediate,
  kLoad,
  kStore,
  kBranch,
  kJump,
  kNop,
  kPrefix,
  kSpr,
  kSysTrap,
  kClass64,
};

inline constexpr int kNumClasses = static_cast<int>(InstrClass::kClass64) + 1;

// Which operand fields an operation populates. Fields outside the format
// are always zero.
enum class Format : uint8_t {
  kOffset26,      // imm = n26
  kConst16,       // imm = k16
  kPrefix,        // prefix_index, imm = 24-bit payload
  kNone,          // l.rfe
  kRegJump,       // rb
  kLoad16,        // rd, ra, imm = simm16
  kImmSigned,     // rd, ra, imm = simm16
  kImmUnsigned,   // rd, ra, imm = uimm16
  kShiftImm,      // rd, ra, imm = imm14
  kMfspr,         // rd, ra, imm = k16
  kMtspr,         // ra, rb, imm = k16
  kStore16,       // ra, rb, imm = simm16
  kReg3,          // rd, ra, rb
  kSetFlag,       // ra, rb
  kLoad11,        // rd, ra, imm = simm11
  kStore11,       // ra, rb, imm = simm11
};

struct Instruction {
  Op op = Op::kNop;
  uint8_t rd = 0;
  uint8_t ra = 0;
  uint8_t rb = 0;
  uint8_t prefix_index = 0;
  int32_t imm = 0;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

// Register conventions.
inline constexpr int kNumGprs = 32;
inline constexpr uint8_t kLinkRegister = 9;

Instruction decode(uint32_t word);
uint32_t encode(const Instruction& instr);
InstrClass classify(const Instruction& instr);

Opcode opcode_of(Op op);
Format format_of(Op op);
std::string_view mnemonic(Op op);
std::string_view class_name(InstrClass c);

// Valid [min, max] range of the imm field for the op's format.
struct ImmRange {
  int64_t min;
  int64_t max;
};
ImmRange imm_range(Op op);

// Only Class64 instructions are restricted to supervisor mode.
bool supervisor_only(const Instruction& instr);

// Immediate-class instructions that carry an encrypted datum in user mode.
bool is_immediate(const Instruction& instr);
bool is_control_transfer(const Instruction& instr);

// Destination GPR, or -1. l.jal/l.jalr write the link register.
int dest_register(const Instruction& instr);

// Source GPRs (unused entries are -1). r0 is reported like any other index.
struct SourceRegs {
  int a = -1;
  int b = -1;
};
SourceRegs source_registers(const Instruction& instr);

// The raw 16-bit field [15:0] of the encoded word, which supplies the final
// segment of an encrypted immediate.
uint16_t immediate_field_bits(const Instruction& instr);

// Human-readable disassembly, e.g. "l.addi r5,r5,1".
std::string to_string(const Instruction& instr);

}  // namespace kpu

#endif  // KPU_ISA_H_
