#ifndef KPU_ASSEMBLER_H_
#define KPU_ASSEMBLER_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "kpu/codec.h"
#include "kpu/image.h"

namespace kpu {

struct AsmOptions {
  bool strict = false;  // lint findings become CryptoSafetyError
};

struct Diagnostic {
  int line = 0;
  std::string message;

  friend bool operator==(const Diagnostic&, const Diagnostic&) = default;
};

struct AsmResult {
  Image image;
  std::vector<Diagnostic> diagnostics;
  int passes = 0;
  uint32_t encrypted_immediates = 0;
  uint32_t prefix_words = 0;
};

// Source syntax, one statement per line:
//   label:  l.addi r5,r5,1     # comment (';' also starts one)
//   l.lwz r3,8(r1)   l.sw -4(r1),r3   l.mfspr rD,rA,k   l.mtspr rA,rB,k
//   l.prefix idx,payload   l.j label   l.nop 2
// Directives: .org ADDR, .word V, .dword V, .space N, .encrypt on|off,
// .entry LABEL, .mode user|super.
//
// Throws ParseError, UndefinedLabel, OperandOutOfRange, CryptoSafetyError.
AsmResult assemble(std::string_view source, const Codec& codec, uint64_t seed,
                   const AsmOptions& opts = {});

// Heuristic per-basic-block check of encrypted regions: arithmetic on a
// value derived from r9/JAL linkage, and l.jr on a register not traceable
// to r9 or a label move. Throws ParseError on malformed source.
std::vector<Diagnostic> lint_crypto_safety(std::string_view source);

}  // namespace kpu

#endif  // KPU_ASSEMBLER_H_
