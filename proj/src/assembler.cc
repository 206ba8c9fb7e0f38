#include "kpu/assembler.h"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <optional>
#include <set>

#include "kpu/error.h"
#include "kpu/isa.h"

namespace kpu {
namespace {

struct Operand {
  enum Kind { kReg, kExpr, kMem } kind = kExpr;
  int reg = -1;              // kReg, or base of kMem
  std::string label;         // empty for a pure literal
  int64_t addend = 0;
};

struct Statement {
  int line = 0;
  std::vector<std::string> labels;
  std::string mnemonic;  // empty for a label-only line
  std::vector<Operand> ops;
  bool encrypted = false;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}
bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

bool is_identifier(std::string_view s) {
  if (s.empty() || !is_ident_start(s[0])) return false;
  return std::all_of(s.begin(), s.end(), is_ident_char);
}

std::optional<int> parse_register(std::string_view s) {
  if (s.size() < 2 || (s[0] != 'r' && s[0] != 'R')) return std::nullopt;
  int v = 0;
  auto [p, ec] = std::from_chars(s.data() + 1, s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v < 0 || v >= kNumGprs) return std::nullopt;
  return v;
}

std::optional<int64_t> parse_number(std::string_view s) {
  bool neg = false;
  if (!s.empty() && (s[0] == '-' || s[0] == '+')) {
    neg = s[0] == '-';
    s.remove_prefix(1);
  }
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    base = 16;
    s.remove_prefix(2);
  }
  if (s.empty()) return std::nullopt;
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  if (v > (uint64_t{1} << 63)) return std::nullopt;
  return neg ? -static_cast<int64_t>(v) : static_cast<int64_t>(v);
}

// number | label | label+number | label-number
Operand parse_expr(std::string_view s, int line) {
  s = trim(s);
  Operand op;
  if (auto n = parse_number(s)) {
    op.addend = *n;
    return op;
  }
  size_t split = std::string_view::npos;
  for (size_t i = 1; i < s.size(); ++i) {
    if (s[i] == '+' || s[i] == '-') {
      split = i;
      break;
    }
  }
  const std::string_view name = trim(s.substr(0, split));
  if (!is_identifier(name)) throw ParseError(line, fmt::format("bad operand '{}'", s));
  op.label = std::string(name);
  if (split != std::string_view::npos) {
    auto n = parse_number(trim(s.substr(split + 1)));
    if (!n) throw ParseError(line, fmt::format("bad operand '{}'", s));
    op.addend = s[split] == '-' ? -*n : *n;
  }
  return op;
}

Operand parse_operand(std::string_view s, int line) {
  s = trim(s);
  if (s.empty()) throw ParseError(line, "empty operand");
  if (auto r = parse_register(s)) {
    Operand op;
    op.kind = Operand::kReg;
    op.reg = *r;
    return op;
  }
  if (s.back() == ')') {
    const size_t open = s.find('(');
    if (open == std::string_view::npos) throw ParseError(line, fmt::format("bad operand '{}'", s));
    auto r = parse_register(trim(s.substr(open + 1, s.size() - open - 2)));
    if (!r) throw ParseError(line, fmt::format("bad base register in '{}'", s));
    const std::string_view off = trim(s.substr(0, open));
    Operand op = off.empty() ? Operand{} : parse_expr(off, line);
    op.kind = Operand::kMem;
    op.reg = *r;
    return op;
  }
  return parse_expr(s, line);
}

std::vector<Statement> parse_source(std::string_view src) {
  std::vector<Statement> out;
  bool encrypted = false;
  int line_no = 0;
  size_t pos = 0;
  while (pos <= src.size()) {
    size_t end = src.find('\n', pos);
    if (end == std::string_view::npos) end = src.size();
    std::string_view line = src.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (size_t c = line.find_first_of("#;"); c != std::string_view::npos) line = line.substr(0, c);
    line = trim(line);
    Statement st;
    st.line = line_no;
    for (;;) {
      size_t colon = line.find(':');
      if (colon == std::string_view::npos) break;
      std::string_view name = trim(line.substr(0, colon));
      if (!is_identifier(name)) break;
      st.labels.emplace_back(name);
      line = trim(line.substr(colon + 1));
    }
    if (!line.empty()) {
      size_t sp = 0;
      while (sp < line.size() && !std::isspace(static_cast<unsigned char>(line[sp]))) ++sp;
      st.mnemonic = std::string(line.substr(0, sp));
      std::transform(st.mnemonic.begin(), st.mnemonic.end(), st.mnemonic.begin(),
                     [](unsigned char c) { return std::tolower(c); });
      std::string_view rest = trim(line.substr(sp));
      if (st.mnemonic == ".encrypt" || st.mnemonic == ".mode") {
        Operand op;
        op.label = std::string(rest);
        st.ops.push_back(op);
        if (st.mnemonic == ".encrypt") {
          if (rest == "on") {
            encrypted = true;
          } else if (rest == "off") {
            encrypted = false;
          } else {
            throw ParseError(line_no, ".encrypt expects on or off");
          }
        }
      } else if (!rest.empty()) {
        size_t start = 0;
        for (;;) {
          size_t comma = rest.find(',', start);
          st.ops.push_back(parse_operand(rest.substr(start, comma - start), line_no));
          if (comma == std::string_view::npos) break;
          start = comma + 1;
        }
      }
    }
    st.encrypted = encrypted;
    if (!st.labels.empty() || !st.mnemonic.empty()) out.push_back(std::move(st));
    if (end == src.size()) break;
  }
  return out;
}

std::optional<Op> op_by_name(std::string_view name) {
  for (int i = 0; i < kNumOps; ++i) {
    const auto op = static_cast<Op>(i);
    if (mnemonic(op) == name) return op;
  }
  return std::nullopt;
}

// Instructions are encoded whole; directives have their own sizes.
uint32_t statement_size(const Statement& st) {
  if (st.mnemonic.empty()) return 0;
  if (st.mnemonic[0] == '.') {
    if (st.mnemonic == ".word") return 4 * static_cast<uint32_t>(st.ops.size());
    if (st.mnemonic == ".dword") return 8 * static_cast<uint32_t>(st.ops.size());
    return 0;
  }
  auto op = op_by_name(st.mnemonic);
  if (!op) throw ParseError(st.line, fmt::format("unknown mnemonic '{}'", st.mnemonic));
  Instruction probe;
  probe.op = *op;
  return (st.encrypted && is_immediate(probe)) ? 12 : 4;
}

class Assembler {
 public:
  Assembler(const Codec& codec, uint64_t seed) : codec_(codec), seed_(seed) {}

  AsmResult run(std::string_view source, const AsmOptions& opts) {
    stmts_ = parse_source(source);
    AsmResult res;
    std::map<std::string, uint32_t> prev;
    for (res.passes = 1;; ++res.passes) {
      assign_addresses();
      if (res.passes > 1 && labels_ == prev) break;
      if (res.passes >= 3) throw ParseError(0, "address assignment did not converge");
      prev = labels_;
    }
    emit(res);
    res.diagnostics = lint_crypto_safety(source);
    if (opts.strict && !res.diagnostics.empty()) {
      std::string msg;
      for (const auto& d : res.diagnostics) msg += fmt::format("line {}: {}\n", d.line, d.message);
      throw CryptoSafetyError(msg);
    }
    return res;
  }

 private:
  void assign_addresses() {
    labels_.clear();
    uint32_t addr = 0;
    for (const Statement& st : stmts_) {
      for (const auto& l : st.labels) {
        if (!labels_.emplace(l, addr).second) {
          throw ParseError(st.line, fmt::format("duplicate label '{}'", l));
        }
      }
      if (st.mnemonic == ".org") {
        addr = static_cast<uint32_t>(literal(st, 0));
      } else if (st.mnemonic == ".space") {
        addr += static_cast<uint32_t>(literal(st, 0));
      } else {
        addr += statement_size(st);
      }
    }
  }

  int64_t literal(const Statement& st, size_t i) const {
    if (st.ops.size() <= i || st.ops[i].kind != Operand::kExpr || !st.ops[i].label.empty()) {
      throw ParseError(st.line, fmt::format("{} expects a numeric operand", st.mnemonic));
    }
    return st.ops[i].addend;
  }

  int64_t value(const Statement& st, const Operand& op) const {
    if (op.label.empty()) return op.addend;
    auto it = labels_.find(op.label);
    if (it == labels_.end()) {
      throw UndefinedLabel(fmt::format("line {}: undefined label '{}'", st.line, op.label));
    }
    return int64_t{it->second} + op.addend;
  }

  const Operand& expect(const Statement& st, size_t i, Operand::Kind kind) const {
    static constexpr const char* kNames[] = {"register", "immediate", "memory operand"};
    if (st.ops.size() <= i || st.ops[i].kind != kind) {
      throw ParseError(st.line, fmt::format("{}: operand {} must be a {}", st.mnemonic, i + 1,
                                            kNames[kind]));
    }
    return st.ops[i];
  }

  void expect_count(const Statement& st, size_t lo, size_t hi) const {
    if (st.ops.size() < lo || st.ops.size() > hi) {
      throw ParseError(st.line, fmt::format("{}: wrong number of operands", st.mnemonic));
    }
  }

  int64_t range_checked(const Statement& st, Op op, int64_t v) const {
    const ImmRange r = imm_range(op);
    if (v < r.min || v > r.max) {
      throw OperandOutOfRange(fmt::format("line {}: {} immediate {} outside [{}, {}]", st.line,
                                          mnemonic(op), v, r.min, r.max));
    }
    return v;
  }

  void put_text(const Statement& st, uint32_t addr, uint32_t word) {
    if (addr % 4 != 0) throw ParseError(st.line, fmt::format("code at unaligned 0x{:x}", addr));
    if (!img_.text.emplace(addr, word).second) {
      throw ParseError(st.line, fmt::format("text address 0x{:08x} assigned twice", addr));
    }
  }

  void emit(AsmResult& res) {
    img_ = Image{};
    bool have_entry = false;
    uint32_t addr = 0;
    uint64_t ordinal = 0;
    std::optional<uint32_t> first_text;
    for (const Statement& st : stmts_) {
      const std::string& m = st.mnemonic;
      if (m.empty()) continue;
      if (m == ".org") {
        addr = static_cast<uint32_t>(literal(st, 0));
      } else if (m == ".space") {
        addr += static_cast<uint32_t>(literal(st, 0));
      } else if (m == ".encrypt") {
      } else if (m == ".mode") {
        const std::string& v = st.ops.at(0).label;
        if (v == "user") {
          img_.start_mode = Mode::kUser;
        } else if (v == "super") {
          img_.start_mode = Mode::kSupervisor;
        } else {
          throw ParseError(st.line, ".mode expects user or super");
        }
      } else if (m == ".entry") {
        expect_count(st, 1, 1);
        img_.entry = static_cast<uint32_t>(value(st, expect(st, 0, Operand::kExpr)));
        have_entry = true;
      } else if (m == ".word") {
        for (const auto& op : st.ops) {
          if (op.kind != Operand::kExpr) throw ParseError(st.line, ".word expects values");
          if (!first_text) first_text = addr;
          put_text(st, addr, static_cast<uint32_t>(value(st, op)));
          addr += 4;
        }
      } else if (m == ".dword") {
        for (const auto& op : st.ops) {
          if (op.kind != Operand::kExpr) throw ParseError(st.line, ".dword expects values");
          if (addr % 8 != 0) throw ParseError(st.line, ".dword at an address not 8-aligned");
          if (!img_.data.emplace(addr, static_cast<uint64_t>(value(st, op))).second) {
            throw ParseError(st.line, fmt::format("data address 0x{:08x} assigned twice", addr));
          }
          addr += 8;
        }
      } else if (m[0] == '.') {
        throw ParseError(st.line, fmt::format("unknown directive '{}'", m));
      } else {
        if (!first_text) first_text = addr;
        addr = emit_instruction(st, addr, ordinal, res);
      }
    }
    if (!have_entry && first_text && !img_.text.count(img_.entry)) img_.entry = *first_text;
    res.image = img_;
  }

  uint32_t emit_instruction(const Statement& st, uint32_t addr, uint64_t& ordinal, AsmResult& res) {
    Instruction in;
    in.op = *op_by_name(st.mnemonic);
    const Format fmt_kind = format_of(in.op);
    auto reg = [&](size_t i) { return static_cast<uint8_t>(expect(st, i, Operand::kReg).reg); };
    std::optional<int64_t> imm_value;  // immediate-class literal
    const bool encrypted_imm = st.encrypted && is_immediate(in);

    switch (fmt_kind) {
      case Format::kOffset26: {
        expect_count(st, 1, 1);
        const Operand& t = expect(st, 0, Operand::kExpr);
        int64_t words;
        if (t.label.empty()) {
          words = t.addend;
        } else {
          const int64_t target = value(st, t);
          if ((target - int64_t{addr}) % 4 != 0) {
            throw ParseError(st.line, "branch target not word aligned");
          }
          words = (target - int64_t{addr}) / 4;
        }
        in.imm = static_cast<int32_t>(range_checked(st, in.op, words));
        break;
      }
      case Format::kConst16:
        expect_count(st, 0, 1);
        if (!st.ops.empty()) {
          in.imm = static_cast<int32_t>(
              range_checked(st, in.op, value(st, expect(st, 0, Operand::kExpr))));
        }
        break;
      case Format::kPrefix: {
        expect_count(st, 2, 2);
        const int64_t idx = value(st, expect(st, 0, Operand::kExpr));
        if (idx != 0 && idx != 1) throw OperandOutOfRange(fmt::format("line {}: prefix index must be 0 or 1", st.line));
        in.prefix_index = static_cast<uint8_t>(idx);
        in.imm = static_cast<int32_t>(range_checked(st, in.op, value(st, expect(st, 1, Operand::kExpr))));
        break;
      }
      case Format::kNone: expect_count(st, 0, 0); break;
      case Format::kRegJump:
        expect_count(st, 1, 1);
        in.rb = reg(0);
        break;
      case Format::kLoad16:
      case Format::kLoad11: {
        expect_count(st, 2, 2);
        in.rd = reg(0);
        const Operand& mem = expect(st, 1, Operand::kMem);
        in.ra = static_cast<uint8_t>(mem.reg);
        in.imm = static_cast<int32_t>(range_checked(st, in.op, value(st, mem)));
        break;
      }
      case Format::kStore16:
      case Format::kStore11: {
        expect_count(st, 2, 2);
        const Operand& mem = expect(st, 0, Operand::kMem);
        in.ra = static_cast<uint8_t>(mem.reg);
        in.rb = reg(1);
        in.imm = static_cast<int32_t>(range_checked(st, in.op, value(st, mem)));
        break;
      }
      case Format::kImmSigned:
      case Format::kImmUnsigned:
      case Format::kShiftImm:
        expect_count(st, 3, 3);
        in.rd = reg(0);
        in.ra = reg(1);
        imm_value = value(st, expect(st, 2, Operand::kExpr));
        if (!encrypted_imm) in.imm = static_cast<int32_t>(range_checked(st, in.op, *imm_value));
        break;
      case Format::kMfspr:
        expect_count(st, 3, 3);
        in.rd = reg(0);
        in.ra = reg(1);
        in.imm = static_cast<int32_t>(range_checked(st, in.op, value(st, expect(st, 2, Operand::kExpr))));
        break;
      case Format::kMtspr:
        expect_count(st, 3, 3);
        in.ra = reg(0);
        in.rb = reg(1);
        in.imm = static_cast<int32_t>(range_checked(st, in.op, value(st, expect(st, 2, Operand::kExpr))));
        break;
      case Format::kReg3:
        expect_count(st, 3, 3);
        in.rd = reg(0);
        in.ra = reg(1);
        in.rb = reg(2);
        break;
      case Format::kSetFlag:
        expect_count(st, 2, 2);
        in.ra = reg(0);
        in.rb = reg(1);
        break;
    }

    if (!encrypted_imm) {
      put_text(st, addr, encode(in));
      return addr + 4;
    }

    const int64_t v = *imm_value;
    if (v < INT32_MIN || v > int64_t{UINT32_MAX}) {
      throw OperandOutOfRange(fmt::format("line {}: immediate {} does not fit 32 bits", st.line, v));
    }
    // Shift immediates keep their sub-operation in bits [15:14] of the
    // field, so the ciphertext must agree there.
    const int shift_sub = in.op == Op::kSlli ? 0 : in.op == Op::kSrli ? 1 : in.op == Op::kSrai ? 2 : -1;
    uint64_t block;
    for (;;) {
      const PaddedWord p{static_cast<uint32_t>(v), make_padding(seed_, ordinal++)};
      block = codec_.encrypt(p).block;
      if (shift_sub < 0 || static_cast<int>((block >> 14) & 3) == shift_sub) break;
    }
    const auto imm16 = static_cast<uint16_t>(block);
    switch (fmt_kind) {
      case Format::kImmSigned: in.imm = static_cast<int16_t>(imm16); break;
      case Format::kShiftImm: in.imm = imm16 & 0x3FFF; break;
      default: in.imm = imm16; break;
    }
    Instruction p0{Op::kPrefix, 0, 0, 0, 0, static_cast<int32_t>((block >> 40) & 0xFFFFFF)};
    Instruction p1{Op::kPrefix, 0, 0, 0, 1, static_cast<int32_t>((block >> 16) & 0xFFFFFF)};
    put_text(st, addr, encode(p0));
    put_text(st, addr + 4, encode(p1));
    put_text(st, addr + 8, encode(in));
    res.encrypted_immediates += 1;
    res.prefix_words += 2;
    return addr + 12;
  }

  const Codec& codec_;
  uint64_t seed_;
  std::vector<Statement> stmts_;
  std::map<std::string, uint32_t> labels_;
  Image img_;
};

// Per-register lint state inside one basic block.
struct RegTaint {
  bool linkage = false;   // derived from r9 / JAL
  bool traceable = false; // legitimate jump target
};

bool ends_block(Op op) {
  Instruction probe;
  probe.op = op;
  return is_control_transfer(probe) || op == Op::kSys || op == Op::kRfe;
}

}  // namespace

AsmResult assemble(std::string_view source, const Codec& codec, uint64_t seed,
                   const AsmOptions& opts) {
  return Assembler(codec, seed).run(source, opts);
}

std::vector<Diagnostic> lint_crypto_safety(std::string_view source) {
  const std::vector<Statement> stmts = parse_source(source);
  std::vector<Diagnostic> out;
  std::array<RegTaint, kNumGprs> regs{};
  auto start_block = [&regs] {
    regs.fill({});
    regs[kLinkRegister] = {true, true};
  };
  start_block();

  for (const Statement& st : stmts) {
    if (!st.labels.empty()) start_block();
    if (st.mnemonic.empty() || st.mnemonic[0] == '.' || !st.encrypted) continue;
    auto op = op_by_name(st.mnemonic);
    if (!op) throw ParseError(st.line, fmt::format("unknown mnemonic '{}'", st.mnemonic));
    auto reg_at = [&](size_t i) -> int {
      return i < st.ops.size() && st.ops[i].kind == Operand::kReg ? st.ops[i].reg : -1;
    };
    auto expr_at = [&](size_t i) -> const Operand* {
      return i < st.ops.size() && st.ops[i].kind == Operand::kExpr ? &st.ops[i] : nullptr;
    };
    auto tainted = [&](int r) { return r > 0 && regs[r].linkage; };

    Instruction probe;
    probe.op = *op;
    const InstrClass cls = classify(probe);
    if (cls == InstrClass::kRegister || cls == InstrClass::kImmediate) {
      const int rd = reg_at(0);
      const SourceRegs srcs = [&]() -> SourceRegs {
        if (format_of(*op) == Format::kSetFlag) return {reg_at(0), reg_at(1)};
        return {reg_at(1), cls == InstrClass::kRegister ? reg_at(2) : -1};
      }();
      const Operand* imm = cls == InstrClass::kImmediate ? expr_at(2) : nullptr;
      const bool is_set_flag = format_of(*op) == Format::kSetFlag;
      std::optional<int> move_src;
      if (!is_set_flag) {
        if (*op == Op::kOr && srcs.b == 0) move_src = srcs.a;
        if (*op == Op::kOr && srcs.a == 0) move_src = srcs.b;
        if ((*op == Op::kAddi || *op == Op::kOri || *op == Op::kXori) && imm && imm->label.empty() &&
            imm->addend == 0) {
          move_src = srcs.a;
        }
      }
      const bool label_move = imm && !imm->label.empty() && srcs.a == 0 &&
                              (*op == Op::kOri || *op == Op::kAddi);
      if (move_src) {
        if (rd > 0) regs[rd] = *move_src > 0 ? regs[*move_src] : RegTaint{};
      } else if (label_move) {
        if (rd > 0) regs[rd] = {false, true};
      } else {
        if (tainted(srcs.a) || tainted(srcs.b)) {
          out.push_back({st.line, "arithmetic on program address"});
        }
        if (!is_set_flag && rd > 0) regs[rd] = {};
      }
    } else if (cls == InstrClass::kLoad || *op == Op::kMfspr || cls == InstrClass::kClass64) {
      const int rd = reg_at(0);
      if (rd > 0 && *op != Op::kSd) regs[rd] = {};
    } else if (*op == Op::kJr) {
      const int rb = reg_at(0);
      if (rb != 0 && (rb < 0 || !regs[rb].traceable)) {
        out.push_back({st.line, "computed jump target"});
      }
    }
    if (*op == Op::kJal || *op == Op::kJalr) regs[kLinkRegister] = {true, true};
    if (ends_block(*op)) start_block();
  }
  return out;
}

}  // namespace kpu
