#include "kpu/pipeline.h"

#include <fmt/format.h>

#include <utility>

#include "kpu/error.h"

namespace kpu {
namespace {

std::vector<Stage> codec_stages() {
  std::vector<Stage> out;
  for (int i = 0; i < 10; ++i) out.push_back({StageKind::kCodec, i});
  return out;
}

std::vector<Stage> make_stages(PlanKind kind) {
  using K = StageKind;
  std::vector<Stage> s;
  switch (kind) {
    case PlanKind::kShort:
      s = {{K::kFetch}, {K::kDecode}, {K::kRead}, {K::kExecute}, {K::kWrite}};
      break;
    case PlanKind::kA: {
      s = {{K::kFetch}, {K::kDecode}, {K::kRead}, {K::kExecute}, {K::kMemory}};
      auto c = codec_stages();
      s.insert(s.end(), c.begin(), c.end());
      s.push_back({K::kWrite});
      break;
    }
    case PlanKind::kB: {
      s = {{K::kFetch}, {K::kDecode}};
      auto c = codec_stages();
      s.insert(s.end(), c.begin(), c.end());
      s.push_back({K::kRead});
      s.push_back({K::kExecute});
      s.push_back({K::kMemory});
      s.push_back({K::kWrite});
      break;
    }
  }
  return s;
}

enum class Cause : uint8_t { kStall, kRefill };
enum class Ready : uint8_t { kAlu, kMem };
enum class CodecDir : uint8_t { kNone, kEncrypt, kDecrypt };
enum class CodecUse : uint8_t { kNone, kLoad, kStore, kImmediate };

struct Slot {
  uint64_t seq = 0;
  uint32_t pc = 0;
  Mode mode = Mode::kSupervisor;
  const PipelinePlan* plan = nullptr;
  int worked = -1;
  uint64_t fetch_cycle = 0;
  uint64_t stall_cycles = 0;

  bool fetch_ok = true;
  bool decode_ok = false;
  Instruction instr;

  uint32_t pred_next = 0;
  bool bpb_hit = false;

  bool illegal = false;
  bool serializing = false;

  // Codec stage state.
  CodecDir dir = CodecDir::kNone;
  CodecUse use = CodecUse::kNone;
  bool passthrough = false;
  uint64_t codec_in = 0;
  uint64_t codec_state = 0;
  uint64_t imm_plain = 0;

  bool executed = false;
  int dest = -1;
  uint64_t result = 0;
  bool ready = false;
  uint64_t ready_cycle = 0;
  Ready ready_kind = Ready::kAlu;

  FlagUpdate flags;
  bool spr_write = false;
  uint32_t spr_index = 0;
  uint64_t spr_value = 0;

  bool user_load = false;
  bool user_store = false;
  bool store_seen = false;  // passed M
  uint64_t ea = 0;
  uint64_t store_plain = 0;
  uint64_t sealed = 0;
  uint64_t phys = 0;
  bool cache_hit = false;
  bool write_hit = false;

  bool sup_store = false;
  uint64_t sup_value = 0;

  uint32_t next_pc = 0;
  bool taken = false;
  bool print = false;
  uint32_t print_value = 0;
  bool exit = false;
};

struct Entry {
  std::optional<Slot> slot;
  Cause cause = Cause::kRefill;
};

uint32_t low32(uint64_t v) { return static_cast<uint32_t>(v); }
uint32_t high32(uint64_t v) { return static_cast<uint32_t>(v >> 32); }
uint64_t make_plain(uint32_t low, uint32_t pad) { return (uint64_t{pad} << 32) | low; }

bool writes_flag_f(const Instruction& in, Mode mode) {
  if (in.op >= Op::kSfeq && in.op <= Op::kSfles) return true;
  return mode == Mode::kSupervisor && in.op == Op::kMtspr;
}

bool reads_flag(const Instruction& in) { return in.op == Op::kBf || in.op == Op::kBnf; }

SourceRegs slot_sources(const Instruction& in) {
  if (in.op == Op::kNop && in.imm == 2) return {3, -1};
  return source_registers(in);
}

}  // namespace

std::string Stage::name() const {
  switch (kind) {
    case StageKind::kFetch: return "F";
    case StageKind::kDecode: return "D";
    case StageKind::kRead: return "R";
    case StageKind::kExecute: return "X";
    case StageKind::kMemory: return "M";
    case StageKind::kCodec: return fmt::format("C{}", codec_index + 1);
    case StageKind::kWrite: return "W";
  }
  return "?";
}

const PipelinePlan& PipelinePlan::get(PlanKind kind) {
  static const PipelinePlan kShortPlan(PlanKind::kShort, make_stages(PlanKind::kShort));
  static const PipelinePlan kAPlan(PlanKind::kA, make_stages(PlanKind::kA));
  static const PipelinePlan kBPlan(PlanKind::kB, make_stages(PlanKind::kB));
  switch (kind) {
    case PlanKind::kShort: return kShortPlan;
    case PlanKind::kA: return kAPlan;
    case PlanKind::kB: return kBPlan;
  }
  return kShortPlan;
}

int PipelinePlan::position_of(StageKind k) const {
  for (int i = 0; i < depth(); ++i) {
    if (stages_[i].kind == k) return i;
  }
  return -1;
}

const PipelinePlan& select_config(const Instruction& instr, Mode mode) {
  if (mode == Mode::kSupervisor) return PipelinePlan::get(PlanKind::kShort);
  return PipelinePlan::get(is_immediate(instr) ? PlanKind::kB : PlanKind::kA);
}

void PrefixLatch::push(const Instruction& prefix) {
  const auto payload = static_cast<uint32_t>(prefix.imm) & 0xFFFFFF;
  if (prefix.prefix_index == 0) {
    p0_ = payload;
    state_ = 1;
  } else if (state_ == 1) {
    p1_ = payload;
    state_ = 2;
  } else {
    state_ = 0;
  }
}

uint64_t PrefixLatch::consume(uint16_t imm16) {
  const bool ok = state_ == 2;
  state_ = 0;
  if (!ok) throw MissingPrefix("immediate instruction without both prefixes");
  return join_immediate(p0_, p1_, imm16);
}

BranchPredictionBuffer::BranchPredictionBuffer(uint32_t entries) {
  if (entries == 0 || (entries & (entries - 1)) != 0) {
    throw ConfigError("branch prediction buffer size must be a power of two");
  }
  table_.resize(entries);
}

BranchPredictionBuffer::Prediction BranchPredictionBuffer::lookup(uint32_t pc) const {
  const Entry& e = table_[index_of(pc)];
  if (!e.valid || e.tag != pc) return {};
  return {true, e.taken, e.target};
}

void BranchPredictionBuffer::update(uint32_t pc, bool taken, uint32_t target) {
  table_[index_of(pc)] = {true, pc, target, taken};
}

class Engine::Impl {
 public:
  Impl(const Image& img, const Codec& codec, const EngineConfig& cfg)
      : codec_(codec), cfg_(cfg), state_(cfg.memory), bpb_(cfg.bpb_entries) {
    state_.reset(img, codec, cfg.seed);
    refill(state_.pc());
    pipe_[0] = fetch();
  }

  bool step() {
    if (finished_) return false;
    if (cycle_ >= cfg_.max_cycles) {
      finish(RunOutcome::kMaxCycles, fmt::format("exceeded {} cycles", cfg_.max_cycles));
      return false;
    }
    committed_.reset();
    transitioned_ = false;
    try {
      work();
    } catch (const IllegalOpcode& e) {
      finish(RunOutcome::kFault, e.what());
    } catch (const PhysicalExhausted& e) {
      finish(RunOutcome::kFault, e.what());
    } catch (const UnalignedSupervisorAccess& e) {
      finish(RunOutcome::kFault, e.what());
    } catch (const OutOfRegion& e) {
      finish(RunOutcome::kFault, e.what());
    } catch (const ProgramFault& e) {
      finish(RunOutcome::kFault, e.what());
    }
    if (cfg_.trace) trace_.push_back(trace_line());
    account();
    ++cycle_;
    if (!finished_) advance();
    return !finished_;
  }

  RunOutcome run() {
    while (step()) {
    }
    return outcome_;
  }

  bool finished_ = false;
  RunOutcome outcome_ = RunOutcome::kExited;
  std::string message_;

  Codec codec_;
  EngineConfig cfg_;
  MachineState state_;
  BranchPredictionBuffer bpb_;
  CycleStats stats_;
  std::vector<uint32_t> output_;
  std::vector<std::string> trace_;
  std::vector<RetiredRecord> retired_;
  std::function<void(uint32_t)> sink_;
  uint64_t cycle_ = 0;
  uint64_t forwards_ = 0;
  uint64_t cross_mode_forwards_ = 0;
  uint64_t codec_checks_ = 0;

 private:
  struct Committed {
    Mode mode;
    InstrClass cls;
  };

  int depth() const { return static_cast<int>(pipe_.size()); }

  void finish(RunOutcome o, std::string msg) {
    finished_ = true;
    outcome_ = o;
    message_ = std::move(msg);
  }

  void refill(uint32_t pc) {
    const int d = state_.mode() == Mode::kUser ? kLongDepth : kShortDepth;
    pipe_.assign(d, Entry{});
    fetch_pc_ = pc;
    latch_.clear();
  }

  void squash_younger(int p) {
    for (int q = 0; q < p; ++q) pipe_[q] = Entry{};
    latch_.clear();
  }

  Entry fetch() {
    for (const Entry& e : pipe_) {
      if (e.slot && e.slot->serializing) return Entry{};
    }
    Slot s;
    s.seq = next_seq_++;
    s.pc = fetch_pc_;
    s.mode = state_.mode();
    s.fetch_cycle = cycle_;
    const auto word = state_.memory().fetch(s.pc);
    if (!word) {
      s.fetch_ok = false;
    } else {
      try {
        s.instr = decode(*word);
        s.decode_ok = true;
      } catch (const IllegalOpcode&) {
        s.decode_ok = false;
      }
    }
    s.plan = s.decode_ok ? &select_config(s.instr, s.mode)
                         : &PipelinePlan::get(s.mode == Mode::kUser ? PlanKind::kA
                                                                     : PlanKind::kShort);
    const auto pred = bpb_.lookup(s.pc);
    s.bpb_hit = pred.hit;
    s.pred_next = pred.hit && pred.taken ? pred.target : s.pc + 4;
    fetch_pc_ = s.pred_next;
    return Entry{std::move(s), Cause::kRefill};
  }

  void work() {
    for (int p = depth() - 1; p >= 0 && !finished_ && !transitioned_; --p) {
      if (!pipe_[p].slot) continue;
      Slot& s = *pipe_[p].slot;
      if (s.worked == p) continue;
      s.worked = p;
      const Stage& st = s.plan->at(p);
      switch (st.kind) {
        case StageKind::kFetch:
        case StageKind::kRead: break;
        case StageKind::kDecode: do_decode(s, p); break;
        case StageKind::kExecute: do_execute(s, p); break;
        case StageKind::kMemory: do_memory(s, p); break;
        case StageKind::kCodec: do_codec(s, st.codec_index); break;
        case StageKind::kWrite: do_commit(s); break;
      }
    }
  }

  void do_decode(Slot& s, int p) {
    if (s.fetch_ok) {
      if (!s.decode_ok) {
        s.illegal = true;
      } else if (s.mode == Mode::kUser) {
        const Instruction& in = s.instr;
        if (supervisor_only(in) || in.op == Op::kRfe) {
          s.illegal = true;
        } else if (in.op == Op::kPrefix) {
          latch_.push(in);
        } else if (is_immediate(in)) {
          try {
            s.codec_in = latch_.consume(immediate_field_bits(in));
            s.codec_state = s.codec_in;
            s.dir = CodecDir::kDecrypt;
            s.use = CodecUse::kImmediate;
          } catch (const MissingPrefix&) {
            s.illegal = true;
          }
        } else {
          latch_.clear();
        }
        if (s.illegal) latch_.clear();
      }
    }
    const Op op = s.instr.op;
    if (!s.fetch_ok || s.illegal ||
        (s.decode_ok && (op == Op::kSys || op == Op::kRfe || (op == Op::kNop && s.instr.imm == 1)))) {
      s.serializing = true;
      squash_younger(p);
    }
    s.dest = (s.fetch_ok && !s.illegal && s.decode_ok) ? dest_register(s.instr) : -1;
    if (s.dest == 0) s.dest = -1;
  }

  // Called from advance(), after the cycle that just finished was counted.
  // ALU results bypass into the next X; memory results reach R one cycle
  // after they are produced.
  bool available(const Slot& prod) const {
    if (!prod.ready) return false;
    const uint64_t finished = cycle_ - 1;
    return prod.ready_kind == Ready::kAlu ? prod.ready_cycle <= finished
                                          : prod.ready_cycle + 1 <= finished;
  }

  const Slot* older_writer(int p, int reg) const {
    for (int q = p + 1; q < depth(); ++q) {
      const auto& e = pipe_[q];
      if (e.slot && e.slot->dest == reg) return &*e.slot;
    }
    return nullptr;
  }

  const Slot* older_flag_writer(int p) const {
    for (int q = p + 1; q < depth(); ++q) {
      const auto& e = pipe_[q];
      if (e.slot && e.slot->decode_ok && !e.slot->illegal &&
          writes_flag_f(e.slot->instr, e.slot->mode)) {
        return &*e.slot;
      }
    }
    return nullptr;
  }

  bool operands_ready(const Slot& s, int p) const {
    if (!s.fetch_ok || !s.decode_ok || s.illegal) return true;
    const SourceRegs src = slot_sources(s.instr);
    for (int r : {src.a, src.b}) {
      if (r <= 0) continue;
      if (const Slot* w = older_writer(p, r); w && !available(*w)) return false;
    }
    if (reads_flag(s.instr)) {
      if (const Slot* w = older_flag_writer(p); w && !w->executed) return false;
    }
    if (s.instr.op == Op::kMfspr && s.mode == Mode::kSupervisor) {
      for (int q = p + 1; q < depth(); ++q) {
        const auto& e = pipe_[q];
        if (e.slot && !e.slot->executed && !e.slot->illegal) return false;
      }
    }
    return true;
  }

  uint64_t operand(const Slot& s, int p, int reg) {
    if (reg <= 0) return s.mode == Mode::kUser ? state_.read_operand(0) : 0;
    if (const Slot* w = older_writer(p, reg)) {
      if (!available(*w)) throw SimulationFault("operand consumed before it was available");
      ++forwards_;
      if (w->mode != s.mode) ++cross_mode_forwards_;
      return w->result;
    }
    return state_.read_operand(reg);
  }

  bool current_flag(int p) const {
    if (const Slot* w = older_flag_writer(p)) {
      if (w->instr.op == Op::kMtspr) {
        if (w->spr_index == spr::kSr) return (w->spr_value & sr::kF) != 0;
      } else if (w->flags.f) {
        return *w->flags.f;
      }
    }
    return state_.flag();
  }

  uint64_t supervisor_spr(int p, uint32_t idx) const {
    uint64_t v = state_.read_spr(idx);
    for (int q = depth() - 1; q > p; --q) {
      const auto& e = pipe_[q];
      if (!e.slot || e.slot->illegal) continue;
      const Slot& w = *e.slot;
      if (w.spr_write && w.spr_index == idx && idx != spr::kConfig) {
        v = idx == spr::kSr ? (w.spr_value | sr::kSm) : w.spr_value;
      }
      if (idx == spr::kSr) v = w.flags.apply(v);
    }
    return v;
  }

  void set_alu(Slot& s, uint64_t v) {
    s.result = v;
    s.ready = true;
    s.ready_cycle = cycle_;
    s.ready_kind = Ready::kAlu;
  }

  void do_execute(Slot& s, int p) {
    s.executed = true;
    s.next_pc = s.pc + 4;
    if (!s.fetch_ok || !s.decode_ok || s.illegal) return;
    const Instruction& in = s.instr;
    const bool user = s.mode == Mode::kUser;
    const SourceRegs src = slot_sources(in);
    const uint64_t a = src.a >= 0 ? operand(s, p, src.a) : 0;
    const uint64_t b = src.b >= 0 ? operand(s, p, src.b) : 0;

    switch (classify(in)) {
      case InstrClass::kRegister:
      case InstrClass::kImmediate: {
        uint64_t bv;
        if (is_immediate(in)) {
          bv = user ? s.imm_plain : static_cast<uint64_t>(static_cast<uint32_t>(in.imm));
        } else {
          bv = b;
        }
        const AluResult r = alu32(in.op, low32(a), low32(bv));
        if (alu_writes_flags(in.op)) s.flags = r.flags;
        if (s.dest >= 0) {
          set_alu(s, user ? make_plain(r.value, pad_mix(high32(a), high32(bv), pad_op_for(in.op)))
                          : uint64_t{r.value});
        }
        break;
      }
      case InstrClass::kLoad: {
        if (user) {
          s.user_load = true;
          s.ea = make_plain(low32(a) + static_cast<uint32_t>(in.imm),
                            pad_mix(high32(a), static_cast<uint32_t>(in.imm), kPadAddress));
        } else {
          const uint64_t addr = uint64_t{low32(a) + static_cast<uint32_t>(in.imm)};
          s.result = low32(state_.memory().supervisor_read(addr));
          s.ready = true;
          s.ready_cycle = cycle_;
          s.ready_kind = Ready::kMem;
        }
        break;
      }
      case InstrClass::kStore: {
        if (user) {
          s.user_store = true;
          s.ea = make_plain(low32(a) + static_cast<uint32_t>(in.imm),
                            pad_mix(high32(a), static_cast<uint32_t>(in.imm), kPadAddress));
          s.store_plain = b;
        } else {
          s.sup_store = true;
          s.phys = state_.memory().supervisor_index(uint64_t{low32(a) + static_cast<uint32_t>(in.imm)});
          s.sup_value = low32(b);
        }
        break;
      }
      case InstrClass::kBranch: {
        const bool f = current_flag(p);
        s.taken = in.op == Op::kBf ? f : !f;
        if (s.taken) s.next_pc = s.pc + static_cast<uint32_t>(in.imm) * 4u;
        break;
      }
      case InstrClass::kJump: {
        s.taken = true;
        if (in.op == Op::kJ || in.op == Op::kJal) {
          s.next_pc = s.pc + static_cast<uint32_t>(in.imm) * 4u;
        } else if (user) {
          if (high32(a) != kProgramAddressTag) {
            s.illegal = true;
            s.serializing = true;
            s.ready = false;
            s.dest = -1;
            squash_younger(p);
            return;
          }
          s.next_pc = low32(a);
        } else {
          s.next_pc = low32(a);
        }
        if (s.dest >= 0) {
          set_alu(s, user ? program_address_plain(s.pc + 4) : to_program_address(s.pc + 4).block);
        }
        break;
      }
      case InstrClass::kNop:
        if (in.imm == 2) {
          s.print = true;
          s.print_value = low32(a);
        } else if (in.imm == 1) {
          s.exit = true;
        }
        break;
      case InstrClass::kSpr: {
        const uint32_t idx = low32(a) | static_cast<uint32_t>(in.imm);
        if (in.op == Op::kMfspr) {
          if (user) {
            const uint64_t v = state_.read_spr(idx);
            set_alu(s, make_plain(low32(v),
                                  pad_mix(high32(a), static_cast<uint32_t>(in.imm), kPadSpr)));
          } else {
            set_alu(s, supervisor_spr(p, idx));
          }
        } else if (!user) {
          s.spr_write = true;
          s.spr_index = idx;
          s.spr_value = b;
        }
        break;
      }
      case InstrClass::kClass64: {
        if (in.op == Op::kAdd64) {
          set_alu(s, a + b);
        } else if (in.op == Op::kLd) {
          s.result = state_.memory().supervisor_read(a + static_cast<int64_t>(in.imm));
          s.ready = true;
          s.ready_cycle = cycle_;
          s.ready_kind = Ready::kMem;
        } else {
          s.sup_store = true;
          s.phys = state_.memory().supervisor_index(a + static_cast<int64_t>(in.imm));
          s.sup_value = b;
        }
        break;
      }
      case InstrClass::kPrefix:
      case InstrClass::kSysTrap: break;
    }

    if (is_control_transfer(in)) bpb_.update(s.pc, s.taken, s.next_pc);
    if (s.next_pc != s.pred_next && !s.serializing) {
      squash_younger(p);
      fetch_pc_ = s.next_pc;
    }
  }

  void do_memory(Slot& s, int p) {
    if (s.user_load) {
      auto& cache = state_.memory().cache();
      if (auto hit = cache.lookup(s.ea)) {
        s.cache_hit = true;
        s.result = *hit;
        s.ready = true;
        s.ready_cycle = cycle_;
        s.ready_kind = Ready::kMem;
        return;
      }
      s.phys = state_.memory().tlb().translate({codec_.seal(s.ea)});
      std::optional<uint64_t> cell;
      for (int q = p + 1; q < depth() && !cell; ++q) {
        const auto& e = pipe_[q];
        if (e.slot && e.slot->user_store && e.slot->store_seen && e.slot->ea == s.ea) {
          cell = codec_.seal(e.slot->store_plain);
        }
      }
      if (!cell) cell = state_.memory().read_cell(s.phys);
      s.use = CodecUse::kLoad;
      if (*cell != 0 && high32(*cell) == 0) {
        s.passthrough = true;
        s.codec_in = *cell;
      } else {
        s.dir = CodecDir::kDecrypt;
        s.codec_in = s.codec_state = *cell;
      }
    } else if (s.user_store) {
      s.store_seen = true;
      s.write_hit = state_.memory().cache().insert(s.ea, s.store_plain);
      s.phys = state_.memory().tlb().translate({codec_.seal(s.ea)});
      s.use = CodecUse::kStore;
      if (high32(s.store_plain) == kProgramAddressTag) {
        s.passthrough = true;
        s.codec_in = s.store_plain;
      } else {
        s.dir = CodecDir::kEncrypt;
        s.codec_in = s.codec_state = s.store_plain;
      }
    }
  }

  void do_codec(Slot& s, int k) {
    if (s.use == CodecUse::kNone) return;
    if (!s.passthrough) {
      s.codec_state = s.dir == CodecDir::kDecrypt ? codec_.decrypt_stage(s.codec_state, k)
                                                  : codec_.encrypt_stage(s.codec_state, k);
    }
    if (k != codec_.rounds() - 1) return;
    if (!s.passthrough) {
      ++codec_checks_;
      const uint64_t whole = s.dir == CodecDir::kDecrypt ? codec_.decrypt_block(s.codec_in)
                                                         : codec_.encrypt_block(s.codec_in);
      if (whole != s.codec_state) throw SimulationFault("codec stages disagree with block cipher");
    }
    switch (s.use) {
      case CodecUse::kLoad:
        s.result = s.passthrough ? program_address_plain(low32(s.codec_in)) : s.codec_state;
        s.ready = true;
        s.ready_cycle = cycle_;
        s.ready_kind = Ready::kMem;
        break;
      case CodecUse::kStore:
        s.sealed = s.passthrough ? low32(s.codec_in) : s.codec_state;
        break;
      case CodecUse::kImmediate: s.imm_plain = s.codec_state; break;
      case CodecUse::kNone: break;
    }
  }

  void do_commit(Slot& s) {
    if (!s.fetch_ok) {
      committed_ = Committed{s.mode, InstrClass::kSysTrap};
      throw ProgramFault(fmt::format("instruction fetch from unmapped address 0x{:08x}", s.pc));
    }
    const InstrClass cls = s.illegal ? InstrClass::kSysTrap : classify(s.instr);
    committed_ = Committed{s.mode, cls};
    record(s);
    if (s.illegal) {
      state_.enter_exception(ExceptionCause::kIllegal, s.pc, codec_);
      transition();
      return;
    }
    const Instruction& in = s.instr;
    if (in.op == Op::kSys) {
      state_.enter_exception(ExceptionCause::kSyscall, s.pc + 4, codec_);
      transition();
      return;
    }
    if (in.op == Op::kRfe) {
      state_.rfe(codec_);
      transition();
      return;
    }
    if (s.dest >= 0) state_.write_register(s.dest, s.result);
    if (!s.flags.empty()) state_.set_flags(s.flags);
    if (s.spr_write) state_.write_spr(s.spr_index, s.spr_value);
    ModeStats& ms = stats_.of(s.mode);
    if (s.user_store) {
      state_.memory().write_cell(s.phys, s.sealed);
      if (s.write_hit) {
        ++ms.cached_stores;
        ++stats_.user_cache.write_hits;
      } else {
        ++stats_.user_cache.write_misses;
      }
    }
    if (s.sup_store) state_.memory().write_cell(s.phys, s.sup_value);
    if (s.user_load) {
      if (s.cache_hit) {
        ++ms.cached_loads;
        ++stats_.user_cache.read_hits;
      } else {
        ++stats_.user_cache.read_misses;
      }
    }
    if (s.print) {
      output_.push_back(s.print_value);
      if (sink_) sink_(s.print_value);
    }
    if (is_control_transfer(in)) {
      const bool right = s.next_pc == s.pred_next;
      BpbStats& b = stats_.bpb;
      ++(s.bpb_hit ? (right ? b.hit_right : b.hit_wrong) : (right ? b.miss_right : b.miss_wrong));
    }
    state_.set_pc(s.next_pc);
    if (s.exit) finish(RunOutcome::kExited, "");
  }

  void record(const Slot& s) {
    if (!cfg_.keep_retired_log) return;
    retired_.push_back({s.seq, s.pc, s.instr, s.mode, s.fetch_cycle, cycle_, s.stall_cycles,
                        s.cache_hit});
  }

  void transition() {
    transitioned_ = true;
    refill(state_.pc());
  }

  void account() {
    ++stats_.cycles;
    if (committed_) {
      ++stats_.of(committed_->mode).by_class[static_cast<size_t>(committed_->cls)];
      ++stats_.instructions;
      return;
    }
    Mode m = state_.mode();
    for (int p = depth() - 1; p >= 0; --p) {
      if (pipe_[p].slot) {
        m = pipe_[p].slot->mode;
        break;
      }
    }
    ModeStats& ms = stats_.of(m);
    ++(pipe_.back().cause == Cause::kStall ? ms.stalls : ms.refills);
  }

  void advance() {
    if (transitioned_) {
      pipe_[0] = fetch();
      return;
    }
    const int d = depth();
    int frozen = -1;
    for (int p = d - 2; p >= 0; --p) {
      if (!pipe_[p].slot) continue;
      Slot& s = *pipe_[p].slot;
      if (s.plan->at(p + 1).kind == StageKind::kExecute && !operands_ready(s, p)) {
        frozen = p;
        ++s.stall_cycles;
        break;
      }
    }
    if (frozen < 0) {
      for (int p = d - 1; p > 0; --p) pipe_[p] = std::move(pipe_[p - 1]);
      pipe_[0] = fetch();
    } else {
      for (int p = d - 1; p > frozen + 1; --p) pipe_[p] = std::move(pipe_[p - 1]);
      pipe_[frozen + 1] = Entry{std::nullopt, Cause::kStall};
    }
  }

  std::string trace_line() const {
    std::string line = fmt::format("cycle {} |", cycle_);
    for (int p = 0; p < depth(); ++p) {
      if (!pipe_[p].slot) continue;
      const Slot& s = *pipe_[p].slot;
      const std::string_view mn =
          !s.fetch_ok ? std::string_view("-") : s.decode_ok ? mnemonic(s.instr.op) : "???";
      line += fmt::format(" {}:0x{:08x}:{}", s.plan->at(p).name(), s.pc, mn);
    }
    return line;
  }

  std::vector<Entry> pipe_;
  uint32_t fetch_pc_ = 0;
  uint64_t next_seq_ = 0;
  PrefixLatch latch_;
  std::optional<Committed> committed_;
  bool transitioned_ = false;
};

Engine::Engine(const Image& img, const Codec& codec, const EngineConfig& cfg)
    : impl_(std::make_unique<Impl>(img, codec, cfg)) {}
Engine::~Engine() = default;

bool Engine::step() { return impl_->step(); }
RunOutcome Engine::run() { return impl_->run(); }
bool Engine::finished() const { return impl_->finished_; }
RunOutcome Engine::outcome() const { return impl_->outcome_; }
const std::string& Engine::fault_message() const { return impl_->message_; }
const MachineState& Engine::state() const { return impl_->state_; }
MachineState& Engine::mutable_state() { return impl_->state_; }
const CycleStats& Engine::stats() const { return impl_->stats_; }
const BranchPredictionBuffer& Engine::bpb() const { return impl_->bpb_; }
const std::vector<uint32_t>& Engine::debug_output() const { return impl_->output_; }
const std::vector<std::string>& Engine::trace() const { return impl_->trace_; }
const std::vector<RetiredRecord>& Engine::retired() const { return impl_->retired_; }
uint64_t Engine::cycle() const { return impl_->cycle_; }
uint64_t Engine::forwards() const { return impl_->forwards_; }
uint64_t Engine::cross_mode_forwards() const { return impl_->cross_mode_forwards_; }
uint64_t Engine::codec_checks() const { return impl_->codec_checks_; }
void Engine::set_output_sink(std::function<void(uint32_t)> sink) { impl_->sink_ = std::move(sink); }

const RunResult& RunResult::check() const {
  switch (outcome) {
    case RunOutcome::kExited: return *this;
    case RunOutcome::kMaxCycles: throw MaxCyclesExceeded(message);
    case RunOutcome::kFault: throw ProgramFault(message);
  }
  return *this;
}

RunResult run(const Image& img, const Codec& codec, const EngineConfig& cfg) {
  Engine e(img, codec, cfg);
  e.run();
  RunResult r;
  r.outcome = e.outcome();
  r.message = e.fault_message();
  r.state = e.state();
  r.stats = e.stats();
  r.output = e.debug_output();
  r.trace = e.trace();
  return r;
}

std::string write_state_dump(MachineState& state, const Codec& codec) {
  state.flush_shadows(codec);
  std::string out = "KPUDUMP 1\n";
  out += fmt::format("MODE {}\n", mode_name(state.mode()));
  out += fmt::format("PC 0x{:08x}\n", state.pc());
  out += fmt::format("SR {:016x}\n", state.sr());
  for (int i = 0; i < kNumGprs; ++i) out += fmt::format("GPR {} {:016x}\n", i, state.real(i));
  out += state.memory().dump();
  return out;
}

}  // namespace kpu
