// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include <fmt/format.h>

#include <chrono>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "kpu/error.h"
#include "kpu/frontend.h"
#include "kpu/oracle.h"
#include "support/equivalence.h"
#include "support/progen.h"
#include "support/ref_cipher.h"
#include "support/test_util.h"
#include "support/timing_oracle.h"

namespace kpu {
namespace {

using namespace kpu::testing;

// Pinned tolerances.
constexpr int kEquivalencePrograms = 100;
constexpr int kMaxLogicalSteps = 5000;
constexpr double kEquivalenceSeconds = 60.0;
constexpr int kCodecBlocks = 100'000;
constexpr double kSupervisorCpiMax = 1.15;
constexpr double kUserCpiMin = 1.4;
constexpr double kUserCpiMax = 2.2;
constexpr double kPercentRounding = 0.2;

struct Verdict {
  bool pass;
  std::string detail;
};

const RetiredRecord* last_of(const Engine& e, Op op) {
  for (auto it = e.retired().rbegin(); it != e.retired().rend(); ++it) {
    if (it->instr.op == op) return &*it;
  }
  return nullptr;
}

Verdict oracle_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  int clean = 0;
  uint64_t max_steps = 0;
  for (int i = 0; i < kEquivalencePrograms; ++i) {
    const auto eq = check_equivalence(generate_program(10'000 + i));
    max_steps = std::max(max_steps, eq.oracle.steps);
    if (eq.outcome == RunOutcome::kExited && eq.oracle.exited && eq.report.ok()) ++clean;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {clean == kEquivalencePrograms && max_steps <= kMaxLogicalSteps && secs < kEquivalenceSeconds,
          fmt::format("{}/{} programs with zero mismatches, max {} steps, {:.1f} s", clean,
                      kEquivalencePrograms, max_steps, secs)};
}

Verdict codec_fidelity() {
  const Codec& c = test_codec();
  const auto rk = ref_round_keys(ref_key(kKeyHex));
  std::mt19937_64 rng(2024);
  int round_trip = 0, composed = 0, reference = 0;
  for (int i = 0; i < kCodecBlocks; ++i) {
    const uint64_t b = rng();
    const uint64_t e = c.encrypt_block(b);
    if (c.decrypt_block(e) == b) ++round_trip;
    uint64_t x = b;
    for (int s = 0; s < c.rounds(); ++s) x = c.encrypt_stage(x, s);
    uint64_t y = e;
    for (int s = 0; s < c.rounds(); ++s) y = c.decrypt_stage(y, s);
    if (x == e && y == b) ++composed;
    if (ref_encrypt(b, rk) == e) ++reference;
  }
  return {round_trip == kCodecBlocks && composed == kCodecBlocks && reference == kCodecBlocks,
          fmt::format("round trip {}/{}, stage composition {}/{}, reference cipher {}/{}",
                      round_trip, kCodecBlocks, composed, kCodecBlocks, reference, kCodecBlocks)};
}

Verdict prefix_mechanism() {
  const AsmResult r =
      assemble(".mode user\n.encrypt on\n.org 0x100\nl.addi r5, r5, 1\n", test_codec(), kSeed);
  std::vector<uint32_t> w;
  for (const auto& [a, word] : r.image.text) w.push_back(word);
  bool decrypts = false;
  if (w.size() == 3) {
    const Instruction p0 = decode(w[0]), p1 = decode(w[1]);
    const uint64_t block = join_immediate(static_cast<uint32_t>(p0.imm),
                                          static_cast<uint32_t>(p1.imm),
                                          static_cast<uint16_t>(w[2] & 0xFFFF));
    decrypts = p0.op == Op::kPrefix && p1.op == Op::kPrefix &&
               test_codec().decrypt(CipherWord{block}).low == 1;
  }
  auto e = run_program(R"(
        .mode user
        .encrypt off
        .org 0x100
        l.addi r3, r0, 1
        .org 0x700
        l.mfspr r20, r0, 32
        l.nop   1)");
  const bool vectored = e->outcome() == RunOutcome::kExited &&
                        e->state().mode() == Mode::kSupervisor && e->state().real(20) == 0x100;
  return {w.size() == 3 && decrypts && vectored,
          fmt::format("{} words, literal recovered {}, bare immediate vectored to 0x700 {}",
                      w.size(), decrypts, vectored)};
}

Verdict containment() {
  auto spr = run_program(user_program(R"(
        l.addi  r5, r0, 0xFFFF
        l.mtspr r0, r5, 17
        l.mfspr r3, r0, 17
        l.nop   1)"));
  const bool spr_zero = static_cast<uint32_t>(spr->state().read_operand(3)) == 0 &&
                        spr->state().mode() == Mode::kUser;

  auto sv = run_program(R"(
        .mode user
        .encrypt on
        .org 0x100
        l.addi r3, r0, 1234
        l.addi r1, r0, 0x40
        l.sw   0(r1), r3
        l.sys  0
        .org 0xC00
        .encrypt off
        l.nop  1)");
  const MachineState& st = sv->state();
  const auto& mem = st.memory();
  bool hidden = st.mode() == Mode::kSupervisor && mem.tlb().allocated() == 1;
  if (hidden) {
    const uint64_t reg = st.real(3);
    const uint64_t cell = mem.read_cell(mem.tlb().base());
    hidden = static_cast<uint32_t>(reg) != 1234 && (reg >> 32) != 1234 &&
             static_cast<uint32_t>(cell) != 1234 && (cell >> 32) != 1234 &&
             test_codec().decrypt(CipherWord{reg}).low == 1234 &&
             test_codec().decrypt(CipherWord{cell}).low == 1234;
  }

  auto c64 = run_program(R"(
        .mode user
        .org 0x100
        l.add64 r3, r4, r5
        .org 0x700
        l.mfspr r20, r0, 32
        l.nop   1)");
  const bool illegal = c64->state().mode() == Mode::kSupervisor && c64->state().real(20) == 0x100;
  return {spr_zero && hidden && illegal,
          fmt::format("SR write ignored and read 0 {}, supervisor sees only ciphertext {}, "
                      "user Class64 illegal {}",
                      spr_zero, hidden, illegal)};
}

Verdict flag_protocol() {
  // Carry and F are set before the trap; the handler copies SR into r20.
  auto e = run_program(R"(
        .mode user
        .encrypt on
        .org 0x100
        l.addi r3, r0, -1
        l.addi r4, r3, 1
        l.sfeq r4, r0
        l.sys  0
        l.nop  1
        .org 0xC00
        .encrypt off
        l.mfspr r20, r0, 17
        l.rfe)");
  const MachineState& st = e->state();
  const uint64_t seen = test_codec().open(st.real(20));
  const uint64_t user_flags = sr::kF | sr::kCy;
  const bool cleared = (seen & (sr::kF | sr::kCy | sr::kOv)) == 0;
  const bool round_trip = st.mode() == Mode::kUser && st.sr() == user_flags &&
                          st.hidden_esr_for_test() == user_flags;
  return {e->outcome() == RunOutcome::kExited && cleared && round_trip,
          fmt::format("handler SR 0x{:x}, SR after rfe 0x{:x} (expected 0x{:x})", seen, st.sr(),
                      user_flags)};
}

Verdict hazard_timing() {
  const int want_hit = predicted_stall(stages_a(), "M", true, stages_a(), 1);
  const int want_miss = predicted_stall(stages_a(), "C10", true, stages_a(), 1);
  auto hit = run_program(user_program(R"(
        l.addi r1, r0, 0x1000
        l.addi r5, r0, 77
        l.sw   0(r1), r5
        l.lwz  r3, 0(r1)
        l.add  r4, r3, r3
        l.nop  1)"));
  auto miss = run_program(user_program(R"(
        l.addi r1, r0, 0x1000
        l.lwz  r3, 64(r1)
        l.add  r4, r3, r3
        l.nop  1)"));
  const RetiredRecord* h = last_of(*hit, Op::kAdd);
  const RetiredRecord* m = last_of(*miss, Op::kAdd);
  const int got_hit = h ? static_cast<int>(h->stall_cycles) : -1;
  const int got_miss = m ? static_cast<int>(m->stall_cycles) : -1;
  const bool ok = want_hit == 2 && want_miss == 12 && got_hit == want_hit && got_miss == want_miss &&
                  last_of(*hit, Op::kLwz)->cache_hit && !last_of(*miss, Op::kLwz)->cache_hit;
  return {ok, fmt::format("load-use stall on cache hit {} (expected {}), on miss {} (expected {})",
                          got_hit, want_hit, got_miss, want_miss)};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict performance() {
  const std::string src = read_file(KPU_BENCHMARK_PATH);
  if (src.empty()) return {false, "benchmark source not found"};
  EngineConfig cfg = test_engine_config();
  cfg.keep_retired_log = false;
  auto e = run_program(src, cfg);
  const CycleStats& s = e->stats();
  const double sup = s.cpi(Mode::kSupervisor);
  const double usr = s.cpi(Mode::kUser);
  bool closure = e->outcome() == RunOutcome::kExited;
  uint64_t cycles = 0;
  for (Mode m : {Mode::kUser, Mode::kSupervisor}) {
    const ModeStats& ms = s.of(m);
    uint64_t classes = 0;
    for (uint64_t c : ms.by_class) classes += c;
    closure = closure && classes + ms.stalls + ms.refills == ms.cycles();
    cycles += ms.cycles();
  }
  closure = closure && cycles == s.cycles;
  const double pct_sum =
      std::round(1000.0 * s.of(Mode::kUser).cycles() / s.cycles) / 10.0 +
      std::round(1000.0 * s.of(Mode::kSupervisor).cycles() / s.cycles) / 10.0;
  const bool pct_ok = std::abs(pct_sum - 100.0) <= kPercentRounding;
  const bool ok = closure && pct_ok && sup <= kSupervisorCpiMax && usr >= kUserCpiMin &&
                  usr <= kUserCpiMax;
  return {ok, fmt::format("supervisor CPI {:.3f} (max {}), user CPI {:.3f} (band [{}, {}]; "
                          "prototype 1.67-1.8), user speed {:.1f}% of supervisor (prototype "
                          "61.6%), closure {}, user%+super% {:.1f}",
                          sup, kSupervisorCpiMax, usr, kUserCpiMin, kUserCpiMax,
                          100.0 * sup / usr, closure, pct_sum)};
}

Verdict hardware_aliasing() {
  const Image img = assemble_or_die(user_program(R"(
        l.addi r1, r0, 0x40
        l.ori  r2, r0, 0x40
        l.addi r3, r0, 5
        l.addi r4, r0, 7
        l.sw   0(r1), r3
        l.sw   0(r2), r4
        l.nop  1)"));
  Engine eng(img, test_codec());
  eng.run();
  const uint32_t entries = eng.state().memory().tlb().allocated();
  const StateDump dump = parse_state_dump(write_state_dump(eng.mutable_state(), test_codec()));
  bool raised = false;
  try {
    compare(dump, test_codec(), interpret(img, test_codec()));
  } catch (const AliasDetected&) {
    raised = true;
  }
  return {entries == 2 && raised,
          fmt::format("{} TLB entries for address 0x40, AliasDetected raised {}", entries, raised)};
}

Verdict determinism() {
  const std::string src = generate_program(77);
  EngineConfig cfg = test_engine_config();
  cfg.trace = true;
  auto once = [&] {
    Engine eng(assemble_or_die(src), test_codec(), cfg);
    eng.run();
    std::string trace;
    for (const auto& l : eng.trace()) trace += l + "\n";
    return std::make_tuple(render_stats(eng.stats()), trace,
                           write_state_dump(eng.mutable_state(), test_codec()));
  };
  const auto a = once();
  const auto b = once();
  return {a == b, fmt::format("stats {}, trace {}, dump {} bytes identical",
                              std::get<0>(a).size(), std::get<1>(a).size(), std::get<2>(a).size())};
}

Verdict tlb_order() {
  TlbMap tlb(0x1000, 4);
  const uint64_t pattern[] = {0xAAA, 0x123, 0xAAA, 0xFFF, 0x123, 0x555};
  std::vector<uint64_t> got;
  for (uint64_t a : pattern) got.push_back(tlb.translate(CipherWord{a}));
  const std::vector<uint64_t> want = {0x1000, 0x1001, 0x1000, 0x1002, 0x1001, 0x1003};
  bool exhausted = false;
  try {
    tlb.translate(CipherWord{0x999});
  } catch (const PhysicalExhausted&) {
    exhausted = true;
  }
  return {got == want && exhausted && tlb.check_invariants(),
          fmt::format("indices match first-access order {}, exhaustion at capacity 4 {}",
                      got == want, exhausted)};
}

}  // namespace
}  // namespace kpu

int main() {
  using kpu::Verdict;
  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"oracle equivalence", kpu::oracle_equivalence},
      {"codec", kpu::codec_fidelity},
      {"prefix mechanism", kpu::prefix_mechanism},
      {"containment", kpu::containment},
      {"flag protocol", kpu::flag_protocol},
      {"hazard timing", kpu::hazard_timing},
      {"performance bands", kpu::performance},
      {"hardware aliasing", kpu::hardware_aliasing},
      {"determinism", kpu::determinism},
      {"tlb", kpu::tlb_order},
  };
  int failed = 0;
  int n = 0;
  for (const auto& [name, fn] : criteria) {
    ++n;
    Verdict v{false, ""};
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.detail = std::string("exception: ") + e.what();
    }
    if (!v.pass) ++failed;
    fmt::print("{} {:2} {}: {}\n", v.pass ? "PASS" : "FAIL", n, name, v.detail);
  }
  return failed == 0 ? 0 : 1;
}
