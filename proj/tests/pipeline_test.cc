#include <gtest/gtest.h>

#include "kpu/error.h"
#include "kpu/pipeline.h"
#include "support/test_util.h"
#include "support/timing_oracle.h"

namespace kpu {
namespace {

using testing::predicted_stall;
using testing::run_program;
using testing::super_program;
using testing::test_codec;
using testing::user_program;

std::vector<std::string> names(const PipelinePlan& p) {
  std::vector<std::string> out;
  for (const auto& s : p.stages()) out.push_back(s.name());
  return out;
}

// The last retired instruction with this opcode.
const RetiredRecord& last_retired(const Engine& e, Op op) {
  for (auto it = e.retired().rbegin(); it != e.retired().rend(); ++it) {
    if (it->instr.op == op) return *it;
  }
  throw std::runtime_error("op never retired");
}

TEST(Plans, StageLists) {
  EXPECT_EQ(names(PipelinePlan::get(PlanKind::kShort)), testing::stages_short());
  EXPECT_EQ(names(PipelinePlan::get(PlanKind::kA)), testing::stages_a());
  EXPECT_EQ(names(PipelinePlan::get(PlanKind::kB)), testing::stages_b());
  EXPECT_EQ(PipelinePlan::get(PlanKind::kA).depth(), kLongDepth);
  EXPECT_EQ(PipelinePlan::get(PlanKind::kB).depth(), kLongDepth);
  EXPECT_EQ(PipelinePlan::get(PlanKind::kShort).depth(), kShortDepth);
}

TEST(Plans, SelectConfig) {
  Instruction addi{Op::kAddi, 1, 1, 0, 0, 1};
  Instruction lwz{Op::kLwz, 1, 1, 0, 0, 0};
  Instruction sw{Op::kSw, 0, 1, 2, 0, 0};
  Instruction add{Op::kAdd, 1, 2, 3, 0, 0};
  EXPECT_EQ(select_config(addi, Mode::kSupervisor).kind(), PlanKind::kShort);
  EXPECT_EQ(select_config(addi, Mode::kUser).kind(), PlanKind::kB);
  EXPECT_EQ(select_config(lwz, Mode::kUser).kind(), PlanKind::kA);
  EXPECT_EQ(select_config(sw, Mode::kUser).kind(), PlanKind::kA);
  EXPECT_EQ(select_config(add, Mode::kUser).kind(), PlanKind::kA);
}

TEST(Prefix, JoinAndLatch) {
  EXPECT_EQ(join_immediate(0xABCDEF, 0x123456, 0x789A), 0xABCDEF123456789Aull);
  PrefixLatch l;
  EXPECT_THROW(l.consume(0), MissingPrefix);
  l.push({Op::kPrefix, 0, 0, 0, 0, 0x111111});
  EXPECT_THROW(l.consume(0), MissingPrefix);
  l.push({Op::kPrefix, 0, 0, 0, 0, 0x111111});
  l.push({Op::kPrefix, 0, 0, 0, 1, 0x222222});
  EXPECT_TRUE(l.full());
  EXPECT_EQ(l.consume(0x3333), 0x1111112222223333ull);
  EXPECT_FALSE(l.full());
  l.push({Op::kPrefix, 0, 0, 0, 1, 0x222222});  // idx1 without idx0
  EXPECT_THROW(l.consume(0), MissingPrefix);
}

TEST(Bpb, DirectMapped) {
  BranchPredictionBuffer b(64);
  EXPECT_FALSE(b.lookup(0x100).hit);
  b.update(0x100, true, 0x80);
  auto p = b.lookup(0x100);
  EXPECT_TRUE(p.hit);
  EXPECT_TRUE(p.taken);
  EXPECT_EQ(p.target, 0x80u);
  EXPECT_EQ(b.index_of(0x100), b.index_of(0x200));
  b.update(0x200, false, 0x204);
  EXPECT_FALSE(b.lookup(0x100).hit);
  EXPECT_THROW(BranchPredictionBuffer(10), ConfigError);
}

TEST(Timing, EmptyPrograms) {
  auto u = run_program(user_program("l.nop 1"));
  EXPECT_EQ(u->outcome(), RunOutcome::kExited);
  EXPECT_EQ(u->stats().cycles, static_cast<uint64_t>(kLongDepth));
  auto s = run_program(super_program("l.nop 1"));
  EXPECT_EQ(s->stats().cycles, static_cast<uint64_t>(kShortDepth));
}

TEST(Timing, UserLoadUseCacheHit) {
  auto e = run_program(user_program(R"(
        l.addi r1, r0, 0x1000
        l.addi r5, r0, 77
        l.sw   0(r1), r5
        l.lwz  r3, 0(r1)
        l.add  r4, r3, r3
        l.nop  1)"));
  ASSERT_EQ(e->outcome(), RunOutcome::kExited);
  const auto& lwz = last_retired(*e, Op::kLwz);
  EXPECT_TRUE(lwz.cache_hit);
  const int expected = predicted_stall(testing::stages_a(), "M", true, testing::stages_a(), 1);
  EXPECT_EQ(expected, 2);
  EXPECT_EQ(last_retired(*e, Op::kAdd).stall_cycles, static_cast<uint64_t>(expected));
  EXPECT_EQ(static_cast<uint32_t>(e->state().read_operand(4)), 154u);
}

TEST(Timing, UserLoadUseCacheMiss) {
  EngineConfig cfg = testing::test_engine_config();
  auto e = run_program(user_program(R"(
        l.addi r1, r0, 0x1000
        l.lwz  r3, 64(r1)
        l.add  r4, r3, r3
        l.nop  1)"), cfg);
  ASSERT_EQ(e->outcome(), RunOutcome::kExited);
  EXPECT_FALSE(last_retired(*e, Op::kLwz).cache_hit);
  const int expected = predicted_stall(testing::stages_a(), "C10", true, testing::stages_a(), 1);
  EXPECT_EQ(expected, 12);
  EXPECT_EQ(last_retired(*e, Op::kAdd).stall_cycles, static_cast<uint64_t>(expected));
}

TEST(Timing, SupervisorLoadUse) {
  auto e = run_program(super_program(R"(
        l.addi r1, r0, 0x1000
        l.lwz  r3, 0(r1)
        l.add  r4, r3, r3
        l.nop  1)"));
  const int expected = predicted_stall(testing::stages_short(), "X", true, testing::stages_short(), 1);
  EXPECT_EQ(expected, 1);
  EXPECT_EQ(last_retired(*e, Op::kAdd).stall_cycles, static_cast<uint64_t>(expected));
}

TEST(Timing, AluToAluHasNoStall) {
  auto u = run_program(user_program(R"(
        l.add  r3, r0, r0
        l.add  r4, r3, r3
        l.xor  r5, r4, r3
        l.nop  1)"));
  EXPECT_EQ(last_retired(*u, Op::kAdd).stall_cycles, 0u);
  EXPECT_EQ(last_retired(*u, Op::kXor).stall_cycles, 0u);
  auto s = run_program(super_program(R"(
        l.addi r3, r0, 1
        l.add  r4, r3, r3
        l.nop  1)"));
  EXPECT_EQ(last_retired(*s, Op::kAdd).stall_cycles, 0u);
}

TEST(Timing, ImmediateProducerToRegisterConsumer) {
  for (int gap = 0; gap < 12; ++gap) {
    std::string body = "l.addi r3, r0, 5\n";
    for (int i = 0; i < gap; ++i) body += "l.nop 0\n";
    body += "l.add r4, r3, r3\nl.nop 1";
    auto e = run_program(user_program(body));
    const int expected =
        predicted_stall(testing::stages_b(), "X", false, testing::stages_a(), gap + 1);
    EXPECT_EQ(last_retired(*e, Op::kAdd).stall_cycles, static_cast<uint64_t>(expected)) << gap;
    EXPECT_EQ(static_cast<uint32_t>(e->state().read_operand(4)), 10u);
  }
}

TEST(Timing, ImmediateChainHasNoStall) {
  auto e = run_program(user_program(R"(
        l.addi r3, r0, 5
        l.addi r4, r3, 1
        l.nop  1)"));
  EXPECT_EQ(last_retired(*e, Op::kAddi).stall_cycles, 0u);
  EXPECT_EQ(static_cast<uint32_t>(e->state().read_operand(4)), 6u);
}

TEST(Timing, MispredictionCostsThreeRefills) {
  // Cold BPB predicts fall-through, so the jump squashes F, D and R.
  auto e = run_program(super_program(R"(
        l.j    done
        l.nop  0
        l.nop  0
done:   l.nop  1)"));
  EXPECT_EQ(e->stats().cycles, static_cast<uint64_t>(kShortDepth - 1 + 2 + 3));
  EXPECT_EQ(e->stats().bpb.miss_wrong, 1u);
}

TEST(Timing, WarmLoopBranchPredicted) {
  auto e = run_program(super_program(R"(
        l.addi r16, r0, 10
loop:   l.addi r16, r16, -1
        l.sfne r16, r0
        l.bf   loop
        l.nop  1)"));
  const BpbStats& b = e->stats().bpb;
  EXPECT_EQ(b.hits() + b.misses(), 10u);
  EXPECT_EQ(b.miss_wrong, 1u);  // first taken iteration
  EXPECT_EQ(b.hit_wrong, 1u);   // loop exit
  EXPECT_EQ(b.hit_right, 8u);
}

TEST(Accounting, ClosureOnMixedProgram) {
  auto e = run_program(super_program(R"(
        l.ori  r20, r0, user
        l.mtspr r0, r20, 32
        l.rfe
        .org 0xC00
        l.rfe
        .org 0x2000
        .encrypt on
user:   l.addi r1, r0, 0x100
        l.addi r16, r0, 5
loop:   l.sw   0(r1), r16
        l.lwz  r3, 0(r1)
        l.sys  0
        l.addi r16, r16, -1
        l.sfne r16, r3
        l.bnf  loop
        l.nop  1)"));
  ASSERT_EQ(e->outcome(), RunOutcome::kExited);
  const CycleStats& s = e->stats();
  EXPECT_EQ(s.of(Mode::kUser).cycles() + s.of(Mode::kSupervisor).cycles(), s.cycles);
  EXPECT_EQ(s.of(Mode::kUser).completed() + s.of(Mode::kSupervisor).completed(), s.instructions);
  uint64_t transfers = 0;
  for (Mode m : {Mode::kUser, Mode::kSupervisor}) {
    transfers += s.of(m).count(InstrClass::kBranch) + s.of(m).count(InstrClass::kJump);
  }
  EXPECT_EQ(s.bpb.hits() + s.bpb.misses(), transfers);
  EXPECT_EQ(e->cross_mode_forwards(), 0u);
  EXPECT_GT(e->codec_checks(), 0u);
}

TEST(Containment, UserSprWriteIgnoredReadsZero) {
  auto e = run_program(user_program(R"(
        l.addi  r5, r0, 0xFFFF
        l.mtspr r0, r5, 17
        l.mfspr r3, r0, 17
        l.mfspr r4, r0, 20
        l.nop   1)"));
  ASSERT_EQ(e->outcome(), RunOutcome::kExited);
  EXPECT_EQ(static_cast<uint32_t>(e->state().read_operand(3)), 0u);
  EXPECT_EQ(static_cast<uint32_t>(e->state().read_operand(4)), kConfigId);
  EXPECT_EQ(e->state().mode(), Mode::kUser);
}

TEST(Containment, UserClass64IsIllegal) {
  auto e = run_program(R"(
        .mode user
        .org 0x100
        l.add64 r3, r4, r5
        .org 0x700
        l.mfspr r20, r0, 32
        l.nop   1)");
  ASSERT_EQ(e->outcome(), RunOutcome::kExited);
  EXPECT_EQ(e->state().mode(), Mode::kSupervisor);
  EXPECT_EQ(e->state().real(20), 0x100u);
}

TEST(Containment, UserImmediateWithoutPrefixesVectorsToIllegal) {
  auto e = run_program(R"(
        .mode user
        .encrypt off
        .org 0x100
        l.addi r3, r0, 1
        .org 0x700
        l.mfspr r20, r0, 32
        l.nop   1)");
  ASSERT_EQ(e->outcome(), RunOutcome::kExited);
  EXPECT_EQ(e->state().pc(), 0x704u + 4u);
  EXPECT_EQ(e->state().real(20), 0x100u);
}

TEST(Containment, JumpToDataIsIllegal) {
  auto e = run_program(user_program(R"(
        l.addi r5, r0, 0x200
        l.jr   r5
        l.nop  1)"));
  EXPECT_EQ(e->state().mode(), Mode::kSupervisor);
  EXPECT_EQ(e->state().pc(), 0x704u);
}

TEST(Containment, SupervisorSeesCiphertext) {
  auto e = run_program(R"(
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
  ASSERT_EQ(e->outcome(), RunOutcome::kExited);
  const MachineState& st = e->state();
  EXPECT_EQ(st.mode(), Mode::kSupervisor);
  EXPECT_NE(static_cast<uint32_t>(st.real(3)), 1234u);
  EXPECT_EQ(test_codec().decrypt(CipherWord{st.real(3)}).low, 1234u);
  const auto& mem = st.memory();
  ASSERT_EQ(mem.tlb().allocated(), 1u);
  const uint64_t cell = mem.read_cell(mem.tlb().base());
  EXPECT_NE(static_cast<uint32_t>(cell), 1234u);
  EXPECT_EQ(test_codec().decrypt(CipherWord{cell}).low, 1234u);
}

TEST(Flags, TrapClearsAndRfeRestores) {
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
  ASSERT_EQ(e->outcome(), RunOutcome::kExited);
  const MachineState& st = e->state();
  EXPECT_EQ(st.mode(), Mode::kUser);
  // Handler saw no user flags, only SM.
  EXPECT_EQ(static_cast<uint32_t>(test_codec().open(st.real(20))), sr::kSm);
  // r4 = 0 with carry; F from sfeq(0, 0).
  EXPECT_EQ(st.sr(), sr::kF | sr::kCy);
  EXPECT_EQ(st.hidden_esr_for_test(), sr::kF | sr::kCy);
}

TEST(Output, DebugNopPrintsPlaintext) {
  auto e = run_program(user_program(R"(
        l.addi r3, r0, 42
        l.nop  2
        l.nop  1)"));
  EXPECT_EQ(e->debug_output(), std::vector<uint32_t>{42});
}

TEST(Memory, StoreBufferFeedsUncachedLoad) {
  EngineConfig cfg = testing::test_engine_config();
  cfg.memory.cache_entries = 0;
  auto e = run_program(user_program(R"(
        l.addi r1, r0, 0x1000
        l.addi r5, r0, 31337
        l.sw   0(r1), r5
        l.lwz  r3, 0(r1)
        l.nop  2
        l.nop  1)"), cfg);
  ASSERT_EQ(e->outcome(), RunOutcome::kExited);
  EXPECT_EQ(e->debug_output(), std::vector<uint32_t>{31337});
}

TEST(Memory, ProgramAddressSurvivesMemory) {
  auto e = run_program(user_program(R"(
        l.addi r1, r0, 0x1000
        l.jal  f
        l.nop  1
f:      l.sw   0(r1), r9
        l.lwz  r5, 0(r1)
        l.jr   r5)"));
  ASSERT_EQ(e->outcome(), RunOutcome::kExited);
  EXPECT_EQ(e->state().mode(), Mode::kUser);
}

TEST(Run, Outcomes) {
  EngineConfig cfg = testing::test_engine_config();
  cfg.max_cycles = 1000;
  auto loop = run_program(super_program("spin: l.j spin"), cfg);
  EXPECT_EQ(loop->outcome(), RunOutcome::kMaxCycles);
  auto fault = run_program(super_program("l.j 0x400"));
  EXPECT_EQ(fault->outcome(), RunOutcome::kFault);
  RunResult r = run(testing::assemble_or_die(super_program("spin: l.j spin")), test_codec(), cfg);
  EXPECT_THROW(r.check(), MaxCyclesExceeded);
}

TEST(Trace, LineFormat) {
  EngineConfig cfg = testing::test_engine_config();
  cfg.trace = true;
  auto e = run_program(super_program("l.addi r3, r0, 1\nl.nop 1"), cfg);
  ASSERT_GE(e->trace().size(), 2u);
  EXPECT_EQ(e->trace()[0], "cycle 0 | F:0x00000100:l.addi");
  EXPECT_EQ(e->trace()[1], "cycle 1 | F:0x00000104:l.nop D:0x00000100:l.addi");
}

TEST(Determinism, IdenticalRuns) {
  const std::string src = user_program(R"(
        l.addi r1, r0, 0x100
        l.addi r3, r0, 9
        l.sw   0(r1), r3
        l.lwz  r4, 0(r1)
        l.nop  1)");
  EngineConfig cfg = testing::test_engine_config();
  cfg.trace = true;
  auto a = run_program(src, cfg);
  auto b = run_program(src, cfg);
  EXPECT_EQ(a->stats(), b->stats());
  EXPECT_EQ(a->trace(), b->trace());
  EXPECT_EQ(write_state_dump(a->mutable_state(), test_codec()),
            write_state_dump(b->mutable_state(), test_codec()));
}

}  // namespace
}  // namespace kpu
