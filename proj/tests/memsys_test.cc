#include <gtest/gtest.h>

#include "kpu/error.h"
#include "kpu/memsys.h"
#include "support/test_util.h"

namespace kpu {
namespace {

using testing::test_codec;

uint64_t ea(uint32_t addr, uint32_t pad = 0x12345678) { return PaddedWord{addr, pad}.bits(); }

TEST(Tlb, FirstComeFirstServed) {
  TlbMap tlb(1000, 4);
  EXPECT_EQ(tlb.translate({0xAAAA}), 1000u);
  EXPECT_EQ(tlb.translate({0x5555}), 1001u);
  EXPECT_EQ(tlb.translate({0xAAAA}), 1000u);
  EXPECT_EQ(tlb.translate({0x1234}), 1002u);
  EXPECT_EQ(tlb.allocated(), 3u);
  EXPECT_EQ(tlb.allocation_order(), (std::vector<uint64_t>{0xAAAA, 0x5555, 0x1234}));
  EXPECT_TRUE(tlb.check_invariants());
  EXPECT_FALSE(tlb.find({0x9999}).has_value());
}

TEST(Tlb, ExhaustionAtCapacity) {
  TlbMap tlb(0, 2);
  tlb.translate({1});
  tlb.translate({2});
  EXPECT_EQ(tlb.translate({1}), 0u);
  EXPECT_THROW(tlb.translate({3}), PhysicalExhausted);
}

TEST(Cache, LruEviction) {
  UserDataCache c(2);
  EXPECT_FALSE(c.insert(1, 10));
  EXPECT_FALSE(c.insert(2, 20));
  EXPECT_EQ(c.lookup(1), 10u);  // 1 becomes most recent
  EXPECT_FALSE(c.insert(3, 30));  // evicts 2
  EXPECT_FALSE(c.contains(2));
  EXPECT_TRUE(c.contains(1));
  EXPECT_TRUE(c.insert(1, 11));
  EXPECT_EQ(c.lookup(1), 11u);
  EXPECT_EQ(c.recency_order(), (std::vector<uint64_t>{1, 3}));
}

TEST(Memory, UserStoreThenLoadHitsCache) {
  MemorySystem m;
  const uint64_t v = PaddedWord{99, 0x0badf00d}.bits();
  m.user_store(ea(0x40), v, test_codec());
  const auto r = m.user_load(ea(0x40), test_codec());
  EXPECT_EQ(r.source, LoadSource::kCacheHit);
  EXPECT_EQ(r.value, v);
}

TEST(Memory, CiphertextAtRest) {
  MemorySystem m;
  const uint64_t v = PaddedWord{99, 0x0badf00d}.bits();
  m.user_store(ea(0x40), v, test_codec());
  const uint64_t idx = *m.tlb().find({test_codec().seal(ea(0x40))});
  EXPECT_EQ(idx, m.supervisor_words());
  const uint64_t cell = m.read_cell(idx);
  EXPECT_NE(cell, v);
  EXPECT_EQ(test_codec().decrypt_block(cell), v);
  // The supervisor sees the same ciphertext through the identity map.
  EXPECT_EQ(m.supervisor_read(idx * 8), cell);
}

TEST(Memory, EvictedEntryReloadsThroughCodec) {
  MemoryConfig cfg;
  cfg.cache_entries = 64;
  MemorySystem m(cfg);
  for (uint32_t i = 0; i < 65; ++i) m.user_store(ea(4 * i), PaddedWord{i, 7}.bits(), test_codec());
  const auto r = m.user_load(ea(0), test_codec());
  EXPECT_EQ(r.source, LoadSource::kMemoryDecrypt);
  EXPECT_EQ(r.value, (PaddedWord{0, 7}.bits()));
  EXPECT_EQ(m.user_load(ea(4), test_codec()).source, LoadSource::kCacheHit);
}

TEST(Memory, DifferentPadsAreDifferentCells) {
  MemorySystem m;
  m.user_store(ea(0x40, 0x11111111), PaddedWord{1, 5}.bits(), test_codec());
  m.user_store(ea(0x40, 0x22222222), PaddedWord{2, 5}.bits(), test_codec());
  EXPECT_EQ(m.tlb().allocated(), 2u);
}

TEST(Memory, ColdLoadDecryptsZeroBlock) {
  MemorySystem m;
  const auto r = m.user_load(ea(0x80), test_codec());
  EXPECT_EQ(r.source, LoadSource::kMemoryDecrypt);
  EXPECT_EQ(r.value, test_codec().decrypt_block(0));
}

TEST(Memory, SupervisorAccessRules) {
  MemorySystem m;
  m.supervisor_write(0x1000, 0xFEEDFACECAFEBEEFull);
  EXPECT_EQ(m.supervisor_read(0x1000), 0xFEEDFACECAFEBEEFull);
  EXPECT_THROW(m.supervisor_read(0x1003), UnalignedSupervisorAccess);
  EXPECT_THROW(m.supervisor_read(m.supervisor_words() * 8), OutOfRegion);
  m.translate({12345}, Mode::kUser);
  EXPECT_NO_THROW(m.supervisor_read(m.supervisor_words() * 8));
  EXPECT_EQ(m.translate({0x40}, Mode::kSupervisor), 8u);
}

TEST(Memory, DumpFormat) {
  MemoryConfig cfg;
  cfg.supervisor_bytes = 64;
  cfg.user_words = 4;
  MemorySystem m(cfg);
  m.supervisor_write(8, 0xAB);
  m.write_cell(m.tlb().translate({0x77}), 0xCD);
  EXPECT_EQ(m.dump(),
            "PHYS 1 00000000000000ab\n"
            "PHYS 8 00000000000000cd\n"
            "TLBMAP 0000000000000077 8\n");
}

}  // namespace
}  // namespace kpu
