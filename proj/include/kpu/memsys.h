#ifndef KPU_MEMSYS_H_
#define KPU_MEMSYS_H_

#include <cstdint>
#include <list>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kpu/codec.h"
#include "kpu/image.h"

namespace kpu {

struct MemoryConfig {
  uint64_t supervisor_bytes = 1u << 20;  // identity-mapped region
  uint32_t user_words = 1u << 16;        // pre-set range for the user TLB
  uint32_t cache_entries = 64;
};

// Word-granular translation for encrypted user addresses. Physical words
// are handed out first-come, first-served from a contiguous range.
class TlbMap {
 public:
  TlbMap(uint64_t base, uint32_t capacity) : base_(base), capacity_(capacity) {}

  // Existing mapping, or a new one at the cursor. Throws PhysicalExhausted.
  uint64_t translate(CipherWord addr);
  std::optional<uint64_t> find(CipherWord addr) const;

  uint64_t base() const { return base_; }
  uint32_t capacity() const { return capacity_; }
  uint32_t allocated() const { return static_cast<uint32_t>(order_.size()); }
  // Cipher addresses in allocation order; entry i maps to base + i.
  const std::vector<uint64_t>& allocation_order() const { return order_; }

  // Injectivity and FCFS ordering.
  bool check_invariants() const;

 private:
  uint64_t base_;
  uint32_t capacity_;
  std::unordered_map<uint64_t, uint64_t> map_;
  std::vector<uint64_t> order_;
};

// Small fully associative LRU cache of plaintext user data, keyed by the
// full 64-bit plaintext effective address (padding included).
class UserDataCache {
 public:
  explicit UserDataCache(uint32_t entries) : capacity_(entries) {}

  std::optional<uint64_t> lookup(uint64_t key);  // refreshes recency on hit
  bool contains(uint64_t key) const { return index_.count(key) != 0; }
  // Returns true if the key was already present.
  bool insert(uint64_t key, uint64_t value);

  uint32_t capacity() const { return capacity_; }
  size_t size() const { return lru_.size(); }
  // Keys from most to least recently used.
  std::vector<uint64_t> recency_order() const;

 private:
  struct Entry {
    uint64_t key;
    uint64_t value;
  };
  uint32_t capacity_;
  std::list<Entry> lru_;
  std::unordered_map<uint64_t, std::list<Entry>::iterator> index_;
};

enum class LoadSource { kCacheHit, kMemoryDecrypt };

struct UserLoadResult {
  uint64_t value = 0;  // plain form (padded word or program address)
  LoadSource source = LoadSource::kCacheHit;
};

// Harvard split: 32-bit instruction words by program address, 64-bit data
// cells by physical index. The supervisor region is identity mapped; the
// user range follows it.
class MemorySystem {
 public:
  explicit MemorySystem(const MemoryConfig& cfg = {});

  void load(const Image& img);

  const MemoryConfig& config() const { return cfg_; }
  uint64_t supervisor_words() const { return cfg_.supervisor_bytes / 8; }

  std::optional<uint32_t> fetch(uint32_t pc) const;

  // Supervisor addresses map to addr/8. User addresses go through the TLB.
  uint64_t translate(CipherWord addr, Mode mode);

  uint64_t read_cell(uint64_t index) const { return cells_.at(index); }
  void write_cell(uint64_t index, uint64_t v) { cells_.at(index) = v; }

  // Functional user-mode accesses (ea and values in plain form).
  UserLoadResult user_load(uint64_t ea, const Codec& codec);
  void user_store(uint64_t ea, uint64_t value, const Codec& codec);

  // Raw 64-bit access with no codec involvement.
  uint64_t supervisor_read(uint64_t addr) const;
  void supervisor_write(uint64_t addr, uint64_t v);
  uint64_t supervisor_index(uint64_t addr) const;  // validates the address

  TlbMap& tlb() { return tlb_; }
  const TlbMap& tlb() const { return tlb_; }
  UserDataCache& cache() { return cache_; }
  const UserDataCache& cache() const { return cache_; }

  // Lines "PHYS <index> <hex16>" for every non-zero supervisor cell and
  // every allocated user cell, then "TLBMAP <cipherhex16> <index>", each
  // sorted by index.
  std::string dump() const;

 private:
  MemoryConfig cfg_;
  std::unordered_map<uint32_t, uint32_t> text_;
  std::vector<uint64_t> cells_;
  TlbMap tlb_;
  UserDataCache cache_;
};

}  // namespace kpu

#endif  // KPU_MEMSYS_H_
