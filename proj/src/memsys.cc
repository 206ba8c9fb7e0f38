#include "kpu/memsys.h"

#include <fmt/format.h>

#include <unordered_set>

#include "kpu/error.h"

namespace kpu {

uint64_t TlbMap::translate(CipherWord addr) {
  if (auto it = map_.find(addr.block); it != map_.end()) return it->second;
  if (order_.size() >= capacity_) {
    throw PhysicalExhausted(fmt::format("user physical range exhausted ({} words)", capacity_));
  }
  const uint64_t idx = base_ + order_.size();
  map_.emplace(addr.block, idx);
  order_.push_back(addr.block);
  return idx;
}

std::optional<uint64_t> TlbMap::find(CipherWord addr) const {
  if (auto it = map_.find(addr.block); it != map_.end()) return it->second;
  return std::nullopt;
}

bool TlbMap::check_invariants() const {
  if (map_.size() != order_.size()) return false;
  std::unordered_set<uint64_t> seen;
  for (size_t i = 0; i < order_.size(); ++i) {
    auto it = map_.find(order_[i]);
    if (it == map_.end() || it->second != base_ + i) return false;
    if (!seen.insert(it->second).second) return false;
  }
  return true;
}

std::optional<uint64_t> UserDataCache::lookup(uint64_t key) {
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  lru_.splice(lru_.begin(), lru_, it->second);
  return it->second->value;
}

bool UserDataCache::insert(uint64_t key, uint64_t value) {
  if (capacity_ == 0) return false;
  if (auto it = index_.find(key); it != index_.end()) {
    it->second->value = value;
    lru_.splice(lru_.begin(), lru_, it->second);
    return true;
  }
  if (lru_.size() >= capacity_) {
    index_.erase(lru_.back().key);
    lru_.pop_back();
  }
  lru_.push_front({key, value});
  index_[key] = lru_.begin();
  return false;
}

std::vector<uint64_t> UserDataCache::recency_order() const {
  std::vector<uint64_t> out;
  out.reserve(lru_.size());
  for (const auto& e : lru_) out.push_back(e.key);
  return out;
}

MemorySystem::MemorySystem(const MemoryConfig& cfg)
    : cfg_(cfg),
      cells_(cfg.supervisor_bytes / 8 + cfg.user_words, 0),
      tlb_(cfg.supervisor_bytes / 8, cfg.user_words),
      cache_(cfg.cache_entries) {
  if (cfg.supervisor_bytes % 8 != 0) throw ConfigError("supervisor region must be 8-byte aligned");
}

void MemorySystem::load(const Image& img) {
  text_.clear();
  for (const auto& [pc, w] : img.text) text_[pc] = w;
  for (const auto& [addr, v] : img.data) supervisor_write(addr, v);
}

std::optional<uint32_t> MemorySystem::fetch(uint32_t pc) const {
  if (auto it = text_.find(pc); it != text_.end()) return it->second;
  return std::nullopt;
}

uint64_t MemorySystem::supervisor_index(uint64_t addr) const {
  if (addr % 8 != 0) {
    throw UnalignedSupervisorAccess(fmt::format("supervisor access at 0x{:x} not 8-aligned", addr));
  }
  const uint64_t idx = addr / 8;
  if (idx < supervisor_words()) return idx;
  if (idx >= tlb_.base() && idx < tlb_.base() + tlb_.allocated()) return idx;
  throw OutOfRegion(fmt::format("supervisor access at 0x{:x} outside mapped memory", addr));
}

uint64_t MemorySystem::translate(CipherWord addr, Mode mode) {
  if (mode == Mode::kSupervisor) return supervisor_index(addr.block);
  return tlb_.translate(addr);
}

UserLoadResult MemorySystem::user_load(uint64_t ea, const Codec& codec) {
  if (auto hit = cache_.lookup(ea)) return {*hit, LoadSource::kCacheHit};
  const uint64_t idx = tlb_.translate({codec.seal(ea)});
  const uint64_t cell = cells_[idx];
  // Uninitialized cells hold the zero block, which still goes through the
  // cipher rather than reading as a program address.
  const uint64_t plain = cell == 0 ? codec.decrypt_block(0) : codec.open(cell);
  return {plain, LoadSource::kMemoryDecrypt};
}

void MemorySystem::user_store(uint64_t ea, uint64_t value, const Codec& codec) {
  const uint64_t idx = tlb_.translate({codec.seal(ea)});
  cells_[idx] = codec.seal(value);
  cache_.insert(ea, value);
}

uint64_t MemorySystem::supervisor_read(uint64_t addr) const {
  return cells_[supervisor_index(addr)];
}

void MemorySystem::supervisor_write(uint64_t addr, uint64_t v) {
  cells_[supervisor_index(addr)] = v;
}

std::string MemorySystem::dump() const {
  std::string out;
  for (uint64_t i = 0; i < supervisor_words(); ++i) {
    if (cells_[i] != 0) out += fmt::format("PHYS {} {:016x}\n", i, cells_[i]);
  }
  for (uint32_t i = 0; i < tlb_.allocated(); ++i) {
    out += fmt::format("PHYS {} {:016x}\n", tlb_.base() + i, cells_[tlb_.base() + i]);
  }
  const auto& order = tlb_.allocation_order();
  for (size_t i = 0; i < order.size(); ++i) {
    out += fmt::format("TLBMAP {:016x} {}\n", order[i], tlb_.base() + i);
  }
  return out;
}

}  // namespace kpu
