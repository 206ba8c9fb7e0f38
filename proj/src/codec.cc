#include "kpu/codec.h"

#include <cctype>
#include <cstdio>
#include <string>

#include "kpu/error.h"

namespace kpu {
namespace {

constexpr uint32_t kGolden = 0x9E3779B9;

uint64_t parse_hex_exact(std::string_view hex, size_t digits, const char* what) {
  if (hex.size() != digits) {
    throw ConfigError(std::string(what) + " must be exactly " + std::to_string(digits) +
                      " hex characters");
  }
  uint64_t v = 0;
  for (char c : hex) {
    if (!std::isxdigit(static_cast<unsigned char>(c))) {
      throw ConfigError(std::string(what) + " contains a non-hex character");
    }
    const int d = std::isdigit(static_cast<unsigned char>(c))
                      ? c - '0'
                      : std::tolower(static_cast<unsigned char>(c)) - 'a' + 10;
    v = (v << 4) | static_cast<uint64_t>(d);
  }
  return v;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

Key128 parse_key(std::string_view hex) {
  if (hex.size() != 32) throw ConfigError("key must be exactly 32 hex characters");
  Key128 k;
  for (int i = 0; i < 4; ++i) {
    k.words[i] = static_cast<uint32_t>(parse_hex_exact(hex.substr(i * 8, 8), 8, "key"));
  }
  return k;
}

uint64_t parse_seed(std::string_view hex) { return parse_hex_exact(hex, 16, "seed"); }

FeistelCipher::FeistelCipher(const Key128& key) {
  const auto& w = key.words;
  for (int i = 0; i < kRounds; ++i) {
    const uint32_t folded = (w[i & 3] + static_cast<uint32_t>(i + 1)) * kGolden;
    round_keys_[i] = folded ^ rotl32(w[(i + 1) & 3], static_cast<unsigned>(3 * i + 1));
  }
}

uint64_t FeistelCipher::round(uint64_t block, uint32_t k) {
  const auto l = static_cast<uint32_t>(block >> 32);
  const auto r = static_cast<uint32_t>(block);
  return (uint64_t{r} << 32) | (l ^ mix(r, k));
}

uint64_t FeistelCipher::unround(uint64_t block, uint32_t k) {
  const auto l2 = static_cast<uint32_t>(block >> 32);  // old R
  const auto r2 = static_cast<uint32_t>(block);
  return (uint64_t{r2 ^ mix(l2, k)} << 32) | l2;
}

uint64_t FeistelCipher::forward_round(uint64_t block, int i) const {
  return round(block, round_keys_[i]);
}

uint64_t FeistelCipher::inverse_round(uint64_t block, int i) const {
  return unround(block, round_keys_[i]);
}

Codec::Codec(const Key128& key) : cipher_(std::make_shared<FeistelCipher>(key)) {}

Codec::Codec(std::shared_ptr<const BlockCipher> cipher) : cipher_(std::move(cipher)) {}

uint64_t Codec::encrypt_block(uint64_t b) const {
  for (int i = 0; i < rounds(); ++i) b = cipher_->forward_round(b, i);
  return b;
}

uint64_t Codec::decrypt_block(uint64_t b) const {
  for (int i = rounds() - 1; i >= 0; --i) b = cipher_->inverse_round(b, i);
  return b;
}

uint64_t Codec::encrypt_stage(uint64_t b, int stage) const {
  return cipher_->forward_round(b, stage);
}

uint64_t Codec::decrypt_stage(uint64_t b, int stage) const {
  return cipher_->inverse_round(b, rounds() - 1 - stage);
}

uint64_t Codec::seal(uint64_t plain) const {
  if ((plain >> 32) == kProgramAddressTag) return plain & 0xFFFFFFFFu;
  return encrypt_block(plain);
}

uint64_t Codec::open(uint64_t sealed) const {
  if ((sealed >> 32) == 0) return program_address_plain(static_cast<uint32_t>(sealed));
  return decrypt_block(sealed);
}

uint32_t make_padding(uint64_t seed, uint64_t ordinal) {
  uint64_t state = seed ^ splitmix64(ordinal);
  for (;;) {
    state = splitmix64(state);
    const auto pad = static_cast<uint32_t>(state >> 32);
    if (!is_reserved_pad(pad)) return pad;
  }
}

uint32_t pad_mix(uint32_t pad_a, uint32_t pad_b, unsigned op_id) {
  uint32_t raw = rotl32(pad_a, 5) ^ pad_b ^ (0x9E37u << (op_id & 15));
  if (is_reserved_pad(raw)) raw ^= 0x40000001u;
  return raw;
}

CipherWord to_program_address(uint32_t pc) { return {uint64_t{pc}}; }

uint64_t program_address_plain(uint32_t pc) {
  return (uint64_t{kProgramAddressTag} << 32) | pc;
}

bool is_program_address(uint64_t v) {
  const auto hi = static_cast<uint32_t>(v >> 32);
  return hi == 0 || hi == kProgramAddressTag;
}

uint32_t open_program_address(uint64_t v) {
  if (!is_program_address(v)) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "0x%016llx is not a program address",
                  static_cast<unsigned long long>(v));
    throw NotAProgramAddress(buf);
  }
  return static_cast<uint32_t>(v);
}

}  // namespace kpu
