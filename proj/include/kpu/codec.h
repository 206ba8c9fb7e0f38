#ifndef KPU_CODEC_H_
#define KPU_CODEC_H_

#include <array>
#include <cstdint>
#include <memory>
#include <string_view>

namespace kpu {

// Plaintext-domain value: 32 meaningful bits under 32 bits of padding.
struct PaddedWord {
  uint32_t low = 0;
  uint32_t pad = 1;

  uint64_t bits() const { return (uint64_t{pad} << 32) | low; }
  static PaddedWord from_bits(uint64_t b) {
    return {static_cast<uint32_t>(b), static_cast<uint32_t>(b >> 32)};
  }
  friend bool operator==(const PaddedWord&, const PaddedWord&) = default;
};

// Ciphertext block as held in real registers and memory.
struct CipherWord {
  uint64_t block = 0;
  friend bool operator==(const CipherWord&, const CipherWord&) = default;
};

// A pad is reserved if it would make the padded word look like one of the
// two program-address forms.
constexpr bool is_reserved_pad(uint32_t pad) {
  return pad == 0 || (pad >> 16) == 0x7fff;
}

constexpr uint32_t rotl32(uint32_t x, unsigned r) {
  r &= 31;
  return r == 0 ? x : (x << r) | (x >> (32 - r));
}

struct Key128 {
  std::array<uint32_t, 4> words{};  // words[0] is the most significant
  friend bool operator==(const Key128&, const Key128&) = default;
};

// Parses exactly 32 hex characters. Throws ConfigError otherwise.
Key128 parse_key(std::string_view hex);
// Parses exactly 16 hex characters. Throws ConfigError otherwise.
uint64_t parse_seed(std::string_view hex);

// A 64-bit block cipher exposed one round at a time, so a pipeline can hold
// a partially processed block in each codec stage.
class BlockCipher {
 public:
  virtual ~BlockCipher() = default;
  virtual int rounds() const = 0;
  virtual uint64_t forward_round(uint64_t block, int round) const = 0;
  virtual uint64_t inverse_round(uint64_t block, int round) const = 0;
};

// Balanced Feistel network on 32-bit halves (high half is L).
class FeistelCipher final : public BlockCipher {
 public:
  static constexpr int kRounds = 10;

  explicit FeistelCipher(const Key128& key);

  int rounds() const override { return kRounds; }
  uint64_t forward_round(uint64_t block, int round) const override;
  uint64_t inverse_round(uint64_t block, int round) const override;

  const std::array<uint32_t, kRounds>& round_keys() const { return round_keys_; }

  static uint32_t mix(uint32_t x, uint32_t k) {
    return rotl32(x ^ k, 7) + (rotl32(x, 13) ^ k);
  }
  // One Feistel round under an explicit round key, and its inverse.
  static uint64_t round(uint64_t block, uint32_t k);
  static uint64_t unround(uint64_t block, uint32_t k);

 private:
  std::array<uint32_t, kRounds> round_keys_{};
};

// The inline encryption/decryption unit. Immutable after construction and
// cheap to copy (the cipher is shared).
class Codec {
 public:
  explicit Codec(const Key128& key);
  explicit Codec(std::shared_ptr<const BlockCipher> cipher);

  int rounds() const { return cipher_->rounds(); }

  uint64_t encrypt_block(uint64_t b) const;
  uint64_t decrypt_block(uint64_t b) const;

  // Codec stage `stage` (0-based) in either direction. Applying stages
  // 0..rounds()-1 in order equals the whole-block operation.
  uint64_t encrypt_stage(uint64_t b, int stage) const;
  uint64_t decrypt_stage(uint64_t b, int stage) const;

  CipherWord encrypt(const PaddedWord& p) const { return {encrypt_block(p.bits())}; }
  PaddedWord decrypt(const CipherWord& c) const {
    return PaddedWord::from_bits(decrypt_block(c.block));
  }

  // Register/memory protocol: a plain 64-bit value (padded word or the
  // 0x7fff program-address form) to its at-rest form, and back. Program
  // addresses travel zero-filled and bypass the cipher.
  uint64_t seal(uint64_t plain) const;
  uint64_t open(uint64_t sealed) const;

  const BlockCipher& cipher() const { return *cipher_; }

 private:
  std::shared_ptr<const BlockCipher> cipher_;
};

// Deterministic padding for assembly-time constants. Never reserved.
uint32_t make_padding(uint64_t seed, uint64_t ordinal);

// Padding of an ALU result derived from its operands' padding.
uint32_t pad_mix(uint32_t pad_a, uint32_t pad_b, unsigned op_id);

// Operation identifiers fed to pad_mix.
enum PadOp : unsigned {
  kPadAdd = 0,
  kPadSub = 1,
  kPadAnd = 2,
  kPadOr = 3,
  kPadXor = 4,
  kPadMul = 5,
  kPadDiv = 6,
  kPadSll = 7,
  kPadSrl = 8,
  kPadSra = 9,
  kPadAddress = 10,
  kPadSpr = 11,
};

// Padding carried by the hardwired zero register in user mode.
inline constexpr uint32_t kZeroRegisterPad = 0x00000001;

// Program-address protocol.
inline constexpr uint32_t kProgramAddressTag = 0x7fff0000;

CipherWord to_program_address(uint32_t pc);       // zero-filled form
uint64_t program_address_plain(uint32_t pc);      // 0x7fff form
bool is_program_address(uint64_t v);
uint32_t open_program_address(uint64_t v);        // throws NotAProgramAddress

}  // namespace kpu

#endif  // KPU_CODEC_H_
