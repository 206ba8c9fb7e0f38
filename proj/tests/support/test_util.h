#ifndef KPU_TESTS_TEST_UTIL_H_
#define KPU_TESTS_TEST_UTIL_H_

#include <cstdint>
#include <string>
#include <string_view>

#include "kpu/assembler.h"
#include "kpu/codec.h"
#include "kpu/pipeline.h"

namespace kpu::testing {

inline constexpr std::string_view kKeyHex = "00112233445566778899aabbccddeeff";
inline constexpr uint64_t kSeed = 0x0123456789abcdefull;

inline const Codec& test_codec() {
  static const Codec codec(parse_key(kKeyHex));
  return codec;
}

inline Image assemble_or_die(std::string_view src, uint64_t seed = kSeed) {
  return assemble(src, test_codec(), seed).image;
}

inline EngineConfig test_engine_config() {
  EngineConfig cfg;
  cfg.seed = kSeed;
  cfg.keep_retired_log = true;
  return cfg;
}

// Runs a program to completion and returns the engine for inspection.
inline std::unique_ptr<Engine> run_program(std::string_view src,
                                           EngineConfig cfg = test_engine_config()) {
  auto e = std::make_unique<Engine>(assemble_or_die(src), test_codec(), cfg);
  e->run();
  return e;
}

// Wraps a user-mode body: the image starts in user mode, encrypted.
inline std::string user_program(std::string_view body) {
  return std::string(".mode user\n.encrypt on\n.org 0x100\n") + std::string(body) +
         "\n.org 0x700\n.encrypt off\nl.nop 1\n";
}

inline std::string super_program(std::string_view body) {
  return std::string(".mode super\n.encrypt off\n.org 0x100\n") + std::string(body) +
         "\n.org 0x700\nl.nop 1\n";
}

}  // namespace kpu::testing

#endif  // KPU_TESTS_TEST_UTIL_H_
