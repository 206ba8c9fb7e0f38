#ifndef KPU_IMAGE_H_
#define KPU_IMAGE_H_

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace kpu {

enum class Mode : uint8_t { kUser, kSupervisor };

std::string_view mode_name(Mode m);

// A loadable program: instruction words by program address and 64-bit
// supervisor data words by data address.
struct Image {
  uint32_t entry = 0x100;
  Mode start_mode = Mode::kSupervisor;
  std::map<uint32_t, uint32_t> text;
  std::map<uint32_t, uint64_t> data;

  friend bool operator==(const Image&, const Image&) = default;
};

// Line-oriented text form:
//   KPUIMG 1
//   ENTRY 0x<hex8>
//   MODE user|super
//   TEXT 0x<hex8> <hex8>
//   DATA 0x<hex8> <hex16>
// '#' starts a comment.
std::string write_image(const Image& img);
Image parse_image(std::string_view text);  // throws FormatError

Image load_image_file(const std::string& path);
void save_image_file(const Image& img, const std::string& path);

}  // namespace kpu

#endif  // KPU_IMAGE_H_
