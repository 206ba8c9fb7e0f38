#include "kpu/image.h"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "kpu/error.h"

namespace kpu {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

uint64_t parse_hex_field(std::string_view s, int line, size_t digits, bool prefixed) {
  if (prefixed) {
    if (s.size() < 2 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X')) {
      throw FormatError(line, "expected 0x-prefixed hex, got '" + std::string(s) + "'");
    }
    s.remove_prefix(2);
  }
  if (s.size() != digits) {
    throw FormatError(line, fmt::format("expected {} hex digits, got '{}'", digits, s));
  }
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw FormatError(line, "bad hex value '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

std::string_view mode_name(Mode m) { return m == Mode::kUser ? "user" : "super"; }

std::string write_image(const Image& img) {
  std::string out = "KPUIMG 1\n";
  out += fmt::format("ENTRY 0x{:08x}\n", img.entry);
  out += fmt::format("MODE {}\n", mode_name(img.start_mode));
  for (const auto& [addr, word] : img.text) out += fmt::format("TEXT 0x{:08x} {:08x}\n", addr, word);
  for (const auto& [addr, word] : img.data) out += fmt::format("DATA 0x{:08x} {:016x}\n", addr, word);
  return out;
}

Image parse_image(std::string_view text) {
  Image img;
  bool header = false, have_entry = false, have_mode = false;
  int line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto f = split_ws(line);
    if (f.empty()) continue;

    if (!header) {
      if (f.size() != 2 || f[0] != "KPUIMG" || f[1] != "1") {
        throw FormatError(line_no, "missing 'KPUIMG 1' header");
      }
      header = true;
      continue;
    }
    if (f[0] == "ENTRY") {
      if (f.size() != 2 || have_entry) throw FormatError(line_no, "bad ENTRY record");
      img.entry = static_cast<uint32_t>(parse_hex_field(f[1], line_no, 8, true));
      if (img.entry % 4 != 0) throw FormatError(line_no, "unaligned entry point");
      have_entry = true;
    } else if (f[0] == "MODE") {
      if (f.size() != 2 || have_mode) throw FormatError(line_no, "bad MODE record");
      if (f[1] == "user") {
        img.start_mode = Mode::kUser;
      } else if (f[1] == "super") {
        img.start_mode = Mode::kSupervisor;
      } else {
        throw FormatError(line_no, "MODE must be user or super");
      }
      have_mode = true;
    } else if (f[0] == "TEXT") {
      if (f.size() != 3) throw FormatError(line_no, "TEXT needs address and word");
      const auto addr = static_cast<uint32_t>(parse_hex_field(f[1], line_no, 8, true));
      const auto word = static_cast<uint32_t>(parse_hex_field(f[2], line_no, 8, false));
      if (addr % 4 != 0) throw FormatError(line_no, "unaligned TEXT address");
      if (!img.text.emplace(addr, word).second) throw FormatError(line_no, "duplicate TEXT address");
    } else if (f[0] == "DATA") {
      if (f.size() != 3) throw FormatError(line_no, "DATA needs address and word");
      const auto addr = static_cast<uint32_t>(parse_hex_field(f[1], line_no, 8, true));
      const uint64_t word = parse_hex_field(f[2], line_no, 16, false);
      if (addr % 8 != 0) throw FormatError(line_no, "unaligned DATA address");
      if (!img.data.emplace(addr, word).second) throw FormatError(line_no, "duplicate DATA address");
    } else {
      throw FormatError(line_no, "unknown record '" + std::string(f[0]) + "'");
    }
  }
  if (!header) throw FormatError(1, "missing 'KPUIMG 1' header");
  if (!have_entry) throw FormatError(line_no, "missing ENTRY record");
  if (!have_mode) throw FormatError(line_no, "missing MODE record");
  return img;
}

Image load_image_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open image '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_image(ss.str());
}

void save_image_file(const Image& img, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write image '" + path + "'");
  out << write_image(img);
}

}  // namespace kpu
