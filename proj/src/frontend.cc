#include "kpu/frontend.h"

#include <fmt/format.h>

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "kpu/assembler.h"
#include "kpu/error.h"
#include "kpu/oracle.h"

namespace kpu {
namespace {

double pct(uint64_t part, uint64_t whole) {
  return whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole);
}

std::string cell(uint64_t part, uint64_t whole) { return fmt::format("{:5.1f}%", pct(part, whole)); }
std::string sub_cell(uint64_t part, uint64_t whole) {
  return fmt::format("({:4.1f}%)", pct(part, whole));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
}

struct Usage {
  int code;
};

}  // namespace

Codec RunConfig::codec() const { return Codec(parse_key(key_hex)); }

EngineConfig RunConfig::engine_config() const {
  EngineConfig cfg;
  cfg.seed = parse_seed(seed_hex);
  cfg.max_cycles = max_cycles;
  cfg.trace = trace;
  if (user_words) cfg.memory.user_words = *user_words;
  if (cache_entries) cfg.memory.cache_entries = *cache_entries;
  if (bpb_entries) cfg.bpb_entries = *bpb_entries;
  return cfg;
}

std::string render_stats(const CycleStats& st) {
  const uint64_t total = st.cycles;
  const ModeStats& u = st.of(Mode::kUser);
  const ModeStats& s = st.of(Mode::kSupervisor);
  std::string out = fmt::format("@exit  : cycles {}, instructions {}\n", st.cycles, st.instructions);
  out += fmt::format("{:>24}  {:>8}  {:>8}\n", "mode", "user", "super");
  auto row = [&](std::string_view label, uint64_t a, uint64_t b) {
    out += fmt::format("{:>24}  {:>8}  {:>8}\n", label, cell(a, total), cell(b, total));
  };
  auto sub_row = [&](std::string_view label, uint64_t a, std::optional<uint64_t> b) {
    out += fmt::format("{:>24}  {:>8}  {:>8}\n", label, sub_cell(a, total),
                       b ? sub_cell(*b, total) : std::string());
  };
  for (int c = 0; c < kNumClasses; ++c) {
    const auto cls = static_cast<InstrClass>(c);
    row(fmt::format("{:<9} instructions", class_name(cls)), u.count(cls), s.count(cls));
    if (cls == InstrClass::kLoad) sub_row("(cached)", u.cached_loads, std::nullopt);
    if (cls == InstrClass::kStore) sub_row("(cached)", u.cached_stores, std::nullopt);
  }
  row("wait      states", u.waits(), s.waits());
  sub_row("(stalls)", u.stalls, s.stalls);
  sub_row("(refills)", u.refills, s.refills);
  row("total", u.cycles(), s.cycles());

  const BpbStats& b = st.bpb;
  const uint64_t lookups = b.hits() + b.misses();
  auto n = [&](uint64_t v) { return fmt::format("{:<8} ({:3.0f}%)", v, pct(v, lookups)); };
  out += "\nBranch Prediction Buffer\n";
  out += fmt::format("  hits   {}  misses {}\n", n(b.hits()), n(b.misses()));
  out += fmt::format("  right  {}  right  {}\n", n(b.hit_right), n(b.miss_right));
  out += fmt::format("  wrong  {}  wrong  {}\n", n(b.hit_wrong), n(b.miss_wrong));

  const CacheStats& c = st.user_cache;
  const uint64_t reads = c.read_hits + c.read_misses;
  const uint64_t writes = c.write_hits + c.write_misses;
  auto m = [](uint64_t v, uint64_t whole) {
    return fmt::format("{:<8} ({:3.0f}%)", v, pct(v, whole));
  };
  out += "\nUser Data Cache\n";
  out += fmt::format("  read  hits {}  misses {}\n", m(c.read_hits, reads), m(c.read_misses, reads));
  out += fmt::format("  write hits {}  misses {}\n", m(c.write_hits, writes),
                     m(c.write_misses, writes));
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Encrypted-computing processor simulator", "kpu"};
  app.require_subcommand(1);

  std::string key, seed = "0000000000000000", output, input, image_path, dump_in;
  bool strict = false;
  RunConfig rc;
  std::string trace_path, dump_path;
  uint64_t max_steps = 1'000'000;

  auto* asm_cmd = app.add_subcommand("asm", "Assemble a source file into an image");
  asm_cmd->add_option("--key", key, "128-bit key, 32 hex digits")->required();
  asm_cmd->add_option("--seed", seed, "64-bit padding seed, 16 hex digits")->required();
  asm_cmd->add_flag("--strict", strict, "Treat crypto-safety findings as errors");
  asm_cmd->add_option("-o", output, "Output image")->required();
  asm_cmd->add_option("input", input, "Assembly source")->required();

  auto* run_cmd = app.add_subcommand("run", "Run an image on the pipelined simulator");
  run_cmd->add_option("--key", rc.key_hex, "128-bit key, 32 hex digits")->required();
  run_cmd->add_option("--seed", rc.seed_hex, "64-bit padding seed, 16 hex digits");
  run_cmd->add_option("--max-cycles", rc.max_cycles, "Cycle limit");
  run_cmd->add_option("--trace", trace_path, "Write a per-cycle stage trace to this file");
  run_cmd->add_option("--stats", rc.stats_path, "Write statistics here instead of stderr");
  run_cmd->add_option("--dump", dump_path, "Write the final state dump to this file");
  run_cmd->add_option("--user-words", rc.user_words, "User physical range in words");
  run_cmd->add_option("--cache-entries", rc.cache_entries, "User data cache entries");
  run_cmd->add_option("--bpb-entries", rc.bpb_entries, "Branch prediction buffer entries");
  run_cmd->add_option("image", image_path, "Image file")->required();

  auto* oracle_cmd = app.add_subcommand("oracle", "Run an image on the sequential oracle");
  oracle_cmd->add_option("--key", key, "128-bit key, 32 hex digits")->required();
  oracle_cmd->add_option("--max-steps", max_steps, "Step limit");
  oracle_cmd->add_option("image", image_path, "Image file")->required();

  auto* cmp_cmd = app.add_subcommand("compare", "Check a simulator dump against the oracle");
  cmp_cmd->add_option("--key", key, "128-bit key, 32 hex digits")->required();
  cmp_cmd->add_option("--max-steps", max_steps, "Step limit");
  cmp_cmd->add_option("image", image_path, "Image file")->required();
  cmp_cmd->add_option("dump", dump_in, "Simulator dump file")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "kpu: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (asm_cmd->parsed()) {
      const Codec codec(parse_key(key));
      const uint64_t s = parse_seed(seed);
      const std::string src = read_file(input);
      AsmResult res;
      try {
        res = assemble(src, codec, s, AsmOptions{strict});
      } catch (const CryptoSafetyError& e) {
        err << input << ": crypto-safety errors:\n" << e.what();
        return 1;
      }
      for (const auto& d : res.diagnostics) {
        err << fmt::format("{}:{}: warning: {}\n", input, d.line, d.message);
      }
      write_file(output, write_image(res.image));
      return 0;
    }
    if (run_cmd->parsed()) {
      const Codec codec = rc.codec();
      rc.trace = !trace_path.empty();
      const Image img = load_image_file(image_path);
      Engine eng(img, codec, rc.engine_config());
      eng.set_output_sink([&out](uint32_t v) { out << v << "\n"; });
      eng.run();
      if (rc.trace) {
        std::string t;
        for (const auto& l : eng.trace()) t += l + "\n";
        write_file(trace_path, t);
      }
      const std::string stats = render_stats(eng.stats());
      if (rc.stats_path.empty()) {
        err << stats;
      } else {
        write_file(rc.stats_path, stats);
      }
      if (!dump_path.empty()) write_file(dump_path, write_state_dump(eng.mutable_state(), codec));
      if (eng.outcome() != RunOutcome::kExited) {
        err << "kpu: " << eng.fault_message() << "\n";
        return 1;
      }
      return 0;
    }
    if (oracle_cmd->parsed() || cmp_cmd->parsed()) {
      const Codec codec(parse_key(key));
      const Image img = load_image_file(image_path);
      OracleState st;
      try {
        st = interpret(img, codec, OracleLimits{max_steps});
      } catch (const MaxStepsExceeded& e) {
        err << "kpu: " << e.what() << "\n";
        return 1;
      } catch (const ProgramFault& e) {
        err << "kpu: " << e.what() << "\n";
        return 1;
      }
      if (oracle_cmd->parsed()) {
        out << format_oracle_state(st);
        return 0;
      }
      const StateDump dump = parse_state_dump(read_file(dump_in));
      try {
        const CompareReport rep = compare(dump, codec, st);
        for (const auto& m : rep.mismatches) out << m << "\n";
        out << "MISMATCHES " << rep.mismatches.size() << "\n";
        return rep.ok() ? 0 : 3;
      } catch (const AliasDetected& e) {
        out << "ALIAS " << e.what() << "\n";
        return 3;
      }
    }
  } catch (const LineError& e) {
    err << "kpu: " << e.what() << "\n";
    return 2;
  } catch (const UndefinedLabel& e) {
    err << "kpu: " << e.what() << "\n";
    return 2;
  } catch (const OperandOutOfRange& e) {
    err << "kpu: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "kpu: " << e.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace kpu
