#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "kpu/frontend.h"
#include "support/test_util.h"

namespace kpu {
namespace {

namespace fs = std::filesystem;
using testing::kKeyHex;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("kpu_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
  }

  std::string read(const std::string& name) const {
    std::ifstream in(path(name));
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  int cli(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return run_cli(args, out_, err_);
  }

  int assemble_file(const std::string& src) {
    write("p.s", src);
    return cli({"asm", "--key", std::string(kKeyHex), "--seed", "0123456789abcdef", "-o",
                path("p.img"), path("p.s")});
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

TEST_F(Cli, PrintsDecryptedR3) {
  ASSERT_EQ(assemble_file(testing::user_program("l.addi r3, r0, 42\nl.nop 2\nl.nop 1")), 0)
      << err_.str();
  EXPECT_EQ(cli({"run", "--key", std::string(kKeyHex), path("p.img")}), 0) << err_.str();
  EXPECT_EQ(out_.str(), "42\n");
  EXPECT_NE(err_.str().find("@exit  : cycles"), std::string::npos);
}

TEST_F(Cli, CompareMatchingRun) {
  ASSERT_EQ(assemble_file(testing::user_program(R"(
        l.addi r1, r0, 0x80
        l.addi r3, r0, 11
        l.sw   0(r1), r3
        l.nop  1)")), 0);
  ASSERT_EQ(cli({"run", "--key", std::string(kKeyHex), "--seed", "0123456789abcdef", "--dump",
                 path("d.txt"), "--stats", path("s.txt"), "--trace", path("t.txt"), path("p.img")}),
            0)
      << err_.str();
  EXPECT_EQ(read("d.txt").rfind("KPUDUMP 1\n", 0), 0u);
  EXPECT_EQ(read("t.txt").rfind("cycle 0 | F:0x00000100:", 0), 0u);
  EXPECT_NE(read("s.txt").find("Branch Prediction Buffer"), std::string::npos);
  EXPECT_EQ(cli({"compare", "--key", std::string(kKeyHex), path("p.img"), path("d.txt")}), 0);
  EXPECT_EQ(out_.str(), "MISMATCHES 0\n");
  EXPECT_EQ(cli({"oracle", "--key", std::string(kKeyHex), path("p.img")}), 0);
  EXPECT_NE(out_.str().find("REG 3 0000000b"), std::string::npos);
}

TEST_F(Cli, CompareAgainstWrongKeyMismatches) {
  ASSERT_EQ(assemble_file(testing::user_program("l.addi r3, r0, 11\nl.nop 1")), 0);
  ASSERT_EQ(cli({"run", "--key", std::string(kKeyHex), "--dump", path("d.txt"), "--stats",
                 path("s.txt"), path("p.img")}),
            0);
  write("bad.txt", read("d.txt").replace(read("d.txt").find("GPR 3 "), 22, "GPR 3 0000000000000000"));
  EXPECT_EQ(cli({"compare", "--key", std::string(kKeyHex), path("p.img"), path("bad.txt")}), 3);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(cli({"run", path("missing.img")}), 2);
  EXPECT_NE(err_.str().find("--key"), std::string::npos);
  EXPECT_EQ(cli({}), 2);
  EXPECT_EQ(cli({"run", "--key", "xyz", path("missing.img")}), 2);
  write("garbage.img", "not an image\n");
  EXPECT_EQ(cli({"run", "--key", std::string(kKeyHex), path("garbage.img")}), 2);
  ASSERT_EQ(assemble_file(testing::super_program("spin: l.j spin")), 0);
  EXPECT_EQ(cli({"run", "--key", std::string(kKeyHex), "--max-cycles", "100", "--stats",
                 path("s.txt"), path("p.img")}),
            1);
  EXPECT_EQ(assemble_file("l.j nowhere\n"), 2);
}

TEST_F(Cli, StrictLint) {
  const std::string src = ".mode user\n.encrypt on\n.org 0x100\nl.addi r9, r9, 4\nl.nop 1\n";
  EXPECT_EQ(assemble_file(src), 0);
  EXPECT_NE(err_.str().find("arithmetic on program address"), std::string::npos);
  write("p.s", src);
  EXPECT_EQ(cli({"asm", "--strict", "--key", std::string(kKeyHex), "--seed", "0000000000000000",
                 "-o", path("p.img"), path("p.s")}),
            1);
}

TEST(Stats, RenderLayout) {
  auto e = testing::run_program(testing::user_program(R"(
        l.addi r1, r0, 0x80
        l.sw   0(r1), r1
        l.lwz  r3, 0(r1)
        l.nop  1)"));
  const std::string s = render_stats(e->stats());
  const std::regex header(R"(^@exit  : cycles \d+, instructions \d+\n)");
  EXPECT_TRUE(std::regex_search(s, header)) << s;
  for (const char* row : {"load      instructions", "store     instructions", "(cached)",
                          "wait      states", "(stalls)", "(refills)", "total",
                          "Branch Prediction Buffer", "User Data Cache"}) {
    EXPECT_NE(s.find(row), std::string::npos) << row;
  }
  // Column totals add up to 100% of all cycles.
  std::smatch m;
  const std::regex total(R"(total\s+([0-9.]+)%\s+([0-9.]+)%)");
  ASSERT_TRUE(std::regex_search(s, m, total)) << s;
  EXPECT_NEAR(std::stod(m[1]) + std::stod(m[2]), 100.0, 0.2);
}

TEST(Config, Parsing) {
  RunConfig rc;
  rc.key_hex = "0011";
  EXPECT_ANY_THROW(rc.codec());
  rc.key_hex = std::string(kKeyHex);
  rc.seed_hex = "12";
  EXPECT_ANY_THROW(rc.engine_config());
  rc.seed_hex = "00000000000000ff";
  rc.cache_entries = 8;
  const EngineConfig cfg = rc.engine_config();
  EXPECT_EQ(cfg.seed, 0xffu);
  EXPECT_EQ(cfg.memory.cache_entries, 8u);
}

}  // namespace
}  // namespace kpu
