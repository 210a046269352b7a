#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "penrec/alphabet.hpp"
#include "penrec/sensor_data.hpp"
#include "penrec/synthgen.hpp"

using namespace penrec;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + PENREC_CLI_PATH + "\" " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
  int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("penrec_cli_" + std::to_string(static_cast<unsigned>(getpid())) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("params prints exact parameter counts") {
  CmdResult cldnn = run_cli("params --model cldnn");
  CHECK(cldnn.exit_code == 0);
  CHECK(cldnn.output == "743373\n");
  CmdResult cnn = run_cli("params --model cnn");
  CHECK(cnn.exit_code == 0);
  CHECK(cnn.output == "2154957\n");
}

TEST_CASE("exit codes distinguish failure classes") {
  CHECK(run_cli("frobnicate").exit_code == 2);          // unknown subcommand
  CHECK(run_cli("params --bogus-flag 3").exit_code == 2);
  CHECK(run_cli("").exit_code == 2);                    // subcommand required

  CmdResult bad_model = run_cli("params --model mlp");
  CHECK(bad_model.exit_code == 3);
  CHECK(bad_model.output.find("error:") != std::string::npos);

  TempDir tmp;
  CmdResult missing = run_cli("prep --in " + (tmp / "absent.jsonl") + " --out " +
                              (tmp / "out.jsonl"));
  CHECK(missing.exit_code == 4);

  CmdResult help = run_cli("--help");
  CHECK(help.exit_code == 0);
  CHECK(help.output.find("synth") != std::string::npos);
  CHECK(help.output.find("train") != std::string::npos);
}

TEST_CASE("config files are validated and overridden by flags") {
  TempDir tmp;
  {
    std::ofstream cfg(tmp / "bad.json");
    cfg << "{\"synth\": {\"wirters\": 3}}\n";
  }
  CmdResult unknown_key = run_cli("synth --config " + (tmp / "bad.json") + " --out " +
                                  (tmp / "d.jsonl"));
  CHECK(unknown_key.exit_code == 3);
  CHECK(unknown_key.output.find("wirters") != std::string::npos);

  {
    std::ofstream cfg(tmp / "good.json");
    cfg << "{\"seed\": 5, \"synth\": {\"writers\": 2, \"samples_per_writer\": 3, "
           "\"vocab\": \"main\"}}\n";
  }
  CmdResult from_cfg = run_cli("synth --config " + (tmp / "good.json") + " --out " +
                               (tmp / "a.jsonl"));
  REQUIRE(from_cfg.exit_code == 0);
  // Flag overrides the config value for the same knob.
  CmdResult overridden = run_cli("synth --config " + (tmp / "good.json") +
                                 " --samples 1 --out " + (tmp / "b.jsonl"));
  REQUIRE(overridden.exit_code == 0);
  Dataset a = parse_dataset(tmp / "a.jsonl", Alphabet::latin());
  Dataset b = parse_dataset(tmp / "b.jsonl", Alphabet::latin());
  CHECK(a.size() == 6);
  CHECK(b.size() == 2);
}

TEST_CASE("synth subcommand is a thin wrapper over the library") {
  TempDir tmp;
  CmdResult r = run_cli("synth --seed 9 --writers 3 --samples 4 --vocab unseen --out " +
                        (tmp / "cli.jsonl"));
  REQUIRE(r.exit_code == 0);
  Dataset via_cli = parse_dataset(tmp / "cli.jsonl", Alphabet::latin());
  Dataset direct = synth_dataset(default_unseen_vocab(), 3, 4, 9);
  REQUIRE(via_cli.size() == direct.size());
  for (int i = 0; i < direct.size(); ++i) {
    const auto& s1 = via_cli.samples[static_cast<std::size_t>(i)];
    const auto& s2 = direct.samples[static_cast<std::size_t>(i)];
    CHECK(s1.label == s2.label);
    CHECK(s1.writer_id == s2.writer_id);
    CHECK(s1.frames == s2.frames);
  }
}

TEST_CASE("prep subcommand matches the library composition byte for byte") {
  TempDir tmp;
  REQUIRE(run_cli("synth --seed 5 --writers 2 --samples 3 --out " + (tmp / "raw.jsonl"))
              .exit_code == 0);
  REQUIRE(run_cli("prep --in " + (tmp / "raw.jsonl") + " --out " + (tmp / "cli.jsonl"))
              .exit_code == 0);
  Dataset raw = parse_dataset(tmp / "raw.jsonl", Alphabet::latin());
  write_dataset(prepare_dataset(raw, 1.0, 20, 1500), tmp / "lib.jsonl");
  CHECK(slurp(tmp.path / "cli.jsonl") == slurp(tmp.path / "lib.jsonl"));
}

TEST_CASE("prep and split reproduce byte-identically under one seed") {
  TempDir tmp;
  REQUIRE(run_cli("synth --seed 3 --writers 6 --samples 2 --out " + (tmp / "raw.jsonl"))
              .exit_code == 0);
  for (const char* round : {"1", "2"}) {
    REQUIRE(run_cli("prep --in " + (tmp / "raw.jsonl") + " --out " + (tmp / "clean") +
                    round + ".jsonl")
                .exit_code == 0);
    REQUIRE(run_cli("split --seed 11 --k 3 --in " + (tmp / "clean") + round +
                    ".jsonl --out " + (tmp / "splits") + round + ".json")
                .exit_code == 0);
  }
  CHECK(slurp(tmp.path / "clean1.jsonl") == slurp(tmp.path / "clean2.jsonl"));
  CHECK(slurp(tmp.path / "splits1.json") == slurp(tmp.path / "splits2.json"));
  CHECK(slurp(tmp.path / "splits1.json").find("\"k\": 3") != std::string::npos);
}
