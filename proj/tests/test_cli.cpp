#include <catch2/catch.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lcmt/data_io.hpp"

namespace fs = std::filesystem;

#ifndef LCMT_CLI_PATH
#define LCMT_CLI_PATH "lcmt"
#endif

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

fs::path cli_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "lcmt_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

CliResult run_cli(const std::vector<std::string>& args) {
  static int counter = 0;
  const fs::path log = cli_dir() / ("log" + std::to_string(counter++) + ".txt");
  std::string cmd = LCMT_CLI_PATH;
  for (const auto& a : args) cmd += " " + a;
  cmd += " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  CliResult res;
  res.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream in(log);
  res.output = {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return res;
}

}  // namespace

TEST_CASE("cli: missing required flag is a usage error (exit 2)") {
  auto res = run_cli({"synth", "--sentences", "5"});
  CHECK(res.exit_code == 2);
  auto res2 = run_cli({"definitely-not-a-command"});
  CHECK(res2.exit_code == 2);
}

TEST_CASE("cli: synth with zero sentences writes a valid empty corpus") {
  const fs::path out = cli_dir() / "synth0";
  auto res = run_cli({"synth", "--out", out.string(), "--sentences", "0", "--dev", "0", "--test",
                      "0", "--src-vocab", "20", "--tgt-vocab", "26", "--homographs", "2"});
  REQUIRE(res.exit_code == 0);
  CHECK(lcmt::read_corpus((out / "train.jsonl").string()).empty());
  CHECK(fs::exists(out / "config.resolved.toml"));
  CHECK(fs::exists(out / "manifest.json"));
}

TEST_CASE("cli: extract warns when no record has an alignment") {
  const fs::path dir = cli_dir() / "noalign";
  fs::create_directories(dir);
  {
    std::ofstream c(dir / "corpus.jsonl");
    c << R"({"id":0,"src":["a","b"],"tgt":["x","y"]})" << "\n";
  }
  auto res = run_cli({"extract", "--in", (dir / "corpus.jsonl").string(), "--out",
                      (dir / "out").string()});
  REQUIRE(res.exit_code == 0);
  CHECK(res.output.find("warning") != std::string::npos);
  auto corpus = lcmt::read_corpus((dir / "out" / "extracted.jsonl").string());
  REQUIRE(corpus.size() == 1);
  CHECK(corpus[0].constraints.empty());
}

TEST_CASE("cli: train flag validation and warnings") {
  const fs::path dir = cli_dir() / "trainflags";
  auto synth = run_cli({"synth", "--out", (dir / "data").string(), "--seed", "4", "--sentences",
                        "24", "--dev", "2", "--test", "2", "--src-vocab", "16", "--tgt-vocab",
                        "22", "--homographs", "2", "--len-min", "2", "--len-max", "4"});
  REQUIRE(synth.exit_code == 0);

  // memory flags are ignored, with a warning, in base mode
  auto base = run_cli({"train", "--data", (dir / "data" / "train.jsonl").string(), "--out",
                       (dir / "base").string(), "--mode", "base", "--memory-block", "2",
                       "--steps", "3", "--batch", "4", "--d-model", "8", "--blocks", "2",
                       "--heads", "2", "--ffn", "16", "--max-len", "8"});
  REQUIRE(base.exit_code == 0);
  CHECK(base.output.find("warning") != std::string::npos);

  // a memory block outside 1..n_blocks is a config error
  auto bad = run_cli({"train", "--data", (dir / "data" / "train.jsonl").string(), "--out",
                      (dir / "bad").string(), "--mode", "lcnmt", "--memory-block", "5", "--steps",
                      "3", "--batch", "4", "--d-model", "8", "--blocks", "2", "--heads", "2",
                      "--ffn", "16", "--max-len", "8"});
  CHECK(bad.exit_code == 2);

  // bad mode string is rejected by the parser
  auto badmode = run_cli({"train", "--data", (dir / "data" / "train.jsonl").string(), "--out",
                          (dir / "bm").string(), "--mode", "turbo"});
  CHECK(badmode.exit_code == 2);
}

TEST_CASE("cli: decode rejects a mode/checkpoint mismatch with exit 2") {
  const fs::path dir = cli_dir() / "mismatch";
  auto synth = run_cli({"synth", "--out", (dir / "data").string(), "--seed", "4", "--sentences",
                        "16", "--dev", "2", "--test", "4", "--src-vocab", "16", "--tgt-vocab",
                        "22", "--homographs", "2", "--len-min", "2", "--len-max", "4"});
  REQUIRE(synth.exit_code == 0);
  auto train = run_cli({"train", "--data", (dir / "data" / "train.jsonl").string(), "--out",
                        (dir / "base").string(), "--mode", "base", "--steps", "3", "--batch", "4",
                        "--d-model", "8", "--blocks", "1", "--heads", "2", "--ffn", "16",
                        "--max-len", "8"});
  REQUIRE(train.exit_code == 0);
  auto dec = run_cli({"decode", "--ckpt", (dir / "base" / "model.ckpt").string(), "--data",
                      (dir / "data" / "test.jsonl").string(), "--out", (dir / "dec").string(),
                      "--mode", "lcnmt"});
  CHECK(dec.exit_code == 2);
  CHECK(dec.output.find("mem.") != std::string::npos);  // names the missing tensors
}

TEST_CASE("cli: config file values are applied and overridden by flags") {
  const fs::path dir = cli_dir() / "config";
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "run.toml");
    cfg << "[synth]\n"
        << "sentences=7\n"
        << "dev=1\n"
        << "test=1\n"
        << "src-vocab=16\n"
        << "tgt-vocab=22\n"
        << "homographs=1\n"
        << "len-min=2\n"
        << "len-max=4\n";
  }
  auto res = run_cli({"--config", (dir / "run.toml").string(), "synth", "--out",
                      (dir / "out").string(), "--seed", "2"});
  REQUIRE(res.exit_code == 0);
  CHECK(lcmt::read_corpus((dir / "out" / "train.jsonl").string()).size() == 7);

  // command line wins over the config file
  auto res2 = run_cli({"--config", (dir / "run.toml").string(), "synth", "--out",
                       (dir / "out2").string(), "--seed", "2", "--sentences", "3"});
  REQUIRE(res2.exit_code == 0);
  CHECK(lcmt::read_corpus((dir / "out2" / "train.jsonl").string()).size() == 3);
}
