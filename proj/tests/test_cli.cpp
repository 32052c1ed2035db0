// Copyright 2026  muquant authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "json.hpp"
#include "muquant/audio.hpp"
#include "test_util.hpp"

using namespace muquant;
using muquant::testing::read_bytes;
using muquant::testing::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string err;
};

// Runs the CLI with stdout discarded and stderr captured.
Run run_cli(const TempDir& dir, const std::string& args) {
  const auto err_path = dir / "stderr.txt";
  const std::string cmd = std::string(MUQUANT_CLI_PATH) + " " + args + " >/dev/null 2>" +
                          err_path.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = read_bytes(err_path);
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_CASE("cli segment: a 34 s file gives two 20 s windows") {
  TempDir dir("cli_segment");
  std::filesystem::create_directories(dir / "audio");
  Waveform w;
  w.samples.assign(34 * kDefaultSampleRate, 0.1f);
  write_wav(dir / "audio/long.wav", w);
  const auto r = run_cli(dir, "--quiet segment --in " + q(dir / "audio") + " --out " +
                                  q(dir / "manifest.json"));
  REQUIRE(r.code == 0);
  const auto manifest = nlohmann::json::parse(read_bytes(dir / "manifest.json"));
  REQUIRE(manifest.at("entries").size() == 2);
  CHECK(manifest.at("entries")[1].at("start_seconds").get<double>() == 10.0);
}

TEST_CASE("cli exit codes") {
  TempDir dir("cli_codes");
  CHECK(run_cli(dir, "--no-such-flag").code == 2);
  CHECK(run_cli(dir, "").code == 2);
  CHECK(run_cli(dir, "segment --out x.json").code == 2);

  const auto bad_key = run_cli(dir, "--set train.bogus=1 segment --in a --out b");
  CHECK(bad_key.code == 1);
  const auto line = nlohmann::json::parse(bad_key.err.substr(0, bad_key.err.find('\n')));
  CHECK(line.at("error").get<std::string>() == "config");
  CHECK(line.at("key").get<std::string>() == "train.bogus");

  std::ofstream(dir / "cfg.json") << "{\"train\": {\"batch_size\": \"eight\"}}";
  const auto bad_type = run_cli(dir, "--config " + q(dir / "cfg.json") + " segment --in a --out b");
  CHECK(bad_type.code == 1);
  CHECK(bad_type.err.find("train.batch_size") != std::string::npos);
}

TEST_CASE("cli pipeline is reproducible and analyze-layers writes one row per block") {
  TempDir dir("cli_pipeline");
  const std::string base =
      "--quiet --seed 3 --set model.context.num_blocks=3 --set train.num_negatives=4 ";
  REQUIRE(run_cli(dir, base + "gen-synthetic --kind melody --melodies 2 --melody-seconds 2 --out " +
                           q(dir / "mel")).code == 0);
  REQUIRE(run_cli(dir, base + "segment --window 1 --hop 1 --in " + q(dir / "mel") + " --out " +
                           q(dir / "man.json")).code == 0);
  for (const char* tag : {"a", "b"}) {
    const std::string t(tag);
    const auto r = run_cli(dir, base + "pretrain --epochs 2 --batch-size 2 --manifest " +
                                    q(dir / "man.json") + " --out " + q(dir / (t + ".mqw")) +
                                    " --log " + q(dir / (t + ".log")));
    REQUIRE(r.code == 0);
    REQUIRE(run_cli(dir, base + "analyze-layers --segment-seconds 1 --ckpt " +
                             q(dir / (t + ".mqw")) + " --manifest " + q(dir / "man.json") +
                             " --out " + q(dir / (t + ".csv"))).code == 0);
  }
  CHECK(read_bytes(dir / "a.mqw") == read_bytes(dir / "b.mqw"));
  CHECK(read_bytes(dir / "a.log") == read_bytes(dir / "b.log"));
  CHECK(read_bytes(dir / "a.csv") == read_bytes(dir / "b.csv"));
  CHECK(count_lines(dir / "a.log") == 2);
  CHECK(count_lines(dir / "a.csv") == 1 + 3);
}
