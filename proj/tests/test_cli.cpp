// Copyright 2026 The xgrain Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(XGRAIN_CLI) + " -q " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("xgrain_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("cli: usage errors exit 2") {
  const fs::path dir = scratch("usage");
  CHECK(run("") == 2);
  CHECK(run("no-such-command") == 2);
  CHECK(run("datagen --seed 1 --n 0 --out " + (dir / "d").string()) == 2);
  CHECK(run("eval-retrieval --ckpt " + (dir / "missing").string() + " --data " + dir.string() +
            " --out " + (dir / "e").string()) == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("cli: datagen, train, evaluate end to end") {
  const fs::path dir = scratch("e2e");
  const std::string data = (dir / "data").string();
  REQUIRE(run("datagen --seed 3 --n 24 --out " + data) == 0);
  CHECK(fs::exists(dir / "data" / "records.jsonl"));
  CHECK(fs::exists(dir / "data" / "heldout.jsonl"));
  CHECK(fs::exists(dir / "data" / "vocab.txt"));
  const auto dg = read_json(dir / "data" / "manifest.json");
  CHECK(dg["command"] == "datagen");
  CHECK(dg["seed"] == 3);

  const std::string small = " --set hidden_dim=16 --set attention_heads=2 --set projection_dim=8"
                            " --set batch_size=4 --set vision_layers=1 --set text_layers=1";
  const std::string run_dir = (dir / "run").string();
  CHECK(run("train --data " + data + " --steps 2 --out " + run_dir + " --set bogus=1") == 2);
  CHECK(run("train --data " + data + " --steps 2 --out " + run_dir + " --set batch_size=x") == 2);
  REQUIRE(run("train --data " + data + " --steps 2 --out " + run_dir + small) == 0);
  const fs::path ckpt = dir / "run" / "checkpoint";
  CHECK(fs::exists(ckpt / "params.bin"));
  const auto tm = read_json(dir / "run" / "manifest.json");
  CHECK(tm["command"] == "train");
  CHECK(tm["config"]["total_steps"] == "2");
  CHECK(tm["input_hash"].get<std::string>().size() == 40);

  // Same inputs hash the same.
  REQUIRE(run("train --data " + data + " --steps 2 --out " + (dir / "run2").string() + small) == 0);
  CHECK(read_json(dir / "run2" / "manifest.json")["input_hash"] == tm["input_hash"]);

  const std::string common = " --ckpt " + ckpt.string() + " --data " + data + " --split train --out ";
  REQUIRE(run("eval-retrieval" + common + (dir / "ret").string() + " --k 1000") == 0);
  const auto ret = read_json(dir / "ret" / "retrieval.json");
  CHECK(ret["k"].get<std::size_t>() == ret["images"].get<std::size_t>());
  CHECK(fs::exists(dir / "ret" / "manifest.json"));

  REQUIRE(run("eval-grounding" + common + (dir / "gr").string()) == 0);
  const auto gr = read_json(dir / "gr" / "grounding.json");
  CHECK(gr["summary"]["items"].get<std::size_t>() > 0);

  REQUIRE(run("heatmaps" + common + (dir / "hm").string() + " --limit 2") == 0);
  const auto hm = read_json(dir / "hm" / "heatmaps.json");
  REQUIRE(hm.size() == 2);
  for (const auto& w : hm[0]["words"]) {
    CHECK(fs::exists(dir / "hm" / w["overlay"].get<std::string>()));
  }
  CHECK(run("heatmaps" + common + (dir / "hm2").string() + " --layer 7") == 2);

  REQUIRE(run("eval-mlm" + common + (dir / "mlm").string()) == 0);
  CHECK(read_json(dir / "mlm" / "mlm.json")["masked"].get<std::size_t>() > 0);
}
