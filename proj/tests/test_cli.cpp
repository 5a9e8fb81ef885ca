#include <sys/wait.h>

#include <cstdlib>
#include <set>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "mvfuse/data.hpp"
#include "util.hpp"

using nlohmann::json;
using testutil::TempDir;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(MVFUSE_CLI) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string capture(const std::string& args, const TempDir& d) {
  const auto out = d / "stdout.txt";
  const int st = std::system((std::string(MVFUSE_CLI) + " " + args + " >" + out.string() + " 2>/dev/null").c_str());
  if (st == -1) return {};
  return testutil::read_file(out);
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("cli exit codes") {
  TempDir d("cli");
  CHECK(run("--help") == 0);
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("synth --scenes 0 --out " + q(d / "s")) == 2);
  CHECK(run("cost --preset nope") == 2);
  CHECK(run("cost --preset base --spec x.json") == 2);
  CHECK(run("cost --preset desk") == 0);
  // Paths are checked with the config, before any work starts.
  CHECK(run("train --out " + q(d / "m.ckpt") + " --data " + q(d / "missing.json")) == 2);
  testutil::write_file(d / "junk.json", "{not json");
  CHECK(run("train --out " + q(d / "m.ckpt") + " --data " + q(d / "junk.json")) == 3);
  CHECK(run("eval --pred " + q(d / "junk.json") + " --refs " + q(d / "junk.json")) == 3);
  CHECK(run("train --stage 2 --out " + q(d / "m.ckpt") + " --data " + q(d / "missing.json")) == 2);
  CHECK(run("eval --pred " + q(d / "a.json") + " --refs " + q(d / "b.json")) == 2);

  testutil::write_file(d / "bad.json", R"({"train": {"lr": -1, "epochs": 0}, "colour": 1})");
  CHECK(run("train --config " + q(d / "bad.json") + " --out " + q(d / "m.ckpt")) == 2);
}

TEST_CASE("synth is byte reproducible") {
  TempDir a("cli"), b("cli");
  REQUIRE(run("synth --scenes 3 --frames 1 --seed 5 --out " + q(a / "d")) == 0);
  REQUIRE(run("synth --scenes 3 --frames 1 --seed 5 --out " + q(b / "d")) == 0);
  CHECK(testutil::tree(a / "d") == testutil::tree(b / "d"));
}

TEST_CASE("train, generate and eval end to end") {
  TempDir d("cli");
  REQUIRE(run("synth --scenes 4 --frames 1 --seed 7 --out " + q(d / "data")) == 0);
  testutil::write_file(d / "cfg.json",
                       json{{"data", {{"manifest", "data/manifest.json"}, {"fractions", {0.5, 0.0, 0.5}}}},
                            {"train", {{"epochs_per_stage", 1}, {"seed", 3}}}}
                           .dump());
  const std::string train = "train --config " + q(d / "cfg.json") + " --stage all --out ";
  REQUIRE(run(train + q(d / "a.ckpt")) == 0);
  REQUIRE(run(train + q(d / "b.ckpt")) == 0);
  const auto loss = testutil::read_file(d / "a.loss.csv");
  CHECK(!loss.empty());
  CHECK(loss == testutil::read_file(d / "b.loss.csv"));
  CHECK(testutil::read_file(d / "a.ckpt") == testutil::read_file(d / "b.ckpt"));
  CHECK(std::filesystem::exists(d / "a.stage1.ckpt"));

  const std::string gen = "generate --ckpt " + q(d / "a.ckpt") + " --data " + q(d / "data/manifest.json") +
                          " --split test --out " + q(d / "p.json") + " --refs-out " + q(d / "r.json");
  REQUIRE(run(gen + " --threads 3") == 0);
  const auto preds = json::parse(testutil::read_file(d / "p.json"));
  const auto refs = json::parse(testutil::read_file(d / "r.json"));
  REQUIRE(preds.size() == refs.size());
  CHECK(preds.size() == 8);  // two test scenes, four questions each
  std::set<std::string> pid, rid;
  for (const auto& p : preds) pid.insert(p.at("id").get<std::string>());
  for (const auto& r : refs) rid.insert(r.at("id").get<std::string>());
  CHECK(pid == rid);

  // Thread count does not change the output.
  const auto first = testutil::read_file(d / "p.json");
  REQUIRE(run(gen + " --threads 1") == 0);
  CHECK(testutil::read_file(d / "p.json") == first);

  const auto table = capture("eval --pred " + q(d / "r.json") + " --refs " + q(d / "r.json") + " --json " +
                                 q(d / "e.json"),
                             d);
  CHECK(table.find("100.00") != std::string::npos);
  const auto report = json::parse(testutil::read_file(d / "e.json"));
  CHECK(report.at("exact_match") == 1.0);
  CHECK(report.at("n") == 8);

  // Stage 2 needs a checkpoint to resume from.
  CHECK(run("train --config " + q(d / "cfg.json") + " --stage 2 --out " + q(d / "c.ckpt")) == 2);
  CHECK(run("train --config " + q(d / "cfg.json") + " --stage 2 --resume " + q(d / "a.stage1.ckpt") +
            " --out " + q(d / "c.ckpt")) == 0);
}

TEST_CASE("cost report from the command line") {
  TempDir d("cli");
  const auto out = capture("cost --preset base --json " + q(d / "c.json"), d);
  CHECK(out.find("memory: 0.94 GB") != std::string::npos);
  CHECK(out.find("S_enc=109") != std::string::npos);
  const auto j = json::parse(testutil::read_file(d / "c.json"));
  CHECK(j.at("flop_convention") == "1 multiply-accumulate = 1 FLOP");
  CHECK(capture("cost --preset q-large", d).find("memory: 0.77 GB") != std::string::npos);
  CHECK(capture("cost --published", d).find("DriveLM-Agent") != std::string::npos);
}
