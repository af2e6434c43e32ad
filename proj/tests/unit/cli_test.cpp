// Copyright 2026 The revvolnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct Invocation {
  int exit_code = -1;
  std::string out;
  Json json() const { return Json::parse(out); }
};

Invocation run(const std::string& args) {
  const std::string command = std::string(REVVOLNET_CLI) + " " + args + " 2>/dev/null";
  Invocation result;
  FILE* pipe = popen(command.c_str(), "r");
  if (!pipe) return result;
  char buffer[4096];
  while (std::size_t n = std::fread(buffer, 1, sizeof buffer, pipe)) result.out.append(buffer, n);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string config(const std::string& name) {
  return std::string(REVVOLNET_CONFIG_DIR) + "/" + name;
}

const Json& schema() {
  static const Json golden = [] {
    std::ifstream in(std::string(REVVOLNET_GOLDEN_DIR) + "/schema.json");
    return Json::parse(in);
  }();
  return golden;
}

void expect_keys(const Json& doc, const std::string& entry) {
  std::vector<std::string> keys;
  for (const auto& [key, value] : doc.items()) keys.push_back(key);
  EXPECT_EQ(keys, schema().at(entry).get<std::vector<std::string>>()) << entry;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("revvolnet_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("").exit_code, 2);
  EXPECT_EQ(run("frobnicate").exit_code, 2);
  EXPECT_EQ(run("invert --no-such-flag").exit_code, 2);
  EXPECT_EQ(run("estimate-memory --spec " + config("tiny.txt")).exit_code, 2);
  EXPECT_EQ(run("estimate-memory --spec " + config("tiny.txt") + " --input-shape 8,8,6").exit_code, 2);
  const fs::path dir = scratch("empty_spec");
  fs::create_directories(dir);
  std::ofstream(dir / "empty.txt").flush();
  EXPECT_EQ(run("gradcheck --spec " + (dir / "empty.txt").string()).exit_code, 2);
  EXPECT_EQ(run("estimate-memory --spec " + (dir / "missing.txt").string() + " --input-shape 8,8,8")
                .exit_code,
            2);
  EXPECT_EQ(run("--help").exit_code, 0);
}

TEST(Cli, InvertPasses) {
  const Invocation r = run("invert --trials 5");
  ASSERT_EQ(r.exit_code, 0);
  const Json doc = r.json();
  expect_keys(doc, "invert");
  EXPECT_TRUE(doc["passed"].get<bool>());
  EXPECT_LE(doc["max_error"].get<double>(), 1e-4);
}

TEST(Cli, GradcheckPassesAndNamesFaults) {
  const Invocation ok = run("gradcheck --spec " + config("toy.txt"));
  ASSERT_EQ(ok.exit_code, 0);
  const Json doc = ok.json();
  expect_keys(doc, "gradcheck");
  expect_keys(doc["ops"][0], "gradcheck.op");
  EXPECT_TRUE(doc["failing"].empty());

  const Invocation bad = run("gradcheck --inject-fault leaky_relu");
  EXPECT_EQ(bad.exit_code, 1);
  const Json failing = bad.json()["failing"];
  EXPECT_NE(std::find(failing.begin(), failing.end(), "leaky_relu"), failing.end());
}

TEST(Cli, EstimateSchemaAndDeterminism) {
  const std::string args = "estimate-memory --spec " + config("tiny.txt") + " --input-shape 16,16,16";
  const Invocation a = run(args);
  const Invocation b = run(args);
  ASSERT_EQ(a.exit_code, 0);
  EXPECT_EQ(a.out, b.out);
  const Json doc = a.json();
  expect_keys(doc, "estimate-memory");
  expect_keys(doc["terms"][0], "estimate-memory.term");
  expect_keys(doc["breakdown"], "estimate-memory.breakdown");
  std::int64_t sum_a = 0;
  for (const Json& t : doc["terms"]) sum_a += t["activation_bytes"].get<std::int64_t>();
  EXPECT_EQ(sum_a, doc["breakdown"]["activation_bytes"].get<std::int64_t>());
  EXPECT_EQ(run(args + " --format table").exit_code, 0);
}

TEST(Cli, CompareFavoursReversibleAtDeskScale) {
  const Invocation r = run("estimate-memory --spec " + config("desk-reversible.txt") + " --compare " +
                    config("desk-baseline.txt") + " --input-shape 32,32,32");
  ASSERT_EQ(r.exit_code, 0);
  const Json comparison = r.json()["comparison"];
  EXPECT_LT(comparison["training_bytes"].get<std::int64_t>(),
            comparison["compare_training_bytes"].get<std::int64_t>());
  EXPECT_GE(comparison["reduction"].get<double>(), 0.25);
}

TEST(Cli, EncoderDepthSweepChangesOnlyParameters) {
  const fs::path dir = scratch("sweep");
  fs::create_directories(dir);
  std::vector<Json> docs;
  for (int depth = 1; depth <= 4; ++depth) {
    const fs::path spec = dir / ("enc" + std::to_string(depth) + ".txt");
    std::ofstream(spec) << "levels = 8,16\ngroup_size = 4\nencoder_blocks = " << depth << "\n";
    const Invocation r = run("estimate-memory --spec " + spec.string() + " --input-shape 32,32,32");
    ASSERT_EQ(r.exit_code, 0) << depth;
    docs.push_back(r.json());
  }
  for (std::size_t i = 1; i < docs.size(); ++i) {
    const auto delta = [&](const char* key, const Json& a, const Json& b) {
      return b[key].get<std::int64_t>() - a[key].get<std::int64_t>();
    };
    EXPECT_EQ(delta("total_prev_bytes", docs[0], docs[i]),
              delta("parameter_bytes", docs[0]["breakdown"], docs[i]["breakdown"]));
  }
  fs::remove_all(dir);
}

TEST(Cli, TrainWritesCheckpointsAndMonotonicLog) {
  const fs::path out = scratch("train");
  const std::string args = "train --spec " + config("toy.txt") + " --config " +
                           config("tiny-training.txt") +
                           " --synthetic 3 --size 8 --max-epochs 3 --seed 4 --out " + out.string();
  const Invocation r = run(args);
  ASSERT_EQ(r.exit_code, 0);
  expect_keys(r.json(), "train");
  EXPECT_TRUE(fs::exists(out / "best"));
  EXPECT_TRUE(fs::exists(out / "final"));
  std::ifstream csv(out / "metrics.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("epoch,lr,train_loss", 0), 0u);
  int expected = 0;
  while (std::getline(csv, line)) EXPECT_EQ(std::stoi(line), expected++);
  EXPECT_EQ(expected, 3);

  const Invocation again = run(args);
  Json first = r.json();
  Json second = again.json();
  for (Json* doc : {&first, &second}) {
    doc->erase("seconds");
  }
  EXPECT_EQ(first, second);

  const Invocation eval = run("eval --checkpoint " + (out / "best").string() + " --synthetic 2 --size 8");
  ASSERT_EQ(eval.exit_code, 0);
  expect_keys(eval.json(), "eval");
  EXPECT_EQ(run("eval --checkpoint " + (out / "best").string() + " --synthetic 2 --data x").exit_code,
            2);
  fs::remove_all(out);
}

TEST(Cli, SynthThenEvalFromDisk) {
  const fs::path data = scratch("synth");
  const fs::path out = scratch("synth_model");
  ASSERT_EQ(run("synth --count 2 --size 8 --out " + data.string()).exit_code, 0);
  ASSERT_EQ(run("train --spec " + config("toy.txt") + " --config " + config("tiny-training.txt") +
                " --data " + data.string() + " --size 8 --max-epochs 1 --out " + out.string())
                .exit_code,
            0);
  const Invocation eval = run("eval --checkpoint " + (out / "final").string() + " --data " + data.string());
  ASSERT_EQ(eval.exit_code, 0);
  EXPECT_EQ(eval.json()["subjects"].get<int>(), 2);
  fs::remove_all(data);
  fs::remove_all(out);
}

TEST(Cli, BenchSchema) {
  const Invocation r = run("bench --spec " + config("toy.txt") + " --input-shape 8,8,8 --steps 2 --warmup 0");
  ASSERT_EQ(r.exit_code, 0);
  const Json doc = r.json();
  expect_keys(doc, "bench");
  expect_keys(doc["reversible"], "bench.mode");
  EXPECT_GT(doc["median_time_ratio"].get<double>(), 0.0);
}

}  // namespace
