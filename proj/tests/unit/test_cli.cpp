#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "enlfcn/io.hpp"
#include "enlfcn/npy.hpp"
#include "enlfcn_cli/cli.hpp"

using namespace enlfcn;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "enlfcn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("enlfcn_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small synthetic scene plus a run config with a compact network.
fs::path make_workspace(const std::string& name, std::size_t iterations) {
  const fs::path dir = scratch(name);
  EXPECT_EQ(run({"synth", "--out", dir.string(), "--bands", "3", "--height", "8", "--width", "8", "--classes", "2",
                 "--block", "4", "--train", "4", "--val", "2", "--seed", "5"}),
            0);
  std::ofstream(dir / "run.json") << R"({"network": {"backbone_channels": 4, "enl_channels": 2, "kernel_size": 3},
    "train": {"iterations": )" << iterations
                                 << R"(, "learning_rate": 0.01, "validate_every": 2},
    "data": {"cube": "cube.npy", "labels": "labels.npy", "split_mode": "counts:counts.json"},
    "dtype": "f64", "seed": 11, "output": "ckpt"})";
  return dir;
}

}  // namespace

TEST(Cli, BenchReportsFormulaValue) {
  const fs::path dir = scratch("bench");
  ASSERT_EQ(run({"bench", "--geometry", "145x145", "--channels", "150", "--recurrence", "2", "--kind", "efficient",
                 "--out", (dir / "b.json").string()}),
            0);
  const auto j = nlohmann::json::parse(read_file(dir / "b.json"));
  ASSERT_EQ(j["reports"].size(), 1u);
  EXPECT_EQ(j["reports"][0]["multiplications"].get<std::uint64_t>(), 3645735000u);
  EXPECT_EQ(j["reports"][0]["attention_bytes"].get<std::uint64_t>(), 24304900u);
}

TEST(Cli, BenchMeasureCountsMultiplications) {
  const fs::path dir = scratch("bench_measure");
  ASSERT_EQ(run({"bench", "--geometry", "6x5", "--geometry", "4x4", "--channels", "3", "--kind", "both", "--measure",
                 "--out", (dir / "b.json").string()}),
            0);
  const auto j = nlohmann::json::parse(read_file(dir / "b.json"));
  ASSERT_EQ(j["reports"].size(), 4u);
  for (const auto& r : j["reports"]) {
    EXPECT_EQ(r["measured"]["counted_multiplications"], r["multiplications"]);
  }
}

TEST(Cli, SplitTwiceIsByteIdentical) {
  const fs::path dir = make_workspace("split", 2);
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(run({"split", "--labels", (dir / "labels.npy").string(), "--mode", "fractions:0.2,0.1", "--seed", "3",
                   "--out", (dir / out).string()}),
              0);
  }
  EXPECT_EQ(read_file(dir / "a" / "split.npy"), read_file(dir / "b" / "split.npy"));
  EXPECT_EQ(read_file(dir / "a" / "split.json"), read_file(dir / "b" / "split.json"));
}

TEST(Cli, TrainEvalViz) {
  const fs::path dir = make_workspace("train", 4);
  ASSERT_EQ(run({"--threads", "1", "train", "--config", (dir / "run.json").string(), "--quiet"}), 0);
  ASSERT_TRUE(fs::exists(dir / "ckpt" / "model.json"));
  ASSERT_TRUE(fs::exists(dir / "ckpt" / "log.csv"));
  ASSERT_EQ(run({"eval", "--ckpt", (dir / "ckpt").string(), "--data", (dir / "cube.npy").string(), "--labels",
                 (dir / "labels.npy").string(), "--subset", "test", "--out", (dir / "eval").string()}),
            0);
  EXPECT_TRUE(fs::exists(dir / "eval" / "metrics.csv"));
  EXPECT_EQ(read_file(dir / "eval" / "map.ppm").substr(0, 11), "P6\n8 8\n255\n");
  ASSERT_EQ(run({"viz", "--ckpt", (dir / "ckpt").string(), "--data", (dir / "cube.npy").string(), "--pixel", "5,5",
                 "--module", "1", "--out", (dir / "corr.npy").string()}),
            0);
  EXPECT_EQ(read_tensor<double>(dir / "corr.npy").shape(), (Shape{8, 8}));
  EXPECT_EQ(run({"viz", "--ckpt", (dir / "ckpt").string(), "--data", (dir / "cube.npy").string(), "--pixel", "9,0",
                 "--out", (dir / "corr.npy").string()}),
            cli::usage_error);
}

TEST(Cli, ResumeMatchesStraightRun) {
  const fs::path dir = make_workspace("resume", 6);
  ASSERT_EQ(run({"train", "--config", (dir / "run.json").string(), "--out", (dir / "straight").string(), "--quiet"}), 0);
  ASSERT_EQ(run({"train", "--config", (dir / "run.json").string(), "--out", (dir / "half").string(), "--iterations",
                 "3", "--quiet"}),
            0);
  ASSERT_EQ(run({"train", "--config", (dir / "run.json").string(), "--resume", (dir / "half").string(), "--out",
                 (dir / "resumed").string(), "--quiet"}),
            0);
  for (const auto& entry : fs::recursive_directory_iterator(dir / "straight")) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), dir / "straight");
    EXPECT_EQ(read_file(entry.path()), read_file(dir / "resumed" / rel)) << rel;
  }
}

TEST(Cli, EvalOnOverfitToyIsPerfectOnTrain) {
  const fs::path dir = scratch("toy");
  // Three labeled pixels, three classes, everything else unlabeled.
  Tensor<float> cube({3, 3, 3}, 0.0f);
  LabelMap labels(3, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    cube(c, c, c) = 1.0f;
    labels(c, c) = static_cast<std::int32_t>(c) + 1;
  }
  write_tensor(dir / "cube.npy", cube);
  write_labels(dir / "labels.npy", labels);
  std::ofstream(dir / "counts.json")
      << R"({"classes": [{"class": 1, "train": 1}, {"class": 2, "train": 1}, {"class": 3, "train": 1}]})";
  std::ofstream(dir / "run.json") << R"({"network": {"backbone_channels": 6, "enl_channels": 3, "kernel_size": 3},
    "train": {"iterations": 300, "learning_rate": 0.02, "weight_decay": 0},
    "data": {"cube": "cube.npy", "labels": "labels.npy", "split_mode": "counts:counts.json"},
    "dtype": "f64", "output": "ckpt"})";
  ASSERT_EQ(run({"train", "--config", (dir / "run.json").string(), "--quiet"}), 0);
  ASSERT_EQ(run({"eval", "--ckpt", (dir / "ckpt").string(), "--data", (dir / "cube.npy").string(), "--labels",
                 (dir / "labels.npy").string(), "--subset", "train", "--out", (dir / "eval").string()}),
            0);
  const std::string csv = read_file(dir / "eval" / "metrics.csv");
  EXPECT_NE(csv.find("OA,1\n"), std::string::npos) << csv;
}

TEST(Cli, RepeatWritesSummary) {
  const fs::path dir = make_workspace("repeat", 2);
  ASSERT_EQ(run({"repeat", "--config", (dir / "run.json").string(), "--runs", "2", "--out", (dir / "rep").string()}),
            0);
  const std::string txt = read_file(dir / "rep" / "repeat.txt");
  EXPECT_NE(txt.find("OA "), std::string::npos);
  EXPECT_NE(txt.find("±"), std::string::npos);
}

TEST(Cli, ExitCodesPerFailureClass) {
  const fs::path dir = scratch("errors");
  EXPECT_EQ(run({"bogus"}), cli::bad_arguments);
  EXPECT_EQ(run({"bench", "--geometry", "12"}), cli::config_error);
  std::ofstream(dir / "bad.npy") << "not an npy file";
  EXPECT_EQ(run({"split", "--labels", (dir / "bad.npy").string(), "--out", (dir / "s").string()}), cli::format_error);
  std::ofstream(dir / "run.json") << R"({"data": {"cube": "c.npy", "labels": "l.npy"}, "surprise": 1})";
  EXPECT_EQ(run({"train", "--config", (dir / "run.json").string()}), cli::config_error);
  LabelMap tiny(1, 2, std::vector<std::int32_t>{1, 2});
  write_labels(dir / "tiny.npy", tiny);
  EXPECT_EQ(run({"split", "--labels", (dir / "tiny.npy").string(), "--out", (dir / "s").string()}), cli::split_error);
}

TEST(Cli, OriginalAttentionOverByteLimitIsResourceError) {
  const fs::path dir = make_workspace("resource", 1);
  std::ofstream(dir / "run.json") << R"({"network": {"backbone_channels": 2, "enl_channels": 2, "kernel_size": 1,
      "attention_kind": "original", "attention_byte_limit": 100},
    "data": {"cube": "cube.npy", "labels": "labels.npy", "split_mode": "counts:counts.json"}, "output": "ckpt"})";
  EXPECT_EQ(run({"train", "--config", (dir / "run.json").string(), "--quiet"}), cli::resource_error);
}
