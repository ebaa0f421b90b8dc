// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out;
};

// Runs the CLI with stdout and stderr captured together.
Run cli(const std::string& args) {
  const std::string cmd = std::string(REALISE_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  Run r{-1, {}};
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path workdir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "realise_cli_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

}  // namespace

TEST(Cli, NoArgumentsPrintsUsage) {
  const auto r = cli("");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("gen-data"), std::string::npos);
}

TEST(Cli, EveryCommandHasHelp) {
  for (const char* c :
       {"gen-data", "pretrain-acoustic", "pretrain-visual", "train", "correct", "eval", "trace-gates"}) {
    const auto r = cli(std::string(c) + " --help");
    EXPECT_EQ(r.code, 0) << c;
    EXPECT_NE(r.out.find("--"), std::string::npos) << c;
  }
}

TEST(Cli, BadFlagIsUsageError) {
  const auto r = cli("eval --gold x.tsv --no-such-flag");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("error: usage"), std::string::npos);
  EXPECT_EQ(cli("train --epochs 0 --train_corpus x.tsv").code, 2);
}

TEST(Cli, MissingFileIsIoError) {
  const auto d = workdir("io");
  const auto r = cli("eval --gold " + (d / "absent.tsv").string() + " --pred " + (d / "absent.txt").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("error: io"), std::string::npos);
}

TEST(Cli, EvalOnHandCorpus) {
  const auto d = workdir("eval");
  write(d / "gold.tsv", "我跟快去\t我很快去\n天汽很好\t天气很好\n我很快去\t我很快去\n");
  write(d / "pred.txt", "我很快去\n天汽很好\n我很快走\n");
  const auto r = cli("eval --gold " + (d / "gold.tsv").string() + " --pred " + (d / "pred.txt").string() +
                     " --json " + (d / "m.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("Correction Level"), std::string::npos);
  const auto j = read_json(d / "m.json");
  EXPECT_EQ(j["detection"]["precision"].get<double>(), 0.5);
  EXPECT_EQ(j["detection"]["recall"].get<double>(), 0.5);
  EXPECT_EQ(j["correction"]["f1"].get<double>(), 0.5);

  write(d / "short.txt", "我很快去\n");
  EXPECT_EQ(cli("eval --gold " + (d / "gold.tsv").string() + " --pred " + (d / "short.txt").string()).code, 2);
}

TEST(Cli, PostProcessFlagRevertsAuxiliaryEdits) {
  const auto d = workdir("post");
  write(d / "gold.tsv", "他跑的很快\t他跑得很快\n");
  write(d / "pred.txt", "他跑得很快\n");
  const auto base = "eval --gold " + (d / "gold.tsv").string() + " --pred " + (d / "pred.txt").string() + " --json ";
  ASSERT_EQ(cli(base + (d / "a.json").string()).code, 0);
  ASSERT_EQ(cli(base + (d / "b.json").string() + " --post-process").code, 0);
  EXPECT_EQ(read_json(d / "a.json")["correction"]["f1"].get<double>(), 1.0);
  EXPECT_EQ(read_json(d / "b.json")["correction"]["f1"].get<double>(), 0.0);
}

TEST(Cli, SmallPipelineEndToEnd) {
  const auto d = workdir("pipeline");
  const auto data = d / "data", ck = d / "ck";
  auto r = cli("gen-data --out " + data.string() +
               " --classes 4 --fillers 4 --function_chars 30 --train_size 40 --test_size 10");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"vocab.txt", "pinyin.tsv", "confusion.json", "atlas.bin", "train.tsv", "test.tsv"})
    EXPECT_TRUE(fs::exists(data / f)) << f;

  const std::string common = " --train_corpus " + (data / "train.tsv").string() + " --eval_corpus " +
                             (data / "test.tsv").string() + " --vocab " + (data / "vocab.txt").string() +
                             " --pinyin_table " + (data / "pinyin.tsv").string() + " --atlas " +
                             (data / "atlas.bin").string() + " --checkpoint_dir " + ck.string() +
                             " --epochs 1 --hidden 16 --ffn 32 --semantic_layers 1 --phonetic_layers 1"
                             " --fusion_layers 1 --pinyin_embed 8 --max_len 16 --quiet";
  for (const char* c : {"pretrain-acoustic", "pretrain-visual", "train"}) {
    r = cli(std::string(c) + common);
    ASSERT_EQ(r.code, 0) << c << ": " << r.out;
    const auto report = read_json(ck / (std::string(c) + "-report.json"));
    EXPECT_EQ(report["kind"], c == std::string("train") ? "train" : c);
    EXPECT_EQ(report["epoch_loss"].size(), 1u);
  }

  std::ifstream test_in(data / "test.tsv");
  std::string line, inputs;
  while (std::getline(test_in, line)) inputs += line.substr(0, line.find('\t')) + "\n";
  write(d / "in.txt", inputs);
  r = cli("correct --ckpt " + (ck / "best.bin").string() + " --input " + (d / "in.txt").string() + " --output " +
          (d / "out.txt").string() + " --trace " + (d / "trace.jsonl").string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream out(d / "out.txt"), in(d / "in.txt");
  std::string a, b;
  std::size_t lines = 0;
  while (std::getline(in, a) && std::getline(out, b)) {
    EXPECT_EQ(a.size(), b.size());
    ++lines;
  }
  EXPECT_EQ(lines, 10u);

  r = cli("eval --gold " + (data / "test.tsv").string() + " --ckpt " + (ck / "best.bin").string() + " --json " +
          (d / "m.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(read_json(d / "m.json")["sentences"], 10);

  r = cli("trace-gates --ckpt " + (ck / "best.bin").string() + " --gold " + (data / "test.tsv").string() +
          " --out " + (d / "gates.jsonl").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("clean"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "gates.jsonl"));

  r = cli("train" + common + " --resume " + (d / "absent.bin").string());
  EXPECT_EQ(r.code, 3) << r.out;
}
