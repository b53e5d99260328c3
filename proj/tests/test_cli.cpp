#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "support/test_support.hpp"

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(LOGICSOLVER_CLI) + " " + args + " 2>/dev/null";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string kb_flag() { return " --kb " + testsupport::kb_path(); }

}  // namespace

TEST(Cli, SynthIsByteIdenticalUnderSeed) {
  auto dir = testsupport::temp_dir("cli-synth");
  ASSERT_EQ(run("synth --count 25 --seed 4 --out " + (dir / "a.jsonl").string() + kb_flag()).code, 0);
  ASSERT_EQ(run("synth --count 25 --seed 4 --out " + (dir / "b.jsonl").string() + kb_flag()).code, 0);
  ASSERT_EQ(run("synth --count 25 --seed 5 --out " + (dir / "c.jsonl").string() + kb_flag()).code, 0);
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  EXPECT_NE(slurp(dir / "a.jsonl"), slurp(dir / "c.jsonl"));
  EXPECT_EQ(logicsolver::corpus::load_corpus((dir / "a.jsonl").string(), &testsupport::kb()).size(), 25u);
}

TEST(Cli, SynthSplitWritesThreeFiles) {
  auto dir = testsupport::temp_dir("cli-split");
  ASSERT_EQ(run("synth --count 50 --seed 2 --split 0.8,0.1,0.1 --out-dir " + dir.string() + " --out " +
                (dir / "all.jsonl").string() + kb_flag())
                .code,
            0);
  EXPECT_EQ(logicsolver::corpus::load_corpus((dir / "train.jsonl").string()).size(), 40u);
  EXPECT_EQ(logicsolver::corpus::load_corpus((dir / "valid.jsonl").string()).size(), 5u);
  EXPECT_EQ(logicsolver::corpus::load_corpus((dir / "test.jsonl").string()).size(), 5u);
}

TEST(Cli, SynthSplitCountsAreExact) {
  auto dir = testsupport::temp_dir("cli-split-counts");
  ASSERT_EQ(run("synth --count 50 --seed 2 --split-counts 30,7,9 --out-dir " + dir.string() + " --out " +
                (dir / "all.jsonl").string() + kb_flag())
                .code,
            0);
  EXPECT_EQ(logicsolver::corpus::load_corpus((dir / "train.jsonl").string()).size(), 30u);
  EXPECT_EQ(logicsolver::corpus::load_corpus((dir / "valid.jsonl").string()).size(), 7u);
  EXPECT_EQ(logicsolver::corpus::load_corpus((dir / "test.jsonl").string()).size(), 9u);
  EXPECT_EQ(run("synth --count 50 --split-counts 40,10,10 --out " + (dir / "x.jsonl").string() + kb_flag()).code, 2);
  EXPECT_EQ(run("synth --count 50 --split 0.8,0.1,0.1 --split-counts 40,5,5 --out " + (dir / "y.jsonl").string() +
                kb_flag())
                .code,
            2);
}

TEST(Cli, DataDirectoryFromEnvironment) {
  auto dir = testsupport::temp_dir("cli-env");
  const std::string cmd = "env LOGICSOLVER_DATA=" + testsupport::source_dir() + "/data " + LOGICSOLVER_CLI +
                          " synth --count 3 --out " + (dir / "x.jsonl").string();
  EXPECT_EQ(std::system(cmd.c_str()), 0);
}

TEST(Cli, StatsReport) {
  auto r = run("stats --corpus " + testsupport::fixture("twenty.jsonl") + kb_flag());
  ASSERT_EQ(r.code, 0);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j.contains("tree_size"));
}

TEST(Cli, TrainSolveEval) {
  auto dir = testsupport::temp_dir("cli-train");
  const std::string corpus = testsupport::fixture("twenty.jsonl");
  const std::string quick = " --epochs 2 --batch 8 --hidden 8 --dropout 0 --quiet" + kb_flag();
  const auto r_ckpt = (dir / "r.ckpt").string();
  const auto s_ckpt = (dir / "s.ckpt").string();
  const auto l_ckpt = (dir / "l.ckpt").string();
  ASSERT_EQ(run("train-retriever --corpus " + corpus + " --out " + r_ckpt + quick).code, 0);
  auto manifest = logicsolver::nn::load_manifest(r_ckpt);
  EXPECT_EQ(manifest["kind"], "retriever");
  EXPECT_EQ(manifest["command"]["subcommand"], "train-retriever");
  ASSERT_EQ(run("train-solver --corpus " + corpus + " --retriever-ckpt " + r_ckpt + " --K 2 --out " + s_ckpt + quick)
                .code,
            0);
  ASSERT_EQ(run("train-logicgen --all-gold --epochs 2 --dropout 0 --quiet --corpus " + corpus + " --solver-ckpt " +
                s_ckpt + " --out " + l_ckpt + kb_flag())
                .code,
            0);

  const auto preds = (dir / "preds.jsonl").string();
  ASSERT_EQ(run("solve --corpus " + corpus + " --solver-ckpt " + s_ckpt + " --logicgen-ckpt " + l_ckpt +
                " --beam 2 --out " + preds + kb_flag())
                .code,
            0);
  EXPECT_EQ(logicsolver::metrics::load_predictions(preds).size(), 20u);

  auto ev = run("eval --preds " + preds + " --corpus " + corpus + " --csv " + (dir / "t.csv").string());
  ASSERT_EQ(ev.code, 0);
  auto report = nlohmann::json::parse(ev.out);
  EXPECT_LE(report["logic_acc"].get<double>(), report["formula_acc"].get<double>());
  EXPECT_LE(report["formula_acc"].get<double>(), report["answer_acc"].get<double>());

  std::ifstream first(corpus);
  std::string line;
  std::getline(first, line);
  auto record = nlohmann::json::parse(line);
  record.erase("id");
  std::ofstream(dir / "one.json") << record.dump();
  auto one = run("solve --problem-json " + (dir / "one.json").string() + " --solver-ckpt " + s_ckpt +
                 " --logicgen-ckpt " + l_ckpt + " --beam 1" + kb_flag());
  ASSERT_EQ(one.code, 0);
  auto j = nlohmann::json::parse(one.out);
  EXPECT_EQ(j["id"], "problem-0");
  for (const char* key : {"prompt_ids", "prefix", "infix", "value", "explanations"}) EXPECT_TRUE(j.contains(key));
}

TEST(Cli, ConfigFileMergesUnderFlags) {
  auto dir = testsupport::temp_dir("cli-config");
  std::ofstream(dir / "cfg.json") << R"({"count": 7, "seed": 3})";
  ASSERT_EQ(run("--config " + (dir / "cfg.json").string() + " synth --out " + (dir / "a.jsonl").string() + kb_flag())
                .code,
            0);
  EXPECT_EQ(logicsolver::corpus::load_corpus((dir / "a.jsonl").string()).size(), 7u);
  ASSERT_EQ(run("--config " + (dir / "cfg.json").string() + " synth --count 4 --out " + (dir / "b.jsonl").string() +
                kb_flag())
                .code,
            0);
  EXPECT_EQ(logicsolver::corpus::load_corpus((dir / "b.jsonl").string()).size(), 4u);
  std::ofstream(dir / "bad.json") << R"({"colour": "red"})";
  EXPECT_EQ(run("--config " + (dir / "bad.json").string() + " synth --out " + (dir / "c.jsonl").string() + kb_flag())
                .code,
            2);
}

TEST(Cli, ExitCodes) {
  auto dir = testsupport::temp_dir("cli-exit");
  EXPECT_EQ(run("stats --corpus " + (dir / "missing.jsonl").string() + kb_flag()).code, 3);
  std::ofstream(dir / "bad.jsonl") << R"({"id":"a","text":"N0 and N1","numbers":["2","3"],"prefix":"* N0 N1","answer":"7","logic":[0]})"
                                   << "\n";
  EXPECT_EQ(run("stats --corpus " + (dir / "bad.jsonl").string() + kb_flag()).code, 4);
  EXPECT_EQ(run("synth --count 3 --split 0.5,0.5 --out " + (dir / "x.jsonl").string() + kb_flag()).code, 2);
  EXPECT_EQ(run("train-solver --corpus " + testsupport::fixture("ten.jsonl") + " --out " + (dir / "s.ckpt").string() +
                " --K 2" + kb_flag())
                .code,
            2);
  EXPECT_NE(run("no-such-command").code, 0);
}
