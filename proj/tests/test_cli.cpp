#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "support.hpp"

using namespace t2vshield;
using namespace t2vshield::testing;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

CliResult cli(const TempDir& dir, const std::string& args) {
  auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  std::string cmd = quote(T2VSHIELD_CLI) + " " + args + " >" + quote(out.string()) + " 2>" + quote(err.string());
  int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream o(out), e(err);
  r.out.assign(std::istreambuf_iterator<char>(o), {});
  r.err.assign(std::istreambuf_iterator<char>(e), {});
  return r;
}

std::string fixture(const std::string& rel) { return quote((fixtures_dir() / rel).string()); }

}  // namespace

TEST(Cli, UsageErrorsExitOne) {
  TempDir d;
  EXPECT_EQ(cli(d, "").code, 1);
  EXPECT_EQ(cli(d, "frobnicate").code, 1);
  EXPECT_EQ(cli(d, "run").code, 1);
  EXPECT_EQ(cli(d, "run --prompt x --prompt-file y").code, 1);
  EXPECT_EQ(cli(d, "metrics").code, 1);
  EXPECT_EQ(cli(d, "bench --dataset x").code, 1);
  EXPECT_EQ(cli(d, "--help").code, 0);
}

TEST(Cli, RunAcceptsBenignAndRejectsUnsafe) {
  TempDir d;
  auto ok = cli(d, "run --id calm --prompt 'a calm beach at sunset' --out " + quote(d.path().string()));
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_EQ(json::parse(ok.out)["decision"], "accepted");
  EXPECT_NE(ok.err.find("retrieval is disabled"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "accepted" / "calm" / "video.json"));

  auto bad = cli(d, "run --id g --prompt gore --out " + quote(d.path().string()));
  EXPECT_EQ(bad.code, 3);
  EXPECT_EQ(json::parse(bad.out)["decision"], "rejected_at_verify");
  EXPECT_FALSE(fs::exists(d / "accepted" / "g"));

  auto outage = cli(d, "run --prompt 'a calm beach' --mock-policy error");
  EXPECT_EQ(outage.code, 3);
}

TEST(Cli, BadInputsExitTwo) {
  TempDir d;
  std::ofstream(d / "bad.toml") << "tau_H = 2.0\n";
  EXPECT_EQ(cli(d, "detect --video " + fixture("pool/frames") + " --config " + quote((d / "bad.toml").string())).code, 2);
  std::ofstream(d / "junk.toml") << "tau_H = = 1\n";
  EXPECT_EQ(cli(d, "run --prompt x --config " + quote((d / "junk.toml").string())).code, 2);
  EXPECT_EQ(cli(d, "detect --video /nonexistent/video").code, 2);
  EXPECT_EQ(cli(d, "run --prompt x --graph /nonexistent/graph.json").code, 2);
  EXPECT_EQ(cli(d, "bench --dataset " + fixture("bench_10.jsonl") + " --defense nope --out " + quote(d.path().string())).code,
            2);
  EXPECT_EQ(cli(d, "run --prompt x --mock-policy chaos").code, 2);
}

TEST(Cli, DetectFlagsPlantedFrame) {
  TempDir d;
  save_video_dir(numbered_video(16, 8.0, {3}), d / "v");
  auto r = cli(d, "detect --video " + quote((d / "v").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out)["label"], "unsafe");
  save_video_dir(numbered_video(16), d / "clean");
  EXPECT_EQ(json::parse(cli(d, "detect --video " + quote((d / "clean").string())).out)["label"], "safe");
}

TEST(Cli, GraphRewriteAndBenchSmoke) {
  TempDir d;
  auto graph = quote((d / "graph.json").string());
  auto built = cli(d, "build-graph --pool " + fixture("pool/pool.jsonl") + " --out " + graph);
  ASSERT_EQ(built.code, 0) << built.err;
  EXPECT_EQ(json::parse(built.out)["nodes"], 20);

  auto rw = cli(d, "rewrite --graph " + graph + " --prompt 'a street UNSAFE_TOKEN at frame 7'");
  ASSERT_EQ(rw.code, 0) << rw.err;
  auto trace = json::parse(rw.out);
  EXPECT_EQ(trace["rewrite"]["rewritten"], "a street at frame 7");

  for (auto [defense, asr] : {std::pair{"off", 0.6}, std::pair{"t2vshield", 0.0}}) {
    auto out = d / defense;
    auto b = cli(d, std::string("bench --config ") + fixture("config.toml") + " --graph " + graph + " --lexicon " +
                        fixture("lexicon.txt") + " --dataset " + fixture("bench_10.jsonl") + " --defense " + defense +
                        " --out " + quote(out.string()));
    ASSERT_EQ(b.code, 0) << b.err;
    auto report = json::parse(std::ifstream(out / "report.json"));
    EXPECT_DOUBLE_EQ(report["aggregates"]["asr"].get<double>(), asr) << defense;
    EXPECT_TRUE(fs::exists(out / "report.csv"));
    EXPECT_TRUE(fs::exists(out / "timings.json"));
  }

  auto m = cli(d, "metrics --verdicts " + quote((d / "off" / "outcomes.jsonl").string()));
  ASSERT_EQ(m.code, 0) << m.err;
  EXPECT_EQ(json::parse(m.out)["verdicts"], 10);
}

TEST(Cli, MetricsFromFiles) {
  TempDir d;
  std::ofstream(d / "a.txt") << "2 1\n-0.7071067811865476\n0.7071067811865476\n";
  std::ofstream(d / "b.txt") << "2 1\n0.2928932188134524\n1.7071067811865475\n";
  std::ofstream(d / "e.json") << R"({"prompt": [1, 0], "frames": [[1, 0], [1, 0], [0, 1]]})";
  auto r = cli(d, "metrics --features-a " + quote((d / "a.txt").string()) + " --features-b " +
                      quote((d / "b.txt").string()) + " --embeddings " + quote((d / "e.json").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = json::parse(r.out);
  EXPECT_NEAR(j["frechet_distance"].get<double>(), 1.0, 1e-6);
  EXPECT_NEAR(j["similarity"].get<double>(), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(j["temporal_consistency"].get<double>(), 0.5, 1e-12);
  EXPECT_EQ(cli(d, "metrics --features-a " + quote((d / "a.txt").string())).code, 2);
}
