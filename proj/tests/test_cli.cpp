#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kData = PROBEFORGE_DATA_DIR;
const fs::path kFixtures = kData / "fixtures";

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("probeforge-cli-") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  CliRun run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + PROBEFORGE_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  std::string curate(const fs::path& out) const {
    return "curate --triples " + (kFixtures / "triples.tsv").string() + " --templates " +
           (kData / "templates.json").string() + " --seed 7 --out " + out.string();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, MissingTriplesIsUsageError) {
  const auto r = run("curate --out " + (dir_ / "c").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--triples"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "c"));
}

TEST_F(CliTest, NoSubcommandAndBadChoiceAreUsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("probe --strategy telepathy").code, 2);
  EXPECT_EQ(run("--version").code, 0);
}

TEST_F(CliTest, CurateWritesArtifactsAndManifest) {
  const auto r = run(curate(dir_ / "c"));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"full.jsonl", "hard.jsonl", "stats.csv", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir_ / "c" / f)) << f;
  const auto m = nlohmann::json::parse(slurp(dir_ / "c" / "manifest.json"));
  EXPECT_EQ(m["command"], "curate");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_TRUE(m.contains("version"));
  EXPECT_EQ(slurp(dir_ / "c" / "stats.csv").substr(0, 21), "relation_id,full,hard");
}

TEST_F(CliTest, FlagsOverrideConfigAndUnknownKeysFail) {
  {
    std::ofstream(dir_ / "cfg.json") << R"({"per_relation": 5, "max_answers": 3})";
  }
  ASSERT_EQ(run(curate(dir_ / "c") + " --per-relation 2 --config " + (dir_ / "cfg.json").string()).code, 0);
  const auto m = nlohmann::json::parse(slurp(dir_ / "c" / "manifest.json"));
  EXPECT_EQ(m["config"]["per_relation"], 2);
  EXPECT_EQ(m["config"]["max_answers"], 3);
  std::istringstream full(slurp(dir_ / "c" / "full.jsonl"));
  int lines = 0;
  for (std::string line; std::getline(full, line);) lines += !line.empty();
  EXPECT_EQ(lines, 6);

  {
    std::ofstream(dir_ / "bad.json") << R"({"per_relaton": 5})";
  }
  const auto r = run(curate(dir_ / "c2") + " --config " + (dir_ / "bad.json").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("per_relaton"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "c2"));
}

TEST_F(CliTest, EvalMismatchFailsBeforeWriting) {
  ASSERT_EQ(run(curate(dir_ / "c")).code, 0);
  std::istringstream full(slurp(dir_ / "c" / "full.jsonl"));
  std::string first, second;
  std::getline(full, first);
  std::getline(full, second);
  const auto q0 = nlohmann::json::parse(first), q1 = nlohmann::json::parse(second);
  fs::create_directories(dir_ / "p");
  std::ofstream(dir_ / "p" / "predictions.jsonl")
      << nlohmann::json{{"query_id", q0["query_id"]}, {"strategy", "contrastive"}, {"candidates", nlohmann::json::array()}}
             .dump()
      << "\n";
  const auto r = run("eval --predictions " + (dir_ / "p" / "predictions.jsonl").string() + " --dataset " +
                     (dir_ / "c" / "full.jsonl").string() + " --out " + (dir_ / "e").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(q1["query_id"].get<std::string>()), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "e"));
}

TEST_F(CliTest, PipelineIsDeterministic) {
  auto pipeline = [&](const fs::path& root) {
    ASSERT_EQ(run(curate(root / "c")).code, 0);
    ASSERT_EQ(run("rewire --encoder reference:dim=32,seed=3 --corpus " + (kFixtures / "corpus.txt").string() +
                  " --num-sentences 60 --steps 12 --batch-size 20 --checkpoint-every 6 --seed 5 --out " +
                  (root / "r").string())
                  .code,
              0);
    ASSERT_EQ(run("probe --checkpoint " + (root / "r" / "checkpoints" / "step-000012").string() + " --dataset " +
                  (root / "c" / "full.jsonl").string() + " --entities " + (kFixtures / "entities.txt").string() +
                  " --out " + (root / "p").string())
                  .code,
              0);
    ASSERT_EQ(run("eval --predictions " + (root / "p" / "predictions.jsonl").string() + " --dataset " +
                  (root / "c" / "full.jsonl").string() + " --out " + (root / "e").string())
                  .code,
              0);
  };
  pipeline(dir_ / "a");
  pipeline(dir_ / "b");
  for (const char* f : {"c/full.jsonl", "c/hard.jsonl", "c/stats.csv", "r/loss_trace.csv", "r/pairs.jsonl",
                        "p/predictions.jsonl", "e/report.csv"}) {
    const auto a = slurp(dir_ / "a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(dir_ / "b" / f)) << f;
  }
  const auto m = nlohmann::json::parse(slurp(dir_ / "a" / "p" / "manifest.json"));
  EXPECT_EQ(m["config"]["checkpoint_step"], 12);
}

TEST_F(CliTest, LayerSweepReportsEveryLayer) {
  ASSERT_EQ(run(curate(dir_ / "c")).code, 0);
  const auto r = run("sweep --axis layer --encoder reference:dim=32,seed=3 --dataset " +
                     (dir_ / "c" / "full.jsonl").string() + " --entities " + (kFixtures / "entities.txt").string() +
                     " --jobs 2 --out " + (dir_ / "s").string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(dir_ / "s" / "sweep.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "layer_limit,macro_acc1,macro_acc10,micro_acc1,micro_acc10");
  std::vector<int> layers;
  while (std::getline(csv, line))
    if (!line.empty()) layers.push_back(std::stoi(line.substr(0, line.find(','))));
  EXPECT_EQ(layers, (std::vector<int>{3, 5, 7, 9, 11, 12}));
  EXPECT_TRUE(fs::exists(dir_ / "s" / "per_relation.csv"));
}

TEST_F(CliTest, TableStrategiesProbeAndEvaluate) {
  ASSERT_EQ(run(curate(dir_ / "c")).code, 0);
  const std::string common = " --dataset " + (dir_ / "c" / "full.jsonl").string();
  const auto mlm = (kFixtures / "stub_mlm.json").string();
  ASSERT_EQ(run("probe --strategy mask-predict --mlm " + mlm + " --num-masks 3 --fill-strategy order" + common +
                " --out " + (dir_ / "mp").string())
                .code,
            0);
  const auto line = slurp(dir_ / "mp" / "predictions.jsonl");
  const auto first = nlohmann::json::parse(line.substr(0, line.find('\n')));
  ASSERT_EQ(first["candidates"].size(), 1u);
  EXPECT_EQ(first["candidates"][0][0], "Morbin fever rash");

  const auto avg = run("probe --strategy mask-average --mlm " + mlm + " --entities " +
                       (kFixtures / "entities.txt").string() + common + " --out " + (dir_ / "ma").string());
  EXPECT_EQ(avg.code, 0) << avg.err;

  ASSERT_EQ(run("probe --strategy generate --generator " + (kFixtures / "generator_table.json").string() + common +
                " --out " + (dir_ / "g").string())
                .code,
            0);
  const auto ev = run("eval --predictions " + (dir_ / "g" / "predictions.jsonl").string() + common + " --out " +
                      (dir_ / "ge").string() + " --length-bins 8,16");
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto report = nlohmann::json::parse(slurp(dir_ / "ge" / "report.json"));
  EXPECT_EQ(report["strategy"], "generate");
  EXPECT_TRUE(fs::exists(dir_ / "ge" / "length_bins_acc1.csv"));
}

TEST_F(CliTest, DemoRunsEndToEnd) {
  const auto r = run("demo --out " + (dir_ / "d").string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"manifest.json", "curate/full.jsonl", "rewire/loss_trace.csv", "probe/predictions.jsonl",
                        "eval-full/report.json", "eval-hard/report.csv"})
    EXPECT_TRUE(fs::exists(dir_ / "d" / f)) << f;
  EXPECT_NE(r.out.find("acc@10"), std::string::npos) << r.out;
}
