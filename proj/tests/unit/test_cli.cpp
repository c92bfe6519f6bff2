#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "kpt3d/config.hpp"
#include "kpt3d/tracking.hpp"
#include "test_util.hpp"

using namespace kpt3d;
namespace fs = std::filesystem;
namespace kt = kpt3d::testing;

#ifndef KPT3D_CLI
#error "KPT3D_CLI must name the kpt3d executable"
#endif

namespace {

struct RunResult
{
  int status = -1;
  std::string output;  // stdout and stderr
};

RunResult run(const std::string& args, const std::string& env = {})
{
  const std::string cmd = env + (env.empty() ? "" : " ") + KPT3D_CLI + " " + args + " 2>&1";
  RunResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p)
    return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0)
    r.output.append(buf, n);
  const int raw = ::pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string slurp(const fs::path& p)
{
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class CliTest : public ::testing::Test
{
protected:
  void SetUp() override
  {
    data_ = tmp_.path / "data";
    const auto r = run("simulate --seed 4 --sequences 2 --test-sequences 1 --duration 2 -o " + data_.string());
    ASSERT_EQ(r.status, 0) << r.output;
  }

  kt::TempDir tmp_;
  fs::path data_;
};

}  // namespace

TEST_F(CliTest, SimulateWritesSequences)
{
  EXPECT_TRUE(fs::exists(data_ / "corpus.json"));
  for (const char* id : {"valve-000", "valve-001"}) {
    EXPECT_TRUE(fs::exists(data_ / id / "poses.txt"));
    EXPECT_TRUE(fs::exists(data_ / id / "truth_poses.txt"));
    EXPECT_TRUE(fs::exists(data_ / id / "labels.json"));
  }
  EXPECT_EQ(load_sequence(data_ / "valve-000").split, Split::kTrain);
  EXPECT_EQ(load_sequence(data_ / "valve-001").split, Split::kTest);
  const auto corpus = read_json_file(data_ / "corpus.json");
  EXPECT_NE(corpus.at("stamp").get<std::string>().find("seed=4"), std::string::npos);
}

TEST_F(CliTest, TrackStereoProducesResultsStream)
{
  ASSERT_EQ(run("targets -d " + data_.string()).status, 0);
  const auto r = run("track --mode stereo -d " + data_.string());
  ASSERT_EQ(r.status, 0) << r.output;
  const auto path = data_ / "valve-001" / "results_stereo.txt";
  ASSERT_TRUE(fs::exists(path));
  const auto text = slurp(path);
  EXPECT_EQ(text.rfind("# kpt3d results v1 kpt3d ", 0), 0u) << text.substr(0, 80);
  const auto results = load_results(path);
  const auto seq = load_sequence(data_ / "valve-001");
  std::size_t with_objects = 0;
  for (const auto& f : results)
    with_objects += f.objects.size() == 1;
  EXPECT_GT(with_objects, seq.frames.size() * 9 / 10);

  const auto e = run("eval --split all -d " + data_.string());
  ASSERT_EQ(e.status, 0) << e.output;
  const auto report = read_json_file(data_ / "report_stereo.json");
  EXPECT_LT(report.at("pooled").at("mean_3d_cm").get<double>(), 1.0);
  EXPECT_EQ(report.at("sequences").size(), 2u);
}

TEST_F(CliTest, EvalOfIdentityPredictionsIsPerfect)
{
  // Results that repeat the truth labels in every frame.
  for (const char* id : {"valve-000", "valve-001"}) {
    const auto seq = load_sequence(data_ / id);
    std::vector<FrameResult> frames;
    for (std::size_t f = 0; f < seq.frames.size(); ++f) {
      FrameResult fr{static_cast<long>(f), {}};
      for (const auto& o : seq.labels) {
        TrackedObject3D obj{o.center(), {}};
        for (const auto& kp : o.keypoints)
          obj.keypoints.push_back({kp.type_index, kp.position, Provenance::kStereo});
        fr.objects.push_back(obj);
      }
      frames.push_back(fr);
    }
    save_results(data_ / id / "results_stereo.txt", frames);
  }
  const auto r = run("eval -d " + data_.string() + " -r " + (tmp_.path / "r.json").string());
  ASSERT_EQ(r.status, 0) << r.output;
  const auto report = read_json_file(tmp_.path / "r.json");
  EXPECT_EQ(report.at("split"), "test");
  EXPECT_EQ(report.at("sequences").size(), 1u);
  EXPECT_EQ(report.at("pooled").at("pct_under_3cm").get<double>(), 100.0);
  EXPECT_EQ(report.at("pooled").at("mean_3d_cm").get<double>(), 0.0);
  EXPECT_EQ(report.at("pooled").at("false_positives"), 0);
}

TEST_F(CliTest, BadConfigKeyIsNamed)
{
  const auto cfg = tmp_.path / "bad.json";
  std::ofstream(cfg) << R"({"targets": {"sigmma": 1.0}})";
  const auto r = run("-c " + cfg.string() + " targets -d " + data_.string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("targets.sigmma"), std::string::npos) << r.output;
}

TEST_F(CliTest, ConfigFileAndFlagOverride)
{
  const auto cfg = tmp_.path / "c.json";
  std::ofstream(cfg) << R"({"seed": 11, "scene": {"kind": "cups", "sequences": 1, "test_sequences": 0, "duration": 1}})";
  const auto out = tmp_.path / "cups";
  ASSERT_EQ(run("-c " + cfg.string() + " simulate --duration 0.5 -o " + out.string()).status, 0);
  const auto seq = load_sequence(out / "cups-000");
  EXPECT_EQ(seq.category.name, "cup");
  EXPECT_EQ(seq.frames.size(), 7u);  // floor(0.5 s * 14.5 Hz)
  EXPECT_NE(read_json_file(out / "corpus.json").at("stamp").get<std::string>().find("seed=11"), std::string::npos);
}

TEST_F(CliTest, ErrorsExitNonzero)
{
  EXPECT_NE(run("track -d " + (tmp_.path / "missing").string()).status, 0);
  const auto r = run("track -d " + data_.string());  // no targets yet
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.output.find("no targets"), std::string::npos) << r.output;
  EXPECT_NE(run("track --mode lidar -d " + data_.string()).status, 0);
  EXPECT_NE(run("frobnicate").status, 0);
  EXPECT_NE(run("").status, 0);
}

TEST_F(CliTest, LogLevelFromEnvironment)
{
  const auto normal = run("targets -d " + data_.string());
  EXPECT_NE(normal.output.find("info:"), std::string::npos);
  const auto quiet = run("targets -d " + data_.string(), "KPT3D_LOG_LEVEL=error");
  EXPECT_EQ(quiet.status, 0);
  EXPECT_EQ(quiet.output.find("info:"), std::string::npos) << quiet.output;
  EXPECT_NE(run("targets -d " + data_.string(), "KPT3D_LOG_LEVEL=loud").status, 0);
}

TEST(Cli, BenchPrintsStageTimings)
{
  const auto r = run("bench --frames 20");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("triangulation"), std::string::npos);
}
