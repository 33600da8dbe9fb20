#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "engage/corpus.hpp"
#include "engage/evalharness.hpp"
#include "engage/preprocess.hpp"
#include "engage/windows_io.hpp"
#include "temp_dir.hpp"

namespace fs = std::filesystem;
using engage::testing::read_file;
using engage::testing::TempDir;
using engage::testing::write_file;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "engage");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = engage::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

// Small corpus shared by the pipeline tests.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("engage-cli");
    write_file(*dir_ / "synth.cfg",
               "n_participants = 6\nduration_s = 300\nframe_channels = 8\nseed = 9\n");
    const auto r = run({"synth", "--config", (*dir_ / "synth.cfg").string(), "--out", (*dir_ / "corpus").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path path(const std::string& name) { return *dir_ / name; }

  static TempDir* dir_;
};

TempDir* Pipeline::dir_ = nullptr;

}  // namespace

TEST(Cli, NoSubcommandIsUsageError) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"fly"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, SynthDefaultParticipantCount) {
  TempDir dir;
  write_file(dir / "s.cfg", "duration_s = 20\nframe_channels = 4\n");
  const auto r = run({"synth", "--config", (dir / "s.cfg").string(), "--out", (dir / "c").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(engage::corpus::list_sessions(dir / "c").size(), 20u);
  EXPECT_TRUE(fs::exists(dir / "c" / "P20" / engage::corpus::kManifestName));
  EXPECT_TRUE(fs::exists(dir / "c" / "run.manifest"));
}

TEST(Cli, SynthRejectsBadConfig) {
  TempDir dir;
  write_file(dir / "s.cfg", "duration_s = 0\n");
  const auto r = run({"synth", "--config", (dir / "s.cfg").string(), "--out", (dir / "c").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(contains(r.err, "duration_s")) << r.err;
  EXPECT_FALSE(fs::exists(dir / "c"));
  EXPECT_EQ(run({"synth", "--config", (dir / "missing.cfg").string(), "--out", (dir / "c").string()}).code, 1);
  EXPECT_EQ(run({"synth"}).code, 1);
}

TEST_F(Pipeline, SynthRefusesToOverwrite) {
  const auto r = run({"synth", "--config", path("synth.cfg").string(), "--out", path("corpus").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(contains(r.err, "--force"));
}

TEST_F(Pipeline, Ingest) {
  const auto r = run({"ingest", "--corpus", path("corpus").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "6 sessions valid"));
  EXPECT_TRUE(contains(r.out, "P06\t300\t1500\t900\t"));
}

TEST_F(Pipeline, WindowCountsAndBands) {
  write_file(path("eps0.cfg"), "epsilon = 0\n");
  auto r = run({"window", "--config", path("eps0.cfg").string(), "--corpus", path("corpus").string(), "--out",
                path("w0").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::size_t per = engage::preprocess::expected_window_count(300.0, {});
  EXPECT_EQ(per, 193u);
  EXPECT_TRUE(contains(r.out, "total: " + std::to_string(6 * per) + " segmented")) << r.out;
  EXPECT_TRUE(contains(r.out, " 0 ambiguous dropped")) << r.out;
  EXPECT_EQ(engage::preprocess::read_windows(path("w0") / "windows.tsv").windows.size(), 6 * per);

  write_file(path("eps5.cfg"), "epsilon = 0.5\n");
  r = run({"window", "--config", path("eps5.cfg").string(), "--corpus", path("corpus").string(), "--out",
           path("w5").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.err, "near-empty")) << r.err;

  write_file(path("eps9.cfg"), "epsilon = 0.9\n");
  r = run({"window", "--config", path("eps9.cfg").string(), "--corpus", path("corpus").string(), "--out",
           path("w9").string()});
  EXPECT_EQ(r.code, 1);

  r = run({"window", "--config", path("eps0.cfg").string(), "--corpus", path("corpus").string(), "--out",
           path("w0").string()});
  EXPECT_EQ(r.code, 1) << "rerun without --force";
}

TEST_F(Pipeline, EvaluateTrainReport) {
  ASSERT_EQ(run({"window", "--corpus", path("corpus").string(), "--out", path("w").string(), "--force"}).code, 0);
  write_file(path("exp.cfg"),
             "modality = gamepad\nconditioning = none, sll\nparticipants = 6\nrepeats = 1\nfolds = 1\nepochs = 2\n");
  auto r = run({"evaluate", "--config", path("exp.cfg").string(), "--windows", (path("w") / "windows.tsv").string(),
                "--out", path("eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "baseline")) << r.out;
  const auto records = engage::eval::read_records(path("eval") / "records.tsv");
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].configuration, "gamepad/M_U");
  EXPECT_LE(records[0].epochs_run, 2);

  r = run({"report", "--records", (path("eval") / "records.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "baseline"));
  EXPECT_TRUE(contains(r.out, "3 comparisons"));

  write_file(path("one.cfg"), "modality = gamepad\nconditioning = ssll\nparticipants = 6\nepochs = 2\n");
  r = run({"train", "--config", path("one.cfg").string(), "--windows", (path("w") / "windows.tsv").string(), "--fold",
           "2", "--out", path("train").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("train") / "model.ckpt"));
  EXPECT_TRUE(contains(read_file(path("train") / "history.tsv"), "epoch\tvalidation_accuracy\n1\t"));

  r = run({"train", "--config", path("exp.cfg").string(), "--windows", (path("w") / "windows.tsv").string(), "--out",
           path("train2").string()});
  EXPECT_EQ(r.code, 1) << "two configurations";
}

TEST_F(Pipeline, DataErrorsExitTwo) {
  write_file(path("broken.tsv"), "configuration\trepeat\n");
  auto r = run({"report", "--records", path("broken.tsv").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "data error"));

  TempDir bad;
  fs::create_directories(bad / "P01");
  write_file(bad / "P01" / engage::corpus::kManifestName,
             "participant_id = P01\ngamepad = gamepad.log\nfeatures = f.bin\ntrace = t.csv\nduration_s = 60\n"
             "annotation_speed = 2\n");
  r = run({"ingest", "--corpus", bad.path().string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(run({"ingest", "--corpus", (bad / "nothing").string()}).code, 2);
}
