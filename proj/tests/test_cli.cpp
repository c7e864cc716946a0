// SPDX-License-Identifier: Apache-2.0
// Drives the sffda binary end to end on a tiny synthetic set.
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "sffda/metrics.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using testing_support::scratch_dir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Result run_cli(const std::string& args) {
  static const fs::path tmp = scratch_dir("cli_io");
  const fs::path out = tmp / "stdout.txt", err = tmp / "stderr.txt";
  const std::string cmd = std::string(SFFDA_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

constexpr const char* kSmallSynth = " --n 4 --fps 5 --size 16";
constexpr const char* kSmallNet =
    " --frames 4 --widths 4,8,8,8,16 --attention-channels 2 --hidden 8 --fusion-hidden 8 --refs 2 --ratio 0.5";

std::map<std::string, std::string> report_fields(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto tab = line.find('\t');
    if (tab != std::string::npos) kv[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return kv;
}

/// One synthetic set and one two-epoch run shared by the train/eval/screen tests.
class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = scratch_dir("cli_run");
    fs::create_directories(root_ / "data");
    const auto s = run_cli("synth --out " + (root_ / "data").string() + kSmallSynth);
    ASSERT_EQ(s.code, 0) << s.err;
    train_ = run_cli("train --manifest " + manifest().string() + " --out " + run().string() + kSmallNet + " --epochs 2");
  }

  static fs::path manifest() { return root_ / "data" / "manifest.txt"; }
  static fs::path run() { return root_ / "run"; }

  static inline fs::path root_;
  static inline Result train_;
};

}  // namespace

TEST(Cli, SynthNeedsExistingOutputDirectory) {
  const auto r = run_cli("synth --out " + (scratch_dir("cli_missing") / "absent").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("does not exist"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("bogus").code, 2);
  const auto dir = scratch_dir("cli_bad_synth");
  EXPECT_EQ(run_cli("synth --out " + dir.string() + " --duration 5").code, 2);
}

TEST(Cli, SynthWritesBothClassesAndRerunsIdentically) {
  const auto a = scratch_dir("cli_synth_a"), b = scratch_dir("cli_synth_b");
  ASSERT_EQ(run_cli("synth --seed 7 --n 20 --fps 5 --size 8 --out " + a.string()).code, 0);
  const auto m = sffda::load_manifest(a / "manifest.txt");
  EXPECT_EQ(m.size(), 40u);
  EXPECT_EQ(m.count(sffda::Label::kAnxiety), 20u);
  // Regenerating from the emitted config reproduces every file.
  ASSERT_EQ(run_cli("synth --config " + (a / "synth_config.txt").string() + " --out " + b.string()).code, 0);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "synth_config.txt") continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
  }
}

TEST(Cli, SynthFlagsOverrideConfigFile) {
  const auto a = scratch_dir("cli_cfg_a"), b = scratch_dir("cli_cfg_b");
  ASSERT_EQ(run_cli("synth --seed 3 --n 2 --fps 5 --size 8 --out " + a.string()).code, 0);
  ASSERT_EQ(run_cli("synth --config " + (a / "synth_config.txt").string() + " --n 1 --out " + b.string()).code, 0);
  EXPECT_EQ(sffda::load_manifest(b / "manifest.txt").size(), 2u);
  EXPECT_EQ(slurp(a / "samples" / "s000.sfft"), slurp(b / "samples" / "s000.sfft"));
}

TEST_F(CliRun, TrainPrintsEveryEpochAndWritesRun) {
  ASSERT_EQ(train_.code, 0) << train_.err;
  EXPECT_NE(train_.out.find("epoch 1 Loss="), std::string::npos);
  EXPECT_NE(train_.out.find("epoch 2 Loss="), std::string::npos);
  EXPECT_NE(train_.out.find(" Loss1="), std::string::npos);
  EXPECT_NE(train_.out.find(" Loss2="), std::string::npos);
  for (const char* f : {"checkpoint.sffw", "train_state.sffw", "history.tsv", "network.cfg", "screening.txt",
                        "manifest.txt", "run_config.txt"}) {
    EXPECT_TRUE(fs::exists(run() / f)) << f;
  }
  const auto m = sffda::load_manifest(run() / "manifest.txt");
  EXPECT_EQ(m.subset(sffda::Split::kTrain).size(), 4u);
  EXPECT_EQ(m.subset(sffda::Split::kTest).size(), 4u);
}

TEST_F(CliRun, ResumeContinuesEpochNumbering) {
  ASSERT_EQ(train_.code, 0);
  const auto copy = root_ / "resumed";
  fs::remove_all(copy);
  fs::copy(run(), copy, fs::copy_options::recursive);
  const auto r = run_cli("train --resume --out " + copy.string() + " --epochs 3 --refs 2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find("epoch 1 "), std::string::npos);
  EXPECT_NE(r.out.find("epoch 3 Loss="), std::string::npos);
  std::istringstream hist(slurp(copy / "history.tsv"));
  std::vector<std::string> epochs;
  for (std::string line; std::getline(hist, line);) epochs.push_back(line.substr(0, line.find('\t')));
  EXPECT_EQ(epochs, (std::vector<std::string>{"epoch", "1", "2", "3"}));

  // Three epochs straight through land on the same weights.
  const auto straight = root_ / "straight";
  const auto s = run_cli("train --manifest " + manifest().string() + " --out " + straight.string() + kSmallNet +
                         " --epochs 3");
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(slurp(straight / "checkpoint.sffw"), slurp(copy / "checkpoint.sffw"));
  EXPECT_EQ(slurp(straight / "history.tsv"), slurp(copy / "history.tsv"));
}

TEST_F(CliRun, TrainRerunFromConfigIsIdentical) {
  ASSERT_EQ(train_.code, 0);
  const auto again = root_ / "again";
  const auto r = run_cli("train --config " + (run() / "run_config.txt").string() + " --out " + again.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(run() / "checkpoint.sffw"), slurp(again / "checkpoint.sffw"));
  EXPECT_EQ(slurp(run() / "screening.txt"), slurp(again / "screening.txt"));
}

TEST_F(CliRun, BehaviorOnlyStreams) {
  const auto dir = root_ / "behavior";
  const auto r = run_cli("train --manifest " + manifest().string() + " --out " + dir.string() + kSmallNet +
                         " --epochs 1 --streams location,eyes,mouth");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream cfg(slurp(dir / "network.cfg"));
  const auto net = sffda::parse_network_config(cfg);
  EXPECT_EQ(net.streams, (std::vector<sffda::Stream>{sffda::Stream::kLocation, sffda::Stream::kEyes,
                                                     sffda::Stream::kMouth}));
}

TEST_F(CliRun, EvalReportsSixMetricsAndRoc) {
  ASSERT_EQ(train_.code, 0);
  const auto r = run_cli("eval --run " + run().string() + " --repeats 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = report_fields(r.out);
  for (const char* key : {"Pre", "Sen", "Spe", "Acc", "F1", "AUC", "thr", "TP", "TN", "FP", "FN"}) {
    EXPECT_TRUE(kv.count(key)) << key;
  }
  for (const char* s : {"location", "eyes", "mouth", "ippg"}) EXPECT_TRUE(kv.count(std::string("importance.") + s));
  EXPECT_EQ(std::stoul(kv.at("TP")) + std::stoul(kv.at("TN")) + std::stoul(kv.at("FP")) + std::stoul(kv.at("FN")),
            4u);
  EXPECT_EQ(slurp(run() / "report.txt"), r.out);

  std::istringstream roc(slurp(run() / "roc.tsv"));
  std::vector<std::string> lines;
  for (std::string line; std::getline(roc, line);) lines.push_back(line);
  ASSERT_GE(lines.size(), 3u);
  EXPECT_EQ(lines[0], "threshold\tfpr\ttpr");
  EXPECT_EQ(lines[1], "inf\t0\t0");
  EXPECT_EQ(lines.back().substr(lines.back().find('\t')), "\t1\t1");

  const auto again = run_cli("eval --run " + run().string() + " --repeats 2");
  EXPECT_EQ(again.out, r.out);
}

TEST_F(CliRun, EvalThresholdOverride) {
  ASSERT_EQ(train_.code, 0);
  const auto r = run_cli("eval --run " + run().string() + " --repeats 1 --thr 0");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto kv = report_fields(r.out);
  EXPECT_EQ(kv.at("thr"), "0");
  EXPECT_EQ(kv.at("TN"), "0");
  EXPECT_EQ(kv.at("FN"), "0");
}

TEST_F(CliRun, ScreenVerdict) {
  ASSERT_EQ(train_.code, 0);
  const auto m = sffda::load_manifest(run() / "manifest.txt");
  const std::string id = m.subset(sffda::Split::kTest).samples.at(0).id;
  const auto r = run_cli("screen --run " + run().string() + " --id " + id);
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* key : {"id=", " prob=", " dissimilarity=", " label=", " thr="}) {
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  }
  const auto screening = slurp(run() / "screening.txt");
  const auto run_thr = screening.substr(4, screening.find('\n') - 4);
  EXPECT_NE(r.out.find(" thr=" + run_thr + "\n"), std::string::npos) << r.out;

  // Re-thresholding the printed probability reproduces the label under an override.
  const auto prob = std::stod(r.out.substr(r.out.find("prob=") + 5));
  for (double thr : {0.0, 1.0, prob}) {
    const auto o = run_cli("screen --run " + run().string() + " --id " + id + " --thr " + sffda::format_number(thr));
    ASSERT_EQ(o.code, 0);
    EXPECT_NE(o.out.find(" thr=" + sffda::format_number(thr)), std::string::npos);
    EXPECT_NE(o.out.find(prob >= thr ? "label=anxiety " : "label=anxiety-free "), std::string::npos) << o.out;
  }
}

TEST_F(CliRun, ScreenUnknownIdExitsTwo) {
  ASSERT_EQ(train_.code, 0);
  const auto r = run_cli("screen --run " + run().string() + " --id nobody");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown sample id"), std::string::npos);
}

TEST_F(CliRun, ExtractWritesFeatureCaches) {
  const auto out = root_ / "feats";
  const auto r = run_cli("extract --manifest " + manifest().string() + " --out " + out.string() + " --frames 4");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto eyes = sffda::io::load_tensor(out / "s000.eyes.sfft");
  EXPECT_EQ(eyes.shape(), (sffda::Shape{3, 4, sffda::kRoiSide, sffda::kRoiSide}));
  EXPECT_TRUE(fs::exists(out / "extract_config.txt"));
}
