#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hskd/checkpoint.hpp"
#include "hskd/cli.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace hskd;

namespace {

class Cli : public ::testing::Test {
protected:
    fs::path dir;

    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("hskd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    int run(std::vector<std::string> args) {
        out.str("");
        err.str("");
        return cli::run(args, out, err);
    }

    std::string write_config(const std::string& name, const std::string& body) {
        const auto path = dir / name;
        std::ofstream(path) << body;
        return path.string();
    }

    static std::string read(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return {std::istreambuf_iterator<char>(in), {}};
    }

    std::string rings(const std::string& extra) const {
        return R"({"version": 1,
          "data": {"kind": "rings", "num_classes": 3, "dim": 4, "samples_per_class": 30, "seed": 2},
          "teacher_arch": {"hidden": [16], "embedding_dim": 8},
          "student_arch": {"hidden": [6], "embedding_dim": 4},
          "output_dir": ")" +
               (dir / "out").string() + "\"," + extra + "}";
    }

    std::ostringstream out, err;
};

const char* kTrain = R"("training": {"mode": "vanilla", "epochs": 3, "lr": 0.05, "seed": 1})";
const char* kPhases = R"("training": {"epochs": 2, "lr": 0.05, "seed": 1},
  "shkd": {"initial": {"mode": "vanilla"}, "teacher": {"mode": "vanilla"}, "final_student": {"mode": "l2e"}})";

}  // namespace

TEST_F(Cli, GenDataWritesRowsAndIsDeterministic) {
    const std::vector<std::string> args{"gen-data", "--kind", "rings", "--classes", "4", "--dim", "8",
                                        "--per-class", "200", "--seed", "3", "--out", (dir / "a").string()};
    ASSERT_EQ(run(args), 0) << err.str();
    const std::string first = read(dir / "a" / "data.csv");
    EXPECT_EQ(std::count(first.begin(), first.end(), '\n'), 801);
    ASSERT_EQ(run(args), 0);
    EXPECT_EQ(read(dir / "a" / "data.csv"), first);
}

TEST_F(Cli, GenDataRejectsBadKind) {
    EXPECT_EQ(run({"gen-data", "--kind", "spiral", "--out", dir.string()}), cli::kExitValidation);
    EXPECT_NE(err.str().find("kind"), std::string::npos) << err.str();
}

TEST_F(Cli, UnwritableOutputIsARuntimeError) {
    std::ofstream(dir / "file") << "x";
    EXPECT_EQ(run({"gen-data", "--kind", "blobs", "--out", (dir / "file" / "sub").string()}), cli::kExitRuntime);
    EXPECT_FALSE(err.str().empty());
}

TEST_F(Cli, ArgumentErrors) {
    EXPECT_EQ(run({}), cli::kExitValidation);
    EXPECT_EQ(run({"frobnicate"}), cli::kExitValidation);
    EXPECT_EQ(run({"train"}), cli::kExitValidation);
    EXPECT_EQ(run({"train", (dir / "missing.json").string()}), cli::kExitValidation);
    EXPECT_EQ(run({"--help"}), cli::kExitOk);
}

TEST_F(Cli, TrainWritesReportAndCheckpointDeterministically) {
    const auto cfg = write_config("t.json", rings(kTrain));
    ASSERT_EQ(run({"train", cfg}), 0) << err.str();
    const std::string report = read(dir / "out" / "report.csv");
    EXPECT_EQ(report.substr(0, report.find('\n')),
              "epoch,ce,kd,rep,total,train_acc,test_acc,mean_angle_rad,mean_angle_deg,msc");
    EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 4);
    const auto ck = load_checkpoint(dir / "out" / "model.ckpt");
    EXPECT_EQ(ck.provenance.phase, "train");
    EXPECT_EQ(ck.provenance.config_hash.size(), 16u);

    const std::string ckpt = read(dir / "out" / "model.ckpt");
    ASSERT_EQ(run({"train", cfg}), 0);
    EXPECT_EQ(read(dir / "out" / "report.csv"), report);
    EXPECT_EQ(read(dir / "out" / "model.ckpt"), ckpt);

    ASSERT_EQ(run({"train", cfg, "--seed", "5", "--out", (dir / "s5").string()}), 0);
    EXPECT_NE(read(dir / "s5" / "report.csv"), report);
}

TEST_F(Cli, TrainValidationListsEveryField) {
    const auto cfg = write_config(
        "bad.json", rings(R"("training": {"mode": "th_kd", "alpha": -1, "beta": -2, "epochs": 1})"));
    EXPECT_EQ(run({"train", cfg}), cli::kExitValidation);
    for (const char* field : {"training.alpha", "training.beta"})
        EXPECT_NE(err.str().find(field), std::string::npos) << err.str();

    const auto no_teacher = write_config("nt.json", rings(R"("training": {"mode": "th_kd", "epochs": 1})"));
    EXPECT_EQ(run({"train", no_teacher}), cli::kExitValidation);
    EXPECT_NE(err.str().find("teacher_checkpoint"), std::string::npos) << err.str();
}

TEST_F(Cli, StudentAgainstSavedTeacher) {
    const auto t = write_config("teacher.json", rings(std::string(kTrain) + R"(, "train_role": "teacher")"));
    ASSERT_EQ(run({"train", t, "--out", (dir / "teacher").string()}), 0) << err.str();
    const auto teacher_ckpt = (dir / "teacher" / "model.ckpt").string();
    const auto s = write_config(
        "student.json", rings(R"("training": {"mode": "th_kd", "epochs": 2, "lr": 0.05, "seed": 1},
          "teacher_checkpoint": ")" + teacher_ckpt + "\""));
    ASSERT_EQ(run({"train", s}), 0) << err.str();
    const auto student = load_checkpoint(dir / "out" / "model.ckpt");
    ASSERT_TRUE(student.bundle.aux_head.has_value());

    // A teacher checkpoint of the wrong shape names both architectures.
    const auto wrong = write_config(
        "wrong.json", rings(R"("training": {"mode": "kd", "epochs": 1},
          "teacher_arch": {"hidden": [32], "embedding_dim": 8},
          "teacher_checkpoint": ")" + teacher_ckpt + "\""));
    EXPECT_NE(run({"train", wrong}), 0);
}

TEST_F(Cli, ShkdWritesPhasesAndSummary) {
    const auto cfg = write_config("s.json", rings(kPhases));
    ASSERT_EQ(run({"shkd", cfg}), 0) << err.str();
    for (const char* tag : {"I0", "I1", "I2"}) {
        const auto ck = load_checkpoint(dir / "out" / (std::string("shkd_step_") + tag + ".ckpt"));
        EXPECT_EQ(ck.provenance.phase, std::string("shkd-step-") + tag);
        EXPECT_TRUE(fs::exists(dir / "out" / (std::string("report_") + tag + ".csv")));
    }
    const auto summary = nlohmann::json::parse(read(dir / "out" / "summary.json"));
    EXPECT_TRUE(summary["head_chain_ok"].get<bool>());
    EXPECT_EQ(summary["config_hash"].get<std::string>().size(), 16u);
}

TEST_F(Cli, ShkdZeroEpochsAndMissingPhase) {
    const auto zero = write_config("z.json", rings(R"("training": {"epochs": 0},
      "shkd": {"initial": {"mode": "vanilla"}, "teacher": {"mode": "vanilla"}, "final_student": {"mode": "kd"}})"));
    ASSERT_EQ(run({"shkd", zero}), 0) << err.str();
    EXPECT_TRUE(nlohmann::json::parse(read(dir / "out" / "summary.json"))["head_chain_ok"].get<bool>());

    const auto missing = write_config("m.json", rings(R"("shkd": {"initial": {}, "final_student": {}})"));
    EXPECT_EQ(run({"shkd", missing}), cli::kExitValidation);
    EXPECT_NE(err.str().find("shkd.teacher"), std::string::npos) << err.str();
}

TEST_F(Cli, AnalyzeSelfIsZeroAngle) {
    const auto t = write_config("teacher.json", rings(std::string(kTrain) + R"(, "train_role": "teacher")"));
    ASSERT_EQ(run({"train", t}), 0) << err.str();
    const auto ckpt = (dir / "out" / "model.ckpt").string();
    ASSERT_EQ(run({"analyze", t, "--teacher", ckpt, "--student", ckpt, "--out", (dir / "an").string()}), 0)
        << err.str();
    std::istringstream summary(read(dir / "an" / "analysis_summary.csv"));
    std::string line;
    double angle = -1;
    while (std::getline(summary, line))
        if (line.rfind("mean_angle_rad,", 0) == 0) angle = std::stod(line.substr(15));
    EXPECT_GE(angle, 0.0);
    EXPECT_LT(angle, 1e-9);
    const std::string samples = read(dir / "an" / "analysis_samples.csv");
    EXPECT_EQ(samples.substr(0, samples.find('\n')), "index,label,angle_rad,angle_deg");

    EXPECT_EQ(run({"analyze", t}), cli::kExitValidation);
}

TEST_F(Cli, AnalyzeRejectsMismatchedModels) {
    const auto t = write_config("teacher.json", rings(std::string(kTrain) + R"(, "train_role": "teacher")"));
    ASSERT_EQ(run({"train", t, "--out", (dir / "t").string()}), 0);
    const auto s = write_config("student.json", rings(kTrain));
    ASSERT_EQ(run({"train", s, "--out", (dir / "s").string()}), 0);
    EXPECT_NE(run({"analyze", t, "--teacher", (dir / "t" / "model.ckpt").string(), "--student",
                   (dir / "s" / "model.ckpt").string()}),
              0);
    EXPECT_NE(err.str().find("in4-h16-e8-c3"), std::string::npos) << err.str();
    EXPECT_NE(err.str().find("in4-h6-e4-c3"), std::string::npos) << err.str();
}

TEST_F(Cli, AblateOneRowPerWidth) {
    const auto cfg = write_config("a.json", rings(std::string(kPhases) + R"(, "ablation": {"widths": [4, 4]})"));
    ASSERT_EQ(run({"ablate", cfg}), 0) << err.str();
    std::istringstream csv(read(dir / "out" / "ablation.csv"));
    std::vector<std::string> lines;
    for (std::string l; std::getline(csv, l);) lines.push_back(l);
    ASSERT_EQ(lines.size(), 3u);
    EXPECT_EQ(lines[0], "width,teacher_test_acc,final_student_test_acc");
    EXPECT_EQ(lines[1], lines[2]);

    const auto none = write_config("n.json", rings(std::string(kPhases) + R"(, "ablation": {"widths": []})"));
    EXPECT_EQ(run({"ablate", none}), cli::kExitValidation);
}
