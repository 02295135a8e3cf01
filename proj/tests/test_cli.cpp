#include <sys/wait.h>

#include <cstdlib>

#include "test_util.hpp"

using namespace reducr;
using reducr::testing::TempDir;
using reducr::testing::slurp;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

class Cli : public ::testing::Test {
protected:
    TempDir dir;

    Outcome run(const std::string& args) {
        const std::string out = dir / "stdout.txt", err = dir / "stderr.txt";
        const std::string cmd = "cd '" + dir.path().string() + "' && '" + REDUCR_CLI_PATH + "' " + args + " >'" + out +
                                "' 2>'" + err + "'";
        const int status = std::system(cmd.c_str());
        Outcome o;
        o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        o.out = slurp(out);
        o.err = slurp(err);
        return o;
    }

    // A quick dataset + experts shared by several tests.
    void prepare(const std::string& extra = "") {
        ASSERT_EQ(run("generate-data --out pool.csv --n_train 1000 --n_holdout 400 --n_test 400" + extra).code, 0);
        ASSERT_EQ(run("train-experts --data pool.csv --out experts --expert_steps 200" + extra).code, 0);
    }
};

std::size_t count_files(const std::filesystem::path& dir, const std::string& ext) {
    std::size_t n = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) n += e.path().extension() == ext;
    return n;
}

}  // namespace

TEST_F(Cli, GenerateDataWritesSplitsDeterministically) {
    ASSERT_EQ(run("generate-data --out a.csv --n_train 300 --n_holdout 100 --n_test 50 --data_seed 4").code, 0);
    ASSERT_EQ(run("generate-data --out b.csv --n_train 300 --n_holdout 100 --n_test 50 --data_seed 4").code, 0);
    EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
    const std::string text = slurp(dir / "a.csv");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 451);
    const auto manifest = nlohmann::json::parse(slurp(dir / "a.csv.splits.json"));
    EXPECT_EQ(manifest["splits"]["train"][1].get<int>(), 300);
    EXPECT_EQ(manifest["splits"]["holdout"][1].get<int>(), 100);
    EXPECT_EQ(manifest["splits"]["test"][1].get<int>(), 50);
}

TEST_F(Cli, InvalidClassCountIsAUsageError) {
    const Outcome o = run("generate-data --out a.csv --num_classes 1");
    EXPECT_EQ(o.code, 1);
    EXPECT_NE(o.err.find("error:usage: num_classes"), std::string::npos) << o.err;
    EXPECT_FALSE(std::filesystem::exists(dir / "a.csv"));
}

TEST_F(Cli, ExistingOutputsNeedForce) {
    ASSERT_EQ(run("generate-data --out a.csv --n_train 100").code, 0);
    const std::string first = slurp(dir / "a.csv");
    EXPECT_EQ(run("generate-data --out a.csv --n_train 100").code, 1);
    EXPECT_EQ(run("generate-data --out a.csv --n_train 100 --force").code, 0);
    EXPECT_EQ(slurp(dir / "a.csv"), first);
}

TEST_F(Cli, TrainExpertsWritesOnePerClassPlusReference) {
    prepare();
    EXPECT_EQ(count_files(dir.path() / "experts", ".ckpt"), 5u);
    const auto manifest = nlohmann::json::parse(slurp(dir / "experts/manifest.json"));
    EXPECT_EQ(manifest["gamma"].get<double>(), 9.0);
    EXPECT_EQ(manifest["seeds"].size(), 4u);
    const std::string ckpt = slurp(dir / "experts/expert_2.ckpt");
    ASSERT_EQ(run("train-experts --data pool.csv --out experts --expert_steps 200 --force").code, 0);
    EXPECT_EQ(slurp(dir / "experts/expert_2.ckpt"), ckpt);
}

TEST_F(Cli, TrainExpertsOverSuperclasses) {
    ASSERT_EQ(run("generate-data --out pool.csv --n_train 200 --n_holdout 200 --n_test 100").code, 0);
    ASSERT_EQ(run("train-experts --data pool.csv --out g --expert_steps 50 --superclasses '0,1|2,3'").code, 0);
    EXPECT_EQ(count_files(dir.path() / "g", ".ckpt"), 3u);
}

TEST_F(Cli, MissingDatasetIsARuntimeError) {
    const Outcome o = run("train-experts --data nowhere.csv --out experts");
    EXPECT_EQ(o.code, 2);
    EXPECT_NE(o.err.find("error:runtime:"), std::string::npos);
}

TEST_F(Cli, RunRules) {
    prepare();
    const std::string common = " --data pool.csv --steps 40 --large_batch 40 --k 4";
    EXPECT_EQ(run("run --rule uniform --out u.jsonl" + common).code, 0);
    const Outcome missing = run("run --rule reducr --out r.jsonl" + common);
    EXPECT_EQ(missing.code, 1);
    EXPECT_NE(missing.err.find("error:usage:"), std::string::npos);
    EXPECT_EQ(run("run --rule reducr --experts experts --out r.jsonl" + common).code, 0);
    EXPECT_EQ(run("run --rule rholoss --experts experts --out h.jsonl" + common).code, 0);
    EXPECT_EQ(run("run --rule payoff --experts experts --out p.jsonl" + common).code, 0);
    const RunFile f = read_run_file(dir / "r.jsonl");
    EXPECT_EQ(f.records.size(), 40u);
    EXPECT_EQ(f.header.rule, "reducr");
}

TEST_F(Cli, RunIsByteIdenticalAcrossRepeats) {
    prepare();
    const std::string args = " --rule reducr --experts experts --data pool.csv --steps 50 --large_batch 40 --k 4 --seed 7";
    ASSERT_EQ(run("run --out a.jsonl" + args).code, 0);
    ASSERT_EQ(run("run --out b.jsonl" + args).code, 0);
    EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
}

TEST_F(Cli, ConfigFileWithFlagOverrides) {
    prepare();
    reducr::testing::write_file(dir / "c.cfg", "spec_version = 1\nrule = uniform\nsteps = 30\nlarge_batch = 40\nk = 4\ndata = pool.csv\n");
    ASSERT_EQ(run("run --config c.cfg --out a.jsonl").code, 0);
    EXPECT_EQ(read_run_file(dir / "a.jsonl").records.size(), 30u);
    ASSERT_EQ(run("run --config c.cfg --steps 12 --out b.jsonl").code, 0);
    EXPECT_EQ(read_run_file(dir / "b.jsonl").records.size(), 12u);
    reducr::testing::write_file(dir / "bad.cfg", "spec_version = 1\nbogus = 3\n");
    const Outcome o = run("run --config bad.cfg --out c.jsonl");
    EXPECT_EQ(o.code, 1);
    EXPECT_NE(o.err.find("bad.cfg:2"), std::string::npos) << o.err;
}

TEST_F(Cli, SweepWritesOneFilePerRunAndASummary) {
    prepare();
    const Outcome o = run("sweep --rules uniform,reducr --seeds 0..9 --experts experts --data pool.csv --steps 20 "
                          "--large_batch 40 --k 4 --parallel 2 --out sweep");
    ASSERT_EQ(o.code, 0) << o.err;
    EXPECT_EQ(count_files(dir.path() / "sweep", ".jsonl"), 20u);
    const auto summary = nlohmann::json::parse(slurp(dir / "sweep/summary.json"));
    ASSERT_EQ(summary.size(), 2u);
    EXPECT_EQ(summary[0]["runs"].get<int>(), 10);
    // A sweep member equals the stand-alone run.
    ASSERT_EQ(run("run --rule reducr --seed 3 --experts experts --data pool.csv --steps 20 --large_batch 40 --k 4 --out alone.jsonl").code, 0);
    EXPECT_EQ(slurp(dir / "alone.jsonl"), slurp(dir / "sweep/reducr_seed3.jsonl"));
}

TEST_F(Cli, ReportSummaryAndPlots) {
    prepare();
    ASSERT_EQ(run("sweep --rules uniform,reducr --seeds 0..1 --experts experts --data pool.csv --steps 30 "
                  "--large_batch 40 --k 4 --eval_every 5 --out sweep").code, 0);
    const Outcome summary = run("report --summary sweep/uniform_seed0.jsonl sweep/uniform_seed1.jsonl sweep/reducr_seed0.jsonl");
    ASSERT_EQ(summary.code, 0) << summary.err;
    EXPECT_NE(summary.out.find("reducr"), std::string::npos);
    EXPECT_NE(summary.out.find("uniform"), std::string::npos);
    const Outcome js = run("report --json --summary sweep/uniform_seed0.jsonl");
    EXPECT_EQ(nlohmann::json::parse(js.out).size(), 1u);
    ASSERT_EQ(run("report --plots sweep/uniform_seed0.jsonl sweep/reducr_seed0.jsonl --out figs").code, 0);
    EXPECT_TRUE(std::filesystem::exists(dir / "figs/worst_class_accuracy.svg"));
    EXPECT_TRUE(std::filesystem::exists(dir / "figs/weights_reducr_seed0.svg"));
    EXPECT_EQ(run("report").code, 1);
}

TEST_F(Cli, HelpListsConsumedConfigKeys) {
    const Outcome o = run("run --help");
    EXPECT_EQ(o.code, 0);
    for (const auto& key : config_keys()) EXPECT_NE(o.out.find("--" + key.name), std::string::npos) << key.name;
    const Outcome g = run("generate-data --help");
    for (const char* key : {"--num_classes", "--dim", "--n_train", "--separation", "--label_noise", "--data_seed"}) {
        EXPECT_NE(g.out.find(key), std::string::npos) << key;
    }
}

TEST_F(Cli, UnknownSubcommandOrFlag) {
    EXPECT_EQ(run("").code, 1);
    EXPECT_EQ(run("frobnicate").code, 1);
    EXPECT_EQ(run("run --out x.jsonl --no-such-flag 3").code, 1);
}
