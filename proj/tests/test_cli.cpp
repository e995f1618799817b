#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "support/synthetic.hpp"

namespace {

namespace fs = std::filesystem;

std::string bin() {
    const char* b = std::getenv("JTCN_BIN");
    if (!b) throw std::runtime_error("JTCN_BIN not set; run through ctest");
    return b;
}

std::string scratch() {
    static std::string dir = [] {
        std::string d = (fs::temp_directory_path() /
                         ("jtcn_cli_" + std::to_string(::getpid()))).string();
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    std::string base = scratch() + "/run_" + std::to_string(counter++);
    std::string cmd = bin() + " " + args + " >" + base + ".out 2>" + base + ".err";
    int rc = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    r.out = slurp(base + ".out");
    r.err = slurp(base + ".err");
    return r;
}

// Shared synthetic corpus on disk; per-test workdirs keep the stages isolated.
testsup::SyntheticFiles data_files() {
    static testsup::SyntheticFiles files = [] {
        testsup::SyntheticSpec sp;
        sp.clusters = 2;
        sp.anchors = 20;
        sp.partners = 10;
        sp.words_per_cluster = 6;
        sp.doc_len = 10;
        sp.min_inter = 3;
        sp.max_inter = 5;
        sp.seed = 9;
        return testsup::write_synthetic(sp, scratch() + "/data");
    }();
    return files;
}

std::string data_args() {
    testsup::SyntheticFiles f = data_files();
    return "--interactions " + f.interactions + " --documents " + f.documents;
}

std::string workdir(const std::string& name) { return scratch() + "/" + name; }

void prepare_and_split(const std::string& wd) {
    ASSERT_EQ(run_cli("prepare " + data_args() + " --workdir " + wd + " --top-n 12").code, 0);
    ASSERT_EQ(run_cli("split " + data_args() + " --workdir " + wd + " --ratio 0.2 --seed 5").code, 0);
}

std::string tiny_train_flags() {
    return " --d 8 --k-capsules 2 --d-a 4 --iters 2 --batch-size 8 --lr 0.01 "
           "--negatives 3 --val-k 5 --max-epochs 2 --seed 21";
}

}  // namespace

TEST(Cli, PipelineEndToEnd) {
    std::string wd = workdir("e2e");
    RunResult prep = run_cli("prepare " + data_args() + " --workdir " + wd + " --top-n 12");
    ASSERT_EQ(prep.code, 0) << prep.err;
    EXPECT_NE(prep.out.find("prepared: 20 anchors, 10 partners"), std::string::npos);
    for (const char* f : {"vocab.tsv", "docs.bin", "id_map.tsv", "effective_config.txt"})
        EXPECT_TRUE(fs::exists(wd + "/" + f)) << f;

    RunResult split = run_cli("split " + data_args() + " --workdir " + wd + " --ratio 0.2 --seed 5");
    ASSERT_EQ(split.code, 0) << split.err;
    EXPECT_NE(split.out.find("split: 16 warm anchors, 4 cold anchors"), std::string::npos);
    EXPECT_TRUE(fs::exists(wd + "/split.tsv"));

    RunResult train = run_cli("train " + data_args() + " --workdir " + wd + tiny_train_flags());
    ASSERT_EQ(train.code, 0) << train.err;
    EXPECT_NE(train.out.find("epoch 1"), std::string::npos);
    EXPECT_NE(train.out.find("checkpoint written to"), std::string::npos);
    EXPECT_TRUE(fs::exists(wd + "/model.ckpt"));

    RunResult ev = run_cli("eval " + data_args() + " --workdir " + wd + " --at 5 --at 10 --with-knn");
    ASSERT_EQ(ev.code, 0) << ev.err;
    EXPECT_NE(ev.out.find("jtcn.recall@5 = "), std::string::npos);
    EXPECT_NE(ev.out.find("knn.recall@10 = "), std::string::npos);
    EXPECT_NE(ev.out.find("(over 4 cold anchors)"), std::string::npos);
    EXPECT_TRUE(fs::exists(wd + "/metrics.tsv"));
    EXPECT_TRUE(fs::exists(wd + "/rankings.tsv"));
    std::string metrics = slurp(wd + "/metrics.tsv");
    EXPECT_NE(metrics.find("metric\tK\tvalue\tanchor_count"), std::string::npos);
    EXPECT_NE(metrics.find("jtcn.ndcg\t5\t"), std::string::npos);

    RunResult rec = run_cli("recommend --workdir " + wd +
                            " --text \"topic0word0 topic0word1 topic0word2\" --top-k 3");
    ASSERT_EQ(rec.code, 0) << rec.err;
    std::istringstream lines(rec.out);
    std::string line;
    int n = 0;
    while (std::getline(lines, line))
        if (!line.empty()) {
            ++n;
            EXPECT_EQ(line.substr(0, 2), std::to_string(n) + "\t");
        }
    EXPECT_EQ(n, 3);
}

TEST(Cli, ExitCodesFollowTheContract) {
    std::string wd = workdir("codes");
    EXPECT_EQ(run_cli("bogus-subcommand").code, 1);
    EXPECT_EQ(run_cli("train --no-such-flag 1").code, 1);

    RunResult prep_missing =
        run_cli("prepare --interactions /nonexistent/x.tsv --documents /nonexistent/y.tsv "
                "--workdir " + wd);
    EXPECT_EQ(prep_missing.code, 2);

    ASSERT_EQ(run_cli("prepare " + data_args() + " --workdir " + wd + " --top-n 12").code, 0);
    RunResult bad_ratio = run_cli("split " + data_args() + " --workdir " + wd + " --ratio 1.5");
    EXPECT_EQ(bad_ratio.code, 1);
    EXPECT_NE(bad_ratio.err.find("usage error"), std::string::npos);
    EXPECT_NE(bad_ratio.err.find("ratio must be in (0, 1)"), std::string::npos);

    RunResult train_early = run_cli("train " + data_args() + " --workdir " + wd + tiny_train_flags());
    EXPECT_EQ(train_early.code, 2);
    EXPECT_NE(train_early.err.find("run the split command first"), std::string::npos);

    RunResult eval_early = run_cli("eval " + data_args() + " --workdir " + wd);
    EXPECT_EQ(eval_early.code, 2);
    EXPECT_NE(eval_early.err.find("run the train command first"), std::string::npos);

    RunResult rec_none = run_cli("recommend --workdir " + wd + " --top-k 3");
    EXPECT_EQ(rec_none.code, 1);  // needs --text or --doc-file

    RunResult help = run_cli("--help");
    EXPECT_EQ(help.code, 0);
    EXPECT_NE(help.out.find("prepare"), std::string::npos);
}

TEST(Cli, FlagsOverrideConfigFileOverridesDefaults) {
    std::string wd = workdir("config");
    testsup::SyntheticFiles f = data_files();
    std::string cfg_path = scratch() + "/run.cfg";
    {
        std::ofstream cfg(cfg_path, std::ios::binary);
        cfg << "# pipeline inputs\n"
            << "interactions = " << f.interactions << "\n"
            << "documents = " << f.documents << "\n"
            << "workdir = " << wd << "\n"
            << "top_n = 12\n"
            << "d = 8\n"
            << "batch_size = 4\n"
            << "max_epochs = 1\n";
    }
    ASSERT_EQ(run_cli("prepare --config " + cfg_path).code, 0);
    ASSERT_EQ(run_cli("split --config " + cfg_path + " --ratio 0.2 --seed 5").code, 0);
    RunResult train = run_cli("train --config " + cfg_path +
                              " --d 4 --k-capsules 2 --d-a 4 --val-k 5");
    ASSERT_EQ(train.code, 0) << train.err;
    std::string eff = slurp(wd + "/effective_config.txt");
    EXPECT_NE(eff.find("d = 4\n"), std::string::npos);           // flag beat the file
    EXPECT_NE(eff.find("batch_size = 4\n"), std::string::npos);  // file beat the default
    EXPECT_NE(eff.find("max_epochs = 1\n"), std::string::npos);
    EXPECT_NE(eff.find("top_n = 12\n"), std::string::npos);

    std::string bad_cfg = scratch() + "/bad.cfg";
    std::ofstream(bad_cfg, std::ios::binary) << "no_such_key = 1\n";
    RunResult bad = run_cli("prepare --config " + bad_cfg);
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.err.find("no_such_key"), std::string::npos);
}

TEST(Cli, PrepareIsByteIdempotent) {
    std::string wd = workdir("idem");
    ASSERT_EQ(run_cli("prepare " + data_args() + " --workdir " + wd + " --top-n 12").code, 0);
    std::string vocab1 = slurp(wd + "/vocab.tsv");
    std::string docs1 = slurp(wd + "/docs.bin");
    std::string ids1 = slurp(wd + "/id_map.tsv");
    ASSERT_EQ(run_cli("prepare " + data_args() + " --workdir " + wd + " --top-n 12").code, 0);
    EXPECT_EQ(slurp(wd + "/vocab.tsv"), vocab1);
    EXPECT_EQ(slurp(wd + "/docs.bin"), docs1);
    EXPECT_EQ(slurp(wd + "/id_map.tsv"), ids1);
    ASSERT_FALSE(vocab1.empty());
}

TEST(Cli, SplitFollowsTheSeed) {
    std::string wd = workdir("seeds");
    ASSERT_EQ(run_cli("prepare " + data_args() + " --workdir " + wd + " --top-n 12").code, 0);
    ASSERT_EQ(run_cli("split " + data_args() + " --workdir " + wd + " --ratio 0.3 --seed 1").code, 0);
    std::string one = slurp(wd + "/split.tsv");
    ASSERT_EQ(run_cli("split " + data_args() + " --workdir " + wd + " --ratio 0.3 --seed 1").code, 0);
    EXPECT_EQ(slurp(wd + "/split.tsv"), one);
    ASSERT_EQ(run_cli("split " + data_args() + " --workdir " + wd + " --ratio 0.3 --seed 2").code, 0);
    EXPECT_NE(slurp(wd + "/split.tsv"), one);
}

TEST(Cli, RepeatedRunsReproduceArtifactsBitForBit) {
    std::string wd = workdir("repro");
    prepare_and_split(wd);
    ASSERT_EQ(run_cli("train " + data_args() + " --workdir " + wd + tiny_train_flags()).code, 0);
    std::string ckpt1 = slurp(wd + "/model.ckpt");
    ASSERT_EQ(run_cli("eval " + data_args() + " --workdir " + wd + " --at 5 --with-knn").code, 0);
    std::string metrics1 = slurp(wd + "/metrics.tsv");

    ASSERT_EQ(run_cli("train " + data_args() + " --workdir " + wd + tiny_train_flags()).code, 0);
    EXPECT_EQ(slurp(wd + "/model.ckpt"), ckpt1);
    ASSERT_EQ(run_cli("eval " + data_args() + " --workdir " + wd + " --at 5 --with-knn --threads 4").code, 0);
    EXPECT_EQ(slurp(wd + "/metrics.tsv"), metrics1);
    ASSERT_FALSE(ckpt1.empty());
}

TEST(Cli, RecommendHandlesFilesAndForeignText) {
    std::string wd = workdir("rec");
    prepare_and_split(wd);
    ASSERT_EQ(run_cli("train " + data_args() + " --workdir " + wd + tiny_train_flags()).code, 0);

    std::string doc_path = scratch() + "/query.txt";
    std::ofstream(doc_path, std::ios::binary) << "topic1word0 topic1word3 topic1word5\n";
    RunResult from_file = run_cli("recommend --workdir " + wd + " --doc-file " + doc_path +
                                  " --top-k 2");
    ASSERT_EQ(from_file.code, 0) << from_file.err;
    EXPECT_EQ(from_file.out.substr(0, 2), "1\t");

    RunResult gibberish =
        run_cli("recommend --workdir " + wd + " --text \"zzz qqq unseen tokens\" --top-k 2");
    EXPECT_EQ(gibberish.code, 0);
    EXPECT_NE(gibberish.err.find("empty-document"), std::string::npos);

    RunResult both = run_cli("recommend --workdir " + wd + " --text a --doc-file " + doc_path);
    EXPECT_EQ(both.code, 1);
}
