#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

const char* kCli = CRUMB_CLI_PATH;

fs::path work_root() {
    static fs::path root = [] {
        fs::path p = fs::temp_directory_path() /
                     ("crumb_cli_" + std::to_string(::getpid()));
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

int run_cli(const std::string& args, const fs::path& log) {
    std::string cmd = std::string(kCli) + " " + args + " >" + log.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -2;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// flags shared by every training invocation: a desk-scale configuration that
// finishes in a couple of seconds
std::string tiny_flags(unsigned seed) {
    std::ostringstream ss;
    ss << "--seed " << seed
       << " --data-classes 4 --data-objects-per-class 2 --data-instances-per-object 3"
          " --data-frames-per-instance 10 --data-test-instances-per-object 1"
          " --data-image-side 12 --data-pretrain-classes 4"
          " --net-conv-channels 8,16 --net-hidden 32"
          " --train-pretrain-epochs 6 --train-first-task-epochs 2"
          " --train-classes-per-task 2 --train-buffer-capacity 40"
          " --train-codebook-n 16 --train-codebook-d 8 --eval-batch 10";
    return ss.str();
}

void make_run(const fs::path& dir, unsigned seed, const std::string& mode) {
    fs::path log = dir.parent_path() / (dir.filename().string() + ".log");
    fs::create_directories(dir.parent_path());
    REQUIRE(run_cli("pretrain " + tiny_flags(seed) + " --out " +
                        (dir / "pre").string(),
                    log) == 0);
    REQUIRE(run_cli("stream " + tiny_flags(seed) + " --mode " + mode +
                        " --checkpoint " + (dir / "pre" / "checkpoint").string() +
                        " --out " + (dir / "run").string(),
                    log) == 0);
}

}  // namespace

TEST_CASE("argument and config validation maps to exit code 2") {
    fs::path log = work_root() / "val.log";
    SUBCASE("missing required --out") {
        CHECK(run_cli("pretrain", log) == 2);
    }
    SUBCASE("unknown subcommand") {
        CHECK(run_cli("frobnicate", log) == 2);
    }
    SUBCASE("unknown --set key is named in the diagnostic") {
        CHECK(run_cli("pretrain --out " + (work_root() / "x").string() +
                          " --set bogus_key=1",
                      log) == 2);
        CHECK(slurp(log).find("bogus_key") != std::string::npos);
    }
    SUBCASE("bad value for a typed key") {
        CHECK(run_cli("pretrain --out " + (work_root() / "x").string() +
                          " --set train.lr=banana",
                      log) == 2);
        CHECK(slurp(log).find("train.lr") != std::string::npos);
    }
    SUBCASE("config file with an unknown key reports the line") {
        fs::path cfg = work_root() / "bad.cfg";
        std::ofstream(cfg) << "seed = 3\nnot_a_key = 1\n";
        CHECK(run_cli("pretrain --config " + cfg.string() + " --out " +
                          (work_root() / "x").string(),
                      log) == 2);
        auto text = slurp(log);
        CHECK(text.find("not_a_key") != std::string::npos);
        CHECK(text.find(":2:") != std::string::npos);  // file:line diagnostic
    }
    SUBCASE("stream without --checkpoint") {
        CHECK(run_cli("stream --out " + (work_root() / "x").string(), log) == 2);
        CHECK(slurp(log).find("--checkpoint") != std::string::npos);
    }
}

TEST_CASE("missing inputs map to exit code 3") {
    fs::path log = work_root() / "data.log";
    SUBCASE("stream from a nonexistent pretrain checkpoint") {
        CHECK(run_cli("stream " + tiny_flags(1) + " --checkpoint /nonexistent/ckpt --out " +
                          (work_root() / "x").string(),
                      log) == 3);
    }
    SUBCASE("manifest dataset with a missing manifest file") {
        CHECK(run_cli("stream " + tiny_flags(1) +
                          " --dataset manifest --set manifest_path=/nonexistent/m.csv"
                          " --set manifest_test_path=/nonexistent/m.csv"
                          " --checkpoint /nonexistent/ckpt --out " +
                          (work_root() / "x").string(),
                      log) == 3);
    }
    SUBCASE("resume with no task checkpoints") {
        fs::path out = work_root() / "empty_resume";
        fs::create_directories(out);
        CHECK(run_cli("stream " + tiny_flags(1) + " --resume --out " + out.string(),
                      log) == 3);
    }
    SUBCASE("report on a directory without runs") {
        CHECK(run_cli("report /nonexistent/run --out " + (work_root() / "x").string(),
                      log) == 3);
    }
}

TEST_CASE("pretrain run directory is self-describing") {
    fs::path out = work_root() / "pre_desc";
    fs::path log = work_root() / "pre_desc.log";
    REQUIRE(run_cli("pretrain " + tiny_flags(3) + " --train-lr 0.07 --out " + out.string(),
                    log) == 0);
    CHECK(fs::exists(out / "config.txt"));
    CHECK(fs::exists(out / "pretrain_metrics.jsonl"));
    CHECK(fs::exists(out / "pretrain_eval.csv"));
    CHECK(fs::exists(out / "checkpoint" / "state.json"));
    auto cfg = slurp(out / "config.txt");
    CHECK(cfg.find("seed = 3") != std::string::npos);
    CHECK(cfg.find("train.lr = 0.07") != std::string::npos);
    CHECK(cfg.find("data.classes = 4") != std::string::npos);
    // --set wins over the echoed default
    auto eval = slurp(out / "pretrain_eval.csv");
    CHECK(eval.find("train,") != std::string::npos);
    CHECK(eval.find("test,") != std::string::npos);
}

TEST_CASE("identical seeds give byte-identical artifacts") {
    fs::path a = work_root() / "det_a" / "run";
    fs::path b = work_root() / "det_b" / "run";  // same leaf name -> same run_id
    make_run(a.parent_path() / "bundle", 5, "crumb");
    make_run(b.parent_path() / "bundle", 5, "crumb");
    fs::path ra = a.parent_path() / "bundle" / "run";
    fs::path rb = b.parent_path() / "bundle" / "run";
    CHECK(slurp(ra / "accuracy.csv") == slurp(rb / "accuracy.csv"));
    CHECK(slurp(ra / "predictions.csv") == slurp(rb / "predictions.csv"));
    CHECK(slurp(ra / "stream_metrics.jsonl") == slurp(rb / "stream_metrics.jsonl"));
    CHECK(slurp(ra / "summary.json") == slurp(rb / "summary.json"));
    fs::path pa = a.parent_path() / "bundle" / "pre";
    fs::path pb = b.parent_path() / "bundle" / "pre";
    CHECK(slurp(pa / "pretrain_metrics.jsonl") == slurp(pb / "pretrain_metrics.jsonl"));
    // different seed diverges
    make_run(work_root() / "det_c" / "bundle", 6, "crumb");
    CHECK(slurp(work_root() / "det_c" / "bundle" / "run" / "predictions.csv") !=
          slurp(ra / "predictions.csv"));
}

TEST_CASE("stream outputs, interrupt and resume") {
    fs::path log = work_root() / "stream.log";
    fs::path full = work_root() / "sfull";
    make_run(full, 9, "crumb");
    fs::path frun = full / "run";
    REQUIRE(fs::exists(frun / "summary.json"));
    CHECK(fs::exists(frun / "task_01" / "state.json"));
    CHECK(fs::exists(frun / "task_02" / "state.json"));
    auto acc = slurp(frun / "accuracy.csv");
    CHECK(acc.rfind("run_id,task,eval_task,accuracy\n", 0) == 0);
    CHECK(acc.find(",all,") != std::string::npos);

    // same config, stopped after task 1, then resumed to completion
    fs::path part = work_root() / "spart";
    fs::create_directories(part);
    REQUIRE(run_cli("pretrain " + tiny_flags(9) + " --out " + (part / "pre").string(),
                    log) == 0);
    REQUIRE(run_cli("stream " + tiny_flags(9) + " --train-stop-after-task 1 --checkpoint " +
                        (part / "pre" / "checkpoint").string() + " --out " +
                        (part / "run").string(),
                    log) == 0);
    CHECK(!fs::exists(part / "run" / "task_02"));
    REQUIRE(run_cli("stream " + tiny_flags(9) + " --resume --out " + (part / "run").string(),
                    log) == 0);
    CHECK(fs::exists(part / "run" / "task_02" / "state.json"));
    CHECK(slurp(part / "run" / "accuracy.csv") == acc);
    CHECK(slurp(part / "run" / "predictions.csv") == slurp(frun / "predictions.csv"));
}

TEST_CASE("report aggregates runs") {
    fs::path log = work_root() / "report.log";
    fs::path a = work_root() / "rep_a";
    fs::path b = work_root() / "rep_b";
    make_run(a, 11, "crumb");
    make_run(b, 11, "no_replay");

    SUBCASE("single run: matrices only") {
        fs::path out = work_root() / "rep_single";
        REQUIRE(run_cli("report " + (a / "run").string() + " --out " + out.string(),
                        log) == 0);
        auto mat = slurp(out / "matrices.csv");
        CHECK(mat.find("run,1,1,") != std::string::npos);
        CHECK(slurp(out / "ttests.csv") == "comparison,t,df,p\n");
    }
    SUBCASE("identical prediction sets compare with p = 1") {
        // clone the crumb run under a different mode label: zero differences
        fs::path clone = work_root() / "rep_clone";
        fs::remove_all(clone);
        fs::create_directories(clone);
        fs::copy(a / "run", clone / "run", fs::copy_options::recursive);
        auto summary = slurp(clone / "run" / "summary.json");
        auto pos = summary.find("\"mode\": \"crumb\"");
        REQUIRE(pos != std::string::npos);
        summary.replace(pos, std::string("\"mode\": \"crumb\"").size(),
                        "\"mode\": \"clone\"");
        std::ofstream(clone / "run" / "summary.json") << summary;

        fs::path out = work_root() / "rep_p1";
        REQUIRE(run_cli("report " + (a / "run").string() + " " +
                            (clone / "run").string() + " --out " + out.string(),
                        log) == 0);
        auto tt = slurp(out / "ttests.csv");
        CHECK(tt.find("clone_vs_crumb,") != std::string::npos);
        CHECK(tt.find(",1\n") != std::string::npos);  // p column
    }
    SUBCASE("two modes produce a pairwise test row") {
        fs::path out = work_root() / "rep_pair";
        REQUIRE(run_cli("report " + (a / "run").string() + " " + (b / "run").string() +
                            " --out " + out.string(),
                        log) == 0);
        auto tt = slurp(out / "ttests.csv");
        CHECK(tt.find("crumb_vs_no_replay,") != std::string::npos);
        auto mat = slurp(out / "matrices.csv");
        CHECK(mat.find("run,2,all,") != std::string::npos);
    }
    SUBCASE("incompatible eval partitions are rejected") {
        fs::path c = work_root() / "rep_c";
        fs::path pre = c / "pre";
        REQUIRE(run_cli("pretrain " + tiny_flags(11) + " --out " + pre.string(), log) == 0);
        REQUIRE(run_cli("stream " + tiny_flags(11) +
                            " --eval-partition-seed 777 --checkpoint " +
                            (pre / "checkpoint").string() + " --out " + (c / "run").string(),
                        log) == 0);
        fs::path out = work_root() / "rep_bad";
        CHECK(run_cli("report " + (a / "run").string() + " " + (c / "run").string() +
                          " --out " + out.string(),
                      log) == 3);
        CHECK(slurp(log).find("incompatible batch partitions") != std::string::npos);
    }
}

TEST_CASE("ablate expands the grid into child runs") {
    fs::path log = work_root() / "ablate.log";
    fs::path out = work_root() / "ablate";
    REQUIRE(run_cli("ablate " + tiny_flags(13) +
                        " --grid mode=crumb,no_replay --out " + out.string(),
                    log) == 0);
    CHECK(fs::exists(out / "ablate_index.csv"));
    CHECK(fs::exists(out / "mode=crumb" / "stream" / "summary.json"));
    CHECK(fs::exists(out / "mode=no_replay" / "stream" / "summary.json"));
    auto index = slurp(out / "ablate_index.csv");
    CHECK(index.find("mode=crumb") != std::string::npos);
    CHECK(index.find("mode=no_replay") != std::string::npos);

    SUBCASE("grid spec without values is rejected") {
        CHECK(run_cli("ablate --grid mode --out " + (work_root() / "x").string(), log) == 2);
    }
}
