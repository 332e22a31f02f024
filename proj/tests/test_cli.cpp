#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "auxlm/rng.hpp"
#include "support/synthetic.hpp"

// End-to-end checks against the installed binary (compiled in via AUXLM_BIN).

namespace fs = std::filesystem;
using namespace auxlm;

namespace {

struct CmdResult {
    int code = -1;
    std::string out;  // stdout + stderr
};

CmdResult run_cli(const std::string& args, const std::string& scratch) {
    static int n = 0;
    std::string capture = scratch + "/cli_out_" + std::to_string(n++) + ".txt";
    std::string cmd = std::string(AUXLM_BIN) + " " + args + " > " + capture + " 2>&1";
    int raw = std::system(cmd.c_str());
    CmdResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(capture, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

int count_lines(const std::string& s) {
    int n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

void write_dailydialog(const std::string& path, uint64_t seed, int dialogues, size_t bank_shift) {
    const auto& bank = testing::word_bank();
    StreamRng rng(derive_key(seed, fnv1a64("cli-corpus")));
    std::ofstream out(path);
    for (int d = 0; d < dialogues; ++d) {
        int turns = 4 + static_cast<int>(rng.next_below(3));
        for (int t = 0; t < turns; ++t) {
            int words = 3 + static_cast<int>(rng.next_below(4));
            for (int w = 0; w < words; ++w) {
                size_t idx = (rng.next_below(bank.size() / 2) + bank_shift) % bank.size();
                out << bank[idx] << ' ';
            }
            out << "__eou__";
        }
        out << '\n';
    }
}

// One shared workspace: corpora are prepared and a model trained once, then
// every scenario reuses those artifacts.
struct CliWorld {
    testing::TempDir dir;
    std::string prep = dir.file("prep");
    std::string prep2 = dir.file("prep2");
    std::string cfg = dir.file("cfg.json");
    std::string run_a = dir.file("run_a");

    CliWorld() {
        write_dailydialog(dir.file("dd_train.txt"), 1, 24, 0);
        write_dailydialog(dir.file("dd_valid.txt"), 2, 6, 0);
        write_dailydialog(dir.file("dd_test.txt"), 3, 6, 0);
        write_dailydialog(dir.file("dd_other.txt"), 4, 24, 11);

        auto p = run_cli("prepare --train " + dir.file("dd_train.txt") + " --valid " +
                             dir.file("dd_valid.txt") + " --test " + dir.file("dd_test.txt") +
                             " --out " + prep,
                         dir.path);
        REQUIRE(p.code == 0);
        auto p2 = run_cli("prepare --train " + dir.file("dd_other.txt") + " --out " + prep2,
                          dir.path);
        REQUIRE(p2.code == 0);

        std::ofstream(cfg) << R"({
  "corpus": {
    "format": "normalized",
    "train_path": ")" << prep << R"(/train.jsonl",
    "valid_path": ")" << prep << R"(/valid.jsonl",
    "test_path": ")" << prep << R"(/test.jsonl",
    "vocab_path": ")" << prep << R"(/vocab.json",
    "max_context_turns": 4
  },
  "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "max_seq_len": 64},
  "train": {"epochs": 1, "batch_size": 8, "warmup_steps": 2, "learning_rate": 0.001,
            "eval_every": 100},
  "decoding": {"max_new_tokens": 8}
})";
        auto t = run_cli("train --config " + cfg + " --run-dir " + run_a +
                             " --task umd --seed 5",
                         dir.path);
        REQUIRE(t.code == 0);
    }
};

CliWorld& world() {
    static CliWorld w;
    return w;
}

}  // namespace

TEST_CASE("cli: argument errors exit 2, help exits 0") {
    auto& w = world();
    CHECK(run_cli("", w.dir.path).code == 2);
    CHECK(run_cli("--help", w.dir.path).code == 0);
    CHECK(run_cli("train --config " + w.cfg, w.dir.path).code == 2);  // missing --run-dir
    auto bad = run_cli("frobnicate", w.dir.path);
    CHECK(bad.code == 2);
}

TEST_CASE("cli: prepare writes normalized splits and a vocabulary") {
    auto& w = world();
    CHECK(fs::exists(w.prep + "/train.jsonl"));
    CHECK(fs::exists(w.prep + "/valid.jsonl"));
    CHECK(fs::exists(w.prep + "/test.jsonl"));
    CHECK(fs::exists(w.prep + "/vocab.json"));

    auto r = run_cli("prepare --format martian --train " + w.dir.file("dd_train.txt") +
                         " --out " + w.dir.file("prep3"),
                     w.dir.path);
    CHECK(r.code == 2);
    CHECK(r.out.find("config error") != std::string::npos);
}

TEST_CASE("cli: config file problems are reported as exit 2") {
    auto& w = world();
    auto bad = w.dir.file("bad.json");
    std::ofstream(bad) << R"({"corpus": {"trian_path": "x"}})";
    auto r = run_cli("train --config " + bad + " --run-dir " + w.dir.file("nope"), w.dir.path);
    CHECK(r.code == 2);
    CHECK(r.out.find("unknown key") != std::string::npos);
    CHECK(r.out.find("corpus.trian_path") != std::string::npos);
}

TEST_CASE("cli: train produces the run directory contract") {
    auto& w = world();
    CHECK(fs::exists(w.run_a + "/config.json"));
    CHECK(fs::exists(w.run_a + "/metrics.csv"));
    CHECK(fs::exists(w.run_a + "/report.json"));
    CHECK(fs::exists(w.run_a + "/best.ckpt"));
    CHECK(fs::exists(w.run_a + "/last.ckpt"));
    CHECK_FALSE(fs::exists(w.run_a + "/lock"));  // released on success

    // identical seed and config reproduce the metrics byte for byte
    auto run_b = w.dir.file("run_b");
    auto t = run_cli("train --config " + w.cfg + " --run-dir " + run_b + " --task umd --seed 5",
                     w.dir.path);
    REQUIRE(t.code == 0);
    std::ifstream a(w.run_a + "/metrics.csv"), b(run_b + "/metrics.csv");
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(sa.str().rfind("step,lm_loss,aux_loss,total,lr", 0) == 0);
}

TEST_CASE("cli: a stale lock blocks the run with exit 2") {
    auto& w = world();
    auto locked = w.dir.file("locked_run");
    fs::create_directories(locked);
    std::ofstream(locked + "/lock") << "locked\n";
    auto r = run_cli("train --config " + w.cfg + " --run-dir " + locked + " --task none",
                     w.dir.path);
    CHECK(r.code == 2);
    CHECK(r.out.find("locked") != std::string::npos);
}

TEST_CASE("cli: evaluate emits json plus csv and honours metric selection") {
    auto& w = world();
    auto r = run_cli("evaluate --config " + w.cfg + " --checkpoint " + w.run_a +
                         "/best.ckpt --metrics ppl",
                     w.dir.path);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("\"ppl\"") != std::string::npos);
    CHECK(r.out.find("ppl,bleu,rouge_l,average,greedy,extrema") != std::string::npos);
    CHECK(r.out.find(",,,,,\n") != std::string::npos);  // only the ppl cell is filled

    auto bad = run_cli("evaluate --config " + w.cfg + " --checkpoint " + w.run_a +
                           "/best.ckpt --metrics nope",
                       w.dir.path);
    CHECK(bad.code == 2);

    auto out_file = w.dir.file("metrics_out.json");
    auto full = run_cli("evaluate --config " + w.cfg + " --checkpoint " + w.run_a +
                            "/best.ckpt --metrics ppl,rouge_l --out " + out_file,
                        w.dir.path);
    REQUIRE(full.code == 0);
    CHECK(fs::exists(out_file));
}

TEST_CASE("cli: a checkpoint refuses a foreign vocabulary with exit 3") {
    auto& w = world();
    auto r = run_cli("evaluate --config " + w.cfg + " --checkpoint " + w.run_a +
                         "/best.ckpt --vocab " + w.prep2 + "/vocab.json --metrics ppl",
                     w.dir.path);
    CHECK(r.code == 3);
    CHECK(r.out.find("vocabulary") != std::string::npos);
}

TEST_CASE("cli: generation is seed-deterministic and line-per-window") {
    auto& w = world();
    std::string args = "generate --config " + w.cfg + " --checkpoint " + w.run_a +
                       "/best.ckpt -n 3 --mode top_k --top-k 5 --seed 9";
    auto a = run_cli(args, w.dir.path);
    auto b = run_cli(args, w.dir.path);
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    CHECK(count_lines(a.out) == 3);

    auto c = run_cli("generate --config " + w.cfg + " --checkpoint " + w.run_a +
                         "/best.ckpt -n 2 --compare " + w.run_a + "/last.ckpt",
                     w.dir.path);
    REQUIRE(c.code == 0);
    CHECK(c.out.find("# context:") != std::string::npos);
}

TEST_CASE("cli: corrupt-preview reflects the task") {
    auto& w = world();
    auto none = run_cli("corrupt-preview --config " + w.cfg + " --task none -n 3", w.dir.path);
    REQUIRE(none.code == 0);
    CHECK(count_lines(none.out) == 3);
    CHECK(none.out.find("\"was_corrupted\":false") != std::string::npos);
    CHECK(none.out.find("\"was_corrupted\":true") == std::string::npos);

    auto stats = run_cli("corrupt-preview --config " + w.cfg +
                             " --task umr --stats -n 400 --seed 3",
                         w.dir.path);
    REQUIRE(stats.code == 0);
    CHECK(stats.out.find("token_selection_rate") != std::string::npos);

    auto up = run_cli("corrupt-preview --config " + w.cfg +
                          " --task upd --stats -n 400 --seed 3",
                      w.dir.path);
    REQUIRE(up.code == 0);
    CHECK(up.out.find("dialogue_selection_rate") != std::string::npos);
}

TEST_CASE("cli: the repl answers and quits cleanly") {
    auto& w = world();
    auto script = w.dir.file("repl_in.txt");
    std::ofstream(script) << "alpha bravo charlie\n:quit\n";
    std::string capture = w.dir.file("repl_out.txt");
    std::string cmd = std::string(AUXLM_BIN) + " generate --config " + w.cfg +
                      " --checkpoint " + w.run_a + "/best.ckpt --repl < " + script + " > " +
                      capture + " 2>&1";
    int raw = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(raw));
    CHECK(WEXITSTATUS(raw) == 0);
    std::ifstream in(capture);
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str().find("you>") != std::string::npos);
    CHECK(ss.str().find("bot>") != std::string::npos);
}
