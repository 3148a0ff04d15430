#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <string>

namespace {

struct RunResult {
    int exitCode = -1;
    std::string out;
};

RunResult runCli(const std::string& args) {
    std::string cmd = std::string(STAGELOG_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult r;
    std::array<char, 4096> buf;
    size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    int status = pclose(pipe);
    r.exitCode = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string programs(const std::string& rel) { return std::string(STAGELOG_PROGRAMS_DIR) + "/" + rel; }

void writeFile(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

} // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("markov run prints the stationary populations") {
    RunResult r = runCli("run --program " + programs("markov.dl") + " --facts " +
                         programs("data/mov_2city.csv") + " --query fpop --epsilon 1e-9");
    CHECK(r.exitCode == 0);
    CHECK(r.out.find("fpop,\"a\",133333.333") != std::string::npos);
    CHECK(r.out.find("fpop,\"b\",66666.666") != std::string::npos);
}

TEST_CASE("output is byte-identical across runs") {
    std::string args = "run --program " + programs("kmeans.dl") + " --facts " +
                       programs("data/points4.csv") + " --all";
    RunResult a = runCli(args);
    RunResult b = runCli(args);
    CHECK(a.exitCode == 0);
    CHECK(a.out == b.out);
}

TEST_CASE("non-stratifiable programs exit 3 with a cycle diagnostic") {
    writeFile("/tmp/stagelog_bad.dl", "p(count<X>) :- p(X).\n");
    RunResult r = runCli("run --program /tmp/stagelog_bad.dl --all");
    CHECK(r.exitCode == 3);
    CHECK(r.out.find("not stratifiable") != std::string::npos);
    CHECK(r.out.find("p -> p") != std::string::npos);
}

TEST_CASE("parse errors exit 2") {
    writeFile("/tmp/stagelog_syntax.dl", "q(X) :- p(X)\n");
    RunResult r = runCli("run --program /tmp/stagelog_syntax.dl --all");
    CHECK(r.exitCode == 2);
    CHECK(r.out.find("syntax error") != std::string::npos);
}

TEST_CASE("usage errors exit 1") {
    RunResult r = runCli("run --program " + programs("tc.dl"));
    CHECK(r.exitCode == 1);
    RunResult r2 = runCli("run --program " + programs("tc.dl") + " --facts " +
                          programs("data/edges_path5.csv") + " --query nosuch");
    CHECK(r2.exitCode == 1);
}

TEST_CASE("verify reports oracle agreement") {
    RunResult r = runCli("run --program " + programs("kmeans.dl") + " --facts " +
                         programs("data/points4.csv") + " --verify");
    CHECK(r.exitCode == 0);
    CHECK(r.out.find("completed == stratified-rewrite == naive: PASS") != std::string::npos);
    CHECK(r.out.find("engine==oracle (clustering") != std::string::npos);
    CHECK(r.out.find("FAIL") == std::string::npos);

    RunResult m = runCli("run --program " + programs("markov.dl") + " --facts " +
                         programs("data/mov_2city.csv") + " --verify --epsilon 1e-9");
    CHECK(m.exitCode == 0);
    CHECK(m.out.find("engine==oracle (population flow") != std::string::npos);
    CHECK(m.out.find("FAIL") == std::string::npos);
}

TEST_CASE("explain-strata prints the plan") {
    RunResult r = runCli("run --program " + programs("markov.dl") + " --explain-strata");
    CHECK(r.exitCode == 0);
    CHECK(r.out.find("edb: mov/3") != std::string::npos);
    CHECK(r.out.find("stratum 0: next") != std::string::npos);
    CHECK(r.out.find("stage argument 0, increment +1") != std::string::npos);
}

TEST_CASE("table output and mode flag") {
    RunResult r = runCli("run --program " + programs("groupby_sum.dl") + " --facts " +
                         programs("data/pairs.csv") + " --query qs --output table --mode rewrite");
    CHECK(r.exitCode == 0);
    CHECK(r.out.find("% qs (2)") != std::string::npos);
    CHECK(r.out.find("x\t3") != std::string::npos);
}

TEST_CASE("iteration limit warning is reported") {
    RunResult r = runCli("run --program " + programs("markov.dl") + " --facts " +
                         programs("data/mov_2city.csv") + " --query finalstep --max-iterations 5");
    CHECK(r.exitCode == 0);
    CHECK(r.out.find("warning: iteration limit") != std::string::npos);
    CHECK(r.out.find("finalstep,5") != std::string::npos);
}

TEST_SUITE_END();
