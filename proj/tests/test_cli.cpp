#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef ARCNET_CLI_PATH
#error "ARCNET_CLI_PATH must point at the built binary"
#endif

namespace {

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("arcnet_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

// Spawns the binary through the shell with stdout/stderr captured to files.
RunResult run_cli(const TempDir& tmp, const std::string& args) {
  const auto out_path = tmp.path / "stdout.txt";
  const auto err_path = tmp.path / "stderr.txt";
  const std::string cmd = std::string(ARCNET_CLI_PATH) + " " + args + " > " +
                          out_path.string() + " 2> " + err_path.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

}  // namespace

TEST_CASE("cli exit codes") {
  TempDir tmp;

  SECTION("help exits cleanly") {
    CHECK(run_cli(tmp, "--help").code == 0);
    CHECK(run_cli(tmp, "synth --help").code == 0);
  }

  SECTION("usage errors exit 1") {
    CHECK(run_cli(tmp, "").code == 1);
    CHECK(run_cli(tmp, "frobnicate").code == 1);
    CHECK(run_cli(tmp, "synth --no-such-flag").code == 1);

    const auto r = run_cli(tmp, "train");  // no --data
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error: ", 0) == 0);
    CHECK(r.err.find('\n') == r.err.size() - 1);  // single line

    CHECK(run_cli(tmp, "evaluate --data whatever.arcd").code == 1);
    CHECK(run_cli(tmp, "synth --dataset nonsense").code == 1);
  }

  SECTION("data errors exit 2") {
    const auto r =
        run_cli(tmp, "train --data " + (tmp.path / "absent.arcd").string());
    CHECK(r.code == 2);
    CHECK(r.err.rfind("error: ", 0) == 0);

    std::ofstream(tmp.path / "garbage.arcd") << "not a container";
    CHECK(run_cli(tmp, "train --data " + (tmp.path / "garbage.arcd").string()).code == 2);
  }
}

TEST_CASE("cli synth determinism") {
  TempDir tmp;
  const auto a = (tmp.path / "a.arcd").string();
  const auto b = (tmp.path / "b.arcd").string();
  const auto c = (tmp.path / "c.arcd").string();

  REQUIRE(run_cli(tmp, "synth --seed 7 --out " + a).code == 0);
  REQUIRE(run_cli(tmp, "synth --seed 7 --out " + b).code == 0);
  REQUIRE(run_cli(tmp, "synth --seed 8 --out " + c).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != slurp(c));
}

TEST_CASE("cli config file handling") {
  TempDir tmp;
  const auto direct = (tmp.path / "direct.arcd").string();
  const auto via_file = (tmp.path / "via_file.arcd").string();
  const auto overridden = (tmp.path / "overridden.arcd").string();

  const auto cfg_path = (tmp.path / "run.cfg").string();
  std::ofstream(cfg_path) << "# synthetic data settings\n"
                             "seed = 9\n"
                             "windows_per_class = 12   # a dozen each\n"
                             "\n"
                             "synth_classes = 3\n";

  SECTION("file values apply, flags win over the file") {
    REQUIRE(run_cli(tmp, "synth --seed 9 --windows-per-class 12 --synth-classes 3 --out " +
                             direct)
                .code == 0);
    REQUIRE(run_cli(tmp, "synth --config " + cfg_path + " --out " + via_file).code == 0);
    CHECK(slurp(direct) == slurp(via_file));

    REQUIRE(run_cli(tmp, "synth --config " + cfg_path + " --seed 2 --out " + overridden).code ==
            0);
    const auto plain = (tmp.path / "plain.arcd").string();
    REQUIRE(run_cli(tmp, "synth --seed 2 --windows-per-class 12 --synth-classes 3 --out " +
                             plain)
                .code == 0);
    CHECK(slurp(overridden) == slurp(plain));
  }

  SECTION("unknown keys and malformed lines are usage errors") {
    const auto bad1 = (tmp.path / "bad1.cfg").string();
    std::ofstream(bad1) << "seeed = 9\n";
    auto r = run_cli(tmp, "synth --config " + bad1);
    CHECK(r.code == 1);
    CHECK(r.err.find("unknown config key") != std::string::npos);

    const auto bad2 = (tmp.path / "bad2.cfg").string();
    std::ofstream(bad2) << "seed 9\n";
    r = run_cli(tmp, "synth --config " + bad2);
    CHECK(r.code == 1);
    CHECK(r.err.find("line 1") != std::string::npos);

    const auto bad3 = (tmp.path / "bad3.cfg").string();
    std::ofstream(bad3) << "seed = banana\n";
    CHECK(run_cli(tmp, "synth --config " + bad3).code == 1);

    CHECK(run_cli(tmp, "synth --config " + (tmp.path / "absent.cfg").string()).code == 1);
  }
}

TEST_CASE("cli pipeline", "[slow]") {
  TempDir tmp;
  const auto data = (tmp.path / "tiny.arcd").string();
  const auto run_dir = (tmp.path / "run").string();

  REQUIRE(run_cli(tmp, "synth --seed 3 --synth-imus 2 --synth-classes 2 --windows-per-class 10 "
                       "--out " +
                           data)
              .code == 0);
  const auto trained =
      run_cli(tmp, "train --data " + data +
                       " --dataset synth --epochs 2 --batch-size 8 --d-out 4 --routing-iters 1 "
                       "--out " +
                       run_dir);
  REQUIRE(trained.code == 0);
  CHECK(trained.out.find("epoch 0:") != std::string::npos);
  REQUIRE(std::filesystem::exists(run_dir + "/metrics.csv"));
  REQUIRE(std::filesystem::exists(run_dir + "/epoch_0000.arcc"));

  SECTION("evaluate") {
    const auto eval_csv = (tmp.path / "eval.csv").string();
    const auto r = run_cli(tmp, "evaluate " + run_dir + "/epoch_0000.arcc " + run_dir +
                                    "/epoch_0001.arcc --data " + data + " --out " + eval_csv);
    CHECK(r.code == 0);
    CHECK(r.out.find("accuracy ") != std::string::npos);
    CHECK(slurp(eval_csv).find("accuracy,") != std::string::npos);
  }

  SECTION("corrupt with probability zero reports zero deltas") {
    const auto r = run_cli(tmp, "corrupt " + run_dir + "/epoch_0000.arcc --data " + data +
                                    " --seed 5 --probability 0");
    CHECK(r.code == 0);
    CHECK(r.out.find("delta_accuracy_points 0 ") != std::string::npos);
  }

  SECTION("priors") {
    const auto base = (tmp.path / "priors").string();
    const auto r = run_cli(tmp, "priors " + run_dir + "/epoch_0000.arcc --out " + base);
    CHECK(r.code == 0);
    CHECK(std::filesystem::exists(base + ".csv"));
    CHECK(std::filesystem::exists(base + ".pgm"));
    CHECK(slurp(base + ".csv").rfind("imu,", 0) == 0);
  }

  SECTION("evaluating a mismatched container is a data error") {
    const auto other = (tmp.path / "other.arcd").string();
    REQUIRE(run_cli(tmp, "synth --seed 3 --synth-imus 2 --synth-classes 3 --out " + other)
                .code == 0);
    CHECK(run_cli(tmp, "evaluate " + run_dir + "/epoch_0000.arcc --data " + other).code == 2);
  }
}

TEST_CASE("cli gradcheck", "[slow]") {
  TempDir tmp;
  const auto ok = run_cli(tmp, "gradcheck --tol 1e-3");
  CHECK(ok.code == 0);
  CHECK(ok.out.find("gradcheck passed") != std::string::npos);

  const auto tight = run_cli(tmp, "gradcheck --tol 1e-12");
  CHECK(tight.code == 3);
  CHECK(tight.err.rfind("error: ", 0) == 0);
}
