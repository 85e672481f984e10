#include <doctest.h>

#include <sys/wait.h>

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef GLAG_CLI_PATH
#error "GLAG_CLI_PATH must name the CLI binary"
#endif

namespace fs = std::filesystem;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("glag_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + GLAG_CLI_PATH + "\" " + args + " > \"" +
                          (work() / "last.log").string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// a small benchmark shared by the tests below
const fs::path& small() {
  static const fs::path dir = [] {
    const auto cfg = work() / "small.json";
    std::ofstream(cfg) << R"({"classes":4,"largest":80,"imbalance":8,"dim":3,"val_per_class":15,)"
                          R"("test_per_class":20,"balanced_per_class":20,"hidden":[6],"stage1_epochs":4,)"
                          R"("stage2_epochs":3,"probe_epochs":3})";
    const auto d = work() / "data";
    REQUIRE(run("synth --config " + q(cfg) + " --out " + q(d)) == 0);
    return d;
  }();
  return dir;
}

std::string small_config() { return q(work() / "small.json"); }

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run("--help") == 0);
  CHECK(run("") == 2);
  CHECK(run("train --stage 3") == 2);
  CHECK(run("frobnicate") == 2);
}

TEST_CASE("synth writes every split and reruns byte for byte") {
  const auto d = small();
  for (const char* f : {"train.emb", "val.emb", "test.emb", "balanced.emb", "truth.json", "config.json"})
    CHECK(fs::exists(d / f));
  CHECK_FALSE(fs::exists(d / "train.emb.part"));

  const auto again = work() / "data2";
  REQUIRE(run("synth --config " + small_config() + " --out " + q(again)) == 0);
  CHECK(slurp(d / "train.emb") == slurp(again / "train.emb"));
  CHECK(slurp(d / "truth.json") == slurp(again / "truth.json"));

  const auto flat = work() / "flat";
  REQUIRE(run("synth --config " + small_config() + " --im 1 --out " + q(flat)) == 0);
  CHECK(slurp(flat / "config.json").find("\"imbalance\": 1.0") != std::string::npos);
  // all classes equal: 4 x 80 rows of 4 + 4*3 bytes
  CHECK(fs::file_size(flat / "train.emb") == 16 + 320 * 16);
}

TEST_CASE("train, evaluate and rerun") {
  const auto d = small();
  const auto out = work() / "run";
  REQUIRE(run("train --config " + small_config() + " --data " + q(d) + " --out " + q(out)) == 0);
  for (const char* f : {"m1.ckpt", "m2.ckpt", "metrics.json", "metrics.csv", "config.json"})
    CHECK(fs::exists(out / f));
  CHECK_FALSE(fs::exists(out / "timing.json"));

  const auto again = work() / "run2";
  REQUIRE(run("train --config " + small_config() + " --data " + q(d) + " --out " + q(again) + " --timing") == 0);
  CHECK(slurp(out / "metrics.json") == slurp(again / "metrics.json"));
  CHECK(slurp(out / "m2.ckpt") == slurp(again / "m2.ckpt"));
  CHECK(fs::exists(again / "timing.json"));

  const auto ev = work() / "eval";
  REQUIRE(run("eval --config " + small_config() + " --data " + q(d) + " --checkpoint " + q(out / "m2.ckpt") +
              " --out " + q(ev)) == 0);
  const std::string train_csv = slurp(out / "metrics.csv"), eval_csv = slurp(ev / "metrics.csv");
  // the eval rows carry the same numbers as the final training stage
  auto tail = [](const std::string& csv, const std::string& stage) {
    std::string rows;
    std::istringstream in(csv);
    for (std::string line; std::getline(in, line);) {
      const auto key = "," + stage + ",";
      if (auto p = line.find(key); p != std::string::npos) rows += line.substr(p + key.size()) + "\n";
    }
    return rows;
  };
  CHECK_FALSE(tail(train_csv, "stage2").empty());
  CHECK(tail(train_csv, "stage2") == tail(eval_csv, "eval"));

  const auto pr = work() / "probe";
  REQUIRE(run("probe --config " + small_config() + " --data " + q(d) + " --checkpoint " + q(out / "m1.ckpt") +
              " --out " + q(pr)) == 0);
  CHECK(fs::exists(pr / "metrics.json"));

  const auto s2 = work() / "stage2";
  REQUIRE(run("train --config " + small_config() + " --data " + q(d) + " --stage 2 --checkpoint " +
              q(out / "m1.ckpt") + " --out " + q(s2)) == 0);
  CHECK(slurp(s2 / "m2.ckpt") == slurp(out / "m2.ckpt"));
  CHECK(run("train --config " + small_config() + " --data " + q(d) + " --stage 2 --out " + q(s2)) == 2);
}

TEST_CASE("stage one only writes no second model") {
  const auto out = work() / "s1";
  REQUIRE(run("train --config " + small_config() + " --data " + q(small()) + " --stage 1 --out " + q(out)) == 0);
  CHECK(fs::exists(out / "m1.ckpt"));
  CHECK_FALSE(fs::exists(out / "m2.ckpt"));
}

TEST_CASE("flags match the baseline preset") {
  const auto a = work() / "flags", b = work() / "preset";
  REQUIRE(run("train --config " + small_config() + " --data " + q(small()) +
              " --afg off --kd off --loss ce --out " + q(a)) == 0);
  REQUIRE(run("train --preset baseline --config " + small_config() + " --data " + q(small()) + " --out " + q(b)) ==
          0);
  CHECK(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
  CHECK(slurp(a / "m2.ckpt") == slurp(b / "m2.ckpt"));
}

TEST_CASE("errors exit 2 and leave nothing behind") {
  const auto bad_cfg = work() / "bad.json";
  std::ofstream(bad_cfg) << R"({"alpha_cc": 2})";
  const auto out = work() / "bad_out";
  CHECK(run("train --config " + q(bad_cfg) + " --data " + q(small()) + " --out " + q(out)) == 2);
  CHECK(slurp(work() / "last.log").find("alpha_cc") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "metrics.json"));

  const auto ckpt = work() / "corrupt.ckpt";
  fs::copy_file(work() / "run" / "m2.ckpt", ckpt, fs::copy_options::overwrite_existing);
  {
    std::fstream f(ckpt, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(48);
    f.put('\x55');
  }
  const auto ev = work() / "corrupt_out";
  CHECK(run("eval --config " + small_config() + " --data " + q(small()) + " --checkpoint " + q(ckpt) +
            " --out " + q(ev)) == 2);
  CHECK_FALSE(fs::exists(ev / "metrics.json"));
  CHECK_FALSE(fs::exists(ev / "metrics.json.tmp"));

  CHECK(run("eval --config " + small_config() + " --data " + q(work() / "missing") + " --checkpoint " +
            q(work() / "run" / "m2.ckpt") + " --out " + q(ev)) == 2);

  // an output path below a regular file cannot be created
  const auto blocker = work() / "blocker";
  std::ofstream(blocker) << "x";
  CHECK(run("train --config " + small_config() + " --data " + q(small()) + " --stage 1 --out " +
            q(blocker / "sub")) == 2);
}

TEST_CASE("ablate writes one row per cell") {
  const auto out = work() / "ablate";
  REQUIRE(run("ablate --config " + small_config() + " --data " + q(small()) + " --axis components --out " +
              q(out)) == 0);
  const std::string csv = slurp(out / "ablation.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);
  CHECK(fs::exists(out / "ablation.json"));
  CHECK(run("ablate --config " + small_config() + " --data " + q(small()) + " --axis depth --out " + q(out)) == 2);
}
