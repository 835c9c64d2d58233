#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "doctest.h"
#include "gres/cli.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = gres::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Byte contents of every file under dir, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

int shell(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

struct Workspace {
  fs::path root = fs::temp_directory_path() / "gres_test_cli";
  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string operator/(const std::string& name) const { return (root / name).string(); }
};

}  // namespace

TEST_CASE("usage") {
  CHECK(run({"--help"}).code == gres::cli::kOk);
  CHECK(run({}).code == gres::cli::kUsageError);
  CHECK(run({"train", "--bogus"}).code == gres::cli::kUsageError);
  CHECK(run({"gen-data", "--seed", "1"}).code == gres::cli::kUsageError);
  CHECK(run({"eval", "--data", "x", "--ckpt", "y", "--split", "test"}).code == gres::cli::kUsageError);
  CHECK(run({"stats", "--data", "x", "--nseed-list", "4,a"}).code == gres::cli::kUsageError);
}

TEST_CASE("missing inputs are data errors") {
  Workspace ws;
  const Outcome o = run({"train", "--data", ws / "absent", "--out", ws / "c.ckpt", "--steps", "1", "--seed", "0"});
  CHECK(o.code == gres::cli::kDataError);
  CHECK(o.err.find("absent") != std::string::npos);
  CHECK(run({"eval", "--data", ws / "absent", "--ckpt", ws / "c.ckpt"}).code == gres::cli::kDataError);
  CHECK(run({"stats", "--data", ws / "absent"}).code == gres::cli::kDataError);
}

TEST_CASE("gradcheck") {
  const Outcome o = run({"gradcheck", "--seed", "1"});
  CHECK(o.code == gres::cli::kOk);
  CHECK(o.out.find("max_relative_error") != std::string::npos);
  CHECK(run({"gradcheck", "--seed", "1", "--tol", "1e-30"}).code == gres::cli::kNumericalError);
}

TEST_CASE("pipeline is byte-identical across runs") {
  Workspace ws;
  const std::string cli = GRES_CLI_PATH;
  for (const char* tag : {"a", "b"}) {
    const std::string d = ws / (std::string("data_") + tag);
    const std::string c = ws / (std::string("model_") + tag + ".ckpt");
    const std::string r = ws / (std::string("report_") + tag + ".json");
    REQUIRE(shell(cli + " gen-data --out " + d + " --seed 5 --scenes 2 --samples 4") == 0);
    REQUIRE(shell(cli + " train --data " + d + " --out " + c + " --steps 3 --seed 2") == 0);
    REQUIRE(shell(cli + " eval --data " + d + " --ckpt " + c + " --split train --report " + r) == 0);
  }
  CHECK(tree(ws / "data_a") == tree(ws / "data_b"));
  CHECK(slurp(ws / "model_a.ckpt") == slurp(ws / "model_b.ckpt"));
  const std::string report = slurp(ws / "report_a.json");
  CHECK(report == slurp(ws / "report_b.json"));

  const auto j = nlohmann::json::parse(report);
  for (const char* key : {"miou", "acc_025", "acc_05", "per_category"}) CHECK(j.contains(key));

  const Outcome stats = run({"stats", "--data", ws / "data_a", "--nseed-list", "4,8"});
  CHECK(stats.code == gres::cli::kOk);
  CHECK(stats.out.rfind("n_seed,coverage_rate,repetition_rate,scenes\n4,", 0) == 0);

  // A different seed yields a different dataset.
  REQUIRE(shell(cli + " gen-data --out " + (ws / "data_c") + " --seed 6 --scenes 2 --samples 4") == 0);
  CHECK_FALSE(tree(ws / "data_a") == tree(ws / "data_c"));
}

TEST_CASE("config file") {
  Workspace ws;
  {
    std::ofstream(ws / "bad.json") << R"({"model": {"dimension": 3}})";
  }
  CHECK(run({"gen-data", "--out", ws / "d", "--seed", "1", "--config", ws / "bad.json"}).code ==
        gres::cli::kDataError);
  {
    std::ofstream(ws / "ok.json") << R"({"gen": {"num_scenes": 1, "samples_per_scene": 2}})";
  }
  const Outcome o = run({"gen-data", "--out", ws / "d", "--seed", "1", "--config", ws / "ok.json"});
  CHECK(o.code == gres::cli::kOk);
  CHECK(o.out.find("1 scenes and 2 samples") != std::string::npos);
}
