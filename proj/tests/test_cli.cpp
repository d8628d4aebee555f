#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "ftm/config.hpp"
#include "ftm/io.hpp"

using namespace ftm;
namespace fs = std::filesystem;

namespace {

const char* const kTinyConfig =
    "# small enough for a unit test\n"
    "scale = 0.01\n"
    "lm_sentences = 300\n"
    "heldout_sentences = 40\n"
    "epochs = 2\n"
    "hidden_dim = 4\n"
    "head_hidden = 4\n"
    "variants = base-single, chatter-single, ratio, embed-merge, moe\n";

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ftm_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

struct Result {
  int code;
  std::string err;
};

Result ftmkit(const std::string& args, const fs::path& dir) {
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(FTMKIT_PATH) + " " + args + " > " + (dir / "stdout.txt").string() +
                          " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, fs::exists(err) ? read_file(err) : ""};
}

}  // namespace

TEST_CASE("config parsing") {
  const RunConfig d = parse_config("");
  CHECK(d.seed == 1);
  CHECK(d.scale == 0.1);
  CHECK(d.variants.size() == 8);

  const RunConfig c = parse_config("seed = 7   # trailing comment\n\n  beam=3\nvariants = ratio,moe\n");
  CHECK(c.seed == 7);
  CHECK(c.beam == 3);
  CHECK(c.variants == std::vector<std::string>{"ratio", "moe"});
  CHECK(parse_config(serialize_config(c)).beam == 3);
  CHECK(serialize_config(parse_config(serialize_config(c))) == serialize_config(c));

  CHECK_THROWS_AS(parse_config("colour = blue\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed 7\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("beam = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("scale = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("variants = ratio, bagging\n"), ConfigError);

  CHECK(known_variants().front() == "base-single");
  CHECK(is_known_variant("parallel-full-pretrained"));
  CHECK_FALSE(is_known_variant("PARALLEL_FULL"));

  const fs::path dir = scratch("config");
  put(dir / "a.txt", "run_dir = out\n");
  CHECK(load_config(dir / "a.txt").run_dir == dir / "out");
  fs::remove_all(dir);
}

TEST_CASE("command-line usage errors exit with status 2") {
  const fs::path dir = scratch("usage");
  put(dir / "cfg.txt", std::string(kTinyConfig) + "run_dir = run\n");
  put(dir / "bad.txt", "learning_rate = fast\n");
  const std::string cfg = "--config " + (dir / "cfg.txt").string();
  CHECK(ftmkit("", dir).code == 2);
  CHECK(ftmkit("frobnicate " + cfg, dir).code == 2);
  CHECK(ftmkit("eval", dir).code == 2);
  CHECK(ftmkit("eval --config " + (dir / "bad.txt").string(), dir).code == 2);
  CHECK(ftmkit("train-lm " + cfg, dir).code == 2);
  CHECK(ftmkit("train-lm --variant other " + cfg, dir).code == 2);
  const Result unknown = ftmkit("train-ftm --variant bagging " + cfg, dir);
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("moe") != std::string::npos);
  CHECK(ftmkit("eval --variant moe " + cfg, dir).code == 2);
  CHECK(ftmkit("eval --config " + (dir / "absent.txt").string(), dir).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("stages report what is missing") {
  const fs::path dir = scratch("missing");
  put(dir / "cfg.txt", std::string(kTinyConfig) + "run_dir = run\n");
  const std::string cfg = "--config " + (dir / "cfg.txt").string();
  const Result r = ftmkit("report " + cfg, dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("gen-data") != std::string::npos);
  CHECK(r.err.find("train-ftm --variant moe") != std::string::npos);
  CHECK(r.err.find("eval") != std::string::npos);
  CHECK(ftmkit("decode " + cfg, dir).code == 1);
  CHECK(ftmkit("train-ftm --variant ratio " + cfg, dir).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("small end-to-end run is reproducible") {
  const fs::path dir = scratch("e2e");
  put(dir / "cfg.txt", kTinyConfig);
  const std::string cfg = "--config " + (dir / "cfg.txt").string();
  for (const char* run : {"a", "b"}) {
    const std::string out = " --out " + (dir / run).string();
    REQUIRE(ftmkit("gen-data " + cfg + out, dir).code == 0);
    REQUIRE(ftmkit("train-lm --variant base " + cfg + out, dir).code == 0);
    REQUIRE(ftmkit("train-ftm " + cfg + out, dir).code == 0);
    REQUIRE(ftmkit("eval " + cfg + out, dir).code == 0);
    REQUIRE(ftmkit("report " + cfg + out, dir).code == 0);
  }
  const fs::path a = dir / "a", b = dir / "b";
  for (const char* f : {"data/manifest.tsv", "models/base.nglm", "ckpt/base-single.ckpt", "ckpt/moe.ckpt",
                        "ckpt/embed-merge.ckpt", "ckpt/ratio.ckpt", "eval/summary.csv", "eval/error_matrix.csv",
                        "report.md"}) {
    INFO(f);
    CHECK(read_file(a / f) == read_file(b / f));
  }
  const std::string report = read_file(a / "report.md");
  CHECK(report.find("| Classifier |") != std::string::npos);
  CHECK(report.find("Mixture of experts") != std::string::npos);

  // A different configuration may not reuse the run directory.
  put(dir / "other.txt", std::string(kTinyConfig) + "seed = 2\n");
  const Result clash = ftmkit("eval --config " + (dir / "other.txt").string() + " --out " + a.string(), dir);
  CHECK(clash.code == 1);
  CHECK(clash.err.find("config") != std::string::npos);
  fs::remove_all(dir);
}
