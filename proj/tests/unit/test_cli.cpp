#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "wsf/common/binary_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result cli(const std::string& args) {
  const std::string cmd = std::string(WSF_CLI) + " " + args + " 2>/dev/null";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string tmp(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  return d.string();
}

const std::string smoke = std::string(WSF_SOURCE_DIR) + "/configs/smoke.json";

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("train-fusion --mode median --out " + tmp("wsf_cli_x")).code == 2);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("data errors exit with 3") {
  CHECK(cli("step --out " + tmp("wsf_cli_missing")).code == 3);
  const std::string bad = tmp("wsf_cli_bad.json");
  wsf::write_file(bad, R"({"unexpected": 1})");
  CHECK(cli("gen-data --config " + bad + " --out " + tmp("wsf_cli_bad")).code == 3);
  fs::remove(bad);
}

TEST_CASE("divergence exits with 4") {
  auto cfg = nlohmann::json::parse(wsf::read_file(smoke));
  cfg["expert"]["learning_rate"] = 1e300;
  const std::string path = tmp("wsf_cli_div.json");
  wsf::write_file(path, cfg.dump());
  const std::string out = tmp("wsf_cli_div");
  REQUIRE(cli("gen-data --config " + path + " --out " + out).code == 0);
  CHECK(cli("train-base --out " + out).code == 4);
  fs::remove(path);
  fs::remove_all(out);
}

TEST_CASE("gen-data is deterministic per seed") {
  const std::string a = tmp("wsf_cli_a"), b = tmp("wsf_cli_b"), c = tmp("wsf_cli_c");
  auto ra = cli("gen-data --seed 7 --config " + smoke + " --out " + a);
  auto rb = cli("gen-data --seed 7 --config " + smoke + " --out " + b);
  auto rc = cli("gen-data --seed 8 --config " + smoke + " --out " + c);
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  const auto ja = nlohmann::json::parse(ra.out), jb = nlohmann::json::parse(rb.out), jc = nlohmann::json::parse(rc.out);
  CHECK(ja["checksum"] == jb["checksum"]);
  CHECK(ja["checksum"] != jc["checksum"]);
  CHECK(cli("gen-data --config " + smoke + " --out " + a).code == 3);
  CHECK(cli("train-base --seed 9 --out " + a).code == 2);
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("scripted stages") {
  const std::string out = tmp("wsf_cli_run");
  const std::string o = " --out " + out;
  REQUIRE(cli("gen-data --config " + smoke + o).code == 0);
  REQUIRE(cli("train-base" + o).code == 0);
  CHECK(cli("train-fusion --mode sf" + o).code == 2);
  for (int s = 0; s < 3; ++s) REQUIRE(cli("step" + o).code == 0);
  CHECK(cli("step" + o).code == 2);
  for (const char* m : {"sf", "attn", "nmd"}) REQUIRE(cli(std::string("train-fusion --mode ") + m + o).code == 0);
  for (const char* k : {"oracle", "finetune-constant", "finetune-expand", "msp"})
    REQUIRE(cli(std::string("baseline --kind ") + k + o).code == 0);
  auto ev = cli("evaluate --split internal" + o);
  REQUIRE(ev.code == 0);
  CHECK(nlohmann::json::parse(ev.out)["average_accuracy"].contains("nmd-wSF"));
  const std::string csv = wsf::read_file(fs::path(out) / "metrics_internal.csv");
  CHECK(csv.substr(0, csv.find('\n')) == "method,experts,transfer,dataset,acc,f1");
  REQUIRE(cli("evaluate --split external" + o).code == 0);
  CHECK(cli("report" + o).code == 2);
  REQUIRE(cli("report --attention --efficiency" + o).code == 0);
  for (const char* f : {"attention_hist.csv", "attention_entropy.csv", "attention_hist.svg", "training_time.csv",
                        "training_time.svg", "inference_time.csv", "inference_time.svg"})
    CHECK(fs::exists(fs::path(out) / f));
  fs::remove_all(out);
}
