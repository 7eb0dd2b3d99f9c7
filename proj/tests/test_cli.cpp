#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "transsleep/checkpoint.hpp"
#include "transsleep/dataset.hpp"
#include "transsleep/synth.hpp"

using namespace transsleep;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

Run cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "transsleep_cli_output.txt";
  const std::string cmd = std::string(TRANSSLEEP_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WEXITSTATUS(status), ss.str()};
}

void write_file(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("transsleep_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Small network so CLI round trips finish quickly.
const char* kSmallModel = R"([model]
f0 = 2
widths = [4, 4, 8]
heads = 2
hidden = 4
sequence_length = 5

[train]
max_epochs = 2
patience = 1
batch_size = 4
micro_batch = 2

[cv]
folds = 2
)";

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli("").code == 2);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("train --ablation case9").code == 2);
  const auto missing = cli("train");
  CHECK(missing.code == 2);
  CHECK(missing.out.find("data.cache_dir") != std::string::npos);
  const fs::path dir = fresh_dir("badcfg");
  write_text(dir / "run.toml", "[train]\nlearning_rate = 0.1\n");
  const auto bad = cli("train --config " + (dir / "run.toml").string());
  CHECK(bad.code == 2);
  CHECK(bad.out.find("train.learning_rate") != std::string::npos);
  CHECK(cli("analyze").code == 2);
  CHECK(cli("--help").code == 0);
  fs::remove_all(dir);
}

TEST_CASE("preprocess") {
  const fs::path dir = fresh_dir("pre");
  fs::create_directories(dir / "empty");
  SUBCASE("empty directory warns and succeeds") {
    const auto r = cli("preprocess --data-dir " + (dir / "empty").string() + " --out-dir " + (dir / "cache").string());
    CHECK(r.code == 0);
    CHECK(r.out.find("warning") != std::string::npos);
    CHECK(r.out.find("processed 0 recordings") != std::string::npos);
  }
  SUBCASE("synthetic fixture gives one cache file") {
    fs::create_directories(dir / "edf");
    const auto pair = synth::synth_edf_pair(4, 50);
    write_file(dir / "edf" / "SC4011E0-PSG.edf", pair.psg);
    write_file(dir / "edf" / "SC4011EH-Hypnogram.edf", pair.hypnogram);
    write_file(dir / "edf" / "SC4021E0-PSG.edf", pair.psg);  // unpaired
    const auto r = cli("preprocess --data-dir " + (dir / "edf").string() + " --out-dir " + (dir / "cache").string());
    CHECK(r.code == 0);
    CHECK(r.out.find("SC4021E0-PSG.edf has no matching hypnogram") != std::string::npos);
    CHECK(r.out.find("[data]") != std::string::npos);  // resolved config is logged
    const auto ds = read_cache(dir / "cache" / "SC4011E0.tsds");
    CHECK(ds.subject_id == "SC4011E0");
    std::size_t lead = 0, trail = 0;
    while (pair.stages[lead] == Stage::W) ++lead;
    while (pair.stages[pair.stages.size() - 1 - trail] == Stage::W) ++trail;
    CHECK(ds.epochs.size() == 50 - (lead > 60 ? lead - 60 : 0) - (trail > 60 ? trail - 60 : 0));
    for (const auto& e : ds.epochs) CHECK(e.label == pair.stages[e.epoch_index]);
    CHECK(r.out.find("total") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("train, eval and analyze round trip") {
  const fs::path dir = fresh_dir("run");
  fs::create_directories(dir / "cache");
  for (const auto& ds : synth::synth_dataset(31, 6, 80)) write_cache(dir / "cache" / (ds.subject_id + ".tsds"), ds);
  std::string cfg = kSmallModel;
  cfg += "\n[data]\ncache_dir = \"" + (dir / "cache").string() + "\"\nout_dir = \"" + (dir / "out").string() + "\"\n";
  write_text(dir / "run.toml", cfg);
  const std::string base = " --config " + (dir / "run.toml").string();

  for (int fold = 0; fold < 2; ++fold) {
    const auto t = cli("train --fold " + std::to_string(fold) + " --seed 3" + base);
    REQUIRE_MESSAGE(t.code == 0, t.out);
    CHECK(t.out.find("seed = 3") != std::string::npos);
    const fs::path fd = dir / "out" / ("fold_0" + std::to_string(fold));
    CHECK(fs::exists(fd / "history.csv"));
    const auto e = cli("eval --fold " + std::to_string(fold) + " --checkpoint " + (fd / "model.ckpt").string() + base);
    REQUIRE_MESSAGE(e.code == 0, e.out);
    const auto report = nlohmann::json::parse(read_text(fd / "report.json"));
    CHECK(report.contains("per_class_f1"));
    std::size_t svgs = 0;
    for (const auto& s : report["test_subjects"]) svgs += fs::exists(fd / ("hypnogram_" + s.get<std::string>() + ".svg"));
    CHECK(svgs == 3);
    CHECK(fs::exists(fd / "confusion.csv"));
  }
  SUBCASE("fixed seed gives an identical checkpoint") {
    const auto first = read_text(dir / "out" / "fold_00" / "model.ckpt");
    REQUIRE(cli("train --fold 0 --seed 3" + base).code == 0);
    CHECK(read_text(dir / "out" / "fold_00" / "model.ckpt") == first);
  }
  SUBCASE("analyze adds an aggregate row") {
    const auto a = cli("analyze --reports-dir " + (dir / "out").string());
    REQUIRE_MESSAGE(a.code == 0, a.out);
    CHECK(a.out.find("aggregate") != std::string::npos);
    const std::string summary = read_text(dir / "out" / "summary.csv");
    CHECK(summary.find("\naggregate,") != std::string::npos);
    CHECK(summary.find("\nfold_01,") != std::string::npos);
  }
  SUBCASE("checkpoint from another architecture is rejected") {
    const auto e = cli("eval --fold 0 --set model.hidden=6 --checkpoint " +
                       (dir / "out" / "fold_00" / "model.ckpt").string() + base);
    CHECK(e.code == 2);
    CHECK(e.out.find("does not match") != std::string::npos);
  }
  SUBCASE("ablation flag reaches the model") {
    REQUIRE(cli("train --fold 0 --ablation case1" + base).code == 0);
    nn::ModelParams params;
    const auto arrays = checkpoint::decode([&] {
      const std::string s = read_text(dir / "out" / "fold_00" / "model.ckpt");
      return std::vector<std::uint8_t>(s.begin(), s.end());
    }());
    bool has_eta = false;
    for (const auto& a : arrays) has_eta = has_eta || a.name.find(".eta") != std::string::npos;
    CHECK_FALSE(has_eta);
  }
  fs::remove_all(dir);
}
