#include <fstream>
#include <sstream>

#include "doctest.h"
#include "scratch_dir.hpp"
#include "tml/checkpoint.hpp"
#include "tml/cli.hpp"
#include "tml/config.hpp"

using namespace tml;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "tml");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Small architecture for 16x16 inputs, 2 epochs.
void write_config(const fs::path& path, std::int64_t embedding_dim = 8) {
  RunConfig c;
  c.backbone.input_height = c.backbone.input_width = 16;
  c.backbone.stage_channels = {4, 8};
  c.backbone.blocks_per_stage = {1, 1};
  c.backbone.embedding_dim = embedding_dim;
  c.encoder.num_layers = 1;
  c.encoder.num_heads = 2;
  c.train.batch_size = 8;
  c.train.epochs = 2;
  c.train.verification_pairs = 40;
  c.data.holdout_fraction = 0.3;
  std::ofstream(path) << to_json(c).dump(2);
}

}  // namespace

TEST_CASE("synth refuses to overwrite and is reproducible") {
  tml::testing::ScratchDir dir("cli-synth");
  const auto data = (dir.path() / "data").string();
  auto r = run({"synth", "--classes", "3", "--per-class", "4", "--size", "16", "--seed", "7", "--out", data});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir.path() / "data" / "class_002" / "img_0003.png"));
  CHECK(fs::exists(dir.path() / "data" / "run_manifest.json"));
  const auto first = read_file(dir.path() / "data" / "class_001" / "img_0002.png");

  r = run({"synth", "--classes", "3", "--per-class", "4", "--size", "16", "--out", data});
  CHECK(r.code == 1);
  CHECK(r.err.find("--force") != std::string::npos);

  fs::remove_all(data);
  CHECK(run({"synth", "--classes", "3", "--per-class", "4", "--size", "16", "--seed", "7", "--out", data}).code == 0);
  CHECK(read_file(dir.path() / "data" / "class_001" / "img_0002.png") == first);
  CHECK(run({"synth", "--classes", "3", "--per-class", "4", "--size", "16", "--seed", "8", "--out", data, "--force"})
            .code == 0);
  CHECK(read_file(dir.path() / "data" / "class_001" / "img_0002.png") != first);
  CHECK(run({"synth", "--size", "8", "--out", (dir.path() / "small").string()}).code == 1);
}

TEST_CASE("gradcheck command") {
  auto r = run({"gradcheck", "--only", "softmax"});
  CHECK(r.code == 0);
  CHECK(r.out.find("softmax") != std::string::npos);
  CHECK(r.out.find("1/1 passed") != std::string::npos);
  CHECK(run({"gradcheck", "--only", "nothing"}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({}).code == 1);
}

TEST_CASE("train, eval and ablate end to end") {
  tml::testing::ScratchDir dir("cli-train");
  const auto data = (dir.path() / "data").string();
  const auto cfg = (dir.path() / "cfg.json").string();
  REQUIRE(run({"synth", "--classes", "3", "--per-class", "20", "--size", "16", "--out", data}).code == 0);
  write_config(cfg);

  const auto run_dir = dir.path() / "run";
  auto r = run({"train", "--config", cfg, "--data", data, "--alpha", "0.4", "--loss", "arcface", "--deterministic",
                "--out", run_dir.string()});
  REQUIRE(r.code == 0);
  const auto log = read_file(run_dir / "train_log.csv");
  CHECK(log.rfind("epoch,step,lr,loss_total,loss_metric,loss_transformer,alpha,wallclock_s\n", 0) == 0);
  CHECK(count_lines(log) == 3);
  CHECK(fs::exists(run_dir / "checkpoints" / "epoch_000.tar"));
  CHECK(fs::exists(run_dir / "checkpoints" / "epoch_002.tar"));
  auto manifest = nlohmann::json::parse(read_file(run_dir / "run_manifest.json"));
  CHECK(manifest["command"] == "train");
  for (const auto& a : manifest["artifacts"]) CHECK(fs::exists(run_dir / a.get<std::string>()));

  auto metric_only = dir.path() / "metric_only";
  REQUIRE(run({"train", "--config", cfg, "--data", data, "--combine-mode", "metric_only", "--deterministic", "--out",
               metric_only.string()})
              .code == 0);
  std::istringstream rows(read_file(metric_only / "train_log.csv"));
  std::string header, row;
  std::getline(rows, header);
  std::getline(rows, row);
  CHECK(row.find(",,,") != std::string::npos);

  CHECK(run({"train", "--config", cfg, "--data", data, "--alpha", "1.5", "--out", (dir.path() / "x").string()}).code ==
        1);
  CHECK(run({"train", "--config", cfg, "--data", data, "--loss", "triplet", "--out", (dir.path() / "x").string()})
            .code == 1);
  CHECK(run({"train", "--config", cfg, "--data", (dir.path() / "nowhere").string(), "--out",
             (dir.path() / "x").string()})
            .code == 1);

  // eval: deterministic bytes, missing pair file, embedding-dim mismatch
  const auto ck = (run_dir / "checkpoints" / "epoch_002.tar").string();
  const auto e1 = dir.path() / "eval1", e2 = dir.path() / "eval2";
  r = run({"eval", "--checkpoint", ck, "--out", e1.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("Inter/Intra Ratio") != std::string::npos);
  REQUIRE(run({"eval", "--checkpoint", ck, "--out", e2.string()}).code == 0);
  for (const char* f : {"verification.csv", "roc.csv", "variance.csv", "variance.txt"}) {
    CHECK(read_file(e1 / f) == read_file(e2 / f));
  }
  r = run({"eval", "--checkpoint", ck, "--pairs", (dir.path() / "missing.txt").string(), "--out", e1.string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("missing.txt") != std::string::npos);
  const auto wide = (dir.path() / "wide.json").string();
  write_config(wide, 16);
  r = run({"eval", "--checkpoint", ck, "--config", wide, "--data", data, "--out", e1.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("backbone.embed") != std::string::npos);

  // ablate
  CHECK(run({"ablate", "--config", cfg, "--data", data, "--alphas", "0.3,0.3", "--out", (dir.path() / "ab").string()})
            .code == 1);
  const auto ab = dir.path() / "ablate";
  REQUIRE(run({"ablate", "--config", cfg, "--data", data, "--alphas", "0.3,0.6", "--epochs", "1", "--deterministic",
               "--out", ab.string()})
              .code == 0);
  CHECK(fs::exists(ab / "alpha_0.3" / "train_log.csv"));
  CHECK(fs::exists(ab / "alpha_0.6" / "train_log.csv"));
  CHECK(count_lines(read_file(ab / "ablation_summary.csv")) == 1 + 1 * 2);
  CHECK(checkpoint_hash(ab / "alpha_0.3" / "checkpoints" / "epoch_000.tar") ==
        checkpoint_hash(ab / "alpha_0.6" / "checkpoints" / "epoch_000.tar"));
}
