#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "rnet/data.hpp"
#include "rnet/training.hpp"

using namespace rnet;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rnet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Two-class 4x4 images: bright left half for class 0, bright right half for class 1.
Dataset stripes(std::size_t n, std::uint64_t seed) {
  Dataset ds;
  ds.images = Tensor({n, 1, 4, 4});
  ds.labels.resize(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = int(rng.uniform_index(2));
    ds.labels[i] = y;
    for (std::size_t p = 0; p < 16; ++p) {
      const bool left = p % 4 < 2;
      const double v = (left == (y == 0) ? 0.75 : 0.25) + 0.1 * rng.normal();
      ds.images[i * 16 + p] = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
    }
  }
  return ds;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "rnet-cli-test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_idx_prefix(stripes(240, 1), dir_ / "train");
    write_idx_prefix(stripes(80, 2), dir_ / "test");
  }

  static std::vector<std::string> train_args(const std::string& name, const std::string& regime = "base") {
    return {"train",          "--data-dir",
            dir_.string(),    "--data.train",
            "train",          "--data.test",
            "test",           "--model.architecture",
            "mlp",            "--model.layer_sizes",
            "16,12,10",       "--train.epochs",
            "3",              "--train.batch_size",
            "16",             "--regime",
            regime,           "--run.out_dir",
            dir_.string(),    "--run.name",
            name};
  }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, HelpListsEveryKey) {
  const Result r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* key : {"run.seed", "data.dir", "model.layer_sizes", "train.regime", "perturb.epsilon",
                          "attack.mix_ratio", "eval.conditions", "corrupt.kind", "verify.samples"}) {
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  }
  EXPECT_NE(r.out.find("Exit codes"), std::string::npos);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"fly"}).code, 1);
  EXPECT_EQ(run_cli({"verify", "--no-such-flag"}).code, 1);
  EXPECT_EQ(run_cli({"verify", "--suite", "everything"}).code, 1);
  EXPECT_EQ(run_cli({"verify", "--epsilon", "1.5"}).code, 1);
  const Result r = run_cli({"corrupt", "--in", (dir_ / "test").string(), "--out", (dir_ / "x").string(), "--kind", "blur"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("blur"), std::string::npos);
}

TEST_F(Cli, ConfigFileErrors) {
  const fs::path cfg = dir_ / "bad.cfg";
  std::ofstream(cfg) << "# comment\nrun.seed = 3\ntrain.lerning_rate = 0.1\n";
  const Result r = run_cli({"verify", "--config", cfg.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bad.cfg:3"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("train.lerning_rate"), std::string::npos) << r.err;
  const Result missing = run_cli({"verify", "--config", (dir_ / "missing.cfg").string()});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("missing.cfg"), std::string::npos) << missing.err;
}

TEST_F(Cli, MissingDataExitsTwo) {
  const Result r = run_cli({"corrupt", "--in", (dir_ / "nothing").string(), "--out", (dir_ / "x").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("nothing"), std::string::npos) << r.err;
  EXPECT_EQ(run_cli({"eval", "--checkpoint", (dir_ / "none.ckpt").string()}).code, 2);
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  const fs::path cfg = dir_ / "verify.cfg";
  std::ofstream(cfg) << "verify.suite = hessian\nverify.samples = 500\nverify.epsilon = 0.2\nrun.seed = 11\n";
  const Result from_file = run_cli({"verify", "--config", cfg.string()});
  ASSERT_EQ(from_file.code, 0) << from_file.err;
  const auto j = nlohmann::json::parse(from_file.out);
  EXPECT_EQ(j.at("seed"), 11);
  EXPECT_EQ(j.at("hessian").at(0).at("samples"), 500);
  EXPECT_FALSE(j.contains("jacobian"));

  const Result overridden = run_cli({"verify", "--config", cfg.string(), "--verify.samples", "800", "--seed", "12"});
  ASSERT_EQ(overridden.code, 0);
  const auto k = nlohmann::json::parse(overridden.out);
  EXPECT_EQ(k.at("seed"), 12);
  EXPECT_EQ(k.at("hessian").at(0).at("samples"), 800);
}

TEST_F(Cli, TrainEvalAttackCorruptReport) {
  const Result t = run_cli(train_args("pipeline"));
  ASSERT_EQ(t.code, 0) << t.err;
  const fs::path ckpt = dir_ / "pipeline.ckpt";
  EXPECT_EQ(t.out, ckpt.string() + "\n");
  ASSERT_TRUE(fs::exists(ckpt));

  // One JSON line per epoch.
  std::istringstream log(slurp(dir_ / "pipeline.log.jsonl"));
  std::string line;
  int epochs = 0;
  while (std::getline(log, line)) {
    const auto rec = nlohmann::json::parse(line);
    EXPECT_EQ(rec.at("epoch"), epochs + 1);
    EXPECT_TRUE(rec.contains("trainLoss"));
    ++epochs;
  }
  EXPECT_EQ(epochs, 3);

  const Result e = run_cli({"eval", "--checkpoint", ckpt.string(), "--in", (dir_ / "test").string(), "--conditions",
                            "clean,ran_hflip,five_crop,fgsm@0.1"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto rows = parse_eval_csv(e.out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].model, "mlp");
  EXPECT_EQ(rows[0].n, 80u);
  EXPECT_GT(rows[0].accuracy, 0.9);
  // Mirroring the stripes swaps the classes.
  EXPECT_LT(rows[1].accuracy, rows[0].accuracy);

  const fs::path adv = dir_ / "adv";
  ASSERT_EQ(run_cli({"attack", "--checkpoint", ckpt.string(), "--in", (dir_ / "test").string(), "--out", adv.string(),
                     "--epsilon", "0.1"})
                .code,
            0);
  const Dataset clean = load_idx_prefix(dir_ / "test"), attacked = load_idx_prefix(adv);
  EXPECT_EQ(attacked.labels, clean.labels);
  for (std::size_t i = 0; i < clean.images.size(); ++i) {
    EXPECT_LE(std::abs(attacked.images[i] - clean.images[i]), 0.1 + 0.5 / 255.0 + 1e-12);
  }

  const fs::path flipped = dir_ / "flipped";
  ASSERT_EQ(run_cli({"corrupt", "--in", (dir_ / "test").string(), "--out", flipped.string(), "--kind", "ran_hflip",
                     "--param", "1"})
                .code,
            0);
  const Dataset fl = load_idx_prefix(flipped);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(fl.images[r * 4 + c], clean.images[r * 4 + 3 - c]);

  const fs::path csv1 = dir_ / "s1.csv", csv2 = dir_ / "s2.csv";
  ASSERT_EQ(run_cli({"eval", "--checkpoint", ckpt.string(), "--in", (dir_ / "test").string(), "--out", csv1.string()})
                .code,
            0);
  ASSERT_EQ(run_cli({"eval", "--checkpoint", ckpt.string(), "--in", flipped.string(), "--out", csv2.string()}).code, 0);
  const Result rep = run_cli({"report", "--in", csv1.string(), csv2.string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(rep.out.find("mlp"), std::string::npos);
}

TEST_F(Cli, ReportMatchesHandComputedTable) {
  const fs::path a = dir_ / "r1.csv", b = dir_ / "r2.csv";
  std::ofstream(a) << kEvalCsvHeader << "\nlenet,r,t10k,clean,0.9800,0.1,1,10000\nlenet,r,t10k,fgsm@0.1,0.70,1.2,1,10000\n";
  std::ofstream(b) << kEvalCsvHeader << "\nlenet,r,t10k,clean,0.9900,0.1,2,10000\nlenet,r,t10k,fgsm@0.1,0.75,1.1,2,10000\n";
  const Result r = run_cli({"report", "--in", a.string(), b.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  // mean 98.5, sample std 0.7071; mean 72.5, sample std 3.5355
  EXPECT_NE(r.out.find("98.50±0.71"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("72.50±3.54"), std::string::npos) << r.out;
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
  for (const char* regime : {"base", "r", "fgsm"}) {
    const std::string n1 = std::string("det1-") + regime, n2 = std::string("det2-") + regime;
    ASSERT_EQ(run_cli(train_args(n1, regime)).code, 0);
    ASSERT_EQ(run_cli(train_args(n2, regime)).code, 0);
    EXPECT_EQ(slurp(dir_ / (n1 + ".ckpt")), slurp(dir_ / (n2 + ".ckpt"))) << regime;
  }
  const fs::path c1 = dir_ / "c1", c2 = dir_ / "c2";
  for (const fs::path& out : {c1, c2}) {
    ASSERT_EQ(run_cli({"corrupt", "--in", (dir_ / "test").string(), "--out", out.string(), "--kind", "ran_color"}).code, 0);
  }
  EXPECT_EQ(slurp(idx_paths(c1).images), slurp(idx_paths(c2).images));
  EXPECT_EQ(run_cli({"verify", "--verify.samples", "1000"}).out, run_cli({"verify", "--verify.samples", "1000"}).out);
}

TEST_F(Cli, CollapsedRegimesReproduceBase) {
  ASSERT_EQ(run_cli(train_args("collapse-base")).code, 0);
  auto r = train_args("collapse-r", "r");
  r.insert(r.end(), {"--perturb.epsilon", "0", "--perturb.placement", "input,post-fc1"});
  ASSERT_EQ(run_cli(r).code, 0);
  auto f = train_args("collapse-fgsm", "fgsm");
  f.insert(f.end(), {"--attack.mix_ratio", "0"});
  ASSERT_EQ(run_cli(f).code, 0);
  const std::string base = slurp(dir_ / "collapse-base.ckpt");
  EXPECT_EQ(slurp(dir_ / "collapse-r.ckpt"), base);
  EXPECT_EQ(slurp(dir_ / "collapse-fgsm.ckpt"), base);
}
