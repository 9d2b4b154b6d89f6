#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "sfit/checkpoint.hpp"
#include "sfit/data.hpp"
#include "sfit/eval.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

Result run(const std::string& args, const test::TempDir& dir) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string(SFIT_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

}  // namespace

TEST(Cli, SelftestPasses) {
  test::TempDir dir;
  const auto r = run("selftest", dir);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  test::TempDir dir;
  EXPECT_EQ(run("", dir).code, 2);
  EXPECT_EQ(run("teleport", dir).code, 2);
  EXPECT_EQ(run("train-source --epochs many", dir).code, 2);
  std::ofstream(dir / "bad.toml") << "[stage.train-source]\nlearning_rate = 0.1\n";
  const auto r = run("train-source -c " + (dir / "bad.toml").string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos);
}

TEST(Cli, MissingCheckpointNamesThePath) {
  test::TempDir dir;
  const auto missing = (dir / "nowhere" / "source.ckpt").string();
  std::ofstream(dir / "c.toml") << "[stage.evaluate]\nsource_ckpt = \"" << missing << "\"\ntarget_ckpt = \"" << missing
                                << "\"\nout = \"" << (dir / "out").string() << "\"\n";
  const auto r = run("evaluate -c " + (dir / "c.toml").string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST(Cli, FullPipelineOnATinyDataset) {
  test::TempDir dir;
  const auto mnist = dir / "mnist";
  fs::create_directories(mnist);
  sfit::data::save_idx(test::random_set(80, 1, 28, 28, 1), mnist / "train-images-idx3-ubyte",
                       mnist / "train-labels-idx1-ubyte");
  sfit::data::save_idx(test::random_set(40, 1, 28, 28, 2), mnist / "t10k-images-idx3-ubyte",
                       mnist / "t10k-labels-idx1-ubyte");
  const auto out = dir / "run";
  const std::string o = out.string();
  std::ofstream(dir / "c.toml") << "[stage.make-synthetic]\nmnist_dir = \"" << mnist.string() << "\"\n"
                                << "train_per_domain = 32\ntest_per_domain = 16\n"
                                << "[stage.train-source]\ndata = \"" << o << "/pair.manifest\"\nepochs = 1\n"
                                << "max_steps_per_epoch = 2\n"
                                << "[stage.adapt-target]\ndata = \"" << o << "/pair.manifest\"\nepochs = 1\n"
                                << "max_steps_per_epoch = 2\nsource_ckpt = \"" << o << "/source.ckpt\"\n"
                                << "[stage.init-generator]\ndata = \"" << o << "/pair.manifest\"\nepochs = 1\n"
                                << "max_steps_per_epoch = 1\nsource_ckpt = \"" << o << "/source.ckpt\"\n"
                                << "[stage.train-sfit]\ndata = \"" << o << "/pair.manifest\"\nepochs = 1\n"
                                << "max_steps_per_epoch = 1\nsource_ckpt = \"" << o << "/source.ckpt\"\n"
                                << "target_ckpt = \"" << o << "/target.ckpt\"\n"
                                << "generator_ckpt = \"" << o << "/generator_init.ckpt\"\n"
                                << "[stage.finetune]\ndata = \"" << o << "/pair.manifest\"\nepochs = 1\n"
                                << "max_steps_per_epoch = 1\nsource_ckpt = \"" << o << "/source.ckpt\"\n"
                                << "target_ckpt = \"" << o << "/target.ckpt\"\n"
                                << "generator_ckpt = \"" << o << "/generator.ckpt\"\n"
                                << "[stage.evaluate]\ndata = \"" << o << "/pair.manifest\"\n"
                                << "source_ckpt = \"" << o << "/source.ckpt\"\n"
                                << "target_ckpt = \"" << o << "/target.ckpt\"\n"
                                << "generator_ckpt = \"" << o << "/generator.ckpt\"\n"
                                << "[stage.export-images]\ndata = \"" << o << "/pair.manifest\"\ngrid_images = 4\n"
                                << "generator_ckpt = \"" << o << "/generator.ckpt\"\n"
                                << "[stage.export-heatmap]\ndata = \"" << o << "/pair.manifest\"\nzoom = 2\n"
                                << "source_ckpt = \"" << o << "/source.ckpt\"\n"
                                << "target_ckpt = \"" << o << "/target.ckpt\"\n"
                                << "generator_ckpt = \"" << o << "/generator.ckpt\"\n";
  const std::string cfg = " -c " + (dir / "c.toml").string() + " --out " + o;
  for (const char* stage : {"make-synthetic", "train-source", "adapt-target", "init-generator", "train-sfit",
                            "finetune", "evaluate", "export-images", "export-heatmap"}) {
    const auto r = run(std::string(stage) + cfg, dir);
    ASSERT_EQ(r.code, 0) << stage << ": " << r.err;
    EXPECT_TRUE(fs::exists(out / "effective_config.toml"));
  }
  for (const char* file : {"pair.manifest", "pair_preview.png", "source.ckpt", "target.ckpt", "generator_init.ckpt",
                           "generator.ckpt", "target_finetuned.ckpt", "report.json", "per_class.csv",
                           "translation.png", "heatmap_normalized.png", "heatmap_raw.png", "train-sfit.csv",
                           "train-sfit.json", "init-generator.json"}) {
    EXPECT_TRUE(fs::exists(out / file)) << file;
  }
  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  EXPECT_EQ(report["count"], 16);
  const auto grid = sfit::eval::read_png(out / "translation.png");
  EXPECT_EQ(grid.width, 4 * 28 + 5 * 2);
  EXPECT_EQ(grid.height, 2 * 28 + 3 * 2);
  EXPECT_EQ(sfit::eval::read_png(out / "heatmap_raw.png").width, 50 * 2);

  // Re-running a stage reproduces its checkpoint exactly.
  const auto first = sfit::models::load_checkpoint(out / "source.ckpt");
  const auto r = run("train-source" + cfg + "/again", dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(sfit::models::load_checkpoint(out / "again" / "source.ckpt"), first);
}
