#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "selftest.hpp"
#include "sfit/checkpoint.hpp"
#include "sfit/config.hpp"
#include "sfit/eval.hpp"
#include "sfit/pipelines.hpp"

namespace fs = std::filesystem;
using namespace sfit;
using pipelines::RunConfig;
using pipelines::Stage;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> out;
  int verbose = 0;
};

RunConfig effective_config(Stage stage, const Overrides& o) {
  RunConfig cfg = o.config.empty() ? pipelines::default_config(stage) : pipelines::load_config(o.config, stage);
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.out) cfg.out = *o.out;
  pipelines::validate(cfg);
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << text;
}

const std::string& require(const std::string& value, const char* key) {
  if (value.empty()) throw Error(Errc::InvalidConfig, std::string("config key '") + key + "' is required for this stage");
  return value;
}

data::DomainSplits load_splits(const RunConfig& cfg) {
  return data::materialize(data::read_manifest(require(cfg.data, "data")));
}

models::Checkpoint load_ckpt(const std::string& path, const char* key) {
  return models::load_checkpoint(require(path, key));
}

void save_stage(const RunConfig& cfg, const pipelines::StageOutput& result, const std::string& ckpt_name,
                const Overrides& o) {
  const fs::path out(cfg.out);
  models::save_checkpoint(result.checkpoint, out / (ckpt_name + ".ckpt"));
  const auto stem = pipelines::stage_name(cfg.stage);
  result.log.write_csv(out / (stem + ".csv"));
  result.log.write_json(out / (stem + ".json"));
  for (const auto& [key, value] : result.log.summary()) std::cout << stem << ": " << key << " = " << value << "\n";
  if (o.verbose > 0) {
    for (const auto& m : result.log.metrics()) {
      std::cout << "  epoch " << m.epoch << " " << m.name << " = " << m.value << "\n";
    }
  }
  std::cout << "wrote " << (out / (ckpt_name + ".ckpt")).string() << "\n";
}

void run_stage(Stage stage, const Overrides& o) {
  const RunConfig cfg = effective_config(stage, o);
  const fs::path out(cfg.out);
  fs::create_directories(out);
  write_text(out / "effective_config.toml", pipelines::to_toml(cfg));

  switch (stage) {
    case Stage::MakeSynthetic: {
      const auto m = pipelines::synthetic_manifest(cfg);
      const auto splits = data::materialize(m);
      data::write_manifest(m, out / "pair.manifest");
      const auto n = static_cast<std::size_t>(std::min({cfg.grid_images, splits.source_test.count(),
                                                        splits.target_test.count()}));
      eval::export_grid({slice_rows(splits.source_test.images, 0, n), slice_rows(splits.target_test.images, 0, n)},
                        out / "pair_preview.png");
      std::cout << "source train " << splits.source_train.count() << ", target train "
                << splits.target_train.count() << ", test " << splits.source_test.count() << " / "
                << splits.target_test.count() << "\nwrote " << (out / "pair.manifest").string() << "\n";
      break;
    }
    case Stage::TrainSource: {
      const auto splits = load_splits(cfg);
      auto result = pipelines::train_source(cfg, splits.source_train);
      auto model = models::Classifier::from_checkpoint(result.checkpoint);
      result.log.set("source_test_accuracy", pipelines::classifier_accuracy(model, splits.source_test));
      save_stage(cfg, result, "source", o);
      break;
    }
    case Stage::AdaptTarget: {
      const auto splits = load_splits(cfg);
      const auto source = load_ckpt(cfg.source_ckpt, "source_ckpt");
      auto result = cfg.method == "mmd"
                        ? pipelines::adapt_target_mmd(cfg, source, splits.source_train,
                                                      splits.target_train.unlabeled())
                        : pipelines::adapt_target_im(cfg, source, splits.target_train.unlabeled());
      save_stage(cfg, result, "target", o);
      break;
    }
    case Stage::InitGenerator: {
      const auto splits = load_splits(cfg);
      const auto source = load_ckpt(cfg.source_ckpt, "source_ckpt");
      save_stage(cfg, pipelines::init_generator(cfg, source, splits.target_train.unlabeled()), "generator_init", o);
      break;
    }
    case Stage::TrainSfit: {
      const auto splits = load_splits(cfg);
      const auto source = load_ckpt(cfg.source_ckpt, "source_ckpt");
      const auto target = load_ckpt(cfg.target_ckpt, "target_ckpt");
      const auto gen = load_ckpt(cfg.generator_ckpt, "generator_ckpt");
      save_stage(cfg, pipelines::train_sfit(cfg, source, target, gen, splits.target_train.unlabeled()), "generator",
                 o);
      break;
    }
    case Stage::Finetune: {
      const auto splits = load_splits(cfg);
      const auto source = load_ckpt(cfg.source_ckpt, "source_ckpt");
      const auto target = load_ckpt(cfg.target_ckpt, "target_ckpt");
      const auto gen = load_ckpt(cfg.generator_ckpt, "generator_ckpt");
      save_stage(cfg, pipelines::finetune_target(cfg, source, target, gen, splits.target_train.unlabeled()),
                 "target_finetuned", o);
      break;
    }
    case Stage::Evaluate: {
      const auto source = load_ckpt(cfg.source_ckpt, "source_ckpt");
      const auto target = load_ckpt(cfg.target_ckpt, "target_ckpt");
      std::optional<models::Checkpoint> gen;
      if (!cfg.generator_ckpt.empty()) gen = models::load_checkpoint(cfg.generator_ckpt);
      const auto splits = load_splits(cfg);
      const auto report = eval::evaluate_branches(source, target, gen ? &*gen : nullptr, splits.target_test);
      write_text(out / "report.json", report.to_json());
      write_text(out / "per_class.csv", report.to_csv());
      std::cout << "source on target    " << report.acc_source_on_target << "\n"
                << "target on target    " << report.acc_target_on_target << "\n"
                << "source on generated " << report.acc_source_on_generated << "\n";
      if (report.gap_closure) std::cout << "gap closure         " << *report.gap_closure << "\n";
      std::cout << "wrote " << (out / "report.json").string() << "\n";
      break;
    }
    case Stage::ExportImages: {
      const auto gen = models::Generator::from_checkpoint(load_ckpt(cfg.generator_ckpt, "generator_ckpt"));
      const auto splits = load_splits(cfg);
      const auto n = static_cast<std::size_t>(std::min(cfg.grid_images, splits.target_test.count()));
      const auto x = slice_rows(splits.target_test.images, 0, n);
      auto g = gen;
      eval::export_grid({x, g.forward(x, false)}, out / "translation.png");
      std::cout << "wrote " << (out / "translation.png").string() << "\n";
      break;
    }
    case Stage::ExportHeatmap: {
      auto source = models::Classifier::from_checkpoint(load_ckpt(cfg.source_ckpt, "source_ckpt"));
      auto target = models::Classifier::from_checkpoint(load_ckpt(cfg.target_ckpt, "target_ckpt"));
      std::optional<models::Generator> gen;
      if (!cfg.generator_ckpt.empty()) gen = models::Generator::from_checkpoint(models::load_checkpoint(cfg.generator_ckpt));
      const auto splits = load_splits(cfg);
      if (cfg.heatmap_index < 0 || cfg.heatmap_index >= splits.target_test.count()) {
        throw Error(Errc::IndexOutOfRange, "heatmap_index " + std::to_string(cfg.heatmap_index));
      }
      const auto i = static_cast<std::size_t>(cfg.heatmap_index);
      const auto x = slice_rows(splits.target_test.images, i, i + 1);
      const auto ft = target.forward(x, models::Mode::Eval).feature_map;
      const auto fs_ = source.forward(gen ? gen->forward(x, false) : x, models::Mode::Eval).feature_map;
      const Shape single(ft.shape().begin() + 1, ft.shape().end());
      for (bool normalized : {true, false}) {
        const auto path = out / (normalized ? "heatmap_normalized.png" : "heatmap_raw.png");
        const auto h = eval::export_gram_heatmap(ft.reshaped(single), fs_.reshaped(single), normalized, path, cfg.zoom);
        std::cout << "wrote " << path.string() << " (max " << h.max << ")\n";
      }
      break;
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-free image translation for domain adaptation"};
  app.require_subcommand(1);
  Overrides o;

  const std::vector<Stage> stages{Stage::MakeSynthetic, Stage::TrainSource,  Stage::AdaptTarget,
                                  Stage::InitGenerator, Stage::TrainSfit,    Stage::Finetune,
                                  Stage::Evaluate,      Stage::ExportImages, Stage::ExportHeatmap};
  std::vector<std::pair<CLI::App*, Stage>> subs;
  for (Stage s : stages) {
    auto* sub = app.add_subcommand(pipelines::stage_name(s));
    sub->add_option("-c,--config", o.config, "TOML config with [stage.<name>] tables")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "override the stage seed");
    sub->add_option("--epochs", o.epochs, "override the epoch count");
    sub->add_option("--out", o.out, "output directory");
    sub->add_flag("-v,--verbose", o.verbose, "print per-epoch metrics");
    subs.emplace_back(sub, s);
  }
  auto* selftest = app.add_subcommand("selftest", "analytic loss examples and gradient checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (selftest->parsed()) return sfit::tools::run_selftest(std::cout) ? 0 : 1;
    for (auto [sub, stage] : subs) {
      if (sub->parsed()) run_stage(stage, o);
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return e.code() == Errc::InvalidConfig ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
