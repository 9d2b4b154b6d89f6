#include "sfit/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>
#include <toml++/toml.hpp>

namespace sfit::pipelines {
namespace {

constexpr std::array kStages{
    std::pair{Stage::MakeSynthetic, "make-synthetic"}, std::pair{Stage::TrainSource, "train-source"},
    std::pair{Stage::AdaptTarget, "adapt-target"},     std::pair{Stage::InitGenerator, "init-generator"},
    std::pair{Stage::TrainSfit, "train-sfit"},         std::pair{Stage::Finetune, "finetune"},
    std::pair{Stage::Evaluate, "evaluate"},            std::pair{Stage::ExportImages, "export-images"},
    std::pair{Stage::ExportHeatmap, "export-heatmap"},
};

/// Calls f(key, member) for every serialized field, in file order.
template <class Config, class F>
void for_each_field(Config& c, F&& f) {
  f("epochs", c.epochs);
  f("batch_size", c.batch_size);
  f("base_lr", c.base_lr);
  f("seed", c.seed);
  f("max_steps_per_epoch", c.max_steps_per_epoch);
  f("w_kd", c.weights.kd);
  f("w_rp", c.weights.rp);
  f("w_style", c.weights.style);
  f("w_batch", c.weights.batch);
  f("w_pixel", c.weights.pixel);
  f("w_bn", c.weights.bn);
  f("kd_temperature", c.kd_temperature);
  f("id_weight", c.id_weight);
  f("content_weight", c.content_weight);
  f("diversity_weight", c.diversity_weight);
  f("pseudo_weight", c.pseudo_weight);
  f("method", c.method);
  f("mmd_weight", c.mmd_weight);
  f("adapt_params", c.adapt_params);
  f("data", c.data);
  f("source_ckpt", c.source_ckpt);
  f("target_ckpt", c.target_ckpt);
  f("generator_ckpt", c.generator_ckpt);
  f("out", c.out);
  f("mnist_dir", c.mnist_dir);
  f("source_transform", c.source_transform);
  f("target_transform", c.target_transform);
  f("transform_amount", c.transform_amount);
  f("split_seed", c.split_seed);
  f("train_per_domain", c.train_per_domain);
  f("test_per_domain", c.test_per_domain);
  f("grid_images", c.grid_images);
  f("heatmap_index", c.heatmap_index);
  f("zoom", c.zoom);
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  std::string s(buf.data(), end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";  // keep it a TOML float
  return s;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

void assign(const std::string& where, const toml::node& node, int& dst) {
  auto v = node.value<std::int64_t>();
  if (!node.is_integer() || !v) throw Error(Errc::InvalidConfig, where + " must be an integer");
  dst = static_cast<int>(*v);
}

void assign(const std::string& where, const toml::node& node, std::uint64_t& dst) {
  auto v = node.value<std::int64_t>();
  if (!node.is_integer() || !v || *v < 0) throw Error(Errc::InvalidConfig, where + " must be a non-negative integer");
  dst = static_cast<std::uint64_t>(*v);
}

void assign(const std::string& where, const toml::node& node, double& dst) {
  if (!node.is_number()) throw Error(Errc::InvalidConfig, where + " must be a number");
  dst = *node.value<double>();
}

void assign(const std::string& where, const toml::node& node, std::string& dst) {
  if (!node.is_string()) throw Error(Errc::InvalidConfig, where + " must be a string");
  dst = *node.value<std::string>();
}

void apply_table(const toml::table& table, RunConfig& cfg, const std::string& prefix) {
  for (const auto& [key, node] : table) {
    const std::string name(key.str());
    bool found = false;
    for_each_field(cfg, [&](const char* field, auto& member) {
      if (name == field) {
        assign(prefix + "." + name, node, member);
        found = true;
      }
    });
    if (!found) throw Error(Errc::InvalidConfig, "unknown key '" + prefix + "." + name + "'");
  }
}

}  // namespace

std::string stage_name(Stage s) {
  for (auto [stage, name] : kStages) {
    if (stage == s) return name;
  }
  return "?";
}

Stage stage_from_name(const std::string& name) {
  for (auto [stage, n] : kStages) {
    if (name == n) return stage;
  }
  throw Error(Errc::InvalidConfig, "unknown stage '" + name + "'");
}

RunConfig default_config(Stage stage) {
  RunConfig cfg;
  cfg.stage = stage;
  switch (stage) {
    case Stage::TrainSource:
    case Stage::AdaptTarget:
      cfg.epochs = 5;
      break;
    case Stage::InitGenerator:
    case Stage::Finetune:
      cfg.epochs = 2;
      break;
    case Stage::TrainSfit:
      cfg.epochs = 10;
      break;
    default:
      cfg.epochs = 0;
      break;
  }
  return cfg;
}

RunConfig parse_config(const std::string& toml_text, Stage stage, const std::string& origin) {
  toml::table root;
  try {
    root = toml::parse(toml_text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << origin << ":" << e.source().begin.line << ": " << e.description();
    throw Error(Errc::InvalidConfig, msg.str());
  }
  RunConfig cfg = default_config(stage);
  for (const auto& [key, node] : root) {
    if (key.str() != "stage" || !node.is_table()) {
      throw Error(Errc::InvalidConfig, "unknown top-level key '" + std::string(key.str()) + "' in " + origin);
    }
  }
  if (const auto* stages = root["stage"].as_table()) {
    for (const auto& [key, node] : *stages) {
      const std::string name(key.str());
      const Stage s = stage_from_name(name);
      const auto* table = node.as_table();
      if (!table) throw Error(Errc::InvalidConfig, "stage." + name + " must be a table");
      // Every table is checked so that typos surface whichever stage runs.
      RunConfig scratch = default_config(s);
      apply_table(*table, scratch, "stage." + name);
      if (s == stage) cfg = scratch;
    }
  }
  cfg.stage = stage;
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, Stage stage) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), stage, path.string());
}

std::string to_toml(const RunConfig& cfg) {
  std::ostringstream out;
  out << "[stage." << stage_name(cfg.stage) << "]\n";
  auto& c = const_cast<RunConfig&>(cfg);
  for_each_field(c, [&](const char* field, auto& member) {
    using M = std::decay_t<decltype(member)>;
    out << field << " = ";
    if constexpr (std::is_same_v<M, std::string>) {
      out << quote(member);
    } else if constexpr (std::is_same_v<M, double>) {
      out << format_double(member);
    } else {
      out << member;
    }
    out << "\n";
  });
  return out.str();
}

void validate(const RunConfig& cfg) {
  if (cfg.epochs < 0) throw Error(Errc::InvalidConfig, "epochs must be >= 0");
  if (cfg.batch_size <= 0) throw Error(Errc::InvalidConfig, "batch_size must be positive");
  if (!(cfg.base_lr > 0)) throw Error(Errc::InvalidConfig, "base_lr must be positive");
  if (cfg.max_steps_per_epoch < 0) throw Error(Errc::InvalidConfig, "max_steps_per_epoch must be >= 0");
  if (!(cfg.kd_temperature > 0)) throw Error(Errc::InvalidConfig, "kd_temperature must be positive");
  const auto& w = cfg.weights;
  for (double v : {w.kd, w.rp, w.style, w.batch, w.pixel, w.bn, cfg.id_weight, cfg.content_weight,
                   cfg.diversity_weight, cfg.pseudo_weight, cfg.mmd_weight}) {
    if (v < 0) throw Error(Errc::InvalidConfig, "loss weights must be non-negative");
  }
  if (cfg.method != "im" && cfg.method != "mmd") {
    throw Error(Errc::InvalidConfig, "method must be \"im\" or \"mmd\", got \"" + cfg.method + "\"");
  }
  if (cfg.adapt_params != "features" && cfg.adapt_params != "bn-affine") {
    throw Error(Errc::InvalidConfig,
                "adapt_params must be \"features\" or \"bn-affine\", got \"" + cfg.adapt_params + "\"");
  }
  if (cfg.zoom <= 0) throw Error(Errc::InvalidConfig, "zoom must be positive");
}

}  // namespace sfit::pipelines
