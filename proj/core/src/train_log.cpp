#include "sfit/train_log.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "sfit/error.hpp"

namespace sfit::pipelines {
namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

void require_finite(const std::string& what, double v) {
  if (!std::isfinite(v)) throw Error(Errc::NonFiniteValue, what + " = " + std::to_string(v));
}

}  // namespace

TrainLog::TrainLog(std::string stage, std::uint64_t seed)
    : stage_(std::move(stage)), seed_(seed), started_(now_iso8601()) {}

void TrainLog::record(long step, const std::string& term, double value) {
  require_finite(stage_ + " step " + std::to_string(step) + " " + term, value);
  if (!records_.empty() && step < records_.back().step) {
    throw Error(Errc::InvalidConfig, "log steps must be monotone");
  }
  records_.push_back({step, term, value});
}

void TrainLog::metric(int epoch, const std::string& name, double value) {
  require_finite(stage_ + " epoch " + std::to_string(epoch) + " " + name, value);
  metrics_.push_back({epoch, name, value});
}

void TrainLog::set(const std::string& key, double value) {
  require_finite(stage_ + " " + key, value);
  summary_[key] = value;
}

void TrainLog::finish() { finished_ = now_iso8601(); }

std::vector<double> TrainLog::series(const std::string& term) const {
  std::vector<double> out;
  for (const auto& r : records_) {
    if (r.term == term) out.push_back(r.value);
  }
  return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "step,term,value\n";
  out << std::setprecision(9);
  for (const auto& r : records_) out << r.step << ',' << r.term << ',' << r.value << '\n';
}

void TrainLog::write_json(const std::filesystem::path& path) const {
  nlohmann::ordered_json j;
  j["stage"] = stage_;
  j["seed"] = seed_;
  j["steps"] = records_.empty() ? 0 : records_.back().step + 1;
  j["summary"] = summary_;
  auto metrics = nlohmann::ordered_json::array();
  for (const auto& m : metrics_) metrics.push_back({{"epoch", m.epoch}, {"name", m.name}, {"value", m.value}});
  j["epoch_metrics"] = metrics;
  j["timestamps"] = {{"started", started_}, {"finished", finished_}};
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace sfit::pipelines
