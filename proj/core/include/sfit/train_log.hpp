#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sfit::pipelines {

struct LogRecord {
  long step;
  std::string term;
  double value;
};

struct EpochMetric {
  int epoch;
  std::string name;
  double value;
};

/// Per-step loss terms, per-epoch metrics and a few summary scalars for one
/// stage. Non-finite values are rejected at the point of logging.
class TrainLog {
 public:
  TrainLog() = default;
  TrainLog(std::string stage, std::uint64_t seed);

  void record(long step, const std::string& term, double value);
  void metric(int epoch, const std::string& name, double value);
  void set(const std::string& key, double value);
  void finish();

  const std::vector<LogRecord>& records() const { return records_; }
  const std::vector<EpochMetric>& metrics() const { return metrics_; }
  const std::map<std::string, double>& summary() const { return summary_; }

  /// Values of one term in step order.
  std::vector<double> series(const std::string& term) const;

  /// `step,term,value` lines with a header row.
  void write_csv(const std::filesystem::path& path) const;
  /// Stage, seed, summary, epoch metrics and wall-clock timestamps.
  void write_json(const std::filesystem::path& path) const;

 private:
  std::string stage_;
  std::uint64_t seed_ = 0;
  std::vector<LogRecord> records_;
  std::vector<EpochMetric> metrics_;
  std::map<std::string, double> summary_;
  std::string started_, finished_;
};

}  // namespace sfit::pipelines
