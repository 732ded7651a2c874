#pragma once

// Run configuration: `dotted.key = value` text covering data, decoder,
// training, experiment plan and output settings.

#include "locodec/protocols.hpp"
#include "locodec/session.hpp"
#include "locodec/synthetic.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace locodec {

enum class ExperimentKind { single, transfer, region, band, offset };
std::string_view to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(std::string_view s);

struct RunConfig {
  // data.*
  std::string data_source = "files";  // "files" or "synthetic"
  std::vector<std::string> data_paths;  // files or directories
  SessionFormat data_format = SessionFormat::canonical_csv;
  bool apply_gate = false;
  std::optional<double> iqr_threshold;
  FleetSpec synthetic;

  DecoderSpec decoder;
  TrainConfig train;
  TrainConfig finetune{.max_epochs = 30, .freeze_body = true};

  // plan.*
  ExperimentKind experiment = ExperimentKind::single;
  Strategy strategy = Strategy::single_80;
  RegionSet regions;
  BandName band = BandName::fullband;
  int offset_ms = 0;
  std::vector<int> offsets = kDefaultOffsetsMs;
  bool linear_closed_form = true;
  bool zeroshot_refit_normalizer = false;
  bool finetune_refresh_normalizer = true;
  std::size_t bootstrap_samples = 2000;

  // output.* and top level
  std::string out_dir = "out";
  bool record_wall_time = true;
  std::uint64_t seed = 0;
  std::size_t jobs = 0;  // 0: one per hardware thread

  // Throws ConfigError for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  // Every key with its effective value, one per line, fixed order.
  std::string resolved() const;
  // 16 hex digits of FNV-1a over resolved(), minus output.dir and jobs.
  std::string hash() const;

  ExperimentPlan plan() const;
  std::size_t worker_count() const;
};

}  // namespace locodec
