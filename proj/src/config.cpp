#include "locodec/config.hpp"

#include "locodec/error.hpp"
#include "locodec/io.hpp"

#include <algorithm>
#include <cstdio>
#include <thread>

namespace locodec {

namespace {

constexpr std::string_view kKinds[] = {"single", "transfer", "region", "band", "offset"};

bool parse_flag(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ArgumentError("expected a boolean, got '" + std::string(v) + "'");
}

std::size_t parse_count(std::string_view v) {
  const long long n = parse_int(v);
  if (n < 0) throw ArgumentError("expected a non-negative integer, got '" + std::string(v) + "'");
  return static_cast<std::size_t>(n);
}

std::vector<std::string> parse_list(std::string_view v) {
  std::vector<std::string> out;
  for (auto part : split_csv_row(v)) {
    part = trim(part);
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

std::string join(const std::vector<std::string>& v, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

std::string_view format_name(SessionFormat f) {
  return f == SessionFormat::canonical_bin ? "canonical_bin" : "canonical_csv";
}

bool set_train(TrainConfig& c, std::string_view key, std::string_view v) {
  if (key == "optimizer")
    c.optimizer = parse_optimizer(v);
  else if (key == "learning_rate")
    c.learning_rate = parse_double(v);
  else if (key == "beta1")
    c.beta1 = parse_double(v);
  else if (key == "beta2")
    c.beta2 = parse_double(v);
  else if (key == "epsilon")
    c.epsilon = parse_double(v);
  else if (key == "batch_size")
    c.batch_size = parse_count(v);
  else if (key == "max_epochs")
    c.max_epochs = parse_count(v);
  else if (key == "patience")
    c.patience = parse_count(v);
  else if (key == "standardize_target")
    c.standardize_target = parse_flag(v);
  else
    return false;
  return true;
}

std::string train_lines(const char* prefix, const TrainConfig& c, bool affine) {
  std::string out;
  auto kv = [&](const char* k, const std::string& v) { out += std::string(prefix) + k + "=" + v + "\n"; };
  kv("optimizer", std::string(to_string(c.optimizer)));
  kv("learning_rate", format_double(c.learning_rate));
  kv("beta1", format_double(c.beta1));
  kv("beta2", format_double(c.beta2));
  kv("epsilon", format_double(c.epsilon));
  kv("batch_size", std::to_string(c.batch_size));
  kv("max_epochs", std::to_string(c.max_epochs));
  kv("patience", std::to_string(c.patience));
  if (affine) kv("standardize_target", c.standardize_target ? "true" : "false");
  return out;
}

bool set_synthetic(FleetSpec& f, std::string_view key, std::string_view v) {
  if (key == "rats")
    f.rats = parse_count(v);
  else if (key == "sessions_per_rat")
    f.sessions_per_rat = parse_count(v);
  else if (key == "samples")
    f.samples = parse_count(v);
  else if (key == "channels")
    f.channels = parse_count(v);
  else if (key == "law")
    f.law = parse_latent_law(v);
  else if (key == "noise")
    f.noise = parse_double(v);
  else if (key == "linear_weight")
    f.linear_weight = parse_double(v);
  else if (key == "modulation")
    f.modulation = parse_double(v);
  else if (key == "permute_channels")
    f.permute_channels = parse_flag(v);
  else if (key == "rescale_channels")
    f.rescale_channels = parse_flag(v);
  else if (key == "session_gain_jitter")
    f.session_gain_jitter = parse_double(v);
  else if (key == "lead_ms")
    f.lead_ms = parse_double(v);
  else if (key == "signal_regions")
    f.signal_regions = RegionSet::parse(v).regions;
  else if (key == "activity_spread")
    f.activity_spread = parse_double(v);
  else if (key == "seed")
    f.seed = parse_u64(v);
  else
    return false;
  return true;
}

}  // namespace

std::string_view to_string(ExperimentKind k) { return kKinds[static_cast<int>(k)]; }

ExperimentKind parse_experiment_kind(std::string_view s) {
  for (int i = 0; i < 5; ++i)
    if (kKinds[i] == s) return static_cast<ExperimentKind>(i);
  throw ArgumentError("unknown experiment '" + std::string(s) + "'");
}

void RunConfig::set(std::string_view key, std::string_view value) {
  auto starts = [&](std::string_view p) { return key.substr(0, p.size()) == p; };
  const std::string k(key);
  bool known = true;
  try {
    if (key == "data.source") {
      if (value != "files" && value != "synthetic")
        throw ArgumentError("expected files or synthetic, got '" + std::string(value) + "'");
      data_source = std::string(value);
    } else if (key == "data.paths") {
      data_paths = parse_list(value);
    } else if (key == "data.format") {
      data_format = parse_session_format(value);
    } else if (key == "data.gate") {
      apply_gate = parse_flag(value);
    } else if (key == "data.iqr_threshold") {
      if (value == "auto" || value.empty())
        iqr_threshold.reset();
      else
        iqr_threshold = parse_double(value);
    } else if (starts("data.synthetic.")) {
      known = set_synthetic(synthetic, key.substr(15), value);
    } else if (starts("decoder.")) {
      const auto sub = key.substr(8);
      known = sub != "input_channels" && sub != "seed" && set_spec_field(decoder, sub, value);
    } else if (starts("train.")) {
      known = set_train(train, key.substr(6), value);
    } else if (starts("finetune.")) {
      known = key != "finetune.standardize_target" && set_train(finetune, key.substr(9), value);
    } else if (key == "plan.experiment") {
      experiment = parse_experiment_kind(value);
    } else if (key == "plan.strategy") {
      strategy = parse_strategy(value);
    } else if (key == "plan.regions") {
      regions = RegionSet::parse(value);
    } else if (key == "plan.band") {
      band = parse_band(value);
    } else if (key == "plan.offset_ms") {
      offset_ms = static_cast<int>(parse_int(value));
    } else if (key == "plan.offsets") {
      offsets.clear();
      for (const auto& s : parse_list(value)) offsets.push_back(static_cast<int>(parse_int(s)));
      if (offsets.empty()) throw ArgumentError("empty offset list");
    } else if (key == "plan.linear_closed_form") {
      linear_closed_form = parse_flag(value);
    } else if (key == "plan.zeroshot_refit_normalizer") {
      zeroshot_refit_normalizer = parse_flag(value);
    } else if (key == "plan.finetune_refresh_normalizer") {
      finetune_refresh_normalizer = parse_flag(value);
    } else if (key == "plan.bootstrap_samples") {
      bootstrap_samples = parse_count(value);
    } else if (key == "output.dir") {
      out_dir = std::string(value);
    } else if (key == "output.record_wall_time") {
      record_wall_time = parse_flag(value);
    } else if (key == "seed") {
      seed = parse_u64(value);
    } else if (key == "jobs") {
      jobs = parse_count(value);
    } else {
      known = false;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config key '" + k + "': " + e.what());
  }
  if (!known) throw ConfigError("unknown config key '" + k + "'");
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::vector<std::pair<std::string, std::string>> lines;
  try {
    lines = parse_dotted_lines(text);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const auto& [k, v] : lines) c.set(k, v);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  try {
    return parse(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string RunConfig::resolved() const {
  std::string out;
  auto kv = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  kv("seed", std::to_string(seed));
  kv("jobs", std::to_string(jobs));
  kv("data.source", data_source);
  kv("data.paths", join(data_paths));
  kv("data.format", std::string(format_name(data_format)));
  kv("data.gate", apply_gate ? "true" : "false");
  kv("data.iqr_threshold", iqr_threshold ? format_double(*iqr_threshold) : "auto");
  const FleetSpec& f = synthetic;
  kv("data.synthetic.rats", std::to_string(f.rats));
  kv("data.synthetic.sessions_per_rat", std::to_string(f.sessions_per_rat));
  kv("data.synthetic.samples", std::to_string(f.samples));
  kv("data.synthetic.channels", std::to_string(f.channels));
  kv("data.synthetic.law", std::string(to_string(f.law)));
  kv("data.synthetic.noise", format_double(f.noise));
  kv("data.synthetic.linear_weight", format_double(f.linear_weight));
  kv("data.synthetic.modulation", format_double(f.modulation));
  kv("data.synthetic.permute_channels", f.permute_channels ? "true" : "false");
  kv("data.synthetic.rescale_channels", f.rescale_channels ? "true" : "false");
  kv("data.synthetic.session_gain_jitter", format_double(f.session_gain_jitter));
  kv("data.synthetic.lead_ms", format_double(f.lead_ms));
  kv("data.synthetic.signal_regions", RegionSet{f.signal_regions}.label());
  kv("data.synthetic.activity_spread", format_double(f.activity_spread));
  kv("data.synthetic.seed", std::to_string(f.seed));
  for (const auto& [k, v] : parse_dotted_lines(decoder.serialize()))
    if (k != "input_channels" && k != "seed") kv("decoder." + k, v);
  out += train_lines("train.", train, true);
  out += train_lines("finetune.", finetune, false);
  kv("plan.experiment", std::string(to_string(experiment)));
  kv("plan.strategy", std::string(to_string(strategy)));
  kv("plan.regions", regions.label());
  kv("plan.band", std::string(to_string(band)));
  kv("plan.offset_ms", std::to_string(offset_ms));
  std::vector<std::string> offs;
  for (int o : offsets) offs.push_back(std::to_string(o));
  kv("plan.offsets", join(offs));
  kv("plan.linear_closed_form", linear_closed_form ? "true" : "false");
  kv("plan.zeroshot_refit_normalizer", zeroshot_refit_normalizer ? "true" : "false");
  kv("plan.finetune_refresh_normalizer", finetune_refresh_normalizer ? "true" : "false");
  kv("plan.bootstrap_samples", std::to_string(bootstrap_samples));
  kv("output.dir", out_dir);
  kv("output.record_wall_time", record_wall_time ? "true" : "false");
  return out;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : parse_dotted_lines(resolved())) {
    if (k == "output.dir" || k == "jobs") continue;
    for (unsigned char c : k + "=" + v + "\n") {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentPlan RunConfig::plan() const {
  ExperimentPlan p;
  p.strategy = strategy;
  p.decoder = decoder;
  p.train = train;
  p.finetune = finetune;
  p.finetune.freeze_body = true;
  p.regions = regions;
  p.band = band;
  p.offset_ms = offset_ms;
  p.linear_closed_form = linear_closed_form;
  p.zeroshot_refit_normalizer = zeroshot_refit_normalizer;
  p.finetune_refresh_normalizer = finetune_refresh_normalizer;
  p.record_wall_time = record_wall_time;
  return p;
}

std::size_t RunConfig::worker_count() const {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace locodec
