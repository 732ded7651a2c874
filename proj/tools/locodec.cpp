#include "locodec/error.hpp"
#include "locodec/io.hpp"
#include "locodec/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

using namespace locodec;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::size_t> jobs;
  std::optional<std::string> seed;
  std::optional<std::string> format;
  std::optional<std::string> iqr_threshold;
  std::optional<int> offset_ms;
  std::optional<std::string> band;
  std::optional<std::string> regions;
  std::optional<std::string> strategy;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "run configuration (dotted key=value lines)");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--jobs", c.jobs, "worker threads (1 = serial)");
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--format", c.format, "session format: canonical_csv or canonical_bin");
  app->add_option("--iqr-threshold", c.iqr_threshold, "inclusion gate threshold (default: 10th percentile)");
  app->add_option("--offset-ms", c.offset_ms, "target offset in ms");
  app->add_option("--band", c.band, "delta, theta, alpha, beta, gamma or fullband");
  app->add_option("--regions", c.regions, "all, or regions joined with '+'");
  app->add_option("--strategy", c.strategy, "evaluation strategy");
  app->add_option("--set", c.sets, "extra config override key=value (repeatable)");
}

// Config file, then --set, then LOCODEC_SEED, then explicit flags.
RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
  }
  if (const char* env = std::getenv("LOCODEC_SEED"); env && *env) cfg.set("seed", env);
  if (c.seed) cfg.set("seed", *c.seed);
  if (!c.out.empty()) cfg.set("output.dir", c.out);
  if (c.jobs) cfg.set("jobs", std::to_string(*c.jobs));
  if (c.format) cfg.set("data.format", *c.format);
  if (c.iqr_threshold) cfg.set("data.iqr_threshold", *c.iqr_threshold);
  if (c.offset_ms) cfg.set("plan.offset_ms", std::to_string(*c.offset_ms));
  if (c.band) cfg.set("plan.band", *c.band);
  if (c.regions) cfg.set("plan.regions", *c.regions);
  if (c.strategy) cfg.set("plan.strategy", *c.strategy);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"locodec: continuous locomotion-speed decoding from EEG"};
  app.require_subcommand(1);

  Common c_ingest, c_synth, c_train, c_eval, c_exp, c_report;
  std::vector<std::string> ingest_inputs, train_only, spectra;
  std::string model, session, results, synth_format = "canonical_bin";

  auto* ingest = app.add_subcommand("ingest", "convert, validate and gate session files");
  add_common(ingest, c_ingest);
  ingest->add_option("inputs", ingest_inputs, "session files or directories")->required();

  auto* synth = app.add_subcommand("synth", "write a synthetic fleet");
  add_common(synth, c_synth);
  synth->add_option("--to", synth_format, "output format");

  auto* train = app.add_subcommand("train", "train one model per session");
  add_common(train, c_train);
  train->add_option("--session", train_only, "restrict to these session ids");

  auto* eval = app.add_subcommand("eval", "score a saved model on a session");
  add_common(eval, c_eval);
  eval->add_option("--model", model, "model file")->required();
  eval->add_option("--session", session, "session file")->required();

  auto* experiment = app.add_subcommand("experiment", "run the configured experiment");
  add_common(experiment, c_exp);

  auto* report = app.add_subcommand("report", "summarize a results table");
  add_common(report, c_report);
  report->add_option("--results", results, "results.csv")->required();
  report->add_option("--spectra", spectra, "sessions for speed-decile spectra");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*ingest) {
      RunConfig cfg = resolve(c_ingest);
      const auto in_format = parse_session_format(c_ingest.format.value_or("canonical_csv"));
      const IngestSummary s = cmd_ingest(cfg, ingest_inputs, in_format);
      std::cout << gate_report_csv(s, output_stamp(cfg));
      for (const auto& f : s.failures) std::cerr << "error: " << f << "\n";
      return s.failures.empty() ? 0 : 2;
    }
    if (*synth) {
      const auto files = cmd_synth(resolve(c_synth), parse_session_format(synth_format));
      for (const auto& f : files) std::cout << f.string() << "\n";
      return 0;
    }
    if (*train) {
      for (const auto& f : cmd_train(resolve(c_train), train_only)) std::cout << f.string() << "\n";
      return 0;
    }
    if (*eval) {
      RunConfig cfg = resolve(c_eval);
      ResultsTable t;
      t.rows.push_back(cmd_eval(cfg, model, session));
      const std::string csv = t.to_csv({output_stamp(cfg)});
      if (!c_eval.out.empty()) write_file_atomic(std::filesystem::path(cfg.out_dir) / "eval.csv", csv);
      std::cout << csv;
      return 0;
    }
    if (*experiment) {
      RunConfig cfg = resolve(c_exp);
      const ResultsTable t = cmd_experiment(cfg);
      std::cout << "wrote " << t.rows.size() << " rows to " << (std::filesystem::path(cfg.out_dir) / "results.csv").string()
                << "\n";
      return 0;
    }
    if (*report) {
      for (const auto& f : cmd_report(resolve(c_report), results, spectra)) std::cout << f.string() << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
