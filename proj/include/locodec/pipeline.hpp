#pragma once

// Command implementations behind the CLI: ingest, synth, train, eval,
// experiment and report. Every written file carries the config hash and seed.

#include "locodec/config.hpp"
#include "locodec/protocols.hpp"
#include "locodec/session.hpp"

#include <exception>
#include <filesystem>
#include <string>
#include <vector>

namespace locodec {

// "locodec config_hash=<16 hex> seed=<n>"
std::string output_stamp(const RunConfig& cfg);

// Files named directly are kept; directories contribute their .csv and .lcs
// files in name order.
std::vector<std::filesystem::path> expand_session_paths(const std::vector<std::string>& paths);
// .lcs is canonical_bin, .csv canonical_csv, anything else `fallback`.
SessionFormat format_for_path(const std::filesystem::path& p, SessionFormat fallback);
std::string session_extension(SessionFormat f);

// Sessions named by the config (files or a synthetic fleet), gated when
// data.gate is set.
std::vector<Session> load_sessions(const RunConfig& cfg);

// Resamples a non-100 Hz recording (EEG and speed) to 100 Hz.
Session to_canonical_rate(Session s);

struct IngestSummary {
  GateResult gate;
  std::vector<std::string> session_ids;  // parsed sessions, in input order
  std::vector<std::filesystem::path> sources;
  std::vector<std::filesystem::path> written;  // included sessions
  std::vector<std::string> failures;  // "path: message"
};

// Reads every input (one bad file does not stop the others), applies the
// inclusion gate and writes included sessions to <out>/sessions plus
// <out>/gate_report.csv.
IngestSummary cmd_ingest(const RunConfig& cfg, const std::vector<std::string>& inputs, SessionFormat input_format,
                         SessionFormat output_format = SessionFormat::canonical_bin);
std::string gate_report_csv(const IngestSummary& s, const std::string& stamp);

// Writes the configured synthetic fleet to <out>/sessions.
std::vector<std::filesystem::path> cmd_synth(const RunConfig& cfg, SessionFormat format);

// Trains one model per selected session (all when `only` is empty):
// <out>/models/<session>.<model>.lcm and .train.jsonl.
std::vector<std::filesystem::path> cmd_train(const RunConfig& cfg, const std::vector<std::string>& only = {});

EvalResult cmd_eval(const RunConfig& cfg, const std::filesystem::path& model,
                    const std::filesystem::path& session);

// Runs plan.experiment and writes results.csv with its side tables.
ResultsTable cmd_experiment(const RunConfig& cfg);

// Summaries of a results table, plus speed-decile spectra when sessions are
// given.
std::vector<std::filesystem::path> cmd_report(const RunConfig& cfg, const std::filesystem::path& results,
                                              const std::vector<std::string>& spectra_sessions = {});

// 2 for input-side failures (malformed files, bad config), 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace locodec
