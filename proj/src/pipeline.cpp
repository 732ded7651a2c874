#include "locodec/pipeline.hpp"

#include "locodec/dsp.hpp"
#include "locodec/error.hpp"
#include "locodec/io.hpp"
#include "locodec/report.hpp"
#include "locodec/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace locodec {

namespace fs = std::filesystem;

namespace {

void write_csv(const fs::path& p, const std::string& body, const std::string& stamp) {
  write_file_atomic(p, "# " + stamp + "\n" + body);
}

void write_resolved(const RunConfig& cfg, const fs::path& dir) {
  write_file_atomic(dir / "config.resolved", "# " + output_stamp(cfg) + "\n" + cfg.resolved());
}

std::string stamped_jsonl(const RunConfig& cfg, const std::string& body) {
  nlohmann::json head = {{"config_hash", cfg.hash()}, {"seed", cfg.seed}};
  return head.dump() + "\n" + body;
}

std::string pairs_csv(const std::vector<PairEvaluation>& pairs) {
  std::string out = "source_id,target_id,r,r2,n_test_windows\n";
  for (const auto& p : pairs)
    out += p.source_id + "," + p.target_id + "," + format_double(p.r) + "," + format_double(p.r2) + "," +
           std::to_string(p.n_test_windows) + "\n";
  return out;
}

std::string hygiene_text(const HygieneReport& h) {
  std::string out = "checked_records=" + std::to_string(h.checked_pairs) + "\n";
  out += "violations=" + std::to_string(h.violations.size()) + "\n";
  for (const auto& v : h.violations) out += v + "\n";
  return out;
}

std::string energy_csv(const BandAnalysis& a) {
  std::string out = "session_id,band,energy_fraction\n";
  for (const auto& e : a.energies) out += e.session_id + "," + e.band + "," + format_double(e.energy_fraction) + "\n";
  return out;
}

std::string fits_csv(const OffsetAnalysis& a) {
  std::string out = "model,direction,c0,c1,c2\n";
  for (const auto& f : a.fits)
    out += f.model + "," + f.direction + "," + format_double(f.coefficients[0]) + "," +
           format_double(f.coefficients[1]) + "," + format_double(f.coefficients[2]) + "\n";
  return out;
}

std::string model_stem(const Session& s, const ExperimentPlan& p) { return s.id + "." + p.model_name(); }

}  // namespace

std::string output_stamp(const RunConfig& cfg) {
  return "locodec config_hash=" + cfg.hash() + " seed=" + std::to_string(cfg.seed);
}

SessionFormat format_for_path(const fs::path& p, SessionFormat fallback) {
  const auto ext = p.extension().string();
  if (ext == ".lcs") return SessionFormat::canonical_bin;
  if (ext == ".csv") return SessionFormat::canonical_csv;
  return fallback;
}

std::string session_extension(SessionFormat f) { return f == SessionFormat::canonical_bin ? ".lcs" : ".csv"; }

std::vector<fs::path> expand_session_paths(const std::vector<std::string>& paths) {
  std::vector<fs::path> out;
  for (const auto& p : paths) {
    if (!fs::is_directory(p)) {
      out.emplace_back(p);
      continue;
    }
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(p)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".csv" || ext == ".lcs")) found.push_back(e.path());
    }
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

Session to_canonical_rate(Session s) {
  if (std::abs(s.sample_rate_hz - 100.0) < 1e-9) return s;
  Matrix stacked(s.channels() + 1, s.samples());
  std::copy(s.eeg.data.begin(), s.eeg.data.end(), stacked.data.begin());
  std::copy(s.speed.begin(), s.speed.end(), stacked.row(s.channels()).begin());
  const Matrix low = preprocess_raw(stacked, s.sample_rate_hz);
  s.eeg = Matrix(s.channels(), low.cols);
  std::copy(low.data.begin(), low.data.begin() + static_cast<std::ptrdiff_t>(s.eeg.data.size()), s.eeg.data.begin());
  const auto sp = low.row(low.rows - 1);
  s.speed.assign(sp.begin(), sp.end());
  s.sample_rate_hz = 100.0;
  return s;
}

std::vector<Session> load_sessions(const RunConfig& cfg) {
  std::vector<Session> sessions;
  if (cfg.data_source == "synthetic") {
    sessions = generate_synthetic_fleet(cfg.synthetic);
  } else {
    if (cfg.data_paths.empty()) throw ConfigError("data.paths is empty");
    for (const auto& p : expand_session_paths(cfg.data_paths))
      sessions.push_back(to_canonical_rate(ingest_session(p, format_for_path(p, cfg.data_format))));
    if (sessions.empty()) throw FormatError("no session files found under data.paths");
  }
  std::set<std::string> ids;
  for (const auto& s : sessions)
    if (!ids.insert(s.id).second) throw IntegrityError("duplicate session id " + s.id);
  if (!cfg.apply_gate) return sessions;
  const GateResult g = apply_inclusion_gate(sessions, cfg.iqr_threshold);
  std::vector<Session> kept;
  for (std::size_t i : g.included) kept.push_back(std::move(sessions[i]));
  return kept;
}

// ---------------------------------------------------------------------------

IngestSummary cmd_ingest(const RunConfig& cfg, const std::vector<std::string>& inputs, SessionFormat input_format,
                         SessionFormat output_format) {
  IngestSummary sum;
  std::vector<Session> sessions;
  for (const auto& p : expand_session_paths(inputs)) {
    try {
      Session s = to_canonical_rate(ingest_session(p, format_for_path(p, input_format)));
      if (std::find(sum.session_ids.begin(), sum.session_ids.end(), s.id) != sum.session_ids.end())
        throw IntegrityError("duplicate session id " + s.id);
      sum.session_ids.push_back(s.id);
      sum.sources.push_back(p);
      sessions.push_back(std::move(s));
    } catch (const Error& e) {
      sum.failures.push_back(p.string() + ": " + e.what());
    }
  }
  const fs::path out = cfg.out_dir;
  if (!sessions.empty()) {
    sum.gate = apply_inclusion_gate(sessions, cfg.iqr_threshold);
    for (std::size_t i : sum.gate.included) {
      const fs::path dst = out / "sessions" / (sessions[i].id + session_extension(output_format));
      write_session(sessions[i], dst, output_format);
      sum.written.push_back(dst);
    }
  }
  write_csv(out / "gate_report.csv", gate_report_csv(sum, ""), output_stamp(cfg));
  write_resolved(cfg, out);
  return sum;
}

std::string gate_report_csv(const IngestSummary& s, const std::string& stamp) {
  std::string out = stamp.empty() ? "" : "# " + stamp + "\n";
  out += "session_id,source,iqr,threshold,verdict\n";
  std::set<std::size_t> included(s.gate.included.begin(), s.gate.included.end());
  for (std::size_t i = 0; i < s.session_ids.size(); ++i)
    out += s.session_ids[i] + "," + s.sources[i].string() + "," + format_double(s.gate.iqr[i]) + "," +
           format_double(s.gate.threshold) + "," + (included.count(i) ? "included" : "excluded") + "\n";
  return out;
}

std::vector<fs::path> cmd_synth(const RunConfig& cfg, SessionFormat format) {
  std::vector<fs::path> out;
  for (const auto& s : generate_synthetic_fleet(cfg.synthetic)) {
    const fs::path dst = fs::path(cfg.out_dir) / "sessions" / (s.id + session_extension(format));
    write_session(s, dst, format);
    out.push_back(dst);
  }
  write_resolved(cfg, cfg.out_dir);
  return out;
}

std::vector<fs::path> cmd_train(const RunConfig& cfg, const std::vector<std::string>& only) {
  const ExperimentPlan plan = cfg.plan();
  if (is_transfer(plan.strategy))
    throw PlanError("train: strategy " + std::string(to_string(plan.strategy)) + " is evaluated by experiment");
  std::vector<Session> sessions = load_sessions(cfg);
  if (!only.empty()) {
    for (const auto& id : only)
      if (std::none_of(sessions.begin(), sessions.end(), [&](const Session& s) { return s.id == id; }))
        throw ArgumentError("train: no session with id " + id);
    std::erase_if(sessions, [&](const Session& s) { return std::find(only.begin(), only.end(), s.id) == only.end(); });
  }
  std::vector<std::function<SessionRun()>> jobs;
  for (const auto& s : sessions)
    jobs.push_back([&]() { return run_single_session_detailed(s, plan, cfg.seed); });
  auto runs = run_parallel(jobs, cfg.worker_count());

  const fs::path dir = fs::path(cfg.out_dir) / "models";
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const fs::path model = dir / (model_stem(sessions[i], plan) + ".lcm");
    runs[i].decoder.save(model);
    write_file_atomic(dir / (model_stem(sessions[i], plan) + ".train.jsonl"),
                      stamped_jsonl(cfg, runs[i].report.to_jsonl()));
    written.push_back(model);
  }
  ResultsTable t;
  for (auto& r : runs) t.rows.push_back(r.result);
  write_file_atomic(dir / "train_results.csv", t.to_csv({output_stamp(cfg)}));
  write_resolved(cfg, cfg.out_dir);
  return written;
}

EvalResult cmd_eval(const RunConfig& cfg, const fs::path& model, const fs::path& session) {
  const Decoder d = Decoder::load(model);
  const Session s = to_canonical_rate(ingest_session(session, format_for_path(session, cfg.data_format)));
  ExperimentPlan plan = cfg.plan();
  plan.decoder.family = d.family();
  return evaluate_decoder(d, s, plan, cfg.seed);
}

ResultsTable cmd_experiment(const RunConfig& cfg) {
  const std::vector<Session> sessions = load_sessions(cfg);
  const ExperimentPlan plan = cfg.plan();
  const std::size_t workers = cfg.worker_count();
  const fs::path out = cfg.out_dir;
  const std::string stamp = output_stamp(cfg);
  ResultsTable table;

  switch (cfg.experiment) {
    case ExperimentKind::single: {
      if (is_transfer(plan.strategy))
        throw PlanError("experiment single: use plan.experiment=transfer for " + std::string(to_string(plan.strategy)));
      std::vector<std::function<SessionRun()>> jobs;
      for (const auto& s : sessions) jobs.push_back([&]() { return run_single_session_detailed(s, plan, cfg.seed); });
      auto runs = run_parallel(jobs, workers);
      std::vector<UsageRecord> usage;
      for (std::size_t i = 0; i < runs.size(); ++i) {
        table.rows.push_back(runs[i].result);
        usage.insert(usage.end(), runs[i].usage.begin(), runs[i].usage.end());
        if (!runs[i].report.epochs.empty())
          write_file_atomic(out / "reports" / (model_stem(sessions[i], plan) + ".train.jsonl"),
                            stamped_jsonl(cfg, runs[i].report.to_jsonl()));
      }
      write_file_atomic(out / "hygiene.txt", "# " + stamp + "\n" + hygiene_text(audit_usage(usage)));
      break;
    }
    case ExperimentKind::transfer: {
      const TransferOutcome o = run_transfer_matrix(sessions, plan, cfg.seed, workers);
      table.rows = o.per_target;
      write_csv(out / "transfer_pairs.csv", pairs_csv(o.pairs), stamp);
      write_file_atomic(out / "hygiene.txt", "# " + stamp + "\n" + hygiene_text(audit_usage(o.usage)));
      break;
    }
    case ExperimentKind::region: {
      const RegionAnalysis a = run_region_analysis(sessions, plan, cfg.seed, workers);
      table.rows = a.rows;
      write_csv(out / "region_matrix.csv", region_matrix_csv(a), stamp);
      std::string skipped;
      for (const auto& s : a.skipped) skipped += s + "\n";
      write_file_atomic(out / "region_skipped.txt", "# " + stamp + "\n" + skipped);
      break;
    }
    case ExperimentKind::band: {
      const BandAnalysis a = run_band_analysis(sessions, plan, cfg.seed, workers);
      table.rows = a.rows;
      write_csv(out / "band_summary.csv", band_summary_csv(a), stamp);
      write_csv(out / "band_energy.csv", energy_csv(a), stamp);
      break;
    }
    case ExperimentKind::offset: {
      DecoderSpec speed = plan.decoder;
      speed.family = Family::speed_rnn;
      const OffsetAnalysis a =
          run_offset_analysis(sessions, plan, speed, cfg.offsets, cfg.seed, workers, cfg.bootstrap_samples);
      table.rows = a.rows;
      const double fs_hz = sessions.empty() ? 100.0 : sessions.front().sample_rate_hz;
      write_csv(out / "offset_curve.csv", offset_curve_csv(a), stamp);
      write_csv(out / "offset_fits.csv", fits_csv(a), stamp);
      write_csv(out / "autocorrelation.csv", autocorrelation_csv(a, fs_hz), stamp);
      break;
    }
  }
  write_file_atomic(out / "results.csv", table.to_csv({stamp}));
  write_resolved(cfg, out);
  return table;
}

std::vector<fs::path> cmd_report(const RunConfig& cfg, const fs::path& results,
                                 const std::vector<std::string>& spectra_sessions) {
  const ResultsTable t = ResultsTable::from_csv(read_file(results));
  if (t.rows.empty()) throw FormatError(results.string() + ": results table has no rows");
  const fs::path out = cfg.out_dir;
  const std::string stamp = output_stamp(cfg);
  std::vector<fs::path> written;
  auto emit = [&](const char* name, const std::string& body) {
    write_csv(out / name, body, stamp);
    written.push_back(out / name);
  };
  emit("medians.csv", variant_medians_csv(variant_medians(t)));
  emit("tests.csv", comparison_csv(compare_table(t)));
  const auto curve = offset_curve(t, cfg.bootstrap_samples, cfg.seed);
  if (!curve.empty()) emit("offset_curve.csv", offset_points_csv(curve));
  if (!spectra_sessions.empty()) {
    std::vector<DecileSpectra> per;
    for (const auto& p : expand_session_paths(spectra_sessions))
      per.push_back(speed_decile_spectra(to_canonical_rate(ingest_session(p, format_for_path(p, cfg.data_format)))));
    emit("spectra.csv", decile_spectra_csv(aggregate_decile_spectra(per)));
  }
  write_resolved(cfg, out);
  return written;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const IntegrityError*>(&e) ||
      dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const LoadError*>(&e) ||
      dynamic_cast<const UnsupportedRateError*>(&e))
    return 2;
  return 1;
}

}  // namespace locodec
