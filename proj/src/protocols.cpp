#include "locodec/protocols.hpp"

#include "locodec/error.hpp"
#include "locodec/io.hpp"
#include "locodec/numeric.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

namespace locodec {

namespace {

constexpr std::string_view kStrategyNames[] = {"single_80",
                                               "single_10",
                                               "zeroshot_cross_session",
                                               "zeroshot_cross_subject",
                                               "finetune_cross_session",
                                               "finetune_cross_subject"};

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<std::size_t> range_indices(IndexRange r) {
  std::vector<std::size_t> v(r.size());
  std::iota(v.begin(), v.end(), r.begin);
  return v;
}

InputSource source_of(const DecoderSpec& s) {
  return s.family == Family::speed_rnn ? InputSource::speed : InputSource::eeg;
}

Session select_regions(const Session& s, const RegionSet& regions) {
  if (regions.all()) return s;
  const auto idx = regions.channels(s);
  if (idx.empty())
    throw PlanError("session " + s.id + " has no channels in region set " + regions.label());
  return s.select_channels(idx);
}

WindowSet checked_windows(const Session& s, const Normalizer& n, IndexRange r, int offset_ms, InputSource src,
                          const char* what) {
  WindowSet ws = make_window_set(s, n, r, offset_ms, TargetBounds::segment, src);
  if (ws.size() == 0)
    throw SplitError("session " + s.id + ": no " + std::string(what) + " windows at offset " +
                     std::to_string(offset_ms) + " ms");
  if (std::string_view(what) == "test") {
    const auto y = ws.targets();
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); }))
      throw DegenerateDataError("session " + s.id + ": test speed is constant, correlation is undefined");
  }
  return ws;
}

Matrix flat_rows(const WindowSet& ws) {
  const ad::Tensor x = ws.all();
  Matrix m(ws.size(), x.size() / std::max<std::size_t>(ws.size(), 1));
  std::copy(x.values().begin(), x.values().end(), m.data.begin());
  return m;
}

Decoder fit_decoder(DecoderSpec spec, const WindowSet& tr, const WindowSet& va, TrainConfig cfg,
                    bool closed_form, TrainReport* report) {
  Decoder d(spec);
  switch (spec.family) {
    case Family::random_forest: {
      const auto y = tr.targets();
      d.set_forest(Forest::fit(flat_rows(tr), y, spec.forest, spec.seed));
      return d;
    }
    case Family::linear:
      if (closed_form) {
        d.standardize_targets_from(tr);
        fit_linear_closed_form(d, tr);
        return d;
      }
      break;
    default:
      break;
  }
  cfg.seed = splitmix64(spec.seed);
  TrainResult r = train(d, tr, va, cfg);
  if (report) *report = r.report;
  return std::move(r.decoder);
}

UsageRecord usage(const std::string& session, const char* role, const std::string& job,
                  std::vector<std::size_t> idx) {
  return {session, role, job, std::move(idx)};
}

CellSummary summarize(std::string label, const std::vector<EvalResult>& rows) {
  CellSummary c;
  c.label = std::move(label);
  std::vector<double> r, r2;
  for (const auto& e : rows) {
    r.push_back(e.r);
    r2.push_back(e.r2);
  }
  c.n_sessions = rows.size();
  if (!rows.empty()) {
    c.median_r = median(r);
    c.median_r2 = median(r2);
  }
  return c;
}

}  // namespace

std::string_view to_string(Strategy s) { return kStrategyNames[static_cast<int>(s)]; }

Strategy parse_strategy(std::string_view s) {
  for (int i = 0; i < 6; ++i)
    if (kStrategyNames[i] == s) return static_cast<Strategy>(i);
  throw ArgumentError("unknown strategy '" + std::string(s) + "'");
}

bool is_transfer(Strategy s) { return s != Strategy::single_80 && s != Strategy::single_10; }
bool is_cross_subject(Strategy s) {
  return s == Strategy::zeroshot_cross_subject || s == Strategy::finetune_cross_subject;
}
bool is_finetune(Strategy s) {
  return s == Strategy::finetune_cross_session || s == Strategy::finetune_cross_subject;
}

// ---------------------------------------------------------------------------

std::string RegionSet::label() const {
  if (regions.empty()) return "all";
  std::vector<Region> r = regions;
  std::sort(r.begin(), r.end());
  std::string out;
  for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "+" : "") + std::string(to_string(r[i]));
  return out;
}

RegionSet RegionSet::parse(std::string_view s) {
  RegionSet rs;
  s = trim(s);
  if (s.empty() || s == "all") return rs;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find_first_of("+,", start), s.size());
    const Region r = parse_region(trim(s.substr(start, end - start)));
    if (std::find(rs.regions.begin(), rs.regions.end(), r) != rs.regions.end())
      throw ArgumentError("region set '" + std::string(s) + "' repeats " + std::string(to_string(r)));
    rs.regions.push_back(r);
    start = end + 1;
  }
  if (rs.regions.size() > 2) throw ArgumentError("region set '" + std::string(s) + "' has more than two regions");
  std::sort(rs.regions.begin(), rs.regions.end());
  return rs;
}

std::vector<std::size_t> RegionSet::channels(const Session& s) const {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < s.channels(); ++c)
    if (all() || std::find(regions.begin(), regions.end(), s.regions[c]) != regions.end()) out.push_back(c);
  return out;
}

std::vector<RegionSet> region_cells() {
  std::vector<RegionSet> out;
  for (int a = 0; a < 4; ++a) out.push_back({{static_cast<Region>(a)}});
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) out.push_back({{static_cast<Region>(a), static_cast<Region>(b)}});
  return out;
}

std::string ExperimentPlan::plan_id() const {
  return std::string(to_string(strategy)) + "/" + std::string(to_string(decoder.family));
}

std::string ExperimentPlan::model_name() const {
  return model_label.empty() ? std::string(to_string(decoder.family)) : model_label;
}

std::uint64_t job_seed(std::uint64_t master, std::string_view session_id, std::string_view plan_id) {
  return mix_seed(master, std::string(session_id) + "|" + std::string(plan_id));
}

// ---------------------------------------------------------------------------
// Results table

std::string ResultsTable::to_csv(const std::vector<std::string>& preamble) const {
  std::string out;
  for (const auto& p : preamble) out += "# " + p + "\n";
  out += std::string(kHeader) + "\n";
  for (const auto& e : rows) {
    out += e.session_id + "," + e.rat_id + "," + std::string(to_string(e.strategy)) + "," + e.region_set + "," +
           e.band + "," + std::to_string(e.offset_ms) + "," + e.model + "," + format_double(e.r) + "," +
           format_double(e.r2) + "," + std::to_string(e.n_test_windows) + "," + std::to_string(e.seed) + "," +
           format_double(e.wall_time_s) + "\n";
  }
  return out;
}

ResultsTable ResultsTable::from_csv(std::string_view text) {
  ResultsTable t;
  bool header = false;
  std::size_t line_no = 0;
  for (auto line : split_lines(text)) {
    ++line_no;
    if (trim(line).empty() || line.front() == '#') continue;
    if (!header) {
      if (trim(line) != kHeader) throw FormatError("results table: unexpected header '" + std::string(line) + "'");
      header = true;
      continue;
    }
    const auto f = split_csv_row(line);
    if (f.size() != 12)
      throw FormatError("results table line " + std::to_string(line_no) + ": expected 12 fields, got " +
                        std::to_string(f.size()));
    EvalResult e;
    e.session_id = std::string(f[0]);
    e.rat_id = std::string(f[1]);
    e.strategy = parse_strategy(f[2]);
    e.region_set = std::string(f[3]);
    e.band = std::string(f[4]);
    e.offset_ms = static_cast<int>(parse_int(f[5]));
    e.model = std::string(f[6]);
    e.r = parse_double(f[7]);
    e.r2 = parse_double(f[8]);
    e.n_test_windows = static_cast<std::size_t>(parse_int(f[9]));
    e.seed = parse_u64(f[10]);
    e.wall_time_s = parse_double(f[11]);
    t.rows.push_back(std::move(e));
  }
  if (!header) throw FormatError("results table: missing header");
  return t;
}

// ---------------------------------------------------------------------------
// Hygiene

HygieneReport audit_usage(const std::vector<UsageRecord>& usage) {
  HygieneReport rep;
  std::map<std::string, std::set<std::size_t>> test;
  for (const auto& u : usage)
    if (u.role == "test") test[u.session_id].insert(u.indices.begin(), u.indices.end());
  for (const auto& u : usage) {
    if (u.role == "test") continue;
    ++rep.checked_pairs;
    auto it = test.find(u.session_id);
    if (it == test.end()) continue;
    std::size_t overlap = 0, first = 0;
    for (std::size_t i : u.indices)
      if (it->second.count(i)) {
        if (overlap++ == 0) first = i;
      }
    if (overlap)
      rep.violations.push_back(u.job + ": " + u.role + " on " + u.session_id + " shares " + std::to_string(overlap) +
                               " test samples (first " + std::to_string(first) + ")");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Single session

SplitRanges strategy_ranges(std::size_t samples, Strategy s) {
  SplitRanges canonical = split_session(samples);
  switch (s) {
    case Strategy::single_80:
      return canonical;
    case Strategy::zeroshot_cross_session:
    case Strategy::zeroshot_cross_subject:
      return {{0, 0}, {0, 0}, canonical.test};
    default: {
      const SplitRanges early = split_session(samples, {0.1, 0.1, 0.8});
      return {early.train, early.val, canonical.test};
    }
  }
}

Session band_isolate_ranges(const Session& s, BandName band, std::span<const IndexRange> ranges) {
  const auto filt = band_filter(band_spec(band), s.sample_rate_hz);
  if (!filt) return s;
  Session out = s;
  for (const IndexRange& r : ranges) {
    if (r.empty()) continue;
    for (std::size_t c = 0; c < s.channels(); ++c) {
      const auto row = s.eeg.row(c);
      const auto y = filtfilt(*filt, row.subspan(r.begin, r.size()));
      std::copy(y.begin(), y.end(), out.eeg.row(c).begin() + static_cast<std::ptrdiff_t>(r.begin));
    }
  }
  return out;
}

double score_r(std::span<const double> pred, std::span<const double> actual) {
  if (!pred.empty() && std::all_of(pred.begin(), pred.end(), [&](double v) { return v == pred.front(); }))
    return 0.0;
  return pearson_r(pred, actual);
}

SessionRun run_single_session_detailed(const Session& s, const ExperimentPlan& plan, std::uint64_t master_seed) {
  if (is_transfer(plan.strategy))
    throw PlanError("strategy " + std::string(to_string(plan.strategy)) + " needs a transfer run");
  const auto t0 = Clock::now();
  const InputSource src = source_of(plan.decoder);
  Session x = src == InputSource::eeg ? select_regions(s, plan.regions) : s;
  const SplitRanges rg = strategy_ranges(x.samples(), plan.strategy);
  if (src == InputSource::eeg) {
    const IndexRange parts[3] = {rg.train, rg.val, rg.test};
    x = band_isolate_ranges(x, plan.band, parts);
  }
  const Normalizer norm = fit_input_normalizer(x, rg.train, src);
  const WindowSet tr = checked_windows(x, norm, rg.train, plan.offset_ms, src, "training");
  const WindowSet va = checked_windows(x, norm, rg.val, plan.offset_ms, src, "validation");
  const WindowSet te = checked_windows(x, norm, rg.test, plan.offset_ms, src, "test");

  const std::uint64_t seed = job_seed(master_seed, s.id, plan.plan_id());
  DecoderSpec spec = plan.decoder;
  spec.input_channels = src == InputSource::speed ? 1 : x.channels();
  spec.seed = seed;

  SessionRun run;
  run.decoder = fit_decoder(spec, tr, va, plan.train, plan.linear_closed_form, &run.report);
  run.decoder.normalizer = norm;
  run.predictions = run.decoder.predict(te);
  run.actual = te.targets();

  EvalResult& e = run.result;
  e.session_id = s.id;
  e.rat_id = s.rat_id;
  e.strategy = plan.strategy;
  e.region_set = plan.regions.label();
  e.band = std::string(to_string(plan.band));
  e.offset_ms = plan.offset_ms;
  e.model = plan.model_name();
  e.r = score_r(run.predictions, run.actual);
  e.r2 = r_squared(run.predictions, run.actual);
  e.n_test_windows = te.size();
  e.seed = seed;
  e.wall_time_s = plan.record_wall_time ? elapsed(t0) : 0.0;

  const std::string job = s.id + "|" + plan.plan_id();
  run.usage.push_back(usage(s.id, "normalizer", job, range_indices(rg.train)));
  run.usage.push_back(usage(s.id, "train", job, tr.touched_indices()));
  run.usage.push_back(usage(s.id, "val", job, va.touched_indices()));
  run.usage.push_back(usage(s.id, "test", job, te.touched_indices()));
  return run;
}

EvalResult run_single_session(const Session& s, const ExperimentPlan& plan, std::uint64_t master_seed) {
  return run_single_session_detailed(s, plan, master_seed).result;
}

EvalResult evaluate_decoder(const Decoder& d, const Session& s, const ExperimentPlan& plan,
                            std::uint64_t master_seed) {
  const auto t0 = Clock::now();
  const InputSource src = d.input_source();
  Session x = src == InputSource::eeg ? select_regions(s, plan.regions) : s;
  const IndexRange test = split_session(x.samples()).test;
  if (src == InputSource::eeg) x = band_isolate_ranges(x, plan.band, std::span<const IndexRange>(&test, 1));
  const std::size_t width = src == InputSource::speed ? 1 : x.channels();
  if (width != d.spec().input_channels || d.normalizer.channels() != width)
    throw SpecMismatchError("decoder expects " + std::to_string(d.spec().input_channels) + " input channels, session " +
                            s.id + " provides " + std::to_string(width));
  const WindowSet te = checked_windows(x, d.normalizer, test, plan.offset_ms, src, "test");
  const auto pred = d.predict(te);
  const auto actual = te.targets();
  EvalResult e;
  e.session_id = s.id;
  e.rat_id = s.rat_id;
  e.strategy = plan.strategy;
  e.region_set = plan.regions.label();
  e.band = std::string(to_string(plan.band));
  e.offset_ms = plan.offset_ms;
  e.model = plan.model_name();
  e.r = score_r(pred, actual);
  e.r2 = r_squared(pred, actual);
  e.n_test_windows = te.size();
  e.seed = job_seed(master_seed, s.id, plan.plan_id());
  e.wall_time_s = plan.record_wall_time ? elapsed(t0) : 0.0;
  return e;
}

// ---------------------------------------------------------------------------
// Transfer

std::size_t expected_evaluations(Strategy s, std::span<const std::size_t> n) {
  if (!is_transfer(s)) return 0;
  const std::size_t total = std::accumulate(n.begin(), n.end(), std::size_t{0});
  std::size_t count = 0;
  for (std::size_t ni : n) count += is_cross_subject(s) ? ni * (total - ni) : ni * (ni > 0 ? ni - 1 : 0);
  return count;
}

TransferOutcome run_transfer_matrix(const std::vector<Session>& sessions, const ExperimentPlan& plan,
                                    std::uint64_t master_seed, std::size_t workers,
                                    std::map<std::string, SessionRun>* source_cache) {
  if (!is_transfer(plan.strategy))
    throw PlanError("run_transfer_matrix: " + std::string(to_string(plan.strategy)) + " is not a transfer strategy");
  if (is_finetune(plan.strategy) && !is_trainable(plan.decoder.family))
    throw PlanError("random_forest decoders cannot be fine-tuned");

  std::vector<std::string> rats;
  std::map<std::string, std::size_t> per_rat;
  for (const auto& s : sessions) {
    if (!per_rat.count(s.rat_id)) rats.push_back(s.rat_id);
    ++per_rat[s.rat_id];
  }
  std::vector<std::size_t> counts;
  for (const auto& r : rats) counts.push_back(per_rat[r]);
  if (is_cross_subject(plan.strategy) && rats.size() < 2)
    throw PlanError("cross-subject transfer needs sessions from at least two rats");
  if (expected_evaluations(plan.strategy, counts) == 0)
    throw PlanError("cross-session transfer needs a rat with at least two sessions");

  struct Pair {
    std::size_t source, target;
  };
  std::vector<Pair> pairs;
  std::set<std::size_t> sources;
  for (std::size_t t = 0; t < sessions.size(); ++t)
    for (std::size_t s = 0; s < sessions.size(); ++s) {
      if (s == t) continue;
      const bool same_rat = sessions[s].rat_id == sessions[t].rat_id;
      if (same_rat == is_cross_subject(plan.strategy)) continue;
      pairs.push_back({s, t});
      sources.insert(s);
    }

  ExperimentPlan source_plan = plan;
  source_plan.strategy = Strategy::single_80;
  std::map<std::string, SessionRun> local;
  std::map<std::string, SessionRun>& cache = source_cache ? *source_cache : local;
  {
    std::vector<std::size_t> todo;
    for (std::size_t s : sources)
      if (!cache.count(sessions[s].id)) todo.push_back(s);
    std::vector<std::function<SessionRun()>> jobs;
    for (std::size_t s : todo)
      jobs.push_back([&, s]() { return run_single_session_detailed(sessions[s], source_plan, master_seed); });
    auto runs = run_parallel(jobs, workers);
    for (std::size_t i = 0; i < todo.size(); ++i) cache[sessions[todo[i]].id] = std::move(runs[i]);
  }

  struct PairRun {
    PairEvaluation eval;
    std::vector<UsageRecord> usage;
    double seconds = 0.0;
  };
  const InputSource src = source_of(plan.decoder);
  std::vector<std::function<PairRun()>> jobs;
  for (const Pair& p : pairs) {
    jobs.push_back([&, p]() {
      const auto t0 = Clock::now();
      const Session& target = sessions[p.target];
      const SessionRun& source = cache.at(sessions[p.source].id);
      Session x = src == InputSource::eeg ? select_regions(target, plan.regions) : target;
      const SplitRanges rg = strategy_ranges(x.samples(), plan.strategy);
      const IndexRange refit = split_session(x.samples()).train;
      if (src == InputSource::eeg) {
        std::vector<IndexRange> parts{rg.train, rg.val, rg.test};
        if (!is_finetune(plan.strategy) && plan.zeroshot_refit_normalizer) parts = {refit, rg.test};
        x = band_isolate_ranges(x, plan.band, parts);
      }
      Decoder d = source.decoder;
      const std::size_t width = src == InputSource::speed ? 1 : x.channels();
      if (width != d.spec().input_channels)
        throw PlanError("transfer " + source.result.session_id + " -> " + target.id + ": source uses " +
                        std::to_string(d.spec().input_channels) + " channels, target has " + std::to_string(width));
      const std::string job = target.id + "<-" + source.result.session_id + "|" + plan.plan_id();
      PairRun out;
      Normalizer norm = d.normalizer;
      if (is_finetune(plan.strategy)) {
        if (plan.finetune_refresh_normalizer) {
          norm = fit_input_normalizer(x, rg.train, src);
          out.usage.push_back(usage(target.id, "normalizer", job, range_indices(rg.train)));
        }
        const WindowSet tr = checked_windows(x, norm, rg.train, plan.offset_ms, src, "fine-tune");
        const WindowSet va = checked_windows(x, norm, rg.val, plan.offset_ms, src, "fine-tune validation");
        TrainConfig cfg = plan.finetune;
        cfg.seed = job_seed(master_seed, target.id + "<-" + source.result.session_id, plan.plan_id());
        d = fine_tune(d, tr, va, cfg, d.family()).decoder;
        out.usage.push_back(usage(target.id, "finetune_train", job, tr.touched_indices()));
        out.usage.push_back(usage(target.id, "finetune_val", job, va.touched_indices()));
      } else if (plan.zeroshot_refit_normalizer) {
        norm = fit_input_normalizer(x, refit, src);
        out.usage.push_back(usage(target.id, "normalizer", job, range_indices(refit)));
      }
      d.normalizer = norm;
      const WindowSet te = checked_windows(x, norm, rg.test, plan.offset_ms, src, "test");
      const auto pred = d.predict(te);
      const auto actual = te.targets();
      out.usage.push_back(usage(target.id, "test", job, te.touched_indices()));
      out.eval = {source.result.session_id, target.id, score_r(pred, actual), r_squared(pred, actual), te.size()};
      out.seconds = elapsed(t0);
      return out;
    });
  }
  auto runs = run_parallel(jobs, workers);

  TransferOutcome outcome;
  for (std::size_t s : sources) {
    const auto& u = cache.at(sessions[s].id).usage;
    outcome.usage.insert(outcome.usage.end(), u.begin(), u.end());
  }
  for (auto& r : runs) {
    outcome.pairs.push_back(r.eval);
    outcome.usage.insert(outcome.usage.end(), r.usage.begin(), r.usage.end());
  }
  for (std::size_t t = 0; t < sessions.size(); ++t) {
    std::vector<double> rs, r2s;
    std::size_t n_test = 0;
    double seconds = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i].target != t) continue;
      rs.push_back(runs[i].eval.r);
      r2s.push_back(runs[i].eval.r2);
      n_test = runs[i].eval.n_test_windows;
      seconds += runs[i].seconds;
    }
    if (rs.empty()) continue;
    EvalResult e;
    e.session_id = sessions[t].id;
    e.rat_id = sessions[t].rat_id;
    e.strategy = plan.strategy;
    e.region_set = plan.regions.label();
    e.band = std::string(to_string(plan.band));
    e.offset_ms = plan.offset_ms;
    e.model = plan.model_name();
    e.r = median(rs);
    e.r2 = median(r2s);
    e.n_test_windows = n_test;
    e.seed = job_seed(master_seed, sessions[t].id, plan.plan_id());
    e.wall_time_s = plan.record_wall_time ? seconds : 0.0;
    outcome.per_target.push_back(std::move(e));
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Attribution

RegionAnalysis run_region_analysis(const std::vector<Session>& sessions, const ExperimentPlan& plan,
                                   std::uint64_t master_seed, std::size_t workers) {
  const auto cells = region_cells();
  std::vector<std::function<std::optional<EvalResult>()>> jobs;
  for (const auto& cell : cells)
    for (const auto& s : sessions) {
      if (cell.channels(s).empty()) continue;
      jobs.push_back([&, cell]() -> std::optional<EvalResult> {
        ExperimentPlan p = plan;
        p.regions = cell;
        return run_single_session(s, p, master_seed);
      });
    }
  auto results = run_parallel(jobs, workers);

  RegionAnalysis a;
  std::size_t k = 0;
  for (const auto& cell : cells) {
    std::vector<EvalResult> rows;
    for (const auto& s : sessions) {
      if (cell.channels(s).empty()) {
        a.skipped.push_back(s.id + ": " + cell.label());
        continue;
      }
      rows.push_back(*results[k++]);
    }
    const auto r0 = static_cast<std::size_t>(cell.regions.front());
    const auto r1 = static_cast<std::size_t>(cell.regions.back());
    a.cells[r0][r1] = summarize(cell.label(), rows);
    a.cells[r1][r0] = a.cells[r0][r1];
    a.rows.insert(a.rows.end(), rows.begin(), rows.end());
  }
  return a;
}

BandAnalysis run_band_analysis(const std::vector<Session>& sessions, const ExperimentPlan& plan,
                               std::uint64_t master_seed, std::size_t workers) {
  std::vector<BandName> bands{BandName::fullband};
  for (const auto& b : canonical_bands()) bands.push_back(b.name);
  std::vector<std::function<EvalResult()>> jobs;
  for (BandName b : bands)
    for (const auto& s : sessions)
      jobs.push_back([&, b]() {
        ExperimentPlan p = plan;
        p.band = b;
        return run_single_session(s, p, master_seed);
      });
  auto rows = run_parallel(jobs, workers);

  BandAnalysis a;
  for (std::size_t i = 0; i < bands.size(); ++i) {
    std::vector<EvalResult> cell(rows.begin() + static_cast<std::ptrdiff_t>(i * sessions.size()),
                                 rows.begin() + static_cast<std::ptrdiff_t>((i + 1) * sessions.size()));
    a.bands.push_back(summarize(std::string(to_string(bands[i])), cell));
  }
  a.rows = std::move(rows);
  for (const auto& s : sessions) {
    double full = 0.0;
    for (std::size_t c = 0; c < s.channels(); ++c) full += variance(s.eeg.row(c));
    for (std::size_t i = 1; i < bands.size(); ++i) {
      const Session f = band_isolate(s, band_spec(bands[i]));
      double e = 0.0;
      for (std::size_t c = 0; c < f.channels(); ++c) e += variance(f.eeg.row(c));
      a.energies.push_back({s.id, std::string(to_string(bands[i])), full > 0.0 ? e / full : 0.0});
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Offsets

OffsetAnalysis run_offset_analysis(const std::vector<Session>& sessions, const ExperimentPlan& eeg,
                                   const DecoderSpec& speed_spec, std::span<const int> offsets_ms,
                                   std::uint64_t master_seed, std::size_t workers, std::size_t n_boot) {
  if (offsets_ms.empty()) throw ArgumentError("run_offset_analysis: no offsets");
  ExperimentPlan eplan = eeg;
  if (eplan.model_label.empty()) eplan.model_label = "eeg_rnn";
  ExperimentPlan splan = eeg;
  splan.decoder = speed_spec;
  splan.decoder.family = Family::speed_rnn;
  splan.regions = {};
  splan.band = BandName::fullband;
  splan.model_label = "speed_rnn";
  const ExperimentPlan* plans[2] = {&eplan, &splan};

  std::vector<std::function<EvalResult()>> jobs;
  for (const ExperimentPlan* p : plans)
    for (int off : offsets_ms)
      for (const auto& s : sessions)
        jobs.push_back([&, p, off]() {
          ExperimentPlan q = *p;
          q.offset_ms = off;
          return run_single_session(s, q, master_seed);
        });

  OffsetAnalysis a;
  a.rows = run_parallel(jobs, workers);

  int max_abs = 0;
  for (int off : offsets_ms) max_abs = std::max(max_abs, std::abs(off));
  for (const auto& s : sessions) {
    const auto lag = static_cast<std::size_t>(offset_ms_to_samples(max_abs, s.sample_rate_hz));
    a.autocorrelation[s.id] = autocorrelation(s.speed, lag);
  }

  std::size_t k = 0;
  for (const ExperimentPlan* p : plans) {
    std::vector<double> xs_f, ys_f, xs_b, ys_b;
    for (int off : offsets_ms) {
      std::vector<double> rs;
      for (std::size_t i = 0; i < sessions.size(); ++i) rs.push_back(a.rows[k++].r);
      OffsetPoint pt;
      pt.model = p->model_name();
      pt.offset_ms = off;
      pt.n_sessions = rs.size();
      if (rs.size() >= 3) {
        pt.r = bootstrap_median_ci(rs, n_boot, 0.95, mix_seed(master_seed, pt.model + "/" + std::to_string(off)));
      } else {
        pt.r.median = pt.r.lo = pt.r.hi = median(rs);
      }
      if (off >= 0) {
        xs_f.push_back(off);
        ys_f.push_back(pt.r.median);
      }
      if (off <= 0) {
        xs_b.push_back(off);
        ys_b.push_back(pt.r.median);
      }
      a.curve.push_back(pt);
    }
    auto fit = [&](const char* dir, const std::vector<double>& xs, const std::vector<double>& ys) {
      if (std::set<double>(xs.begin(), xs.end()).size() < 3) return;
      a.fits.push_back({p->model_name(), dir, polyfit2(xs, ys)});
    };
    fit("forward", xs_f, ys_f);
    fit("backward", xs_b, ys_b);
  }
  return a;
}

// ---------------------------------------------------------------------------
// CSV exports

std::string region_matrix_csv(const RegionAnalysis& a) {
  std::string out = "row_region,col_region,region_set,median_r,median_r2,n_sessions\n";
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const CellSummary& c = a.cells[i][j];
      out += std::string(to_string(static_cast<Region>(i))) + "," + std::string(to_string(static_cast<Region>(j))) +
             "," + c.label + "," + format_double(c.median_r) + "," + format_double(c.median_r2) + "," +
             std::to_string(c.n_sessions) + "\n";
    }
  return out;
}

std::string band_summary_csv(const BandAnalysis& a) {
  std::string out = "band,median_r,median_r2,n_sessions,median_energy_fraction\n";
  for (const auto& c : a.bands) {
    std::vector<double> e;
    for (const auto& be : a.energies)
      if (be.band == c.label) e.push_back(be.energy_fraction);
    const double med = c.label == "fullband" ? 1.0 : (e.empty() ? 0.0 : median(e));
    out += c.label + "," + format_double(c.median_r) + "," + format_double(c.median_r2) + "," +
           std::to_string(c.n_sessions) + "," + format_double(med) + "\n";
  }
  return out;
}

std::string offset_curve_csv(const OffsetAnalysis& a) {
  std::string out = "model,offset_ms,median_r,ci_lo,ci_hi,n_sessions,fit_r\n";
  for (const auto& p : a.curve) {
    std::string fitted;
    for (const auto& f : a.fits) {
      if (f.model != p.model) continue;
      if ((f.direction == "forward") != (p.offset_ms >= 0) && p.offset_ms != 0) continue;
      const double x = p.offset_ms;
      fitted = format_double(f.coefficients[0] + f.coefficients[1] * x + f.coefficients[2] * x * x);
      break;
    }
    out += p.model + "," + std::to_string(p.offset_ms) + "," + format_double(p.r.median) + "," +
           format_double(p.r.lo) + "," + format_double(p.r.hi) + "," + std::to_string(p.n_sessions) + "," + fitted +
           "\n";
  }
  return out;
}

std::string autocorrelation_csv(const OffsetAnalysis& a, double sample_rate_hz) {
  std::string out = "lag_ms,median_autocorrelation,n_sessions\n";
  std::size_t max_lag = 0;
  for (const auto& [id, ac] : a.autocorrelation) max_lag = std::max(max_lag, ac.size());
  if (max_lag == 0) return out;
  const double step_ms = 1000.0 / sample_rate_hz;
  for (long lag = -static_cast<long>(max_lag - 1); lag <= static_cast<long>(max_lag - 1); ++lag) {
    std::vector<double> v;
    for (const auto& [id, ac] : a.autocorrelation) {
      const auto k = static_cast<std::size_t>(std::labs(lag));
      if (k < ac.size()) v.push_back(ac[k]);
    }
    out += format_double(static_cast<double>(lag) * step_ms) + "," + format_double(median(v)) + "," +
           std::to_string(v.size()) + "\n";
  }
  return out;
}

}  // namespace locodec
