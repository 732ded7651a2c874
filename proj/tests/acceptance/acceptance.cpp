// Acceptance runner: one PASS/FAIL/SKIP line per criterion.
// Usage: locodec_acceptance [criterion numbers...]   (default: all)
// Criterion 9 needs LOCODEC_REAL_DATA pointing at canonical session files.

#include "locodec/decoders.hpp"
#include "locodec/dsp.hpp"
#include "locodec/error.hpp"
#include "locodec/io.hpp"
#include "locodec/numeric.hpp"
#include "locodec/pipeline.hpp"
#include "locodec/protocols.hpp"
#include "locodec/session.hpp"
#include "locodec/stats.hpp"
#include "locodec/synthetic.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace locodec;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict = Verdict::pass;
  std::vector<std::string> notes;
  std::vector<std::string> failures;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      failures.push_back(what);
      verdict = Verdict::fail;
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double median_r(const std::vector<EvalResult>& rows) {
  std::vector<double> r;
  for (const auto& e : rows) r.push_back(e.r);
  return median(r);
}

std::vector<double> sine(std::size_t n, double f, double fs, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / fs);
  return x;
}

std::vector<double> ar1(std::size_t n, double phi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> e;
  std::vector<double> x(n);
  x[0] = e(rng) / std::sqrt(1.0 - phi * phi);
  for (std::size_t i = 1; i < n; ++i) x[i] = phi * x[i - 1] + e(rng);
  return x;
}

// --- 1 ------------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  ad::GradcheckOptions opt;
  opt.step = 1e-5;
  opt.tolerance = 1e-4;
  opt.samples = 64;
  opt.seed = 2024;
  for (Family f : {Family::linear, Family::ffnn, Family::lstm_rnn, Family::transformer_encoder, Family::speed_rnn}) {
    const auto spec = default_spec(f, f == Family::speed_rnn ? 1 : 16);
    const auto rep = gradcheck_decoder(spec, 4, opt);
    const std::string name(to_string(f));
    o.note(name + " worst=" + fmt(rep.worst, 3) + " n=" + std::to_string(rep.entries.size()));
    o.check(rep.entries.size() >= 50, name + ": fewer than 50 sampled parameters");
    o.check(rep.worst <= 1e-4, name + ": relative error " + fmt(rep.worst, 3));
  }
  return o;
}

// --- 2 ------------------------------------------------------------------------

Outcome dsp_oracles() {
  Outcome o;
  const double fs = 100.0;
  for (const auto& b : canonical_bands()) {
    const auto filt = band_filter(b, fs);
    if (!filt) {
      o.check(false, std::string(to_string(b.name)) + ": no filter");
      continue;
    }
    const double f0 = std::sqrt(std::max(b.low_hz.value_or(0.5), 0.5) * b.high_hz.value_or(45.0));
    const auto x = sine(4000, f0, fs);
    const auto y = filtfilt(*filt, x);
    // Lags within half a period, so only lag 0 can match exactly.
    const int reach = static_cast<int>(std::ceil(fs / (2.0 * f0))) - 1;
    int best_lag = 0;
    double best = -1e300;
    for (int lag = -reach; lag <= reach; ++lag) {
      double acc = 0.0;
      for (int i = 500; i < 3500; ++i) acc += x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i + lag)];
      if (acc > best) {
        best = acc;
        best_lag = lag;
      }
    }
    o.check(best_lag == 0, std::string(to_string(b.name)) + ": xcorr peak at lag " + std::to_string(best_lag));
  }

  for (double rate : {100.0, 1000.0}) {
    const auto lp = design_butterworth(2, FilterKind::lowpass, {45.0}, rate);
    const double g = std::abs(frequency_response(lp, 45.0, rate));
    o.note("lowpass@" + fmt(rate) + " gain=" + fmt(g, 10));
    o.check(std::abs(g - 1.0 / std::sqrt(2.0)) <= 1e-6, "45 Hz corner gain " + fmt(g, 10) + " at fs " + fmt(rate));
  }

  const std::size_t nfft = 128;
  const double fk = 10.0 * fs / static_cast<double>(nfft);
  const double amp = 1.7;
  const auto psd = welch_psd(sine(12800, fk, fs, amp), fs, nfft, 0.5);
  double power = 0.0;
  const double df = fs / static_cast<double>(nfft);
  for (double p : psd.power) power += p * df;
  const double want = amp * amp / 2.0;
  o.note("welch power ratio=" + fmt(power / want, 6));
  o.check(std::abs(power / want - 1.0) <= 0.03, "Welch Parseval off by " + fmt(power / want - 1.0));

  for (double phi : {0.9, 0.97}) {
    const auto x = ar1(100000, phi, 99);
    const auto ac = autocorrelation(x, 100);
    double worst = 0.0;
    for (std::size_t k = 0; k <= 100; ++k) worst = std::max(worst, std::abs(ac[k] - std::pow(phi, static_cast<double>(k))));
    o.note("AR(1) phi=" + fmt(phi) + " max|acf-phi^k|=" + fmt(worst, 3));
    o.check(worst <= 0.05, "AR(1) autocorrelation deviates by " + fmt(worst));
  }
  return o;
}

// --- 3 ------------------------------------------------------------------------

double friedman_by_hand(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size(), k = rows[0].size();
  std::vector<double> rank_sum(k, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < k; ++j) {
      int below = 0;
      for (std::size_t i = 0; i < k; ++i) below += r[i] < r[j];
      rank_sum[j] += below + 1;
    }
  double ss = 0.0;
  for (double s : rank_sum) ss += s * s;
  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  return 12.0 / (dn * dk * (dk + 1.0)) * ss - 3.0 * dn * (dk + 1.0);
}

Outcome stats_oracles() {
  Outcome o;
  std::vector<double> a, b;
  for (int i = 1; i <= 10; ++i) {
    a.push_back(1.0 + 0.5 * i);
    b.push_back(1.0);
  }
  const auto w = wilcoxon_signed_rank(a, b);
  o.note("wilcoxon p=" + fmt(w.p_raw, 10));
  o.check(std::abs(w.p_raw - 2.0 / 1024.0) <= 1e-15, "Wilcoxon exact p " + fmt(w.p_raw, 10));

  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int t = 0; t < 25; ++t) {
    PairedScores p;
    p.variants = {"a", "b", "c"};
    for (int i = 0; i < 10; ++i) p.rows.push_back({u(rng), u(rng), u(rng)});
    const double want = friedman_by_hand(p.rows);
    worst = std::max(worst, std::abs(friedman(p).statistic - want) / std::max(1.0, std::abs(want)));
  }
  o.note("friedman max rel diff=" + fmt(worst, 3));
  o.check(worst <= 1e-12, "Friedman differs from brute force by " + fmt(worst));

  const std::vector<double> raw{0.001, 0.04, 0.2, 0.5, 0.03};
  const auto adj = bonferroni(raw, raw.size());
  bool clamp_ok = true, order_ok = true;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    clamp_ok = clamp_ok && adj[i] == std::min(1.0, raw[i] * 5.0);
    for (std::size_t j = 0; j < raw.size(); ++j)
      if (raw[i] < raw[j]) order_ok = order_ok && adj[i] <= adj[j];
  }
  o.check(clamp_ok, "Bonferroni clamp");
  o.check(order_ok, "Bonferroni order");

  int covered = 0;
  std::normal_distribution<double> n01;
  for (std::uint64_t t = 0; t < 200; ++t) {
    std::mt19937_64 g(20000 + t);
    std::vector<double> x(200);
    for (auto& v : x) v = n01(g);
    const auto ci = bootstrap_median_ci(x, 10000, 0.95, 40000 + t);
    covered += ci.lo <= 0.0 && 0.0 <= ci.hi;
  }
  o.note("bootstrap coverage=" + std::to_string(covered) + "/200");
  o.check(covered >= 184 && covered <= 196, "bootstrap coverage " + std::to_string(covered) + "/200");

  const std::vector<std::array<double, 3>> quads{{3, -1, 2}, {0, 0, -0.5}, {-4, 2.5, 0.125}};
  const std::vector<double> xs{-1000, -500, -200, -100, 0, 100, 200, 500, 1000};
  for (const auto& q : quads) {
    std::vector<double> ys;
    for (double x : xs) ys.push_back(q[0] + q[1] * x + q[2] * x * x);
    const auto c = polyfit2(xs, ys);
    double err = 0.0;
    for (int i = 0; i < 3; ++i) err = std::max(err, std::abs(c[i] - q[i]) / std::max(1.0, std::abs(q[i])));
    o.check(err <= 1e-9, "polyfit2 coefficient error " + fmt(err));
  }
  return o;
}

// --- 4 ------------------------------------------------------------------------

FleetSpec nonlinear_fleet(std::size_t rats, std::size_t per_rat, std::uint64_t seed) {
  FleetSpec f;
  f.rats = rats;
  f.sessions_per_rat = per_rat;
  f.law = LatentLaw::nonlinear;
  f.noise = 0.2;
  f.linear_weight = 0.02;
  f.seed = seed;
  return f;
}

ExperimentPlan plan_for(Family fam, std::size_t channels, std::size_t epochs) {
  ExperimentPlan p;
  p.decoder = default_spec(fam, channels);
  p.train.max_epochs = epochs;
  p.record_wall_time = false;
  return p;
}

Outcome ladder() {
  Outcome o;
  const auto fleet = generate_synthetic_fleet(nonlinear_fleet(2, 4, 7));
  std::map<Family, double> med;
  for (Family f : {Family::linear, Family::ffnn, Family::lstm_rnn}) {
    ExperimentPlan p = plan_for(f, 16, 30);
    p.decoder.lstm_hidden = 64;
    std::vector<EvalResult> rows;
    for (const auto& s : fleet) rows.push_back(run_single_session(s, p, 1));
    med[f] = median_r(rows);
    o.note(std::string(to_string(f)) + "=" + fmt(med[f]));
  }
  o.check(fleet.size() >= 8, "fewer than 8 sessions");
  o.check(med[Family::lstm_rnn] >= med[Family::ffnn], "lstm below ffnn");
  o.check(med[Family::ffnn] >= med[Family::linear], "ffnn below linear");
  o.check(med[Family::lstm_rnn] >= 0.9, "lstm median r below 0.9");
  o.check(med[Family::lstm_rnn] - med[Family::linear] >= 0.1, "lstm - linear below 0.1");
  return o;
}

// --- 5 ------------------------------------------------------------------------

std::vector<std::size_t> roster_counts(const std::vector<Session>& fleet) {
  std::vector<std::size_t> n;
  std::string last;
  for (const auto& s : fleet) {
    if (s.rat_id != last) n.push_back(0);
    last = s.rat_id;
    ++n.back();
  }
  return n;
}

Outcome transfer() {
  Outcome o;
  FleetSpec f = nonlinear_fleet(3, 3, 11);
  ExperimentPlan base = plan_for(Family::lstm_rnn, 16, 30);

  auto run = [&](const std::vector<Session>& fleet, Strategy s, std::map<std::string, SessionRun>& cache) {
    ExperimentPlan p = base;
    p.strategy = s;
    const auto out = run_transfer_matrix(fleet, p, 1, 1, &cache);
    const std::size_t want = expected_evaluations(s, roster_counts(fleet));
    o.check(out.pairs.size() == want, std::string(to_string(s)) + ": " + std::to_string(out.pairs.size()) +
                                          " evaluations, formula gives " + std::to_string(want));
    o.check(audit_usage(out.usage).clean(), std::string(to_string(s)) + ": leakage");
    return median_r(out.per_target);
  };

  const auto shared = generate_synthetic_fleet(f);
  std::map<std::string, SessionRun> cache_shared;
  const double zs_subject_shared = run(shared, Strategy::zeroshot_cross_subject, cache_shared);
  o.note("shared zs_subject=" + fmt(zs_subject_shared));
  o.check(zs_subject_shared >= 0.8, "shared mapping zero-shot cross-subject below 0.8");

  f.permute_channels = true;
  f.rescale_channels = true;
  const auto permuted = generate_synthetic_fleet(f);
  std::map<std::string, SessionRun> cache;
  const double zs_session = run(permuted, Strategy::zeroshot_cross_session, cache);
  const double zs_subject = run(permuted, Strategy::zeroshot_cross_subject, cache);
  const double ft_subject = run(permuted, Strategy::finetune_cross_subject, cache);
  o.note("permuted zs_session=" + fmt(zs_session) + " zs_subject=" + fmt(zs_subject) + " ft_subject=" +
         fmt(ft_subject));
  o.check(zs_subject <= 0.2, "permuted zero-shot cross-subject above 0.2");
  o.check(zs_session >= 0.7, "zero-shot cross-session below 0.7");
  o.check(ft_subject - zs_subject >= 0.2, "fine-tune gain below 0.2");
  return o;
}

// --- 6 ------------------------------------------------------------------------

Outcome attribution() {
  Outcome o;
  FleetSpec rf = nonlinear_fleet(2, 4, 11);
  rf.channels = 32;
  rf.signal_regions = {Region::visual};
  const auto rfleet = generate_synthetic_fleet(rf);
  const auto ra = run_region_analysis(rfleet, plan_for(Family::ffnn, 32, 30), 1);
  const auto vis = static_cast<std::size_t>(Region::visual);
  std::string diag;
  for (std::size_t r = 0; r < 4; ++r) {
    const auto& c = ra.cells[r][r];
    diag += (r ? " " : "") + c.label + "=" + fmt(c.median_r);
    if (r == vis)
      o.check(c.median_r >= 0.9, "signal region r " + fmt(c.median_r) + " below 0.9");
    else
      o.check(c.median_r <= 0.2, c.label + " r " + fmt(c.median_r) + " above 0.2");
  }
  o.note(diag);

  FleetSpec bf = nonlinear_fleet(2, 2, 11);
  bf.law = LatentLaw::band;
  const auto bfleet = generate_synthetic_fleet(bf);
  const auto ba = run_band_analysis(bfleet, plan_for(Family::ffnn, 16, 30), 1);
  double full = 0.0, driving = 0.0;
  std::string bands;
  for (const auto& c : ba.bands) {
    bands += (bands.empty() ? "" : " ") + c.label + "=" + fmt(c.median_r);
    if (c.label == "fullband") full = c.median_r;
  }
  const std::string drive(to_string(BandName::delta));
  for (const auto& c : ba.bands) {
    if (c.label == drive) driving = c.median_r;
    else if (c.label != "fullband") o.check(c.median_r <= 0.2, c.label + " r " + fmt(c.median_r) + " above 0.2");
  }
  o.note(bands);
  o.check(std::abs(driving - full) <= 0.05, "driving band r " + fmt(driving) + " vs fullband " + fmt(full));
  return o;
}

// --- 7 ------------------------------------------------------------------------

Outcome offsets() {
  Outcome o;
  const auto x = ar1(100000, 0.95, 5);
  std::vector<double> rev(x.rbegin(), x.rend());
  const auto fwd = autocorrelation(x, 100), bwd = autocorrelation(rev, 100);
  double asym = 0.0;
  for (std::size_t k = 0; k <= 100; ++k) asym = std::max(asym, std::abs(fwd[k] - bwd[k]));
  o.note("acf asymmetry=" + fmt(asym, 3));
  o.check(asym <= 1e-3, "autocorrelation asymmetry " + fmt(asym));

  FleetSpec f = nonlinear_fleet(2, 2, 11);
  f.lead_ms = 500;
  const auto fleet = generate_synthetic_fleet(f);
  const ExperimentPlan eeg = plan_for(Family::lstm_rnn, 16, 20);
  ExperimentPlan speed_plan = plan_for(Family::speed_rnn, 1, 20);
  const std::vector<int> offs{0, 500};
  const auto a = run_offset_analysis(fleet, eeg, speed_plan.decoder, offs, 1, 1, 200);

  double eeg500 = 0.0, spd500 = 0.0;
  for (const auto& p : a.curve) {
    if (p.offset_ms != 500) continue;
    if (p.model == "eeg_rnn") eeg500 = p.r.median;
    if (p.model == "speed_rnn") spd500 = p.r.median;
  }
  o.note("+500 ms eeg=" + fmt(eeg500) + " speed_rnn=" + fmt(spd500));
  o.check(eeg500 > spd500, "eeg r at +500 ms not above speed_rnn");

  ExperimentPlan baseline = eeg;
  baseline.model_label = "eeg_rnn";
  std::size_t compared = 0;
  for (const auto& row : a.rows) {
    if (row.model != "eeg_rnn" || row.offset_ms != 0) continue;
    const auto s = std::find_if(fleet.begin(), fleet.end(), [&](const Session& x) { return x.id == row.session_id; });
    const EvalResult ref = run_single_session(*s, baseline, 1);
    o.check(ref == row, row.session_id + ": offset-0 row differs from baseline");
    ++compared;
  }
  o.check(compared == fleet.size(), "missing offset-0 rows");
  return o;
}

// --- 8 ------------------------------------------------------------------------

int run_cli(const std::string& args) {
  const std::string cmd = std::string(LOCODEC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

Outcome hygiene() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "locodec_acceptance_8";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "seed = 5\n"
           "data.source = synthetic\n"
           "data.synthetic.rats = 2\n"
           "data.synthetic.sessions_per_rat = 2\n"
           "data.synthetic.samples = 3000\n"
           "data.synthetic.channels = 8\n"
           "data.synthetic.seed = 3\n"
           "decoder.family = lstm_rnn\n"
           "decoder.lstm_hidden = 16\n"
           "decoder.dropout = 0.1\n"
           "train.max_epochs = 3\n"
           "output.record_wall_time = false\n";
  }
  const std::string cfg = "--config " + (dir / "run.cfg").string();
  const int a = run_cli("experiment " + cfg + " --jobs 1 --out " + (dir / "a").string());
  const int b = run_cli("experiment " + cfg + " --jobs 1 --out " + (dir / "b").string());
  o.check(a == 0 && b == 0, "experiment exit codes " + std::to_string(a) + ", " + std::to_string(b));
  if (a == 0 && b == 0) {
    const std::string ta = read_file(dir / "a" / "results.csv"), tb = read_file(dir / "b" / "results.csv");
    o.check(ta == tb, "serial results tables differ");
    o.check(ResultsTable::from_csv(ta).rows.size() == 4, "expected 4 result rows");
    o.note("results.csv identical=" + std::string(ta == tb ? "yes" : "no"));
  }

  FleetSpec f;
  f.rats = 2;
  f.sessions_per_rat = 2;
  f.samples = 3000;
  f.channels = 8;
  f.seed = 13;
  const auto fleet = generate_synthetic_fleet(f);
  ExperimentPlan p = plan_for(Family::lstm_rnn, 8, 2);
  p.decoder.lstm_hidden = 8;
  p.finetune.max_epochs = 2;
  std::size_t checked = 0;
  std::vector<UsageRecord> first_train;
  for (Strategy s : {Strategy::single_80, Strategy::single_10}) {
    p.strategy = s;
    std::vector<UsageRecord> usage;
    for (const auto& x : fleet) {
      const auto run = run_single_session_detailed(x, p, 1);
      usage.insert(usage.end(), run.usage.begin(), run.usage.end());
    }
    const auto h = audit_usage(usage);
    o.check(h.clean(), std::string(to_string(s)) + ": " + (h.clean() ? "" : h.violations.front()));
    checked += h.checked_pairs;
    if (first_train.empty()) first_train = usage;
  }
  std::map<std::string, SessionRun> cache;
  for (Strategy s : {Strategy::zeroshot_cross_session, Strategy::zeroshot_cross_subject,
                     Strategy::finetune_cross_session, Strategy::finetune_cross_subject}) {
    p.strategy = s;
    const auto out = run_transfer_matrix(fleet, p, 1, 1, &cache);
    const auto h = audit_usage(out.usage);
    o.check(h.clean(), std::string(to_string(s)) + ": " + (h.clean() ? "" : h.violations.front()));
    checked += h.checked_pairs;
  }
  o.check(checked > 0, "no index sets were intersected");

  // The audit must notice a planted overlap.
  auto leaked = first_train;
  for (auto& r : leaked)
    if (r.role == "train") {
      const auto test = split_session(f.samples).test;
      r.indices.push_back(test.begin);
      std::sort(r.indices.begin(), r.indices.end());
      break;
    }
  o.check(!audit_usage(leaked).clean(), "planted leak not detected");
  o.note("intersections checked=" + std::to_string(checked));
  return o;
}

// --- 9 ------------------------------------------------------------------------

Outcome real_data() {
  Outcome o;
  const char* root = std::getenv("LOCODEC_REAL_DATA");
  if (!root || !*root) {
    o.verdict = Verdict::skip;
    o.note("set LOCODEC_REAL_DATA to a directory of canonical sessions");
    return o;
  }
  std::vector<Session> sessions;
  for (const auto& p : expand_session_paths({root}))
    sessions.push_back(to_canonical_rate(ingest_session(p, format_for_path(p, SessionFormat::canonical_csv))));
  const auto g = apply_inclusion_gate(sessions, 0.46);
  o.note("sessions=" + std::to_string(sessions.size()) + " retained=" + std::to_string(g.included.size()));
  o.check(sessions.size() == 276, "expected 276 sessions");
  o.check(g.included.size() == 225, "expected 225 retained");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"dsp oracles", dsp_oracles},
      {"statistics oracles", stats_oracles},
      {"synthetic decoding ladder", ladder},
      {"transfer construction", transfer},
      {"attribution constructions", attribution},
      {"offset protocol", offsets},
      {"hygiene and reproducibility", hygiene},
      {"real-data inclusion gate", real_data},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
    std::string detail;
    for (const auto& n : o.notes) detail += (detail.empty() ? "" : "; ") + n;
    for (const auto& f : o.failures) detail += (detail.empty() ? "" : "; ") + ("FAILED " + f);
    std::printf("[%s] criterion %d %s (%.1f s): %s\n", tag, id, criteria[i].first, secs, detail.c_str());
    std::fflush(stdout);
    failed += o.verdict == Verdict::fail;
  }
  return failed == 0 ? 0 : 1;
}
