#pragma once

// Experiment orchestration: single-session baselines, transfer matrices,
// region/band attribution and temporal-offset decoding.

#include "locodec/decoders.hpp"
#include "locodec/dsp.hpp"
#include "locodec/session.hpp"
#include "locodec/stats.hpp"
#include "locodec/trainer.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace locodec {

enum class Strategy {
  single_80,
  single_10,
  zeroshot_cross_session,
  zeroshot_cross_subject,
  finetune_cross_session,
  finetune_cross_subject,
};
std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view s);
bool is_transfer(Strategy s);
bool is_cross_subject(Strategy s);
bool is_finetune(Strategy s);

// Empty region list means all channels.
struct RegionSet {
  std::vector<Region> regions;

  bool all() const { return regions.empty(); }
  // "all", or region names joined with '+' in canonical order.
  std::string label() const;
  static RegionSet parse(std::string_view s);
  // Indices of channels whose region is in the set, in channel order.
  std::vector<std::size_t> channels(const Session& s) const;
  bool operator==(const RegionSet&) const = default;
};

// The four single regions followed by the six pairs.
std::vector<RegionSet> region_cells();

struct ExperimentPlan {
  Strategy strategy = Strategy::single_80;
  DecoderSpec decoder;  // input_channels is set from the data
  TrainConfig train;
  TrainConfig finetune{.max_epochs = 30, .freeze_body = true};
  RegionSet regions;
  BandName band = BandName::fullband;
  int offset_ms = 0;
  // Linear decoders are fitted by least squares instead of gradient descent.
  bool linear_closed_form = true;
  // Zero-shot: refit the normalizer on the target's first 80% instead of
  // reusing the source statistics.
  bool zeroshot_refit_normalizer = false;
  // Fine-tune: refresh the normalizer on the target's calibration segment.
  bool finetune_refresh_normalizer = true;
  bool record_wall_time = true;
  std::string model_label;  // results "model" column; defaults to the family name

  // Seed key: strategy and family only, so region, band and offset variants
  // reuse the baseline seed.
  std::string plan_id() const;
  std::string model_name() const;
};

std::uint64_t job_seed(std::uint64_t master, std::string_view session_id, std::string_view plan_id);

struct EvalResult {
  std::string session_id;
  std::string rat_id;
  Strategy strategy = Strategy::single_80;
  std::string region_set = "all";
  std::string band = "fullband";
  int offset_ms = 0;
  std::string model;
  double r = 0.0;
  double r2 = 0.0;
  std::size_t n_test_windows = 0;
  std::uint64_t seed = 0;
  double wall_time_s = 0.0;
  bool operator==(const EvalResult&) const = default;
};

struct ResultsTable {
  std::vector<EvalResult> rows;

  static constexpr std::string_view kHeader =
      "session_id,rat_id,strategy,region_set,band,offset_ms,model,r,r2,n_test_windows,seed,wall_time_s";
  // `preamble` lines are written first, each prefixed with "# ".
  std::string to_csv(const std::vector<std::string>& preamble = {}) const;
  // Skips '#' comment lines.
  static ResultsTable from_csv(std::string_view text);
};

// Sample indices a job read from one session, by role ("normalizer",
// "train", "val", "finetune_train", "finetune_val", "test").
struct UsageRecord {
  std::string session_id;
  std::string role;
  std::string job;
  std::vector<std::size_t> indices;  // sorted, unique
};

struct HygieneReport {
  std::vector<std::string> violations;
  std::size_t checked_pairs = 0;
  bool clean() const { return violations.empty(); }
};

// Intersects every non-test record with the test indices of the same session
// (from any job).
HygieneReport audit_usage(const std::vector<UsageRecord>& usage);

// Everything a single-session job produced.
struct SessionRun {
  EvalResult result;
  Decoder decoder;
  std::vector<double> predictions;
  std::vector<double> actual;
  std::vector<UsageRecord> usage;
  TrainReport report;
};

// Train/validation/test ranges of a strategy (transfer strategies return the
// target's calibration ranges).
SplitRanges strategy_ranges(std::size_t samples, Strategy s);

// Zero-phase band isolation applied to each range separately; samples outside
// the ranges are left untouched.
Session band_isolate_ranges(const Session& s, BandName band, std::span<const IndexRange> ranges);

// Pearson r, defined as 0 for constant predictions.
double score_r(std::span<const double> pred, std::span<const double> actual);

SessionRun run_single_session_detailed(const Session& s, const ExperimentPlan& plan, std::uint64_t master_seed);
EvalResult run_single_session(const Session& s, const ExperimentPlan& plan, std::uint64_t master_seed);

// Scores a fitted decoder on the final 10% of `s` with the plan's regions,
// band and offset and the decoder's stored normalizer. The seed column is the
// job seed the plan would have used.
EvalResult evaluate_decoder(const Decoder& d, const Session& s, const ExperimentPlan& plan,
                            std::uint64_t master_seed);

// Runs `jobs` functions on `workers` threads; results keep job order. The
// first exception (by job index) is rethrown after all workers finish.
template <class T>
std::vector<T> run_parallel(const std::vector<std::function<T()>>& jobs, std::size_t workers);

// --- transfer ----------------------------------------------------------------

struct PairEvaluation {
  std::string source_id;
  std::string target_id;
  double r = 0.0;
  double r2 = 0.0;
  std::size_t n_test_windows = 0;
};

struct TransferOutcome {
  std::vector<EvalResult> per_target;  // median over sources
  std::vector<PairEvaluation> pairs;
  std::vector<UsageRecord> usage;
};

// Evaluation count of a transfer strategy for the given sessions-per-rat.
std::size_t expected_evaluations(Strategy s, std::span<const std::size_t> sessions_per_rat);

// Source models come from the single_80 pipeline (cached across calls when
// `source_cache` is given, keyed by session id).
TransferOutcome run_transfer_matrix(const std::vector<Session>& sessions, const ExperimentPlan& plan,
                                    std::uint64_t master_seed, std::size_t workers = 1,
                                    std::map<std::string, SessionRun>* source_cache = nullptr);

// --- attribution -------------------------------------------------------------

struct CellSummary {
  std::string label;
  double median_r = 0.0;
  double median_r2 = 0.0;
  std::size_t n_sessions = 0;
};

struct RegionAnalysis {
  // 4 x 4, indexed by Region; diagonal = single regions, off-diagonal = pairs.
  std::array<std::array<CellSummary, 4>, 4> cells{};
  std::vector<EvalResult> rows;
  std::vector<std::string> skipped;  // "session: region set"
};

RegionAnalysis run_region_analysis(const std::vector<Session>& sessions, const ExperimentPlan& plan,
                                   std::uint64_t master_seed, std::size_t workers = 1);

struct BandEnergy {
  std::string session_id;
  std::string band;
  double energy_fraction = 0.0;  // band-isolated variance / fullband variance
};

struct BandAnalysis {
  std::vector<CellSummary> bands;  // fullband first, then the five bands
  std::vector<EvalResult> rows;
  std::vector<BandEnergy> energies;
};

BandAnalysis run_band_analysis(const std::vector<Session>& sessions, const ExperimentPlan& plan,
                               std::uint64_t master_seed, std::size_t workers = 1);

// --- temporal offsets ----------------------------------------------------------

inline const std::vector<int> kDefaultOffsetsMs{-1000, -500, -200, -100, 0, 100, 200, 500, 1000};

struct OffsetPoint {
  std::string model;
  int offset_ms = 0;
  MedianCi r;
  std::size_t n_sessions = 0;
};

struct OffsetFit {
  std::string model;
  std::string direction;  // "forward" (offsets >= 0) or "backward" (<= 0)
  std::array<double, 3> coefficients{};
};

struct OffsetAnalysis {
  std::vector<EvalResult> rows;
  // Speed autocorrelation per session at lags 0..max (10 ms steps); the curve
  // is symmetric so negative lags share these values.
  std::map<std::string, std::vector<double>> autocorrelation;
  std::vector<OffsetPoint> curve;
  std::vector<OffsetFit> fits;
};

// `eeg` is the EEG decoder plan (model label "eeg_rnn" unless set); the
// speed-only baseline uses `speed_spec`.
OffsetAnalysis run_offset_analysis(const std::vector<Session>& sessions, const ExperimentPlan& eeg,
                                   const DecoderSpec& speed_spec, std::span<const int> offsets_ms,
                                   std::uint64_t master_seed, std::size_t workers = 1,
                                   std::size_t n_boot = 2000);

// CSV exports.
std::string region_matrix_csv(const RegionAnalysis& a);
std::string band_summary_csv(const BandAnalysis& a);
std::string offset_curve_csv(const OffsetAnalysis& a);
std::string autocorrelation_csv(const OffsetAnalysis& a, double sample_rate_hz = 100.0);

}  // namespace locodec

#include "locodec/detail/parallel.hpp"
