#pragma once

#include "locodec/session.hpp"

#include <complex>
#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace locodec {

// Second-order section, a0 normalized to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
};

struct SosFilter {
  std::vector<Biquad> sections;
  // Digital filter order (two per section).
  std::size_t order() const { return 2 * sections.size(); }
};

enum class FilterKind { lowpass, highpass, bandpass };

// Butterworth design through the bilinear transform with prewarped edges.
// `order` is the prototype order (a bandpass therefore has 2*order poles).
SosFilter design_butterworth(int order, FilterKind kind, std::initializer_list<double> edges_hz,
                             double fs_hz);
SosFilter design_butterworth(int order, FilterKind kind, std::span<const double> edges_hz,
                             double fs_hz);

std::complex<double> frequency_response(const SosFilter& f, double freq_hz, double fs_hz);

// Causal cascade filtering; `zi` holds two states per section (may be empty).
std::vector<double> sosfilt(const SosFilter& f, std::span<const double> x,
                            std::span<const double> zi = {});
// Steady-state initial conditions for a unit step input.
std::vector<double> sosfilt_zi(const SosFilter& f);

// Forward-backward filtering with odd-reflection padding. Input must be longer
// than 3 * order; the pad is 50 * order samples, capped at n - 1.
std::vector<double> filtfilt(const SosFilter& f, std::span<const double> x);

enum class BandName { delta, theta, alpha, beta, gamma, fullband };

struct BandSpec {
  BandName name = BandName::fullband;
  std::optional<double> low_hz;
  std::optional<double> high_hz;  // empty for gamma (highpass) and fullband
};

std::string_view to_string(BandName b);
BandName parse_band(std::string_view s);
BandSpec band_spec(BandName b);
const std::vector<BandSpec>& canonical_bands();  // the five isolated bands

// Zero-phase 4th-order filter for the band (identity for fullband).
std::optional<SosFilter> band_filter(const BandSpec& band, double fs_hz);
Session band_isolate(const Session& s, const BandSpec& band);

struct WelchParams {
  double fs = 100.0;
  std::size_t nfft = 128;
  double overlap = 0.5;
};

struct PsdEstimate {
  std::vector<double> frequencies;
  std::vector<double> power;
  WelchParams params;
  std::size_t segments = 0;
};

// Periodic-Hann, one-sided density Welch estimate.
PsdEstimate welch_psd(std::span<const double> x, double fs = 100.0, std::size_t nfft = 128,
                      double overlap = 0.5);
// Segment average over several independent runs, each run centered on its own
// mean; runs shorter than nfft are skipped.
// Returns segments == 0 if no run was long enough.
PsdEstimate welch_psd_runs(std::span<const std::span<const double>> runs, const WelchParams& p);

void fft_inplace(std::vector<std::complex<double>>& a);

struct DecileSpectra {
  std::vector<double> frequencies;  // bins up to fmax
  // f * P(f) per decile, channel-averaged; empty when the decile had no run >= nfft.
  std::vector<std::optional<std::vector<double>>> f_times_psd;
};

// Decile index per sample: lowest decile whose upper percentile bound is >= speed.
std::vector<int> speed_deciles(std::span<const double> speed);

DecileSpectra speed_decile_spectra(const Session& s, const WelchParams& p = {}, double fmax_hz = 45.0);

struct DecileSpectrumRow {
  int decile = 0;
  double freq_hz = 0;
  double mean = 0;
  double sem = 0;
  std::size_t n_sessions = 0;
};

// Mean and SEM (sample std / sqrt(n)) across sessions, per decile and bin;
// empty deciles are skipped.
std::vector<DecileSpectrumRow> aggregate_decile_spectra(std::span<const DecileSpectra> per_session);
std::string decile_spectra_csv(std::span<const DecileSpectrumRow> rows);

// Pearson correlation between x[0..n-k) and x[k..n) for k = 0..max_lag.
std::vector<double> autocorrelation(std::span<const double> x, std::size_t max_lag);

}  // namespace locodec
