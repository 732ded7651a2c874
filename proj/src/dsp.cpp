#include "locodec/dsp.hpp"

#include "locodec/error.hpp"
#include "locodec/io.hpp"
#include "locodec/numeric.hpp"
#include "locodec/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace locodec {

namespace {

using cplx = std::complex<double>;

cplx bilinear(cplx s, double fs) { return (2.0 * fs + s) / (2.0 * fs - s); }

double prewarp(double f, double fs) { return 2.0 * fs * std::tan(std::numbers::pi * f / fs); }

Biquad section_from(cplx pole, double b0, double b1, double b2) {
  Biquad q;
  q.b0 = b0;
  q.b1 = b1;
  q.b2 = b2;
  q.a1 = -2.0 * pole.real();
  q.a2 = std::norm(pole);
  return q;
}

}  // namespace

SosFilter design_butterworth(int order, FilterKind kind, std::initializer_list<double> edges_hz,
                             double fs_hz) {
  return design_butterworth(order, kind, std::span<const double>(edges_hz.begin(), edges_hz.size()),
                            fs_hz);
}

SosFilter design_butterworth(int order, FilterKind kind, std::span<const double> edges,
                             double fs) {
  if (order < 2 || order > 10 || order % 2 != 0)
    throw DesignError("design_butterworth: order must be even and in [2, 10]");
  if (!(fs > 0.0)) throw DesignError("design_butterworth: sample rate must be positive");
  const std::size_t want = kind == FilterKind::bandpass ? 2 : 1;
  if (edges.size() != want) throw DesignError("design_butterworth: wrong number of band edges");
  for (double e : edges)
    if (!(e > 0.0 && e < fs / 2.0))
      throw DesignError("design_butterworth: edge " + format_double(e) +
                        " Hz must lie strictly between 0 and Nyquist (" + format_double(fs / 2.0) +
                        " Hz)");
  if (kind == FilterKind::bandpass && !(edges[0] < edges[1]))
    throw DesignError("design_butterworth: bandpass edges must be increasing");

  // Upper-half-plane prototype poles; conjugates are implied by each section.
  std::vector<cplx> proto;
  for (int k = 0; k < order; ++k) {
    const cplx p = std::polar(1.0, std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order));
    if (p.imag() > 0) proto.push_back(p);
  }

  SosFilter f;
  double ref_hz = 0.0;
  switch (kind) {
    case FilterKind::lowpass: {
      const double wc = prewarp(edges[0], fs);
      for (const cplx& p : proto) f.sections.push_back(section_from(bilinear(wc * p, fs), 1, 2, 1));
      ref_hz = 0.0;
      break;
    }
    case FilterKind::highpass: {
      const double wc = prewarp(edges[0], fs);
      for (const cplx& p : proto) f.sections.push_back(section_from(bilinear(wc / p, fs), 1, -2, 1));
      ref_hz = fs / 2.0;
      break;
    }
    case FilterKind::bandpass: {
      const double w1 = prewarp(edges[0], fs);
      const double w2 = prewarp(edges[1], fs);
      const double w0sq = w1 * w2;
      const double bw = w2 - w1;
      for (const cplx& p : proto) {
        const cplx disc = std::sqrt(p * p * bw * bw - 4.0 * w0sq);
        for (const cplx& s : {(p * bw + disc) / 2.0, (p * bw - disc) / 2.0})
          f.sections.push_back(section_from(bilinear(s, fs), 1, 0, -1));
      }
      ref_hz = fs / std::numbers::pi * std::atan(std::sqrt(w0sq) / (2.0 * fs));
      break;
    }
  }

  const double g = std::abs(frequency_response(f, ref_hz, fs));
  f.sections.front().b0 /= g;
  f.sections.front().b1 /= g;
  f.sections.front().b2 /= g;
  return f;
}

std::complex<double> frequency_response(const SosFilter& f, double freq_hz, double fs_hz) {
  const cplx z1 = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / fs_hz);
  const cplx z2 = z1 * z1;
  cplx h = 1.0;
  for (const auto& q : f.sections) h *= (q.b0 + q.b1 * z1 + q.b2 * z2) / (1.0 + q.a1 * z1 + q.a2 * z2);
  return h;
}

std::vector<double> sosfilt(const SosFilter& f, std::span<const double> x,
                            std::span<const double> zi) {
  const std::size_t ns = f.sections.size();
  if (!zi.empty() && zi.size() != 2 * ns) throw ArgumentError("sosfilt: zi must hold 2 values per section");
  std::vector<double> z(2 * ns, 0.0);
  if (!zi.empty()) std::copy(zi.begin(), zi.end(), z.begin());
  std::vector<double> y(x.begin(), x.end());
  for (std::size_t s = 0; s < ns; ++s) {
    const Biquad& q = f.sections[s];
    double z0 = z[2 * s], z1 = z[2 * s + 1];
    for (double& v : y) {
      const double in = v;
      const double out = q.b0 * in + z0;
      z0 = q.b1 * in - q.a1 * out + z1;
      z1 = q.b2 * in - q.a2 * out;
      v = out;
    }
  }
  return y;
}

std::vector<double> sosfilt_zi(const SosFilter& f) {
  std::vector<double> zi;
  double level = 1.0;
  for (const auto& q : f.sections) {
    const double g = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
    zi.push_back((g - q.b0) * level);
    zi.push_back((q.b2 - q.a2 * g) * level);
    level *= g;
  }
  return zi;
}

namespace {
constexpr std::size_t kFiltfiltPadPerOrder = 50;
}

std::vector<double> filtfilt(const SosFilter& f, std::span<const double> x) {
  const std::size_t min_pad = 3 * f.order();
  if (x.size() <= min_pad)
    throw ArgumentError("filtfilt: input of " + std::to_string(x.size()) +
                        " samples must be longer than the padding (" + std::to_string(min_pad) + ")");
  const std::size_t n = x.size();
  // Long reflections let narrow bandpass transients die out before the data.
  const std::size_t pad = std::min(n - 1, std::max(min_pad, kFiltfiltPadPerOrder * f.order()));
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  const auto zi = sosfilt_zi(f);
  auto scaled = [&](double v) {
    std::vector<double> z(zi);
    for (double& e : z) e *= v;
    return z;
  };
  auto y = sosfilt(f, ext, scaled(ext.front()));
  std::reverse(y.begin(), y.end());
  y = sosfilt(f, y, scaled(y.front()));
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(pad), y.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

// ---------------------------------------------------------------------------
// Bands

std::string_view to_string(BandName b) {
  switch (b) {
    case BandName::delta: return "delta";
    case BandName::theta: return "theta";
    case BandName::alpha: return "alpha";
    case BandName::beta: return "beta";
    case BandName::gamma: return "gamma";
    case BandName::fullband: return "fullband";
  }
  return "?";
}

BandName parse_band(std::string_view s) {
  for (BandName b : {BandName::delta, BandName::theta, BandName::alpha, BandName::beta,
                     BandName::gamma, BandName::fullband})
    if (to_string(b) == s) return b;
  throw ArgumentError("unknown band '" + std::string(s) + "'");
}

BandSpec band_spec(BandName b) {
  switch (b) {
    case BandName::delta: return {b, 1.0, 4.0};
    case BandName::theta: return {b, 4.0, 8.0};
    case BandName::alpha: return {b, 8.0, 12.0};
    case BandName::beta: return {b, 12.0, 30.0};
    case BandName::gamma: return {b, 30.0, std::nullopt};
    case BandName::fullband: return {b, std::nullopt, std::nullopt};
  }
  return {};
}

const std::vector<BandSpec>& canonical_bands() {
  static const std::vector<BandSpec> bands = {band_spec(BandName::delta), band_spec(BandName::theta),
                                              band_spec(BandName::alpha), band_spec(BandName::beta),
                                              band_spec(BandName::gamma)};
  return bands;
}

std::optional<SosFilter> band_filter(const BandSpec& band, double fs_hz) {
  if (band.name == BandName::fullband) return std::nullopt;
  if (band.low_hz && band.high_hz) {
    if (!(*band.low_hz < *band.high_hz)) throw ArgumentError("band: low edge must be below high edge");
    return design_butterworth(4, FilterKind::bandpass, {*band.low_hz, *band.high_hz}, fs_hz);
  }
  if (band.low_hz) return design_butterworth(4, FilterKind::highpass, {*band.low_hz}, fs_hz);
  if (band.high_hz) return design_butterworth(4, FilterKind::lowpass, {*band.high_hz}, fs_hz);
  throw ArgumentError("band: no edges given");
}

Session band_isolate(const Session& s, const BandSpec& band) {
  const auto filt = band_filter(band, s.sample_rate_hz);
  if (!filt) return s;
  Session out = s;
  for (std::size_t c = 0; c < s.channels(); ++c) {
    const auto y = filtfilt(*filt, s.eeg.row(c));
    std::copy(y.begin(), y.end(), out.eeg.row(c).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectra

void fft_inplace(std::vector<cplx>& a) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if ((n & (n - 1)) != 0) {
    // Direct DFT for non power-of-two sizes.
    std::vector<cplx> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      cplx acc = 0;
      for (std::size_t t = 0; t < n; ++t)
        acc += a[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t % n) /
                                          static_cast<double>(n));
      out[k] = acc;
    }
    a = std::move(out);
    return;
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const cplx wl = std::polar(1.0, -2.0 * std::numbers::pi / static_cast<double>(len));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w = 1.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

PsdEstimate welch_psd_runs(std::span<const std::span<const double>> runs, const WelchParams& p) {
  if (p.nfft < 2) throw ArgumentError("welch_psd: nfft must be >= 2");
  if (!(p.overlap >= 0.0 && p.overlap < 1.0)) throw ArgumentError("welch_psd: overlap must be in [0, 1)");
  if (!(p.fs > 0.0)) throw ArgumentError("welch_psd: fs must be positive");
  const std::size_t nfft = p.nfft;
  const std::size_t nfreq = nfft / 2 + 1;
  const auto noverlap = static_cast<std::size_t>(std::floor(static_cast<double>(nfft) * p.overlap));
  const std::size_t hop = nfft - noverlap;

  std::vector<double> w(nfft);
  double wss = 0.0;
  for (std::size_t i = 0; i < nfft; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(nfft));
    wss += w[i] * w[i];
  }
  const double scale = 1.0 / (p.fs * wss);

  PsdEstimate est;
  est.params = p;
  est.frequencies.resize(nfreq);
  for (std::size_t k = 0; k < nfreq; ++k)
    est.frequencies[k] = static_cast<double>(k) * p.fs / static_cast<double>(nfft);
  est.power.assign(nfreq, 0.0);

  std::vector<cplx> buf(nfft);
  for (const auto& x : runs) {
    if (x.size() < nfft) continue;
    // One mean per run; per-segment removal would dent the first bin.
    const double m = mean(x);
    for (std::size_t start = 0; start + nfft <= x.size(); start += hop) {
      for (std::size_t i = 0; i < nfft; ++i) buf[i] = (x[start + i] - m) * w[i];
      fft_inplace(buf);
      for (std::size_t k = 0; k < nfreq; ++k) {
        double v = std::norm(buf[k]) * scale;
        if (k != 0 && !(nfft % 2 == 0 && k == nfft / 2)) v *= 2.0;
        est.power[k] += v;
      }
      ++est.segments;
    }
  }
  if (est.segments > 0)
    for (double& v : est.power) v /= static_cast<double>(est.segments);
  return est;
}

PsdEstimate welch_psd(std::span<const double> x, double fs, std::size_t nfft, double overlap) {
  if (x.size() < nfft)
    throw ArgumentError("welch_psd: input of " + std::to_string(x.size()) +
                        " samples is shorter than nfft=" + std::to_string(nfft));
  const std::span<const double> runs[1] = {x};
  return welch_psd_runs(runs, {fs, nfft, overlap});
}

std::vector<int> speed_deciles(std::span<const double> speed) {
  if (speed.empty()) throw ArgumentError("speed_deciles: empty speed trace");
  std::vector<double> sorted(speed.begin(), speed.end());
  std::sort(sorted.begin(), sorted.end());
  double upper[10];
  for (int d = 0; d < 10; ++d) upper[d] = quantile_sorted(sorted, (d + 1) / 10.0);
  std::vector<int> out(speed.size());
  for (std::size_t i = 0; i < speed.size(); ++i) {
    int d = 0;
    while (d < 9 && upper[d] < speed[i]) ++d;
    out[i] = d;
  }
  return out;
}

DecileSpectra speed_decile_spectra(const Session& s, const WelchParams& p, double fmax_hz) {
  const auto dec = speed_deciles(s.speed);
  // Maximal contiguous runs per decile.
  std::vector<std::vector<IndexRange>> runs(10);
  for (std::size_t i = 0; i < dec.size();) {
    std::size_t j = i;
    while (j < dec.size() && dec[j] == dec[i]) ++j;
    if (j - i >= p.nfft) runs[static_cast<std::size_t>(dec[i])].push_back({i, j});
    i = j;
  }

  DecileSpectra out;
  const std::size_t nfreq = p.nfft / 2 + 1;
  std::size_t nkeep = 0;
  for (std::size_t k = 0; k < nfreq; ++k) {
    const double f = static_cast<double>(k) * p.fs / static_cast<double>(p.nfft);
    if (f <= fmax_hz + 1e-12) {
      out.frequencies.push_back(f);
      ++nkeep;
    }
  }
  out.f_times_psd.resize(10);
  for (std::size_t d = 0; d < 10; ++d) {
    if (runs[d].empty()) continue;
    std::vector<double> avg(nfreq, 0.0);
    for (std::size_t c = 0; c < s.channels(); ++c) {
      std::vector<std::span<const double>> spans;
      for (const auto& r : runs[d]) spans.push_back(s.eeg.row(c).subspan(r.begin, r.size()));
      const auto est = welch_psd_runs(spans, p);
      for (std::size_t k = 0; k < nfreq; ++k) avg[k] += est.power[k];
    }
    std::vector<double> fp(nkeep);
    for (std::size_t k = 0; k < nkeep; ++k)
      fp[k] = out.frequencies[k] * avg[k] / static_cast<double>(s.channels());
    out.f_times_psd[d] = std::move(fp);
  }
  return out;
}

std::vector<DecileSpectrumRow> aggregate_decile_spectra(std::span<const DecileSpectra> per_session) {
  std::vector<DecileSpectrumRow> rows;
  if (per_session.empty()) return rows;
  const auto& freqs = per_session.front().frequencies;
  for (const auto& ds : per_session)
    if (ds.frequencies != freqs) throw ArgumentError("aggregate_decile_spectra: frequency grids differ");
  for (int d = 0; d < 10; ++d) {
    std::vector<const std::vector<double>*> present;
    for (const auto& ds : per_session)
      if (ds.f_times_psd.size() == 10 && ds.f_times_psd[static_cast<std::size_t>(d)])
        present.push_back(&*ds.f_times_psd[static_cast<std::size_t>(d)]);
    if (present.empty()) continue;
    const double n = static_cast<double>(present.size());
    for (std::size_t k = 0; k < freqs.size(); ++k) {
      double m = 0.0;
      for (auto* v : present) m += (*v)[k];
      m /= n;
      double ss = 0.0;
      for (auto* v : present) ss += ((*v)[k] - m) * ((*v)[k] - m);
      const double sem = present.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
      rows.push_back({d, freqs[k], m, sem, present.size()});
    }
  }
  return rows;
}

std::string decile_spectra_csv(std::span<const DecileSpectrumRow> rows) {
  std::string out = "decile,freq_hz,f_times_psd_mean,f_times_psd_sem,n_sessions\n";
  for (const auto& r : rows)
    out += std::to_string(r.decile) + "," + format_double(r.freq_hz) + "," + format_double(r.mean) +
           "," + format_double(r.sem) + "," + std::to_string(r.n_sessions) + "\n";
  return out;
}

std::vector<double> autocorrelation(std::span<const double> x, std::size_t max_lag) {
  if (x.size() <= max_lag) throw ArgumentError("autocorrelation: series must be longer than max_lag");
  std::vector<double> out(max_lag + 1);
  const std::size_t n = x.size();
  for (std::size_t k = 0; k <= max_lag; ++k) out[k] = pearson_r(x.subspan(0, n - k), x.subspan(k, n - k));
  out[0] = 1.0;
  return out;
}

}  // namespace locodec
