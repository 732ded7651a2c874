#include "locodec/session.hpp"

#include "locodec/dsp.hpp"
#include "locodec/error.hpp"
#include "locodec/io.hpp"
#include "locodec/numeric.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace locodec {

std::string_view to_string(Region r) {
  switch (r) {
    case Region::medial_prefrontal: return "medial_prefrontal";
    case Region::somatomotor: return "somatomotor";
    case Region::motor: return "motor";
    case Region::visual: return "visual";
  }
  return "?";
}

std::string_view to_string(Side s) { return s == Side::left ? "left" : "right"; }

Region parse_region(std::string_view s) {
  for (Region r : {Region::medial_prefrontal, Region::somatomotor, Region::motor, Region::visual})
    if (to_string(r) == s) return r;
  throw FormatError("unknown region label '" + std::string(s) + "'");
}

Side parse_side(std::string_view s) {
  if (s == "left") return Side::left;
  if (s == "right") return Side::right;
  throw FormatError("unknown side label '" + std::string(s) + "'");
}

std::string channel_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "ch%02zu", index + 1);
  return buf;
}

SessionFormat parse_session_format(std::string_view s) {
  if (s == "canonical_csv") return SessionFormat::canonical_csv;
  if (s == "canonical_bin") return SessionFormat::canonical_bin;
  throw ArgumentError("unknown session format '" + std::string(s) + "'");
}

void Session::validate() const {
  if (speed.size() != eeg.cols)
    throw IntegrityError("session " + id + ": eeg has " + std::to_string(eeg.cols) +
                         " samples but speed has " + std::to_string(speed.size()));
  if (eeg.cols < kWindowLength)
    throw IntegrityError("session " + id + ": fewer than " + std::to_string(kWindowLength) +
                         " samples");
  if (eeg.rows == 0) throw IntegrityError("session " + id + ": no channels");
  if (regions.size() != eeg.rows || sides.size() != eeg.rows)
    throw IntegrityError("session " + id + ": every channel needs one region and one side label");
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
    throw IntegrityError("session " + id + ": sample rate must be positive");
  for (std::size_t c = 0; c < eeg.rows; ++c)
    for (std::size_t t = 0; t < eeg.cols; ++t)
      if (!std::isfinite(eeg(c, t)))
        throw IntegrityError("session " + id + ": non-finite value in channel " + channel_name(c) +
                             " at index " + std::to_string(t));
  for (std::size_t t = 0; t < speed.size(); ++t)
    if (!std::isfinite(speed[t]))
      throw IntegrityError("session " + id + ": non-finite value in channel speed at index " +
                           std::to_string(t));
}

Session Session::select_channels(std::span<const std::size_t> channels) const {
  Session out;
  out.id = id;
  out.rat_id = rat_id;
  out.sample_rate_hz = sample_rate_hz;
  out.speed = speed;
  out.eeg = Matrix(channels.size(), eeg.cols);
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::size_t c = channels[i];
    if (c >= eeg.rows) throw ArgumentError("select_channels: channel index out of range");
    std::copy(eeg.row(c).begin(), eeg.row(c).end(), out.eeg.row(i).begin());
    out.regions.push_back(regions[c]);
    out.sides.push_back(sides[c]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

std::string session_manifest(const Session& s) {
  std::ostringstream os;
  os << "session.id=" << s.id << "\n";
  os << "session.rat_id=" << s.rat_id << "\n";
  os << "session.sample_rate_hz=" << format_double(s.sample_rate_hz) << "\n";
  for (std::size_t c = 0; c < s.channels(); ++c) {
    os << "channel." << channel_name(c) << ".region=" << to_string(s.regions[c]) << "\n";
    os << "channel." << channel_name(c) << ".side=" << to_string(s.sides[c]) << "\n";
  }
  return os.str();
}

namespace {

struct Manifest {
  std::string id, rat_id;
  std::optional<double> sample_rate;
  std::map<std::string, Region> region;
  std::map<std::string, Side> side;
};

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  for (const auto& [key, value] : parse_dotted_lines(text)) {
    if (key == "session.id") {
      m.id = value;
    } else if (key == "session.rat_id") {
      m.rat_id = value;
    } else if (key == "session.sample_rate_hz") {
      m.sample_rate = parse_double(value);
    } else if (key.rfind("channel.", 0) == 0) {
      const auto dot = key.rfind('.');
      const std::string ch = key.substr(8, dot - 8);
      const std::string field = key.substr(dot + 1);
      if (field == "region")
        m.region[ch] = parse_region(value);
      else if (field == "side")
        m.side[ch] = parse_side(value);
      else
        throw FormatError("manifest: unknown channel field '" + key + "'");
    } else {
      throw FormatError("manifest: unknown key '" + key + "'");
    }
  }
  return m;
}

void apply_manifest(Session& s, const Manifest& m, const std::filesystem::path& path) {
  s.id = m.id.empty() ? path.stem().string() : m.id;
  s.rat_id = m.rat_id;
  if (m.sample_rate) s.sample_rate_hz = *m.sample_rate;
  s.regions.clear();
  s.sides.clear();
  for (std::size_t c = 0; c < s.channels(); ++c) {
    const std::string name = channel_name(c);
    auto r = m.region.find(name);
    auto sd = m.side.find(name);
    if (r == m.region.end() || sd == m.side.end())
      throw FormatError(path.string() + ": manifest lacks region/side for " + name);
    s.regions.push_back(r->second);
    s.sides.push_back(sd->second);
  }
}

constexpr char kSessionMagic[] = "LCDC1";

Session read_bin(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  ByteReader rd(bytes, path.string());
  if (rd.take_bytes(5) != std::string_view(kSessionMagic, 5))
    throw FormatError(path.string() + ": bad magic, expected LCDC1");
  const auto c = rd.take<std::uint32_t>();
  const auto t = rd.take<std::uint64_t>();
  const auto rate = rd.take<double>();
  if (c == 0) throw FormatError(path.string() + ": zero channels");
  // Remaining bytes must hold at least the sample payload.
  if (rd.remaining() < (static_cast<std::uint64_t>(c) + 1) * t * 4)
    throw IntegrityError(path.string() + ": truncated sample payload");
  Session s;
  s.sample_rate_hz = rate;
  s.eeg = Matrix(c, t);
  for (std::size_t i = 0; i < s.eeg.data.size(); ++i) s.eeg.data[i] = rd.take<float>();
  s.speed.resize(t);
  for (auto& v : s.speed) v = rd.take<float>();
  const auto mlen = rd.take<std::uint32_t>();
  const std::string manifest(rd.take_bytes(mlen));
  if (rd.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after manifest");
  Manifest m = parse_manifest(manifest);
  apply_manifest(s, m, path);
  return s;
}

void write_bin(const Session& s, const std::filesystem::path& path) {
  std::string out;
  out.append(kSessionMagic, 5);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.channels()));
  put_le<std::uint64_t>(out, s.samples());
  put_le<double>(out, s.sample_rate_hz);
  for (double v : s.eeg.data) put_le<float>(out, static_cast<float>(v));
  for (double v : s.speed) put_le<float>(out, static_cast<float>(v));
  const std::string manifest = session_manifest(s);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(manifest.size()));
  out += manifest;
  write_file_atomic(path, out);
}

Session read_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const auto rows = split_lines(text);
  if (rows.empty()) throw FormatError(path.string() + ": empty file");
  const auto header = split_csv_row(rows[0]);
  if (header.size() < 3 || header[0] != "time_s" || header[1] != "speed")
    throw FormatError(path.string() + ": header must be time_s,speed,ch01..chNN");
  const std::size_t c = header.size() - 2;
  for (std::size_t i = 0; i < c; ++i)
    if (header[i + 2] != channel_name(i))
      throw FormatError(path.string() + ": expected column " + channel_name(i) + ", got " +
                        std::string(header[i + 2]));

  std::vector<std::vector<double>> cols(c);
  std::vector<double> speed;
  std::vector<double> time;
  std::size_t eeg_rows = 0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].empty()) continue;
    const auto cells = split_csv_row(rows[r]);
    if (cells.size() != header.size())
      throw FormatError(path.string() + ": row " + std::to_string(r + 1) + " has " +
                        std::to_string(cells.size()) + " fields, expected " +
                        std::to_string(header.size()));
    time.push_back(parse_double(cells[0]));
    if (!cells[1].empty()) speed.push_back(parse_double(cells[1]));
    for (std::size_t i = 0; i < c; ++i) {
      if (cells[i + 2].empty())
        throw IntegrityError(path.string() + ": missing value in channel " + channel_name(i) +
                             " at index " + std::to_string(eeg_rows));
      cols[i].push_back(parse_double(cells[i + 2]));
    }
    ++eeg_rows;
  }
  if (speed.size() != eeg_rows)
    throw IntegrityError(path.string() + ": speed has " + std::to_string(speed.size()) +
                         " samples but eeg has " + std::to_string(eeg_rows));

  Session s;
  s.eeg = Matrix(c, eeg_rows);
  for (std::size_t i = 0; i < c; ++i) std::copy(cols[i].begin(), cols[i].end(), s.eeg.row(i).begin());
  s.speed = std::move(speed);
  if (time.size() >= 2 && time[1] > time[0]) s.sample_rate_hz = 1.0 / (time[1] - time[0]);

  const auto mpath = manifest_path_for(path);
  if (!std::filesystem::exists(mpath))
    throw FormatError(path.string() + ": missing sidecar manifest " + mpath.string());
  Manifest m = parse_manifest(read_file(mpath));
  apply_manifest(s, m, path);
  // The manifest rate, if present, wins over the rate inferred from time_s.
  if (!m.sample_rate && time.size() >= 2)
    s.sample_rate_hz = std::round(s.sample_rate_hz * 1e6) / 1e6;
  return s;
}

void write_csv(const Session& s, const std::filesystem::path& path) {
  std::string out = "time_s,speed";
  for (std::size_t c = 0; c < s.channels(); ++c) out += "," + channel_name(c);
  out += "\n";
  for (std::size_t t = 0; t < s.samples(); ++t) {
    out += format_double(static_cast<double>(t) / s.sample_rate_hz);
    out += ",";
    out += format_double(s.speed[t]);
    for (std::size_t c = 0; c < s.channels(); ++c) {
      out += ",";
      out += format_double(s.eeg(c, t));
    }
    out += "\n";
  }
  write_file_atomic(path, out);
  write_file_atomic(manifest_path_for(path), session_manifest(s));
}

}  // namespace

std::filesystem::path manifest_path_for(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".manifest");
  return p;
}

Session ingest_session(const std::filesystem::path& path, SessionFormat format) {
  if (!std::filesystem::exists(path)) throw FormatError(path.string() + ": no such file");
  Session s = format == SessionFormat::canonical_bin ? read_bin(path) : read_csv(path);
  s.validate();
  return s;
}

void write_session(const Session& s, const std::filesystem::path& path, SessionFormat format) {
  s.validate();
  if (format == SessionFormat::canonical_bin)
    write_bin(s, path);
  else
    write_csv(s, path);
}

// ---------------------------------------------------------------------------

Matrix preprocess_raw(const Matrix& raw, double raw_rate_hz) {
  constexpr double kTargetRate = 100.0;
  const double ratio = raw_rate_hz / kTargetRate;
  const double rounded = std::round(ratio);
  if (!(raw_rate_hz > 0.0) || rounded < 1.0 || std::abs(ratio - rounded) > 1e-9)
    throw UnsupportedRateError("preprocess_raw: " + format_double(raw_rate_hz) +
                               " Hz is not an integer multiple of 100 Hz");
  const auto step = static_cast<std::size_t>(rounded);
  const SosFilter lp = design_butterworth(2, FilterKind::lowpass, {45.0}, raw_rate_hz);
  const std::size_t out_len = (raw.cols + step - 1) / step;
  Matrix out(raw.rows, out_len);
  for (std::size_t c = 0; c < raw.rows; ++c) {
    const auto y = filtfilt(lp, raw.row(c));
    for (std::size_t i = 0; i < out_len; ++i) out(c, i) = y[i * step];
  }
  return out;
}

double session_iqr(std::span<const double> speed) {
  if (speed.size() < 4) throw ArgumentError("session_iqr: need at least 4 samples");
  std::vector<double> s(speed.begin(), speed.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
}

GateResult apply_inclusion_gate_iqr(std::span<const double> iqrs,
                                    std::optional<double> threshold_override, double percentile) {
  if (iqrs.empty()) throw ArgumentError("apply_inclusion_gate: empty session collection");
  GateResult g;
  g.iqr.assign(iqrs.begin(), iqrs.end());
  g.threshold = threshold_override ? *threshold_override : quantile(iqrs, percentile);
  for (std::size_t i = 0; i < iqrs.size(); ++i)
    (iqrs[i] <= g.threshold ? g.excluded : g.included).push_back(i);
  return g;
}

GateResult apply_inclusion_gate(std::span<const Session> sessions,
                                std::optional<double> threshold_override, double percentile) {
  if (sessions.empty()) throw ArgumentError("apply_inclusion_gate: empty session collection");
  std::vector<double> iqrs;
  iqrs.reserve(sessions.size());
  for (const auto& s : sessions) iqrs.push_back(session_iqr(s.speed));
  return apply_inclusion_gate_iqr(iqrs, threshold_override, percentile);
}

SplitRanges split_session(std::size_t samples, const SplitSpec& spec) {
  const double fr[3] = {spec.train_frac, spec.val_frac, spec.test_frac};
  for (double f : fr)
    if (!(f >= 0.0)) throw SplitError("split_session: fractions must be non-negative");
  if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9)
    throw SplitError("split_session: fractions must sum to 1");
  const double n = static_cast<double>(samples);
  // The small guard keeps e.g. 0.9 * 1000 from flooring to 899 through rounding.
  auto bound = [&](double f) {
    return std::min(samples, static_cast<std::size_t>(std::floor(f * n + 1e-9)));
  };
  const std::size_t b1 = bound(fr[0]);
  const std::size_t b2 = std::max(b1, bound(fr[0] + fr[1]));
  SplitRanges r{{0, b1}, {b1, b2}, {b2, samples}};
  const char* names[3] = {"train", "validation", "test"};
  const IndexRange* segs[3] = {&r.train, &r.val, &r.test};
  for (int i = 0; i < 3; ++i)
    if (!segs[i]->empty() && segs[i]->size() < kWindowLength)
      throw SplitError(std::string("split_session: ") + names[i] + " segment of " +
                       std::to_string(segs[i]->size()) + " samples is shorter than one window");
  return r;
}

// ---------------------------------------------------------------------------

Normalizer::Normalizer(std::vector<double> mean, std::vector<double> std)
    : mean_(std::move(mean)), std_(std::move(std)) {
  if (mean_.size() != std_.size()) throw ArgumentError("Normalizer: mean/std length mismatch");
  for (double s : std_)
    if (!(s > 0.0)) throw ArgumentError("Normalizer: std must be positive");
}

Normalizer Normalizer::fit(const Matrix& eeg, IndexRange range) {
  if (range.empty() || range.end > eeg.cols) throw ArgumentError("fit_normalizer: invalid range");
  Normalizer n;
  n.mean_.resize(eeg.rows);
  n.std_.resize(eeg.rows);
  const double len = static_cast<double>(range.size());
  for (std::size_t c = 0; c < eeg.rows; ++c) {
    const auto row = eeg.row(c);
    double m = 0.0;
    for (std::size_t t = range.begin; t < range.end; ++t) m += row[t];
    m /= len;
    double v = 0.0;
    for (std::size_t t = range.begin; t < range.end; ++t) v += (row[t] - m) * (row[t] - m);
    double sd = std::sqrt(v / len);
    if (sd < kStdFloor) {
      sd = kStdFloor;
      n.warnings_.push_back(c);
    }
    n.mean_[c] = m;
    n.std_[c] = sd;
  }
  return n;
}

Matrix Normalizer::apply(const Matrix& eeg) const {
  if (eeg.rows != mean_.size()) throw ShapeError("Normalizer::apply: channel count mismatch");
  Matrix z(eeg.rows, eeg.cols);
  for (std::size_t c = 0; c < eeg.rows; ++c)
    for (std::size_t t = 0; t < eeg.cols; ++t) z(c, t) = (eeg(c, t) - mean_[c]) / std_[c];
  return z;
}

Matrix Normalizer::inverse(const Matrix& z) const {
  if (z.rows != mean_.size()) throw ShapeError("Normalizer::inverse: channel count mismatch");
  Matrix x(z.rows, z.cols);
  for (std::size_t c = 0; c < z.rows; ++c)
    for (std::size_t t = 0; t < z.cols; ++t) x(c, t) = z(c, t) * std_[c] + mean_[c];
  return x;
}

Normalizer Normalizer::rounded_to_float() const {
  Normalizer n = *this;
  for (auto& v : n.mean_) v = static_cast<float>(v);
  for (auto& v : n.std_) v = std::max(static_cast<double>(static_cast<float>(v)), kStdFloor);
  return n;
}

// ---------------------------------------------------------------------------

std::ptrdiff_t offset_ms_to_samples(int offset_ms, double sample_rate_hz) {
  const double s = static_cast<double>(offset_ms) * sample_rate_hz / 1000.0;
  if (std::abs(s - std::round(s)) > 1e-9)
    throw ArgumentError("offset of " + std::to_string(offset_ms) +
                        " ms is not a whole number of samples");
  return static_cast<std::ptrdiff_t>(std::llround(s));
}

std::vector<WindowView> windows(std::span<const double> target_trace, double sample_rate_hz,
                                IndexRange range, int offset_ms, TargetBounds bounds) {
  const std::ptrdiff_t off = offset_ms_to_samples(offset_ms, sample_rate_hz);
  std::vector<WindowView> out;
  const auto total = static_cast<std::ptrdiff_t>(target_trace.size());
  if (range.end > target_trace.size() || range.size() < kWindowLength) return out;
  const auto w = static_cast<std::ptrdiff_t>(kWindowLength);
  std::ptrdiff_t lo = 0;
  std::ptrdiff_t hi = total;  // allowed target interval [lo, hi)
  if (bounds == TargetBounds::segment) {
    lo = static_cast<std::ptrdiff_t>(range.begin) + w - 1;
    hi = static_cast<std::ptrdiff_t>(range.end);
  }
  out.reserve(range.size() - kWindowLength + 1);
  for (std::size_t start = range.begin; start + kWindowLength <= range.end; ++start) {
    const std::ptrdiff_t tgt = static_cast<std::ptrdiff_t>(start) + w - 1 + off;
    if (tgt < lo || tgt >= hi) continue;
    WindowView v;
    v.start_index = start;
    v.offset_samples = off;
    v.target_index = static_cast<std::size_t>(tgt);
    v.target = target_trace[v.target_index];
    out.push_back(v);
  }
  return out;
}

std::vector<WindowView> windows(const Session& s, IndexRange range, int offset_ms,
                                TargetBounds bounds) {
  return windows(s.speed, s.sample_rate_hz, range, offset_ms, bounds);
}

Matrix window_matrix(const Matrix& eeg, const WindowView& w) {
  if (w.start_index + w.length > eeg.cols) throw ArgumentError("window_matrix: window out of range");
  Matrix m(w.length, eeg.rows);
  for (std::size_t t = 0; t < w.length; ++t)
    for (std::size_t c = 0; c < eeg.rows; ++c) m(t, c) = eeg(c, w.start_index + t);
  return m;
}

}  // namespace locodec
