#pragma once

#include "locodec/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace locodec {

enum class Region { medial_prefrontal, somatomotor, motor, visual };
enum class Side { left, right };

std::string_view to_string(Region r);
std::string_view to_string(Side s);
Region parse_region(std::string_view s);
Side parse_side(std::string_view s);

inline constexpr std::size_t kWindowLength = 20;

// One recording: C x T channel-major EEG at `sample_rate_hz`, a speed trace of
// length T and per-channel anatomical labels.
struct Session {
  std::string id;
  std::string rat_id;
  double sample_rate_hz = 100.0;
  Matrix eeg;  // channels x samples
  std::vector<double> speed;
  std::vector<Region> regions;
  std::vector<Side> sides;

  std::size_t channels() const { return eeg.rows; }
  std::size_t samples() const { return eeg.cols; }

  // Throws IntegrityError when an invariant does not hold.
  void validate() const;

  // Copy restricted to the given channel indices (in the given order).
  Session select_channels(std::span<const std::size_t> channels) const;
};

std::string channel_name(std::size_t index);  // 0 -> "ch01"

enum class SessionFormat { canonical_csv, canonical_bin };
SessionFormat parse_session_format(std::string_view s);

// Manifest text: one `dotted.key=value` per line.
std::string session_manifest(const Session& s);

Session ingest_session(const std::filesystem::path& path, SessionFormat format);
void write_session(const Session& s, const std::filesystem::path& path, SessionFormat format);
// Sidecar manifest path used by canonical_csv: same stem, `.manifest` extension.
std::filesystem::path manifest_path_for(const std::filesystem::path& csv_path);

// Zero-phase 2nd-order 45 Hz Butterworth lowpass followed by decimation to
// 100 Hz. `raw_rate_hz` must be an integer multiple of 100.
Matrix preprocess_raw(const Matrix& raw, double raw_rate_hz);

double session_iqr(std::span<const double> speed);

struct GateResult {
  std::vector<std::size_t> included;
  std::vector<std::size_t> excluded;
  std::vector<double> iqr;  // per input session
  double threshold = 0.0;
};

// Excludes sessions whose speed IQR is <= threshold. Without an override the
// threshold is the 10th percentile of the collection's IQRs.
GateResult apply_inclusion_gate(std::span<const Session> sessions,
                                std::optional<double> threshold_override = std::nullopt,
                                double percentile = 0.10);
GateResult apply_inclusion_gate_iqr(std::span<const double> iqrs,
                                    std::optional<double> threshold_override = std::nullopt,
                                    double percentile = 0.10);

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return end == begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const IndexRange&) const = default;
};

struct SplitSpec {
  double train_frac = 0.8;
  double val_frac = 0.1;
  double test_frac = 0.1;
};

struct SplitRanges {
  IndexRange train, val, test;
};

SplitRanges split_session(std::size_t samples, const SplitSpec& spec = {});
inline SplitRanges split_session(const Session& s, const SplitSpec& spec = {}) {
  return split_session(s.samples(), spec);
}

class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::vector<double> mean, std::vector<double> std);

  static constexpr double kStdFloor = 1e-8;

  // Population mean/std per channel over `range`; std values below the floor
  // are clamped and the channel index recorded in warnings().
  static Normalizer fit(const Matrix& eeg, IndexRange range);

  Matrix apply(const Matrix& eeg) const;
  Matrix inverse(const Matrix& z) const;
  // Same statistics rounded to float precision (used for persisted models).
  Normalizer rounded_to_float() const;

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& std() const { return std_; }
  const std::vector<std::size_t>& warnings() const { return warnings_; }
  std::size_t channels() const { return mean_.size(); }

 private:
  std::vector<double> mean_;
  std::vector<double> std_;
  std::vector<std::size_t> warnings_;
};

struct WindowView {
  std::size_t start_index = 0;
  std::size_t length = kWindowLength;
  std::ptrdiff_t offset_samples = 0;
  std::size_t target_index = 0;
  double target = 0.0;

  std::size_t end_index() const { return start_index + length - 1; }
};

// Which target indices a window may point to.
enum class TargetBounds {
  session,  // anywhere in [0, T)
  segment,  // only indices whose own offset-0 window lies inside the range
};

std::ptrdiff_t offset_ms_to_samples(int offset_ms, double sample_rate_hz);

// Every window of kWindowLength samples inside `range`, ordered by start.
std::vector<WindowView> windows(const Session& s, IndexRange range, int offset_ms,
                                TargetBounds bounds = TargetBounds::session);
std::vector<WindowView> windows(std::span<const double> target_trace, double sample_rate_hz,
                                IndexRange range, int offset_ms, TargetBounds bounds);

// Time-major kWindowLength x C copy of the window's EEG.
Matrix window_matrix(const Matrix& eeg, const WindowView& w);

}  // namespace locodec
