#pragma once

// Synthetic recording fleets with a known speed -> EEG mapping.

#include "locodec/session.hpp"

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace locodec {

enum class LatentLaw {
  linear,     // channel = gain * speed + noise
  nonlinear,  // small linear term plus a carrier whose amplitude follows speed
  band,       // slow carrier amplitude-modulated by speed, plus a fixed distractor
};
std::string_view to_string(LatentLaw l);
LatentLaw parse_latent_law(std::string_view s);

struct FleetSpec {
  std::size_t rats = 4;
  std::size_t sessions_per_rat = 4;
  std::size_t samples = 6000;
  std::size_t channels = 16;
  double sample_rate_hz = 100.0;
  LatentLaw law = LatentLaw::nonlinear;
  double noise = 0.5;           // background noise std relative to unit carrier
  double linear_weight = 0.3;   // nonlinear law only
  double modulation = 0.8;      // carrier depth, amplitude in [1 - m, 1 + m]
  double carrier_hz = 8.0;      // nonlinear law
  double band_carrier_hz = 2.5; // band law
  double distractor_hz = 20.0;  // band law
  // Per-rat channel permutation and gain change (subject specificity).
  bool permute_channels = false;
  bool rescale_channels = false;
  // Per-session lognormal channel gain jitter (session drift).
  double session_gain_jitter = 0.0;
  // EEG reflects the speed this far in the future.
  double lead_ms = 0.0;
  // Only channels in these regions carry signal; empty means all do.
  std::vector<Region> signal_regions;
  // Lognormal spread of per-session activity (speed scale).
  double activity_spread = 0.35;
  double speed_tau_s = 1.0;
  std::uint64_t seed = 0;
};

// Region of channel j: cycles medial_prefrontal, somatomotor, motor, visual;
// side alternates every four channels.
Region synthetic_region(std::size_t channel);
Side synthetic_side(std::size_t channel);

// Rectified Ornstein-Uhlenbeck speed trace, mean-reverting with time
// constant `tau_s`, scaled by `scale`.
std::vector<double> synthetic_speed(std::size_t n, double fs, double tau_s, double scale, std::uint64_t seed);

// Sessions ordered by rat then session, ids "rNN_sMM", rat ids "rNN".
std::vector<Session> generate_synthetic_fleet(const FleetSpec& spec);

}  // namespace locodec
