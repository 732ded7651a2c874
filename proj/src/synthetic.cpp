#include "locodec/synthetic.hpp"

#include "locodec/error.hpp"
#include "locodec/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace locodec {

std::string_view to_string(LatentLaw l) {
  switch (l) {
    case LatentLaw::linear:
      return "linear";
    case LatentLaw::nonlinear:
      return "nonlinear";
    case LatentLaw::band:
      return "band";
  }
  return "?";
}

LatentLaw parse_latent_law(std::string_view s) {
  if (s == "linear") return LatentLaw::linear;
  if (s == "nonlinear") return LatentLaw::nonlinear;
  if (s == "band") return LatentLaw::band;
  throw ArgumentError("unknown latent law '" + std::string(s) + "'");
}

Region synthetic_region(std::size_t channel) { return static_cast<Region>(channel % 4); }
Side synthetic_side(std::size_t channel) { return (channel / 4) % 2 == 0 ? Side::left : Side::right; }

std::vector<double> synthetic_speed(std::size_t n, double fs, double tau_s, double scale, std::uint64_t seed) {
  if (!(fs > 0.0 && tau_s > 0.0)) throw ArgumentError("synthetic_speed: rate and time constant must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double mu = 0.8;
  const double a = std::exp(-1.0 / (fs * tau_s));
  const double b = std::sqrt(1.0 - a * a);
  double u = mu + n01(rng);
  std::vector<double> v(n);
  for (std::size_t t = 0; t < n; ++t) {
    v[t] = scale * std::max(0.0, u);
    u = mu + a * (u - mu) + b * n01(rng);
  }
  return v;
}

namespace {

struct ChannelLaw {
  double sign = 1.0;
  double amp = 1.0;
  double linear = 0.0;
  double phase = 0.0;
  double phase2 = 0.0;
};

}  // namespace

std::vector<Session> generate_synthetic_fleet(const FleetSpec& spec) {
  if (spec.rats == 0 || spec.sessions_per_rat == 0 || spec.channels == 0)
    throw ArgumentError("synthetic fleet: sizes must be positive");
  if (spec.samples < 2 * kWindowLength) throw ArgumentError("synthetic fleet: too few samples");
  const double fs = spec.sample_rate_hz;
  const auto lead = static_cast<std::size_t>(std::llround(spec.lead_ms * fs / 1000.0));
  const std::size_t C = spec.channels, T = spec.samples;

  std::mt19937_64 map_rng(mix_seed(spec.seed, "mapping"));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<ChannelLaw> law(C);
  std::vector<double> signs(C);
  for (std::size_t j = 0; j < C; ++j) signs[j] = j < (C + 1) / 2 ? 1.0 : -1.0;
  std::shuffle(signs.begin(), signs.end(), map_rng);
  for (std::size_t j = 0; j < C; ++j) {
    law[j].sign = signs[j];
    law[j].amp = 0.7 + 0.6 * u01(map_rng);
    law[j].linear = (u01(map_rng) < 0.5 ? -1.0 : 1.0) * (0.5 + 0.5 * u01(map_rng));
    law[j].phase = 2.0 * std::numbers::pi * u01(map_rng);
    law[j].phase2 = 2.0 * std::numbers::pi * u01(map_rng);
  }

  auto carries_signal = [&](std::size_t j) {
    if (spec.signal_regions.empty()) return true;
    return std::find(spec.signal_regions.begin(), spec.signal_regions.end(), synthetic_region(j)) !=
           spec.signal_regions.end();
  };

  std::vector<Session> out;
  for (std::size_t r = 0; r < spec.rats; ++r) {
    char rat[16];
    std::snprintf(rat, sizeof rat, "r%02zu", r + 1);
    std::mt19937_64 rat_rng(mix_seed(spec.seed, std::string("rat/") + rat));
    std::vector<std::size_t> perm(C);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (spec.permute_channels) std::shuffle(perm.begin(), perm.end(), rat_rng);
    std::vector<double> rat_gain(C, 1.0);
    if (spec.rescale_channels)
      for (auto& g : rat_gain) g = std::exp(0.3 * n01(rat_rng));

    for (std::size_t k = 0; k < spec.sessions_per_rat; ++k) {
      char sid[32];
      std::snprintf(sid, sizeof sid, "%s_s%02zu", rat, k + 1);
      std::mt19937_64 rng(mix_seed(spec.seed, std::string("session/") + sid));
      const double activity = std::exp(spec.activity_spread * n01(rng));
      // A common phase shift per session is a time shift, the mapping itself is unchanged.
      const double shift = 2.0 * std::numbers::pi * u01(rng);
      const auto speed = synthetic_speed(T + lead, fs, spec.speed_tau_s, activity, rng());

      Session s;
      s.id = sid;
      s.rat_id = rat;
      s.sample_rate_hz = fs;
      s.eeg = Matrix(C, T);
      s.speed.assign(speed.begin(), speed.begin() + static_cast<std::ptrdiff_t>(T));
      for (std::size_t j = 0; j < C; ++j) {
        s.regions.push_back(synthetic_region(j));
        s.sides.push_back(synthetic_side(j));
      }
      for (std::size_t j = 0; j < C; ++j) {
        const ChannelLaw& L = law[perm[j]];
        const double gain = rat_gain[j] * std::exp(spec.session_gain_jitter * n01(rng));
        const double phase = L.phase + shift;
        const double phase2 = L.phase2 + shift;
        const bool signal = carries_signal(j);
        double noise = n01(rng);
        for (std::size_t t = 0; t < T; ++t) {
          const double v = speed[t + lead];
          const double time = static_cast<double>(t) / fs;
          double x = 0.0;
          if (signal) {
            const double env = L.amp * (1.0 + L.sign * spec.modulation * std::tanh(0.5 * v));
            switch (spec.law) {
              case LatentLaw::linear:
                x = L.sign * L.amp * v;
                break;
              case LatentLaw::nonlinear:
                x = spec.linear_weight * L.linear * v +
                    env * std::sin(2.0 * std::numbers::pi * spec.carrier_hz * time + phase);
                break;
              case LatentLaw::band:
                x = env * std::sin(2.0 * std::numbers::pi * spec.band_carrier_hz * time + phase) +
                    0.8 * std::sin(2.0 * std::numbers::pi * spec.distractor_hz * time + phase2);
                break;
            }
          }
          // Background: first-order autoregressive noise with unit variance.
          noise = 0.5 * noise + std::sqrt(0.75) * n01(rng);
          s.eeg(j, t) = gain * x + spec.noise * noise;
        }
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace locodec
