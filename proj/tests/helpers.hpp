#pragma once

#include "locodec/session.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace test {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("locodec_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Gaussian EEG and a uniform speed trace; channels cycle through the regions.
inline locodec::Session random_session(std::size_t channels, std::size_t samples, std::uint64_t seed,
                                       std::string id = "r01_s01", std::string rat = "r01") {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(0.0, 5.0);
  locodec::Session s;
  s.id = std::move(id);
  s.rat_id = std::move(rat);
  s.eeg = locodec::Matrix(channels, samples);
  for (auto& v : s.eeg.data) v = n01(rng);
  s.speed.resize(samples);
  for (auto& v : s.speed) v = u(rng);
  for (std::size_t c = 0; c < channels; ++c) {
    s.regions.push_back(static_cast<locodec::Region>(c % 4));
    s.sides.push_back(c % 8 < 4 ? locodec::Side::left : locodec::Side::right);
  }
  return s;
}

}  // namespace test
