#pragma once

#include "locodec/decoders.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace locodec {

enum class Optimizer { sgd, adam };
std::string_view to_string(Optimizer o);
Optimizer parse_optimizer(std::string_view s);

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  bool freeze_body = false;
  // Fit the decoder's target affine to the training targets before training.
  bool standardize_target = true;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0.0;
  double val_mse = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_mse = 0.0;
  double wall_time_s = 0.0;
  std::uint64_t checksum = 0;  // body and head checksums combined
  bool stopped_early = false;

  // One JSON object per epoch followed by a summary object.
  std::string to_jsonl() const;
};

struct TrainResult {
  Decoder decoder;
  TrainReport report;
};

// Minibatch training with early stopping on validation MSE; returns the
// checkpoint with the lowest validation MSE. Throws DivergenceError on a
// non-finite loss and ArgumentError for random forests or empty streams.
TrainResult train(const Decoder& init, const WindowSet& train_set, const WindowSet& val_set,
                  const TrainConfig& cfg);

// Head-only retraining of a pretrained decoder; the target affine of the
// pretrained decoder is kept. `expect` guards against a family mismatch.
TrainResult fine_tune(const Decoder& pretrained, const WindowSet& train_set, const WindowSet& val_set,
                      const TrainConfig& cfg, std::optional<Family> expect = std::nullopt);

// Mean squared error of the decoder's predictions in target units.
double evaluate_mse(const Decoder& d, const WindowSet& ws);

}  // namespace locodec
