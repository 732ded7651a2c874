#pragma once

// Speed decoders: one Decoder type covering every model family, with the
// parameters split into a body (feature extractor) and a head (final dense
// layers) for transfer learning.

#include "locodec/autodiff.hpp"
#include "locodec/forest.hpp"
#include "locodec/matrix.hpp"
#include "locodec/session.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace locodec {

enum class Family { linear, random_forest, ffnn, lstm_rnn, transformer_encoder, speed_rnn };

std::string_view to_string(Family f);
Family parse_family(std::string_view s);
bool is_trainable(Family f);  // everything but random_forest
// Families fed through a flat 20*C vector rather than a 20 x C sequence.
bool uses_flat_input(Family f);

struct DecoderSpec {
  Family family = Family::lstm_rnn;
  std::size_t input_channels = 32;
  std::size_t window = kWindowLength;
  // ffnn
  std::vector<std::size_t> ffnn_hidden{256, 64};
  // lstm_rnn / speed_rnn
  std::size_t lstm_hidden = 64;
  std::size_t head_hidden = 32;  // also the transformer head width
  // transformer_encoder
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 1;
  std::size_t ffn_dim = 64;
  std::size_t conv_kernel = 3;
  std::size_t conv_channels = 16;
  bool positional_encoding = true;
  // trainable families
  double dropout = 0.0;
  // random_forest
  ForestParams forest;
  std::uint64_t seed = 0;

  // Throws ArgumentError naming the offending field.
  void validate() const;
  // `key=value` lines; parse() accepts exactly what serialize() writes.
  std::string serialize() const;
  static DecoderSpec parse(std::string_view text);
  bool operator==(const DecoderSpec&) const = default;
};

// Sets one field from its serialized key; false when the key is unknown.
bool set_spec_field(DecoderSpec& spec, std::string_view key, std::string_view value);

// Family defaults with the given input width (speed_rnn always uses 1).
DecoderSpec default_spec(Family f, std::size_t channels);

// Model input for one window given as a time-major 20 x C matrix: a flat
// vector of 20*C values (row-major, earliest sample first) for flat families,
// otherwise the 20 x C sequence itself.
ad::Tensor featurize(const Matrix& window, Family f);

// A block of windows over one normalized series: `series` is samples x
// channels, time-major, already z-scored.
struct WindowSet {
  std::shared_ptr<const Matrix> series;
  std::vector<WindowView> views;

  std::size_t size() const { return views.size(); }
  std::size_t channels() const { return series ? series->cols : 0; }
  // [B, 20, C] tensor for the selected windows.
  ad::Tensor batch(std::span<const std::size_t> idx) const;
  ad::Tensor all() const;
  std::vector<double> targets(std::span<const std::size_t> idx) const;
  std::vector<double> targets() const;
  // Every sample index read by any window (inputs and targets), sorted.
  std::vector<std::size_t> touched_indices() const;
  WindowSet subset(std::span<const std::size_t> idx) const;
};

enum class InputSource { eeg, speed };

// Windows over `range` with EEG (or speed, for the speed-only baseline)
// normalized by `norm`.
WindowSet make_window_set(const Session& s, const Normalizer& norm, IndexRange range, int offset_ms,
                          TargetBounds bounds = TargetBounds::session, InputSource src = InputSource::eeg);

// Normalizer for the chosen input source fitted on `range`.
Normalizer fit_input_normalizer(const Session& s, IndexRange range, InputSource src);

class Decoder {
 public:
  Decoder() = default;
  // Initializes parameters (Glorot-uniform weights, zero biases, unit LSTM
  // forget bias) from spec.seed. Forests start empty until fitted.
  explicit Decoder(DecoderSpec spec);

  const DecoderSpec& spec() const { return spec_; }
  Family family() const { return spec_.family; }
  InputSource input_source() const {
    return spec_.family == Family::speed_rnn ? InputSource::speed : InputSource::eeg;
  }

  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }
  ad::Parameter& parameter(std::string_view name);
  const ad::Parameter& parameter(std::string_view name) const;
  static bool is_head(const ad::Parameter& p);
  std::vector<ad::Parameter*> head_parameters();
  std::vector<ad::Parameter*> body_parameters();
  std::vector<ad::Parameter*> all_parameters();
  // Marks body parameters non-trainable (or trainable again).
  void freeze_body(bool frozen);

  // FNV-1a over the bytes of the selected parameter tensors.
  std::uint64_t checksum_body() const;
  std::uint64_t checksum_head() const;

  // Differentiable forward passes. `x` is [B, 20, C]; outputs are [B, 1] in
  // standardized target units. With `rng`, dropout is applied.
  ad::Var forward(ad::Graph& g, ad::Var x, std::mt19937_64* rng = nullptr);
  ad::Var body(ad::Graph& g, ad::Var x, std::mt19937_64* rng = nullptr);
  ad::Var head(ad::Graph& g, ad::Var features, std::mt19937_64* rng = nullptr);
  // Body output without gradients (for head-only training). Shape [B, F...].
  ad::Tensor body_features(const ad::Tensor& x) const;
  ad::Tensor head_output(const ad::Tensor& features) const;

  // Predictions in target units for a [B, 20, C] batch.
  std::vector<double> predict(const ad::Tensor& x) const;
  std::vector<double> predict(const WindowSet& ws) const;
  // Single featurized input (see featurize()).
  double predict_one(const ad::Tensor& input) const;

  // Transformer only: attention weights of block 0 for every head, each
  // [B, 20, 20].
  std::vector<ad::Tensor> attention_weights(const ad::Tensor& x) const;
  // Transformer only: token features after the attention blocks, [B, 20, E].
  ad::Tensor token_features(const ad::Tensor& x) const;

  void set_forest(Forest f);
  const std::optional<Forest>& forest() const { return forest_; }

  Normalizer normalizer;
  double target_mean = 0.0;
  double target_scale = 1.0;

  // Target affine from the mean and population std of the windows' targets.
  void standardize_targets_from(const WindowSet& ws);

  // Rounds parameters to float precision (model files store f32 tensors).
  void round_to_float();
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;
  // Throws LoadError (bad magic/version/truncation) or SpecMismatchError
  // when `expect` is given and differs from the stored family.
  static Decoder load(const std::filesystem::path& path, std::optional<Family> expect = std::nullopt);
  static Decoder deserialize(std::string_view bytes, const std::string& source,
                             std::optional<Family> expect = std::nullopt);

 private:
  struct Leaves;
  ad::Var forward_impl(ad::Graph& g, ad::Var x, Leaves& leaves, std::mt19937_64* rng, bool stop_at_body,
                       std::vector<ad::Var>* attention, bool tokens_only) const;
  ad::Var head_impl(ad::Graph& g, ad::Var f, Leaves& leaves, std::mt19937_64* rng) const;
  void check_input(const ad::Shape& s) const;
  ad::Parameter& add_param(std::string name, ad::Shape shape, std::mt19937_64& rng, double fill = 0.0,
                           bool glorot = true);

  DecoderSpec spec_;
  std::vector<ad::Parameter> params_;
  std::optional<Forest> forest_;
};

inline constexpr std::uint32_t kModelFileVersion = 1;

// Gradient check of a family's full MSE loss on random inputs.
ad::GradcheckReport gradcheck_decoder(const DecoderSpec& spec, std::size_t batch = 4,
                                      const ad::GradcheckOptions& opt = {});

// Least-squares fit of a linear decoder's head with a small ridge term, in
// standardized target units.
void fit_linear_closed_form(Decoder& d, const WindowSet& train, double ridge = 1e-6);

}  // namespace locodec
